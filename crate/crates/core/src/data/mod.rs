//! Examples, image standardization, the tensor container and the synthetic generator.

mod container;
mod image;
mod synth;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stable_hash, unit_interval};
use crate::textpipe::{encode_targets, normalize_text, Dictionary, TextError};

pub use container::{decode_tensors, encode_tensors, read_tensors, write_tensors, TensorContainer, TENSOR_MAGIC};
pub use image::{preprocess_image, ImageTensor, MIN_STD};
pub use synth::{generate_synthetic, zipf_weights, SynthConfig, SynthData, ZipfSampler, FILLER_WORDS};

/// File names inside a data directory.
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const TENSORS_FILE: &str = "images.wlt";
pub const DICT_FILE: &str = "dict.tsv";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty image")]
    EmptyImage,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("missing id {0:?} in tensor container")]
    MissingId(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid example id {0:?}")]
    InvalidId(String),
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("caption line {line}: {message}")]
    BadCaption { line: usize, message: String },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One image with its multi-label target (sorted unique dictionary indices).
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub image: ImageTensor,
    pub labels: Vec<u32>,
}

/// One line of the caption file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub caption: String,
    pub image: String,
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub examples: Vec<Example>,
    /// Captions that had no in-dictionary word.
    pub dropped: usize,
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord =
            serde_json::from_str(&line).map_err(|e| DataError::BadCaption { line: n + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_captions(path: &Path, records: &[CaptionRecord]) -> Result<(), DataError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(std::io::Error::from)?;
        buf.push(b'\n');
    }
    crate::io_util::write_atomic(path, &buf)?;
    Ok(())
}

/// Joins caption records with container images and encodes their labels.
pub fn assemble_dataset(
    records: &[CaptionRecord],
    tensors: &TensorContainer,
    dict: &Dictionary,
) -> Result<LoadedDataset, DataError> {
    let mut examples = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for rec in records {
        let image = tensors.get(&rec.image).ok_or_else(|| DataError::MissingId(rec.image.clone()))?;
        let labels = encode_targets(&normalize_text(&rec.caption), dict);
        if labels.is_empty() {
            dropped += 1;
            continue;
        }
        examples.push(Example { id: rec.id.clone(), image, labels });
    }
    Ok(LoadedDataset { examples, dropped })
}

pub fn load_dataset(captions: &Path, tensors: &Path, dict: &Dictionary) -> Result<LoadedDataset, DataError> {
    let records = read_captions(captions)?;
    let container = read_tensors(tensors)?;
    assemble_dataset(&records, &container, dict)
}

pub fn read_dictionary(path: &Path) -> Result<Dictionary, DataError> {
    Ok(Dictionary::read_from(BufReader::new(File::open(path)?))?)
}

pub fn write_dictionary(path: &Path, dict: &Dictionary) -> Result<(), DataError> {
    let mut buf = Vec::new();
    dict.write_to(&mut buf)?;
    crate::io_util::write_atomic(path, &buf)?;
    Ok(())
}

/// Loads `captions.jsonl`, `images.wlt` and `dict.tsv` from a data directory.
pub fn load_data_dir(dir: &Path) -> Result<(LoadedDataset, Dictionary), DataError> {
    let dict = read_dictionary(&dir.join(DICT_FILE))?;
    let ds = load_dataset(&dir.join(CAPTIONS_FILE), &dir.join(TENSORS_FILE), &dict)?;
    Ok((ds, dict))
}

/// Whether `id` falls in the held-out fraction under the stable id hash.
pub fn in_holdout(id: &str, fraction: f64, salt: u64) -> bool {
    unit_interval(stable_hash(salt, id.as_bytes())) < fraction
}

/// Splits into (train, held-out) by stable id hash; independent of order.
pub fn split_by_id(examples: &[Example], fraction: f64, salt: u64) -> (Vec<&Example>, Vec<&Example>) {
    examples.iter().partition(|e| !in_holdout(&e.id, fraction, salt))
}

/// Mean number of labels per example.
pub fn mean_labels(examples: &[Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    examples.iter().map(|e| e.labels.len()).sum::<usize>() as f64 / examples.len() as f64
}
