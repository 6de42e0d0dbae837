//! Word prediction precision@k, linear probes on penultimate features, and
//! word-embedding evaluations over the columns of the output matrix.

mod probe;
mod words;

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Example;
use crate::model::{images_to_matrix, ModelError, ModelParams};
use crate::scalar::Scalar;

pub use probe::{default_lambda_grid, linear_probe, ProbeConfig, ProbeResult, ProbeSplit};
pub use words::{
    analogy_accuracy, cosine, dump_embeddings, neighbors_path, parse_analogy_questions, parse_similarity_pairs,
    parse_translation_pairs, read_embeddings_csv, spearman_rho, spearman_similarity, top_neighbors,
    translation_precision, word_vectors, AnalogyQuestion, Direction, SimilarityPair, TranslationPair,
};

/// Rows scored per forward pass.
pub const EVAL_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("need at least two classes, found {0}")]
    SingleClass(usize),
    #[error("zero-norm embedding for word {0:?}")]
    ZeroNorm(String),
    #[error("need at least two scorable pairs, found {0}")]
    TooFewPairs(usize),
    #[error("rank correlation undefined: all ranks tied")]
    ConstantRanks,
    #[error("empty candidate set")]
    EmptyCandidates,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
    pub n_items: usize,
    pub n_skipped: usize,
    /// Secondary values such as per-lambda validation accuracy.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub details: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn new(metric: &str, value: f64, k: Option<usize>, n_items: usize, n_skipped: usize) -> Self {
        EvalReport { metric: metric.to_owned(), value, k, n_items, n_skipped, details: BTreeMap::new() }
    }
}

/// Indices of the k largest scores, highest first; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(a.cmp(&b));
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// |top-k ∩ labels| for one row.
pub fn hits_of_row(scores: &[f64], labels: &[u32], k: usize) -> usize {
    top_k(scores, k).into_iter().filter(|&c| labels.contains(&(c as u32))).count()
}

/// |top-k ∩ labels| / k for one row.
pub fn precision_of_row(scores: &[f64], labels: &[u32], k: usize) -> f64 {
    hits_of_row(scores, labels, k) as f64 / k as f64
}

/// Mean precision@k of a score matrix (rows = examples, columns = classes).
/// Hits are counted exactly and divided once by k·n.
pub fn precision_at_k_scores(scores: ArrayView2<f64>, labels: &[Vec<u32>], k: usize) -> f64 {
    assert_eq!(scores.nrows(), labels.len(), "one label set per score row");
    assert!(k >= 1, "k must be at least 1");
    if labels.is_empty() {
        return 0.0;
    }
    let hits: usize = scores.outer_iter().zip(labels).map(|(row, l)| hits_of_row(&row.to_vec(), l, k)).sum();
    hits as f64 / (k * labels.len()) as f64
}

/// Scores every class for every example and reports mean precision@k.
/// Chunks are scored in parallel and merged in example order.
pub fn precision_at_k<T: Scalar>(
    params: &ModelParams<T>,
    examples: &[&Example],
    k: usize,
) -> Result<EvalReport, ModelError> {
    if k == 0 {
        return Err(ModelError::InvalidConfig("k must be at least 1".into()));
    }
    let per_chunk: Vec<Result<usize, ModelError>> = examples
        .par_chunks(EVAL_CHUNK)
        .map(|part| {
            let x = images_to_matrix::<T, _>(part.iter().map(|e| &e.image));
            let e = params.embed(x.view())?;
            let logits = params.score_all(e.view())?;
            Ok(logits
                .outer_iter()
                .zip(part)
                .map(|(row, ex)| {
                    let row: Vec<f64> = row.iter().map(|v| v.to_f64_lossless()).collect();
                    hits_of_row(&row, &ex.labels, k)
                })
                .sum())
        })
        .collect();
    let mut hits = 0;
    for part in per_chunk {
        hits += part?;
    }
    let n = examples.len();
    let value = if n == 0 { 0.0 } else { hits as f64 / (k * n) as f64 };
    Ok(EvalReport::new("precision_at_k", value, Some(k), n, 0))
}
