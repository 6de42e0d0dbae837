//! Synthetic Zipf image-caption corpus.
//!
//! Every class owns a fixed random prototype image. An example draws its
//! first class from a Zipf law over class ranks and its remaining classes
//! uniformly (without repetition); its image is the unweighted mean of the
//! chosen prototypes plus Gaussian noise, standardized. Captions contain the
//! class words as hashtags together with filler words that are more frequent
//! than any class word, so that frequency-based stop-word removal strips them.
//!
//! Prototypes come from stream 0 of the seed and examples from stream
//! `1 + example_stream`, so datasets that differ only in size or in
//! `example_stream` share their prototypes, and a smaller dataset is a
//! prefix of a larger one.

use std::path::Path;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{write_captions, write_dictionary, write_tensors, CaptionRecord, DataError, Example, ImageTensor};
use super::{CAPTIONS_FILE, DICT_FILE, TENSORS_FILE};
use crate::rng;
use crate::textpipe::{encode_targets, normalize_text, Dictionary, WordCounts};

/// Each appears twice per caption.
pub const FILLER_WORDS: [&str; 5] = ["the", "of", "and", "to", "in"];

pub const PROTOTYPES_FILE: &str = "prototypes.wlt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of classes.
    pub classes: usize,
    pub img_size: usize,
    pub channels: usize,
    pub zipf_exponent: f64,
    pub words_per_image: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub n_examples: usize,
    pub stop_count: usize,
    pub example_stream: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 20,
            img_size: 16,
            channels: 1,
            zipf_exponent: 1.0,
            words_per_image: 2,
            noise_sigma: 0.5,
            seed: 7,
            n_examples: 4000,
            stop_count: FILLER_WORDS.len(),
            example_stream: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_owned()));
        if self.classes == 0 || self.img_size == 0 || self.channels == 0 || self.n_examples == 0 {
            return bad("classes, img_size, channels and n_examples must be positive");
        }
        if self.words_per_image == 0 || self.words_per_image > self.classes {
            return bad("words_per_image must be in 1..=classes");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be finite and non-negative");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative");
        }
        if self.stop_count > FILLER_WORDS.len() {
            return bad("stop_count cannot exceed the number of filler words");
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.img_size * self.img_size * self.channels
    }
}

/// Unnormalized Zipf weights `(k+1)^-s` for ranks `0..n`.
pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (0..n).map(|k| ((k + 1) as f64).powf(-exponent)).collect()
}

/// Draws class ranks with probability proportional to `(k+1)^-s`.
#[derive(Clone, Debug)]
pub struct ZipfSampler {
    dist: WeightedIndex<f64>,
}

impl ZipfSampler {
    pub fn new(n: usize, exponent: f64) -> Self {
        ZipfSampler { dist: WeightedIndex::new(zipf_weights(n, exponent)).expect("positive finite weights") }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

/// Class word for class `k`: `c` followed by base-26 letters, fixed width.
pub fn class_word(k: usize, classes: usize) -> String {
    let mut width = 1;
    while 26usize.pow(width) < classes {
        width += 1;
    }
    let mut letters = vec![b'a'; width as usize];
    let mut v = k;
    for slot in letters.iter_mut().rev() {
        *slot = b'a' + (v % 26) as u8;
        v /= 26;
    }
    format!("c{}", String::from_utf8(letters).expect("ascii"))
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub config: SynthConfig,
    pub examples: Vec<Example>,
    pub captions: Vec<CaptionRecord>,
    pub dictionary: Dictionary,
    /// Prototype images indexed by generator class.
    pub prototypes: Vec<ImageTensor>,
    pub class_words: Vec<String>,
    /// Generator class of every dictionary entry.
    pub label_classes: Vec<usize>,
}

impl SynthData {
    /// Negative squared distance from each image to each dictionary word's prototype
    /// (rows = images, columns = dictionary indices).
    pub fn prototype_scores(&self, examples: &[&Example]) -> Array2<f64> {
        let mut out = Array2::zeros((examples.len(), self.dictionary.len()));
        for (i, ex) in examples.iter().enumerate() {
            for (j, &class) in self.label_classes.iter().enumerate() {
                let proto = &self.prototypes[class];
                let d: f64 = ex
                    .image
                    .pixels
                    .iter()
                    .zip(&proto.pixels)
                    .map(|(&a, &b)| {
                        let d = f64::from(a) - f64::from(b);
                        d * d
                    })
                    .sum();
                out[[i, j]] = -d;
            }
        }
        out
    }

    /// Writes captions, tensors, the dictionary and the prototypes into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir)?;
        write_captions(&dir.join(CAPTIONS_FILE), &self.captions)?;
        write_tensors(&dir.join(TENSORS_FILE), self.examples.iter().map(|e| (e.id.as_str(), &e.image)))?;
        write_dictionary(&dir.join(DICT_FILE), &self.dictionary)?;
        write_tensors(&dir.join(PROTOTYPES_FILE), self.class_words.iter().map(String::as_str).zip(&self.prototypes))?;
        let cfg = serde_json::to_vec_pretty(&self.config).map_err(std::io::Error::from)?;
        crate::io_util::write_atomic(&dir.join("synth.json"), &cfg)?;
        Ok(())
    }
}

fn random_image<R: rand::Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> ImageTensor {
    let pixels = (0..cfg.pixels())
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v as f32
        })
        .collect();
    let mut img = ImageTensor { height: cfg.img_size, width: cfg.img_size, channels: cfg.channels, pixels };
    img.standardize();
    img
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthData, DataError> {
    cfg.validate()?;
    let mut proto_rng = rng::stream(cfg.seed, 0);
    let prototypes: Vec<ImageTensor> = (0..cfg.classes).map(|_| random_image(cfg, &mut proto_rng)).collect();
    let class_words: Vec<String> = (0..cfg.classes).map(|k| class_word(k, cfg.classes)).collect();

    let mut rng = rng::stream(cfg.seed, 1 + cfg.example_stream);
    let zipf = ZipfSampler::new(cfg.classes, cfg.zipf_exponent);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    let width = cfg.n_examples.to_string().len().max(6);
    let filler = FILLER_WORDS.join(" ");

    let mut chosen_classes = Vec::with_capacity(cfg.n_examples);
    let mut images = Vec::with_capacity(cfg.n_examples);
    let mut captions = Vec::with_capacity(cfg.n_examples);
    for i in 0..cfg.n_examples {
        let first = zipf.sample(&mut rng);
        let mut classes = vec![first];
        // remaining classes uniform over the other K-1
        for j in sample(&mut rng, cfg.classes - 1, cfg.words_per_image - 1) {
            classes.push(if j >= first { j + 1 } else { j });
        }
        let mut acc = vec![0f64; cfg.pixels()];
        for &c in &classes {
            for (a, &p) in acc.iter_mut().zip(&prototypes[c].pixels) {
                *a += f64::from(p);
            }
        }
        let inv = 1.0 / classes.len() as f64;
        let pixels = acc.into_iter().map(|a| (a * inv + noise.sample(&mut rng)) as f32).collect();
        let mut image = ImageTensor { height: cfg.img_size, width: cfg.img_size, channels: cfg.channels, pixels };
        image.standardize();

        let id = format!("s{i:0width$}");
        let tags: Vec<String> = classes
            .iter()
            .map(|&c| {
                let mut w = class_words[c].clone();
                w[..1].make_ascii_uppercase();
                format!("#{w}")
            })
            .collect();
        captions.push(CaptionRecord {
            id: id.clone(),
            caption: format!("{filler} {} {filler}!", tags.join(" ")),
            image: id,
        });
        images.push(image);
        chosen_classes.push(classes);
    }

    let mut counts = WordCounts::new();
    let docs: Vec<_> = captions.iter().map(|c| normalize_text(&c.caption)).collect();
    for d in &docs {
        counts.add_doc(d);
    }
    let dictionary = Dictionary::from_counts(&counts, cfg.classes, cfg.stop_count)?;
    let label_classes = dictionary
        .words()
        .iter()
        .map(|w| class_words.iter().position(|c| c == w).expect("dictionary holds class words only"))
        .collect();

    let examples = captions
        .iter()
        .zip(images)
        .zip(&docs)
        .map(|((cap, image), doc)| Example { id: cap.id.clone(), image, labels: encode_targets(doc, &dictionary) })
        .collect();

    Ok(SynthData { config: cfg.clone(), examples, captions, dictionary, prototypes, class_words, label_classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::precision_at_k_scores;

    #[test]
    fn class_words_are_distinct_tokens() {
        let words: Vec<String> = (0..700).map(|k| class_word(k, 700)).collect();
        let mut sorted = words.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 700);
        assert!(words.iter().all(|w| crate::textpipe::is_normalized_token(w)));
        assert!(words.iter().all(|w| !FILLER_WORDS.contains(&w.as_str())));
    }

    #[test]
    fn fillers_are_removed_and_labels_match_classes() {
        let cfg = SynthConfig { n_examples: 300, ..SynthConfig::default() };
        let data = generate_synthetic(&cfg).unwrap();
        for w in FILLER_WORDS {
            assert!(data.dictionary.index_of(w).is_none());
        }
        assert_eq!(data.examples.len(), 300);
        for ex in &data.examples {
            assert_eq!(ex.labels.len(), cfg.words_per_image);
            let (m, s) = ex.image.moments();
            assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn noiseless_single_word_images_equal_prototypes() {
        let cfg = SynthConfig { n_examples: 200, noise_sigma: 0.0, words_per_image: 1, ..SynthConfig::default() };
        let data = generate_synthetic(&cfg).unwrap();
        for ex in &data.examples {
            let class = data.label_classes[ex.labels[0] as usize];
            let proto = &data.prototypes[class];
            assert!(ex.image.pixels.iter().zip(&proto.pixels).all(|(a, b)| (a - b).abs() < 1e-6));
        }
        let refs: Vec<&Example> = data.examples.iter().collect();
        let scores = data.prototype_scores(&refs);
        let labels: Vec<Vec<u32>> = data.examples.iter().map(|e| e.labels.clone()).collect();
        assert_eq!(precision_at_k_scores(scores.view(), &labels, 1), 1.0);
    }

    #[test]
    fn generation_is_reproducible_and_prefix_stable() {
        let small = SynthConfig { n_examples: 50, ..SynthConfig::default() };
        let big = SynthConfig { n_examples: 80, ..SynthConfig::default() };
        let a = generate_synthetic(&small).unwrap();
        let b = generate_synthetic(&small).unwrap();
        let c = generate_synthetic(&big).unwrap();
        assert_eq!(a.examples, b.examples);
        assert_eq!(a.prototypes, c.prototypes);
        for (x, y) in a.captions.iter().zip(&c.captions) {
            assert_eq!(x.caption, y.caption);
        }
        for (x, y) in a.examples.iter().zip(&c.examples) {
            assert_eq!(x.image, y.image);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            SynthConfig { classes: 0, ..SynthConfig::default() },
            SynthConfig { words_per_image: 21, ..SynthConfig::default() },
            SynthConfig { zipf_exponent: -1.0, ..SynthConfig::default() },
            SynthConfig { noise_sigma: f64::NAN, ..SynthConfig::default() },
        ] {
            assert!(generate_synthetic(&cfg).is_err());
        }
    }
}
