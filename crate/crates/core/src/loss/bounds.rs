//! Monte-Carlo check of the bounds on `E[log Σ_{c∈C} s_c]`.
//!
//! With `s_k = exp(l_k + shift) ≥ 1` and `Z = Σ_k s_k`:
//!
//! * upper: `E[log Σ_C s_c] ≤ log Z`;
//! * lower: `E[log Σ_C s_c] ≥ P(mean_C s ≥ Z/K) · (log(|C|/K) + log Z)`.
//!
//! Subsets are drawn uniformly without replacement, optionally with one
//! forced member. The probability in the lower bound is the empirical
//! frequency over the same trials.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LossError;
use crate::rng;

pub const MIN_TRIALS: usize = 100;
/// Trials per independent random stream; fixed so results do not depend on thread count.
const CHUNK: usize = 4096;
const SLACK_SIGMAS: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub classes: usize,
    pub subset_size: usize,
    pub trials: usize,
    pub positive: Option<usize>,
    /// Constant added to every logit so that the smallest becomes 0.
    pub shift: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub log_z: f64,
    pub markov_probability: f64,
    pub lower_bound: f64,
    pub upper_gap: f64,
    pub upper_holds: bool,
    pub lower_holds: bool,
}

#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
    hits: u64,
}

impl Moments {
    fn push(&mut self, x: f64, hit: bool) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
        self.hits += u64::from(hit);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0.0 {
            return other;
        }
        if other.n == 0.0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * (other.n / n),
            m2: self.m2 + other.m2 + d * d * self.n * other.n / n,
            hits: self.hits + other.hits,
        }
    }
}

/// `log Σ_{i ∈ idx} exp(shifted[i])`, summing in the order given.
fn lse_subset(shifted: &[f64], idx: &[usize]) -> f64 {
    let max = idx.iter().map(|&i| shifted[i]).fold(f64::NEG_INFINITY, f64::max);
    max + idx.iter().map(|&i| (shifted[i] - max).exp()).sum::<f64>().ln()
}

pub fn check_bounds(
    logits: &[f64],
    subset_size: usize,
    trials: usize,
    seed: u64,
    positive: Option<usize>,
) -> Result<BoundReport, LossError> {
    let k = logits.len();
    if subset_size == 0 || subset_size > k {
        return Err(LossError::BadSubsetSize { subset: subset_size, classes: k });
    }
    if trials < MIN_TRIALS {
        return Err(LossError::TooFewTrials { min: MIN_TRIALS, got: trials });
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(LossError::NonFinite);
    }
    if let Some(p) = positive {
        if p >= k {
            return Err(LossError::PositiveOutOfRange { row: 0, index: p, width: k });
        }
    }
    let min = logits.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = -min;
    let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
    let all: Vec<usize> = (0..k).collect();
    let log_z = lse_subset(&shifted, &all);
    let log_k = (k as f64).ln();
    let log_m = (subset_size as f64).ln();

    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = rng::stream(seed, chunk as u64);
            let n = CHUNK.min(trials - chunk * CHUNK);
            let mut m = Moments::default();
            let mut subset = Vec::with_capacity(subset_size);
            for _ in 0..n {
                subset.clear();
                match positive {
                    Some(p) => {
                        subset.push(p);
                        for j in sample(&mut rng, k - 1, subset_size - 1) {
                            subset.push(if j >= p { j + 1 } else { j });
                        }
                    }
                    None => subset.extend(sample(&mut rng, k, subset_size)),
                }
                subset.sort_unstable();
                let v = lse_subset(&shifted, &subset);
                // mean_C s >= Z / K, compared in log space
                m.push(v, v - log_m >= log_z - log_k);
            }
            m
        })
        .collect();
    let total = partials.into_iter().fold(Moments::default(), Moments::merge);

    let mc_mean = total.mean;
    let var = if total.n > 1.0 { total.m2 / (total.n - 1.0) } else { 0.0 };
    let mc_stderr = (var / total.n).sqrt();
    let markov_probability = total.hits as f64 / total.n;
    let lower_bound = markov_probability * (log_m - log_k + log_z);
    Ok(BoundReport {
        classes: k,
        subset_size,
        trials,
        positive,
        shift,
        mc_mean,
        mc_stderr,
        log_z,
        markov_probability,
        lower_bound,
        upper_gap: log_z - mc_mean,
        upper_holds: mc_mean <= log_z + SLACK_SIGMAS * mc_stderr,
        lower_holds: mc_mean >= lower_bound - SLACK_SIGMAS * mc_stderr,
    })
}
