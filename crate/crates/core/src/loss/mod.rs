//! Multiclass (softmax) and one-vs-all logistic losses with analytic gradients,
//! the sampled-target softmax, and Monte-Carlo checks of the partition bounds.

mod bounds;

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

use crate::scalar::Scalar;

pub use bounds::{check_bounds, BoundReport};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("row {row} has no positive label")]
    NoPositives { row: usize },
    #[error("row {row}: positive {index} outside 0..{width}")]
    PositiveOutOfRange { row: usize, index: usize, width: usize },
    #[error("row {row}: positive class is not in the sampled set")]
    PositiveNotSampled { row: usize },
    #[error("degenerate class balance for column {column}: N_k = {count}, N = {total}")]
    DegenerateClassBalance { column: usize, count: usize, total: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("subset size {subset} must be in 1..={classes}")]
    BadSubsetSize { subset: usize, classes: usize },
    #[error("at least {min} trials are required, got {got}")]
    TooFewTrials { min: usize, got: usize },
    #[error("logits must be finite")]
    NonFinite,
}

/// Loss value and its gradient with respect to the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    /// Per-row contributions; `loss` is their mean (softmax) or sum (one-vs-all).
    pub row_loss: Array1<T>,
    pub d_logits: Array2<T>,
}

fn log_sum_exp<T: Scalar>(row: impl Iterator<Item = T> + Clone) -> T {
    let max = row.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + row.map(|v| (v - max).exp()).sum::<T>().ln()
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-(1/B) Σ_rows Σ_{k ∈ positives[row]} log softmax(row)_k`.
///
/// The gradient row is `(|P| · softmax(row) − y) / B`, the exact derivative of the returned mean.
pub fn multiclass_loss<T: Scalar>(logits: ArrayView2<T>, positives: &[Vec<usize>]) -> Result<LossGrad<T>, LossError> {
    let (rows, width) = logits.dim();
    if positives.len() != rows {
        return Err(LossError::ShapeMismatch(format!("{} positive sets for {rows} rows", positives.len())));
    }
    for (row, pos) in positives.iter().enumerate() {
        if pos.is_empty() {
            return Err(LossError::NoPositives { row });
        }
        if let Some(&index) = pos.iter().find(|&&i| i >= width) {
            return Err(LossError::PositiveOutOfRange { row, index, width });
        }
    }
    let scale = T::one() / T::from_usize(rows.max(1)).expect("row count fits");
    let mut d_logits = Array2::zeros((rows, width));
    let mut row_loss = Array1::zeros(rows);
    for (r, pos) in positives.iter().enumerate() {
        let row = logits.row(r);
        let lse = log_sum_exp(row.iter().copied());
        let weight = T::from_usize(pos.len()).expect("count fits");
        let mut l = T::zero();
        for &k in pos {
            l += lse - row[k];
        }
        row_loss[r] = l;
        let mut d = d_logits.row_mut(r);
        for (dj, &v) in d.iter_mut().zip(row.iter()) {
            *dj = weight * (v - lse).exp() * scale;
        }
        for &k in pos {
            d[k] -= scale;
        }
    }
    let loss = row_loss.iter().copied().sum::<T>() * scale;
    Ok(LossGrad { loss, row_loss, d_logits })
}

/// Softmax loss over the sampled columns only; each row has one positive given
/// by its position inside the sampled set.
pub fn sampled_multiclass_loss<T: Scalar>(
    subset_logits: ArrayView2<T>,
    positive_position: &[Option<usize>],
) -> Result<LossGrad<T>, LossError> {
    let mut positives = Vec::with_capacity(positive_position.len());
    for (row, p) in positive_position.iter().enumerate() {
        match p {
            Some(i) => positives.push(vec![*i]),
            None => return Err(LossError::PositiveNotSampled { row }),
        }
    }
    multiclass_loss(subset_logits, &positives)
}

/// Positions of `targets` inside the sorted sampled set `classes` (`None` when absent).
pub fn positions_in_subset(classes: &[usize], targets: &[usize]) -> Vec<Option<usize>> {
    targets.iter().map(|t| classes.binary_search(t).ok()).collect()
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Class-rebalanced one-vs-all logistic loss, summed over rows and columns:
///
/// `−Σ_n Σ_k [ y_nk/N_k · log σ(l_nk) + (1−y_nk)/(N−N_k) · log(1−σ(l_nk)) ]`
///
/// `positives[n]` lists the columns with `y_nk = 1`; `class_counts[k]` is `N_k`
/// for column `k` and `total` is `N`.
pub fn ova_loss<T: Scalar>(
    logits: ArrayView2<T>,
    positives: &[Vec<usize>],
    total: usize,
    class_counts: &[usize],
) -> Result<LossGrad<T>, LossError> {
    let (rows, width) = logits.dim();
    if positives.len() != rows || class_counts.len() != width {
        return Err(LossError::ShapeMismatch(format!(
            "{} label sets / {} class counts for a {rows}x{width} logit matrix",
            positives.len(),
            class_counts.len()
        )));
    }
    if let Some((column, &count)) = class_counts.iter().enumerate().find(|(_, &c)| c == 0 || c >= total) {
        return Err(LossError::DegenerateClassBalance { column, count, total });
    }
    let pos_w: Vec<T> = class_counts.iter().map(|&c| T::one() / T::from_usize(c).expect("fits")).collect();
    let neg_w: Vec<T> = class_counts.iter().map(|&c| T::one() / T::from_usize(total - c).expect("fits")).collect();
    let mut d_logits = Array2::zeros((rows, width));
    let mut row_loss = Array1::zeros(rows);
    let mut is_pos = vec![false; width];
    for (r, pos) in positives.iter().enumerate() {
        for &k in pos {
            if k >= width {
                return Err(LossError::PositiveOutOfRange { row: r, index: k, width });
            }
            is_pos[k] = true;
        }
        let mut l = T::zero();
        for k in 0..width {
            let z = logits[[r, k]];
            let s = sigmoid(z);
            if is_pos[k] {
                l += pos_w[k] * softplus(-z);
                d_logits[[r, k]] = pos_w[k] * (s - T::one());
            } else {
                l += neg_w[k] * softplus(z);
                d_logits[[r, k]] = neg_w[k] * s;
            }
        }
        row_loss[r] = l;
        for &k in pos {
            is_pos[k] = false;
        }
    }
    Ok(LossGrad { loss: row_loss.iter().copied().sum(), row_loss, d_logits })
}
