//! L2-regularized multinomial logistic regression on frozen features.

use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport};
use crate::data::in_holdout;

/// 10^-4 … 10^2, seven log-spaced values.
pub fn default_lambda_grid() -> Vec<f64> {
    (-4..=2).map(|e| 10f64.powi(e)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lambda_grid: Vec<f64>,
    pub test_fraction: f64,
    /// Share of the non-test rows used for lambda selection.
    pub val_fraction: f64,
    /// Salt of the id hash that assigns rows to folds.
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lambda_grid: default_lambda_grid(),
            test_fraction: 0.2,
            val_fraction: 0.2,
            seed: 0,
            max_iter: 10_000,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSplit {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug)]
pub struct ProbeResult {
    /// (d + 1) × C; the last row is the unregularized bias.
    pub weights: Array2<f64>,
    /// Standardization applied to raw features before `weights`.
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    pub lambda: f64,
    pub val_accuracy: Vec<(f64, f64)>,
    pub report: EvalReport,
}

impl ProbeResult {
    pub fn predict(&self, features: ArrayView2<f64>) -> Vec<usize> {
        let z = (&features - &self.mean) / &self.scale;
        predict(&with_bias(z.view()), &self.weights)
    }
}

fn with_bias(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::ones((x.nrows(), x.ncols() + 1));
    out.slice_mut(s![.., ..x.ncols()]).assign(&x);
    out
}

fn predict(x: &Array2<f64>, w: &Array2<f64>) -> Vec<usize> {
    let logits = x.dot(w);
    logits
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn accuracy(x: &Array2<f64>, w: &Array2<f64>, y: &[usize]) -> f64 {
    let hits = predict(x, w).iter().zip(y).filter(|(p, t)| p == t).count();
    hits as f64 / y.len() as f64
}

/// Gradient of mean cross-entropy + λ/2‖W‖² (bias row excluded).
fn gradient(x: &Array2<f64>, y: &[usize], w: &Array2<f64>, lambda: f64) -> Array2<f64> {
    let n = x.nrows() as f64;
    let mut p = x.dot(w);
    for (mut row, &t) in p.outer_iter_mut().zip(y) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
        row[t] -= 1.0;
    }
    let mut g = x.t().dot(&p) / n;
    let d = w.nrows() - 1;
    g.slice_mut(s![..d, ..]).scaled_add(lambda, &w.slice(s![..d, ..]));
    g
}

/// Largest eigenvalue of XᵀX/n by power iteration.
fn gram_top_eigen(x: &Array2<f64>) -> f64 {
    let g = x.t().dot(x) / x.nrows() as f64;
    let mut v = Array1::from_elem(g.nrows(), 1.0 / (g.nrows() as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..200 {
        let next = g.dot(&v);
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        est = norm;
        v = next / norm;
    }
    est
}

/// Accelerated gradient descent with gradient-based restart. Stops when the
/// gradient norm drops below `tol` or after `max_iter` iterations.
fn fit(x: &Array2<f64>, y: &[usize], classes: usize, lambda: f64, max_iter: usize, tol: f64) -> Array2<f64> {
    let lip = 0.5 * gram_top_eigen(x) * 1.1 + lambda;
    let step = 1.0 / lip.max(1e-12);
    let mut theta = Array2::<f64>::zeros((x.ncols(), classes));
    let mut y_pt = theta.clone();
    let mut t = 1.0f64;
    for _ in 0..max_iter {
        let g = gradient(x, y, &y_pt, lambda);
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < tol {
            return y_pt;
        }
        let next = &y_pt - &(step * &g);
        let moved = &next - &theta;
        if (&g * &moved).sum() > 0.0 {
            t = 1.0;
            y_pt = next.clone();
        } else {
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            y_pt = &next + &(((t - 1.0) / t_next) * &moved);
            t = t_next;
        }
        theta = next;
    }
    theta
}

fn standardizer(x: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    (mean, scale)
}

fn rows(x: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Selects lambda by validation accuracy, refits on train + validation and
/// reports accuracy on the held-out test fold. Rows are assigned to folds by
/// a salted hash of their id.
pub fn linear_probe(
    features: ArrayView2<f64>,
    labels: &[usize],
    ids: &[String],
    cfg: &ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    let n = features.nrows();
    if labels.len() != n || ids.len() != n {
        return Err(EvalError::InvalidArgument(format!(
            "{n} feature rows, {} labels, {} ids",
            labels.len(),
            ids.len()
        )));
    }
    if cfg.lambda_grid.is_empty() || cfg.lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(EvalError::InvalidArgument("lambda grid must be non-empty, finite and non-negative".into()));
    }
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(EvalError::SingleClass(distinct.len()));
    }
    let classes = distinct.last().copied().expect("non-empty") + 1;

    let fold = |id: &str| {
        if in_holdout(id, cfg.test_fraction, cfg.seed) {
            ProbeSplit::Test
        } else if in_holdout(id, cfg.val_fraction, cfg.seed.wrapping_add(1)) {
            ProbeSplit::Val
        } else {
            ProbeSplit::Train
        }
    };
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for (i, id) in ids.iter().enumerate() {
        match fold(id) {
            ProbeSplit::Train => tr.push(i),
            ProbeSplit::Val => va.push(i),
            ProbeSplit::Test => te.push(i),
        }
    }
    if tr.is_empty() || va.is_empty() || te.is_empty() {
        return Err(EvalError::InvalidArgument(format!(
            "split too small: {} train, {} val, {} test rows",
            tr.len(),
            va.len(),
            te.len()
        )));
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();

    let x_tr = rows(features, &tr);
    let (mean, scale) = standardizer(x_tr.view());
    let prep = |x: Array2<f64>| with_bias(((x - &mean) / &scale).view());
    let (xt, xv) = (prep(x_tr.clone()), prep(rows(features, &va)));
    let (yt, yv) = (pick(&tr), pick(&va));
    let mut val_accuracy = Vec::with_capacity(cfg.lambda_grid.len());
    let mut best = (f64::NEG_INFINITY, cfg.lambda_grid[0]);
    for &lambda in &cfg.lambda_grid {
        let w = fit(&xt, &yt, classes, lambda, cfg.max_iter, cfg.grad_tol);
        let acc = accuracy(&xv, &w, &yv);
        val_accuracy.push((lambda, acc));
        if acc > best.0 {
            best = (acc, lambda);
        }
    }
    let lambda = best.1;

    let mut trva = tr.clone();
    trva.extend_from_slice(&va);
    trva.sort_unstable();
    let x_all = rows(features, &trva);
    let (mean, scale) = standardizer(x_all.view());
    let prep = |x: Array2<f64>| with_bias(((x - &mean) / &scale).view());
    let w = fit(&prep(x_all), &pick(&trva), classes, lambda, cfg.max_iter, cfg.grad_tol);
    let test_acc = accuracy(&prep(rows(features, &te)), &w, &pick(&te));

    let mut report = EvalReport::new("probe_accuracy", test_acc, None, te.len(), 0);
    report.details.insert("lambda".into(), lambda);
    report.details.insert("n_train".into(), tr.len() as f64);
    report.details.insert("n_val".into(), va.len() as f64);
    for (l, a) in &val_accuracy {
        report.details.insert(format!("val_accuracy@{l:e}"), *a);
    }
    Ok(ProbeResult { weights: w, mean, scale, lambda, val_accuracy, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn default_grid() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 7);
        assert_eq!(g[0], 1e-4);
        assert_eq!(g[6], 100.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = array![[0.5, -1.0, 1.0], [1.5, 0.2, 1.0], [-0.3, 0.7, 1.0]];
        let y = [0, 2, 1];
        let w = array![[0.1, -0.2, 0.3], [0.0, 0.4, -0.1], [0.2, 0.1, 0.0]];
        let obj = |w: &Array2<f64>| {
            let l = x.dot(w);
            let mut f = 0.0;
            for (row, &t) in l.outer_iter().zip(&y) {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                f += m + row.mapv(|v| (v - m).exp()).sum().ln() - row[t];
            }
            f / 3.0 + 0.35 * w.slice(s![..2, ..]).mapv(|v| v * v).sum()
        };
        let g = gradient(&x, &y, &w, 0.7);
        for i in 0..3 {
            for j in 0..3 {
                let mut a = w.clone();
                let mut b = w.clone();
                a[[i, j]] += 1e-6;
                b[[i, j]] -= 1e-6;
                let num = (obj(&a) - obj(&b)) / 2e-6;
                assert!((num - g[[i, j]]).abs() < 1e-8, "{i},{j}: {num} vs {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn separable_toy_set() {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for i in 0..200 {
            let c = i % 2;
            let off = (i / 2) as f64 * 0.01;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            feats.extend_from_slice(&[sign * (1.0 + off), off - 1.0]);
            labels.push(c);
            ids.push(format!("t{i}"));
        }
        let x = Array2::from_shape_vec((200, 2), feats).unwrap();
        let cfg = ProbeConfig { lambda_grid: vec![1e-6], ..ProbeConfig::default() };
        let r = linear_probe(x.view(), &labels, &ids, &cfg).unwrap();
        assert_eq!(r.report.value, 1.0);
        assert_eq!(r.predict(x.view()), labels);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Array2::zeros((10, 2));
        let ids: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        assert!(matches!(
            linear_probe(x.view(), &[3; 10], &ids, &ProbeConfig::default()),
            Err(EvalError::SingleClass(1))
        ));
    }
}
