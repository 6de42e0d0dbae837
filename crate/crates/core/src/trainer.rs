//! Plain SGD with class-balanced batches, sparse output-column updates and
//! validation-driven learning-rate halving.
//!
//! An epoch is `epoch_size` sampled instances. After every epoch the
//! validation error (1 − precision@k) is computed; when it is strictly larger
//! than after the previous epoch and the current rate has been used for at
//! least `min_epochs_per_lr` epochs, the rate is halved. Training stops once
//! the rate drops below `lr_floor` or after `max_epochs`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{split_by_id, Example};
use crate::eval;
use crate::loss::{self, LossError};
use crate::model::{self, images_to_matrix, Checkpoint, Gradients, ModelConfig, ModelError, ModelParams};
use crate::rng::{self, RngState};
use crate::sampler::{next_batch, Batch, ClassIndex};
use crate::scalar::Scalar;

/// Salt of the train/validation id hash.
pub const SPLIT_SALT: u64 = 0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Multiclass,
    OneVsAll,
}

/// Which output columns take part in the softmax of a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputUpdate {
    /// Only classes present in the batch (the default).
    Sampled,
    /// All K classes; multiclass loss only.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_floor: f64,
    pub min_epochs_per_lr: usize,
    pub epoch_size: usize,
    pub max_epochs: usize,
    pub loss_kind: LossKind,
    pub output_update: OutputUpdate,
    pub seed: u64,
    pub validation_fraction: f64,
    /// k of the validation precision; `None` means min(10, K−1).
    pub val_k: Option<usize>,
    /// Sub-batches whose gradients are computed in parallel and summed in order.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            lr_init: 0.1,
            lr_floor: 1e-6,
            min_epochs_per_lr: 10,
            epoch_size: 10_000,
            max_epochs: 200,
            loss_kind: LossKind::Multiclass,
            output_update: OutputUpdate::Sampled,
            seed: 0,
            validation_fraction: 0.2,
            val_k: None,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_owned()));
        if self.batch_size == 0 || self.epoch_size == 0 || self.workers == 0 {
            return bad("batch_size, epoch_size and workers must be positive");
        }
        if !(self.lr_floor > 0.0 && self.lr_init.is_finite() && self.lr_floor.is_finite()) {
            return bad("learning rates must be finite and lr_floor positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must be in (0, 1)");
        }
        if self.val_k == Some(0) {
            return bad("val_k must be at least 1");
        }
        if self.loss_kind == LossKind::OneVsAll && self.output_update == OutputUpdate::Full {
            return bad("one_vs_all trains on the classes present in each batch only");
        }
        Ok(())
    }

    pub fn resolved_val_k(&self, classes: usize) -> usize {
        self.val_k.unwrap_or_else(|| 10.min(classes.saturating_sub(1)).max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss_mean: f64,
    pub val_error: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The initial rate was already below the floor.
    LrBelowFloorAtStart,
    LrFloor,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub final_lr: f64,
    pub stop_reason: StopReason,
    pub steps: u64,
    pub checkpoint: Option<PathBuf>,
}

impl TrainLog {
    /// One JSON object per epoch record.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }
}

/// Checks the schedule contract from the log alone: lr non-increasing and only
/// ever halved, each halving preceded by a validation-error increase after at
/// least `min_epochs_per_lr` epochs at the previous rate, and a valid stop.
pub fn verify_train_log(log: &TrainLog, cfg: &TrainConfig) -> Result<(), String> {
    let recs = &log.records;
    if cfg.lr_init < cfg.lr_floor {
        return match (recs.is_empty(), log.stop_reason) {
            (true, StopReason::LrBelowFloorAtStart) => Ok(()),
            _ => Err("rate below floor at start must produce an empty log".into()),
        };
    }
    if recs.is_empty() {
        return Err("empty log".into());
    }
    if recs[0].lr != cfg.lr_init {
        return Err(format!("first epoch lr {} != lr_init {}", recs[0].lr, cfg.lr_init));
    }
    let mut run = 0;
    for (i, r) in recs.iter().enumerate() {
        if r.epoch != i + 1 {
            return Err(format!("epoch numbering breaks at record {i}"));
        }
        if !(0.0..=1.0).contains(&r.val_error) {
            return Err(format!("epoch {}: val_error {} out of range", r.epoch, r.val_error));
        }
        run += 1;
        let next_lr = recs.get(i + 1).map_or(log.final_lr, |n| n.lr);
        if next_lr > r.lr {
            return Err(format!("lr increased after epoch {}", r.epoch));
        }
        if next_lr < r.lr {
            if next_lr != r.lr / 2.0 {
                return Err(format!("lr after epoch {} is not half of {}", r.epoch, r.lr));
            }
            if run < cfg.min_epochs_per_lr {
                return Err(format!("halving after only {run} epochs at lr {}", r.lr));
            }
            if i == 0 || r.val_error <= recs[i - 1].val_error {
                return Err(format!("halving after epoch {} without a validation-error increase", r.epoch));
            }
            run = 0;
        }
    }
    match log.stop_reason {
        StopReason::LrFloor if log.final_lr < cfg.lr_floor && recs.len() <= cfg.max_epochs => Ok(()),
        StopReason::MaxEpochs if recs.len() == cfg.max_epochs && log.final_lr >= cfg.lr_floor => Ok(()),
        other => {
            Err(format!("stop reason {other:?} inconsistent with {} epochs and final lr {}", recs.len(), log.final_lr))
        }
    }
}

/// θ ← θ − lr·∇θ and, for `k ∈ present_classes` only, w_k ← w_k − lr·∇w_k.
pub fn sgd_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    present_classes: &[usize],
    lr: T,
) -> Result<(), TrainError> {
    if grads.output.dim() != (params.embed_dim(), present_classes.len()) || grads.classes != present_classes {
        return Err(TrainError::ShapeMismatch(format!(
            "output gradient {:?} for {} present classes",
            grads.output.dim(),
            present_classes.len()
        )));
    }
    if grads.backbone.len() != params.backbone.len()
        || grads
            .backbone
            .iter()
            .zip(&params.backbone)
            .any(|(g, p)| g.weight.dim() != p.weight.dim() || g.bias.dim() != p.bias.dim())
    {
        return Err(TrainError::ShapeMismatch("backbone gradient shapes".into()));
    }
    if let Some(&bad) = present_classes.iter().find(|&&k| k >= params.classes()) {
        return Err(ModelError::ClassOutOfRange { class: bad, classes: params.classes() }.into());
    }
    for (p, g) in params.backbone.iter_mut().zip(&grads.backbone) {
        p.weight.scaled_add(-lr, &g.weight);
        p.bias.scaled_add(-lr, &g.bias);
    }
    for (j, &k) in present_classes.iter().enumerate() {
        let mut col = params.output.column_mut(k);
        col.scaled_add(-lr, &grads.output.column(j));
    }
    Ok(())
}

/// Per-row positive sets inside `classes` for single-target rows.
fn target_positions(classes: &[usize], targets: &[usize]) -> Result<Vec<Option<usize>>, TrainError> {
    Ok(loss::positions_in_subset(classes, targets))
}

fn sub_batch_gradients<T: Scalar>(
    params: &ModelParams<T>,
    x: ArrayView2<T>,
    positions: &[Option<usize>],
    classes: &[usize],
    kind: LossKind,
    batch_total: usize,
    class_counts: &[usize],
) -> Result<(T, Gradients<T>), TrainError> {
    let (e, trace) = params.forward(x)?;
    let logits = params.score_subset(e.view(), classes)?;
    let (loss_sum, d_logits) = match kind {
        LossKind::Multiclass => {
            let g = loss::sampled_multiclass_loss(logits.view(), positions)?;
            // rescale the sub-batch mean to a share of the full-batch mean
            let rows = T::from_usize(positions.len()).expect("fits");
            let total = T::from_usize(batch_total).expect("fits");
            let mut d = g.d_logits;
            if positions.len() != batch_total {
                d *= rows / total;
            }
            (g.loss * rows, d)
        }
        LossKind::OneVsAll => {
            let positives: Vec<Vec<usize>> = positions
                .iter()
                .enumerate()
                .map(|(row, p)| p.map(|i| vec![i]).ok_or(LossError::PositiveNotSampled { row }))
                .collect::<Result<_, _>>()?;
            let g = loss::ova_loss(logits.view(), &positives, batch_total, class_counts)?;
            (g.loss, g.d_logits)
        }
    };
    let (d_e, d_w) = params.output_backward(e.view(), classes, d_logits.view())?;
    let backbone = params.backward(&trace, d_e.view())?;
    Ok((loss_sum, Gradients { backbone, output: d_w, classes: classes.to_vec() }))
}

/// Gradients of the batch loss with the batch split into `workers` contiguous
/// sub-batches; partial results are summed in sub-batch order. Returns the
/// per-instance mean loss.
pub fn batch_gradients<T: Scalar>(
    params: &ModelParams<T>,
    x: ArrayView2<T>,
    targets: &[usize],
    classes: &[usize],
    kind: LossKind,
    workers: usize,
) -> Result<(f64, Gradients<T>), TrainError> {
    let b = targets.len();
    if x.nrows() != b || b == 0 {
        return Err(TrainError::ShapeMismatch(format!("{} rows for {b} targets", x.nrows())));
    }
    let positions = target_positions(classes, targets)?;
    let class_counts: Vec<usize> = match kind {
        LossKind::OneVsAll => {
            let mut counts = vec![0usize; classes.len()];
            for p in positions.iter().flatten() {
                counts[*p] += 1;
            }
            counts
        }
        LossKind::Multiclass => Vec::new(),
    };
    let workers = workers.clamp(1, b);
    let chunk = b.div_ceil(workers);
    let ranges: Vec<(usize, usize)> = (0..b).step_by(chunk).map(|s| (s, (s + chunk).min(b))).collect();
    let run = |&(lo, hi): &(usize, usize)| {
        sub_batch_gradients(params, x.slice(s![lo..hi, ..]), &positions[lo..hi], classes, kind, b, &class_counts)
    };
    let parts: Vec<Result<(T, Gradients<T>), TrainError>> =
        if ranges.len() == 1 { ranges.iter().map(run).collect() } else { ranges.par_iter().map(run).collect() };
    let mut iter = parts.into_iter();
    let (mut loss_sum, mut grads) = iter.next().expect("at least one sub-batch")?;
    for part in iter {
        let (l, g) = part?;
        loss_sum += l;
        grads.accumulate(&g);
    }
    Ok((loss_sum.to_f64_lossless() / b as f64, grads))
}

/// What one SGD step did.
#[derive(Clone, Debug)]
pub struct StepInfo {
    pub batch: Batch,
    /// Output columns updated this step.
    pub classes: Vec<usize>,
    pub loss: f64,
}

pub struct Trainer<'a, T> {
    cfg: TrainConfig,
    params: ModelParams<T>,
    train: Vec<&'a Example>,
    val: Vec<&'a Example>,
    index: ClassIndex,
    rng: rng::Rng,
    lr: f64,
    steps: u64,
    val_k: usize,
}

pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub log: TrainLog,
    pub rng_state: RngState,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            params: self.params.clone(),
            rng_state: self.rng_state.clone(),
            step: self.log.steps,
            learning_rate: self.log.final_lr,
        }
    }
}

impl<'a, T: Scalar> Trainer<'a, T> {
    /// Splits `examples` by id hash and initializes parameters from `cfg.seed`.
    pub fn new(
        cfg: &TrainConfig,
        examples: &'a [Example],
        classes: usize,
        model_cfg: &ModelConfig,
    ) -> Result<Self, TrainError> {
        let params = model::init_params::<T>(model_cfg, classes, cfg.seed)?;
        Self::with_params(cfg, examples, params)
    }

    pub fn with_params(cfg: &TrainConfig, examples: &'a [Example], params: ModelParams<T>) -> Result<Self, TrainError> {
        cfg.validate()?;
        let classes = params.classes();
        if let Some(bad) = examples.iter().find(|e| e.labels.iter().any(|&l| l as usize >= classes)) {
            return Err(ModelError::ShapeMismatch(format!("example {} has a label outside K={classes}", bad.id)).into());
        }
        let (train, val) = split_by_id(examples, cfg.validation_fraction, SPLIT_SALT);
        if train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        if val.is_empty() {
            return Err(TrainError::EmptySplit("validation"));
        }
        let index = ClassIndex::build(&train, classes);
        if index.active_classes().is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        Ok(Trainer {
            val_k: cfg.resolved_val_k(classes),
            cfg: cfg.clone(),
            params,
            train,
            val,
            index,
            rng: rng::stream(cfg.seed, 1),
            lr: cfg.lr_init,
            steps: 0,
        })
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn train_examples(&self) -> &[&'a Example] {
        &self.train
    }

    pub fn val_examples(&self) -> &[&'a Example] {
        &self.val
    }

    pub fn class_index(&self) -> &ClassIndex {
        &self.index
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// One SGD step on a batch of `size` sampled instances.
    pub fn step_with(&mut self, size: usize) -> Result<StepInfo, TrainError> {
        let batch = next_batch(&self.index, size, &mut self.rng);
        let classes = match self.cfg.output_update {
            OutputUpdate::Sampled => batch.present_classes.clone(),
            OutputUpdate::Full => (0..self.params.classes()).collect(),
        };
        let x: Array2<T> = images_to_matrix(batch.examples.iter().map(|&i| &self.train[i].image));
        let (loss, grads) =
            batch_gradients(&self.params, x.view(), &batch.targets, &classes, self.cfg.loss_kind, self.cfg.workers)?;
        sgd_step(&mut self.params, &grads, &classes, T::from_f64_lossy(self.lr))?;
        self.steps += 1;
        Ok(StepInfo { batch, classes, loss })
    }

    pub fn step(&mut self) -> Result<StepInfo, TrainError> {
        self.step_with(self.cfg.batch_size)
    }

    /// Runs one epoch and returns the mean per-instance training loss.
    pub fn run_epoch(&mut self) -> Result<f64, TrainError> {
        let mut remaining = self.cfg.epoch_size;
        let mut weighted = 0.0;
        while remaining > 0 {
            let size = remaining.min(self.cfg.batch_size);
            weighted += self.step_with(size)?.loss * size as f64;
            remaining -= size;
        }
        Ok(weighted / self.cfg.epoch_size as f64)
    }

    pub fn validation_error(&self) -> Result<f64, TrainError> {
        validation_error(&self.params, &self.val, self.val_k)
    }

    pub fn run(self) -> Result<TrainOutcome<T>, TrainError> {
        self.run_with(|_| {})
    }

    /// Full schedule; `on_epoch` sees every record as it is produced.
    pub fn run_with(mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome<T>, TrainError> {
        let mut records = Vec::new();
        let stop_reason;
        if self.lr < self.cfg.lr_floor {
            stop_reason = StopReason::LrBelowFloorAtStart;
        } else {
            let mut prev_val: Option<f64> = None;
            let mut epochs_at_lr = 0;
            loop {
                if records.len() >= self.cfg.max_epochs {
                    stop_reason = StopReason::MaxEpochs;
                    break;
                }
                let start = Instant::now();
                let lr = self.lr;
                let train_loss_mean = self.run_epoch()?;
                let val_error = self.validation_error()?;
                epochs_at_lr += 1;
                let rec = EpochRecord {
                    epoch: records.len() + 1,
                    lr,
                    train_loss_mean,
                    val_error,
                    wall_ms: start.elapsed().as_millis() as u64,
                };
                on_epoch(&rec);
                records.push(rec);
                if prev_val.is_some_and(|p| val_error > p) && epochs_at_lr >= self.cfg.min_epochs_per_lr {
                    self.lr /= 2.0;
                    epochs_at_lr = 0;
                }
                prev_val = Some(val_error);
                if self.lr < self.cfg.lr_floor {
                    stop_reason = StopReason::LrFloor;
                    break;
                }
            }
        }
        Ok(TrainOutcome {
            rng_state: RngState::capture(&self.rng),
            log: TrainLog { records, final_lr: self.lr, stop_reason, steps: self.steps, checkpoint: None },
            params: self.params,
        })
    }
}

pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    examples: &[Example],
    classes: usize,
    model_cfg: &ModelConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    Trainer::<T>::new(cfg, examples, classes, model_cfg)?.run()
}

/// Writes `checkpoint.wlck` (atomically) and `train_log.jsonl` into `out_dir`.
pub fn save_outcome<T: Scalar>(outcome: &mut TrainOutcome<T>, out_dir: &Path) -> Result<PathBuf, TrainError> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(CHECKPOINT_FILE);
    model::write_checkpoint(&path, &outcome.checkpoint())?;
    outcome.log.checkpoint = Some(path.clone());
    crate::io_util::write_atomic(&out_dir.join(TRAIN_LOG_FILE), outcome.log.to_jsonl().as_bytes())?;
    Ok(path)
}

pub const CHECKPOINT_FILE: &str = "checkpoint.wlck";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

/// 1 − precision@k over `val`.
pub fn validation_error<T: Scalar>(params: &ModelParams<T>, val: &[&Example], k: usize) -> Result<f64, TrainError> {
    let report = eval::precision_at_k(params, val, k)?;
    Ok(1.0 - report.value)
}

/// Output classes and batch rows of the gradient-check problem.
pub const GRAD_CHECK_CLASSES: usize = 4;
pub const GRAD_CHECK_ROWS: usize = 6;
pub const GRAD_CHECK_STEP: f64 = 1e-4;
pub const GRAD_CHECK_MAX_PARAMS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss_kind: LossKind,
    pub n_params: usize,
    pub max_rel_err: f64,
}

/// The default gradient-check backbone: three dense layers on a 4×4 image.
pub fn grad_check_model() -> ModelConfig {
    ModelConfig::mlp(model::InputDims { height: 4, width: 4, channels: 1 }, &[12, 10], 6)
}

/// Rows of the check problem: row r is labelled {r mod K, (r+1) mod K}, so
/// every class is both positive and negative somewhere in the batch.
fn grad_check_positives(rows: usize, classes: usize) -> Vec<Vec<usize>> {
    (0..rows)
        .map(|r| {
            let mut p = vec![r % classes, (r + 1) % classes];
            p.sort_unstable();
            p.dedup();
            p
        })
        .collect()
}

fn full_loss(
    params: &ModelParams<f64>,
    x: ArrayView2<f64>,
    positives: &[Vec<usize>],
    kind: LossKind,
) -> Result<loss::LossGrad<f64>, TrainError> {
    let e = params.embed(x)?;
    let logits = params.score_all(e.view())?;
    Ok(match kind {
        LossKind::Multiclass => loss::multiclass_loss(logits.view(), positives)?,
        LossKind::OneVsAll => {
            let mut counts = vec![0usize; params.classes()];
            for p in positives.iter().flatten() {
                counts[*p] += 1;
            }
            loss::ova_loss(logits.view(), positives, positives.len(), &counts)?
        }
    })
}

/// Largest relative difference, with denominator max(|a|, |n|, 1e-8), between
/// the analytic gradient and central finite differences over every parameter.
pub fn gradient_check_params(
    params: &ModelParams<f64>,
    x: ArrayView2<f64>,
    positives: &[Vec<usize>],
    kind: LossKind,
) -> Result<f64, TrainError> {
    let classes: Vec<usize> = (0..params.classes()).collect();
    let (e, trace) = params.forward(x)?;
    let g = full_loss(params, x, positives, kind)?;
    let (d_e, d_w) = params.output_backward(e.view(), &classes, g.d_logits.view())?;
    let d_backbone = params.backward(&trace, d_e.view())?;

    let mut analytic = Vec::new();
    for l in &d_backbone {
        analytic.extend(l.weight.iter().copied());
        analytic.extend(l.bias.iter().copied());
    }
    analytic.extend(d_w.iter().copied());

    let mut probe = params.clone();
    let h = GRAD_CHECK_STEP;
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        let orig = *param_mut(&mut probe, i);
        *param_mut(&mut probe, i) = orig + h;
        let plus = full_loss(&probe, x, positives, kind)?.loss;
        *param_mut(&mut probe, i) = orig - h;
        let minus = full_loss(&probe, x, positives, kind)?.loss;
        *param_mut(&mut probe, i) = orig;
        numeric.push((plus - minus) / (2.0 * h));
    }
    Ok(analytic.iter().zip(&numeric).map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8)).fold(0.0, f64::max))
}

/// Parameter `i` in the order layer weights, layer bias, …, output matrix.
fn param_mut(p: &mut ModelParams<f64>, mut i: usize) -> &mut f64 {
    for l in &mut p.backbone {
        if i < l.weight.len() {
            return l.weight.iter_mut().nth(i).expect("in range");
        }
        i -= l.weight.len();
        if i < l.bias.len() {
            return &mut l.bias[i];
        }
        i -= l.bias.len();
    }
    p.output.iter_mut().nth(i).expect("parameter index in range")
}

/// Builds a small random 64-bit problem on `model_cfg` and runs
/// [`gradient_check_params`].
pub fn gradient_check(model_cfg: &ModelConfig, kind: LossKind, seed: u64) -> Result<GradCheckReport, TrainError> {
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    let mut params = model::init_params::<f64>(model_cfg, GRAD_CHECK_CLASSES, seed)?;
    let n_params = params.backbone.iter().map(|l| l.weight.len() + l.bias.len()).sum::<usize>() + params.output.len();
    if n_params > GRAD_CHECK_MAX_PARAMS {
        return Err(TrainError::InvalidConfig(format!(
            "gradient check needs at most {GRAD_CHECK_MAX_PARAMS} parameters, model has {n_params}"
        )));
    }
    let mut rng = rng::stream(seed, 2);
    for l in &mut params.backbone {
        l.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    let x = Array2::from_shape_simple_fn((GRAD_CHECK_ROWS, params.input_len()), || StandardNormal.sample(&mut rng));
    let positives = grad_check_positives(GRAD_CHECK_ROWS, GRAD_CHECK_CLASSES);
    let max_rel_err = gradient_check_params(&params, x.view(), &positives, kind)?;
    Ok(GradCheckReport { loss_kind: kind, n_params, max_rel_err })
}
