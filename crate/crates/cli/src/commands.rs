use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use weaklearn_core::data::{self, generate_synthetic, load_data_dir, read_captions, Example, CAPTIONS_FILE, DICT_FILE};
use weaklearn_core::eval::{self, Direction, EvalReport, ProbeConfig};
use weaklearn_core::loss::check_bounds;
use weaklearn_core::model::{self, AnyCheckpoint, Checkpoint, InputDims, ModelConfig, ModelParams};
use weaklearn_core::rng;
use weaklearn_core::scalar::{DType, Scalar};
use weaklearn_core::textpipe::{build_dictionary, normalize_text, Dictionary, DICT_FORMAT};
use weaklearn_core::trainer::{self, LossKind, OutputUpdate, Trainer};

use crate::config::{self, set};

const LONG_VERSION: &str =
    concat!(env!("CARGO_PKG_VERSION"), " (tensor container WLTENS1, checkpoint WLCKPT1, dictionary v1)");

#[derive(Parser, Debug)]
#[command(name = "weaklearn", version = LONG_VERSION, about = "Weakly supervised image-word training and evaluation")]
pub struct Cli {
    /// Parallel sub-batches for training; results depend on this value only
    /// through floating-point summation order.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic Zipf image-caption dataset directory.
    GenSynth(GenSynthArgs),
    /// Build a frequency dictionary from a caption file.
    BuildDict(BuildDictArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Monte-Carlo check of the sampled-softmax bounds on random logits.
    CheckBounds(CheckBoundsArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    GradCheck(GradCheckArgs),
    /// Word-prediction precision@k on a dataset directory.
    EvalWords(EvalWordsArgs),
    /// Linear probe on penultimate features of single-label examples.
    EvalProbe(EvalProbeArgs),
    /// Analogy accuracy of the output embeddings.
    EvalAnalogy(EvalAnalogyArgs),
    /// Spearman correlation of embedding cosines with similarity ratings.
    EvalSim(EvalSimArgs),
    /// Bilingual matching precision@k.
    EvalTranslate(EvalTranslateArgs),
    /// Write output embeddings as CSV plus nearest neighbors as JSON.
    DumpEmbeddings(DumpArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct GenSynthArgs {
    /// TOML/JSON file with a [synth] section.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    img_size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    zipf: Option<f64>,
    #[arg(long)]
    words_per_image: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of examples.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    stop_count: Option<usize>,
    /// Selects an independent example stream for the same prototypes.
    #[arg(long)]
    example_stream: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct BuildDictArgs {
    /// Caption JSON-lines file; defaults to <data-dir>/captions.jsonl.
    #[arg(long)]
    captions: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    stop_count: usize,
    /// Defaults to <data-dir>/dict.tsv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
enum LossArg {
    Multiclass,
    OneVsAll,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Multiclass => LossKind::Multiclass,
            LossArg::OneVsAll => LossKind::OneVsAll,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
enum DTypeArg {
    F32,
    F64,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// TOML/JSON file with [train] and [model] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_floor: Option<f64>,
    #[arg(long)]
    epoch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    min_epochs_per_lr: Option<usize>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Softmax over all classes instead of the classes present in the batch.
    #[arg(long)]
    full_softmax: bool,
    #[arg(long)]
    val_k: Option<usize>,
    #[arg(long, value_enum)]
    dtype: Option<DTypeArg>,
}

#[derive(Args, Debug, Serialize)]
pub struct CheckBoundsArgs {
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Subset size.
    #[arg(long, alias = "m", default_value_t = 3)]
    subset: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of the random logits.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Class forced into every sampled subset.
    #[arg(long)]
    positive: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checks both losses when omitted.
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
enum SplitArg {
    All,
    Train,
    Val,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalWordsArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Defaults to min(10, K-1).
    #[arg(long)]
    k: Option<usize>,
    /// Which side of the training split to score.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalProbeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory; examples with exactly one label are used.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated lambdas.
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalAnalogyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// Four words per line.
    #[arg(long)]
    questions: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalSimArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// `word1 word2 rating` per line.
    #[arg(long)]
    pairs: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
enum DirectionArg {
    Forward,
    Reverse,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalTranslateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// `source target` per line.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = DirectionArg::Forward)]
    direction: DirectionArg,
    #[arg(long, default_value_t = 1)]
    k: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct DumpArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// CSV path; neighbors go to <stem>.neighbors.json.
    #[arg(long)]
    out: PathBuf,
}

fn log_resolved(command: &str, workers: Option<usize>, resolved: impl Serialize) {
    let line = json!({ "command": command, "workers": workers.unwrap_or(1), "resolved": resolved });
    eprintln!("{line}");
}

fn emit(value: impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(&value)?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    if workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    match cli.command {
        Command::GenSynth(a) => gen_synth(a, workers),
        Command::BuildDict(a) => build_dict(a, workers),
        Command::Train(a) => train(a, workers),
        Command::CheckBounds(a) => {
            log_resolved("check-bounds", workers, &a);
            if !(a.scale.is_finite() && a.scale >= 0.0) {
                bail!("--scale must be finite and non-negative");
            }
            let logits = random_logits(a.k, a.scale, a.seed);
            emit(check_bounds(&logits, a.subset, a.trials, a.seed, a.positive)?)
        }
        Command::GradCheck(a) => grad_check(a, workers),
        Command::EvalWords(a) => eval_words(a, workers),
        Command::EvalProbe(a) => eval_probe(a, workers),
        Command::EvalAnalogy(a) => {
            log_resolved("eval-analogy", workers, &a);
            let (emb, dict) = embeddings(&a.ckpt, &a.dict)?;
            let qs = eval::parse_analogy_questions(&read_text(&a.questions)?)?;
            emit(eval::analogy_accuracy(emb.view(), &dict, &qs)?)
        }
        Command::EvalSim(a) => {
            log_resolved("eval-sim", workers, &a);
            let (emb, dict) = embeddings(&a.ckpt, &a.dict)?;
            let pairs = eval::parse_similarity_pairs(&read_text(&a.pairs)?)?;
            emit(eval::spearman_similarity(emb.view(), &dict, &pairs)?)
        }
        Command::EvalTranslate(a) => {
            log_resolved("eval-translate", workers, &a);
            let (emb, dict) = embeddings(&a.ckpt, &a.dict)?;
            let pairs = eval::parse_translation_pairs(&read_text(&a.pairs)?)?;
            let dir = match a.direction {
                DirectionArg::Forward => Direction::Forward,
                DirectionArg::Reverse => Direction::Reverse,
            };
            emit(eval::translation_precision(emb.view(), &dict, &pairs, dir, a.k)?)
        }
        Command::DumpEmbeddings(a) => {
            log_resolved("dump-embeddings", workers, &a);
            let (emb, dict) = embeddings(&a.ckpt, &a.dict)?;
            let neighbors = eval::dump_embeddings(emb.view(), &dict, &a.out)?;
            emit(json!({ "csv": a.out, "neighbors": neighbors, "rows": emb.nrows(), "dim": emb.ncols() }))
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn random_logits(k: usize, scale: f64, seed: u64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng::stream(seed, u64::MAX);
    (0..k)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            z * scale
        })
        .collect()
}

fn gen_synth(a: GenSynthArgs, workers: Option<usize>) -> Result<()> {
    let mut cfg = config::load_opt(a.config.as_deref())?.synth.unwrap_or_default();
    set(&mut cfg.classes, a.k);
    set(&mut cfg.img_size, a.img_size);
    set(&mut cfg.channels, a.channels);
    set(&mut cfg.zipf_exponent, a.zipf);
    set(&mut cfg.words_per_image, a.words_per_image);
    set(&mut cfg.noise_sigma, a.noise);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.n_examples, a.n);
    set(&mut cfg.stop_count, a.stop_count);
    set(&mut cfg.example_stream, a.example_stream);
    log_resolved("gen-synth", workers, json!({ "synth": cfg, "out_dir": a.out_dir }));
    let data = generate_synthetic(&cfg)?;
    data.write_to_dir(&a.out_dir)?;
    emit(json!({
        "out_dir": a.out_dir,
        "examples": data.examples.len(),
        "dictionary_size": data.dictionary.len(),
        "mean_labels": data::mean_labels(&data.examples),
    }))
}

fn build_dict(a: BuildDictArgs, workers: Option<usize>) -> Result<()> {
    let captions = match (&a.captions, &a.data_dir) {
        (Some(c), _) => c.clone(),
        (None, Some(d)) => d.join(CAPTIONS_FILE),
        (None, None) => bail!("one of --captions or --data-dir is required"),
    };
    let out = match (&a.out, &a.data_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) => d.join(DICT_FILE),
        (None, None) => bail!("--out is required without --data-dir"),
    };
    log_resolved(
        "build-dict",
        workers,
        json!({ "captions": captions, "out": out, "k": a.k, "stop_count": a.stop_count }),
    );
    let records = read_captions(&captions)?;
    let docs: Vec<_> = records.iter().map(|r| normalize_text(&r.caption)).collect();
    let dict = build_dictionary(docs, a.k, a.stop_count)?;
    data::write_dictionary(&out, &dict)?;
    emit(json!({ "out": out, "words": dict.len(), "format": DICT_FORMAT }))
}

fn train(a: TrainArgs, workers: Option<usize>) -> Result<()> {
    let file = config::load_opt(a.config.as_deref())?;
    let mut cfg = file.train.unwrap_or_default();
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.batch_size, a.batch_size);
    set(&mut cfg.lr_init, a.lr);
    set(&mut cfg.lr_floor, a.lr_floor);
    set(&mut cfg.epoch_size, a.epoch_size);
    set(&mut cfg.max_epochs, a.max_epochs);
    set(&mut cfg.min_epochs_per_lr, a.min_epochs_per_lr);
    set(&mut cfg.loss_kind, a.loss.map(Into::into));
    set(&mut cfg.workers, workers);
    if a.full_softmax {
        cfg.output_update = OutputUpdate::Full;
    }
    if a.val_k.is_some() {
        cfg.val_k = a.val_k;
    }
    let (loaded, dict) = load_data_dir(&a.data_dir)?;
    let first =
        loaded.examples.first().ok_or_else(|| anyhow!("dataset {} has no labelled examples", a.data_dir.display()))?;
    let (height, width, channels) = first.image.dims();
    let mut model_cfg = file.model.unwrap_or_else(|| ModelConfig::preset(InputDims { height, width, channels }));
    if let Some(d) = a.dtype {
        model_cfg.dtype = match d {
            DTypeArg::F32 => DType::F32,
            DTypeArg::F64 => DType::F64,
        };
    }
    log_resolved(
        "train",
        workers,
        json!({ "train": cfg, "model": model_cfg, "data_dir": a.data_dir, "out_dir": a.out_dir, "classes": dict.len() }),
    );
    if loaded.dropped > 0 {
        eprintln!("dropped {} examples without dictionary words", loaded.dropped);
    }
    match model_cfg.dtype {
        DType::F32 => train_typed::<f32>(&cfg, &loaded.examples, dict.len(), &model_cfg, &a.out_dir),
        DType::F64 => train_typed::<f64>(&cfg, &loaded.examples, dict.len(), &model_cfg, &a.out_dir),
    }
}

fn train_typed<T: Scalar>(
    cfg: &trainer::TrainConfig,
    examples: &[Example],
    classes: usize,
    model_cfg: &ModelConfig,
    out_dir: &Path,
) -> Result<()> {
    let t = Trainer::<T>::new(cfg, examples, classes, model_cfg)?;
    eprintln!("{} train / {} validation examples", t.train_examples().len(), t.val_examples().len());
    let mut outcome = t.run_with(|r| eprintln!("{}", serde_json::to_string(r).expect("record serializes")))?;
    let path = trainer::save_outcome(&mut outcome, out_dir)?;
    let log = &outcome.log;
    emit(json!({
        "checkpoint": path,
        "log": out_dir.join(trainer::TRAIN_LOG_FILE),
        "epochs": log.records.len(),
        "steps": log.steps,
        "final_lr": log.final_lr,
        "stop_reason": log.stop_reason,
        "final_val_error": log.records.last().map(|r| r.val_error),
    }))
}

fn grad_check(a: GradCheckArgs, workers: Option<usize>) -> Result<()> {
    log_resolved("grad-check", workers, &a);
    let kinds = match a.loss {
        Some(l) => vec![l.into()],
        None => vec![LossKind::Multiclass, LossKind::OneVsAll],
    };
    let model_cfg = trainer::grad_check_model();
    let reports =
        kinds.into_iter().map(|k| trainer::gradient_check(&model_cfg, k, a.seed)).collect::<Result<Vec<_>, _>>()?;
    let max = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    emit(json!({ "max_rel_err": max, "step": trainer::GRAD_CHECK_STEP, "checks": reports }))
}

fn load_checkpoint(path: &Path) -> Result<AnyCheckpoint> {
    model::read_checkpoint_any(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn embeddings(ckpt: &Path, dict: &Path) -> Result<(ndarray::Array2<f64>, Dictionary)> {
    let dict = data::read_dictionary(dict).with_context(|| format!("loading dictionary {}", dict.display()))?;
    let emb = match load_checkpoint(ckpt)? {
        AnyCheckpoint::F32(c) => eval::word_vectors(&c.params),
        AnyCheckpoint::F64(c) => eval::word_vectors(&c.params),
    };
    if emb.nrows() != dict.len() {
        bail!("checkpoint has {} classes but the dictionary has {} words", emb.nrows(), dict.len());
    }
    Ok((emb, dict))
}

fn check_classes<T>(c: &Checkpoint<T>, dict: &Dictionary) -> Result<()>
where
    T: Scalar,
{
    if c.params.classes() != dict.len() {
        bail!("checkpoint has {} classes but the dictionary has {} words", c.params.classes(), dict.len());
    }
    Ok(())
}

fn eval_words(a: EvalWordsArgs, workers: Option<usize>) -> Result<()> {
    log_resolved("eval-words", workers, &a);
    let (loaded, dict) = load_data_dir(&a.data)?;
    let k = a.k.unwrap_or_else(|| 10.min(dict.len().saturating_sub(1)).max(1));
    let (train, val) = data::split_by_id(&loaded.examples, a.validation_fraction, trainer::SPLIT_SALT);
    let chosen: Vec<&Example> = match a.split {
        SplitArg::All => loaded.examples.iter().collect(),
        SplitArg::Train => train,
        SplitArg::Val => val,
    };
    let mut report = match load_checkpoint(&a.ckpt)? {
        AnyCheckpoint::F32(c) => words_report(&c, &dict, &chosen, k)?,
        AnyCheckpoint::F64(c) => words_report(&c, &dict, &chosen, k)?,
    };
    report.n_skipped = loaded.dropped;
    emit(report)
}

fn words_report<T: Scalar>(
    c: &Checkpoint<T>,
    dict: &Dictionary,
    examples: &[&Example],
    k: usize,
) -> Result<EvalReport> {
    check_classes(c, dict)?;
    Ok(eval::precision_at_k(&c.params, examples, k)?)
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("bad lambda {v:?}: {e}"))).collect()
}

fn features<T: Scalar>(params: &ModelParams<T>, examples: &[&Example]) -> Result<ndarray::Array2<f64>> {
    let images: Vec<_> = examples.iter().map(|e| &e.image).collect();
    Ok(model::extract_features(params, &images, eval::EVAL_CHUNK)?.mapv(|v| v.to_f64_lossless()))
}

fn eval_probe(a: EvalProbeArgs, workers: Option<usize>) -> Result<()> {
    let mut cfg = ProbeConfig { seed: a.seed, ..ProbeConfig::default() };
    if let Some(g) = &a.lambda_grid {
        cfg.lambda_grid = parse_grid(g)?;
    }
    log_resolved("eval-probe", workers, json!({ "ckpt": a.ckpt, "data": a.data, "probe": cfg }));
    let (loaded, _dict) = load_data_dir(&a.data)?;
    let single: Vec<&Example> = loaded.examples.iter().filter(|e| e.labels.len() == 1).collect();
    let skipped = loaded.examples.len() - single.len();
    let feats = match load_checkpoint(&a.ckpt)? {
        AnyCheckpoint::F32(c) => features(&c.params, &single)?,
        AnyCheckpoint::F64(c) => features(&c.params, &single)?,
    };
    let labels: Vec<usize> = single.iter().map(|e| e.labels[0] as usize).collect();
    let ids: Vec<String> = single.iter().map(|e| e.id.clone()).collect();
    let mut result = eval::linear_probe(feats.view(), &labels, &ids, &cfg)?;
    result.report.n_skipped = skipped + loaded.dropped;
    emit(result.report)
}
