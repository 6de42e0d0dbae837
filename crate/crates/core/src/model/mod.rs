//! Backbone `f(x; θ)` plus output matrix `W` (E × K) with hand-written backward passes.
//!
//! Images enter as a `batch × D` matrix, each row an `(H, W, C)` row-major
//! image. Activations between stages keep the same per-row layout so that a
//! convolution output feeds the next stage without transposition.

mod checkpoint;
mod config;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use thiserror::Error;

use crate::data::ImageTensor;
use crate::rng;
use crate::scalar::Scalar;

pub use checkpoint::{read_checkpoint, read_checkpoint_any, write_checkpoint, AnyCheckpoint, Checkpoint, CKPT_MAGIC};
pub use config::{InputDims, LayerGeometry, LayerSpec, ModelConfig, PRESET_EMBED_DIM, PRESET_HIDDEN};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class {class} out of range for K={classes}")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("forward trace does not match the batch")]
    TraceMismatch,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Weight (rows = fan-in, cols = fan-out) and bias of one stage.
/// Parameter-free stages hold empty arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> LayerParams<T> {
    fn zeros(rows: usize, cols: usize) -> Self {
        LayerParams { weight: Array2::zeros((rows, cols)), bias: Array1::zeros(cols) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    geometry: Vec<LayerGeometry>,
    pub backbone: Vec<LayerParams<T>>,
    /// E × K; column k is the embedding of word k.
    pub output: Array2<T>,
}

/// Cached values needed by [`ModelParams::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    batch: usize,
    layers: Vec<LayerTrace<T>>,
}

#[derive(Clone, Debug)]
enum LayerTrace<T> {
    Dense { input: Array2<T>, pre: Array2<T> },
    Conv { cols: Array2<T>, pre: Array2<T> },
    Pool { argmax: Vec<usize>, in_len: usize },
}

impl<T> ForwardTrace<T> {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

/// Gradients for one step: every backbone array plus the selected output columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub backbone: Vec<LayerParams<T>>,
    /// E × |classes|, column j belongs to `classes[j]`.
    pub output: Array2<T>,
    pub classes: Vec<usize>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ModelParams<T>, classes: Vec<usize>) -> Self {
        Gradients {
            backbone: params.backbone.iter().map(|l| LayerParams::zeros(l.weight.nrows(), l.weight.ncols())).collect(),
            output: Array2::zeros((params.embed_dim(), classes.len())),
            classes,
        }
    }

    /// In-place sum; both sides must cover the same classes.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        assert_eq!(self.classes, other.classes, "gradient class sets differ");
        for (a, b) in self.backbone.iter_mut().zip(&other.backbone) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        self.output += &other.output;
    }
}

fn relu_inplace<T: Scalar>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

fn relu_mask<T: Scalar>(grad: &mut Array2<T>, pre: &Array2<T>) {
    ndarray::Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= T::zero() {
            *g = T::zero();
        }
    });
}

fn im2col<T: Scalar>(x: ArrayView2<T>, geo: &LayerGeometry, kernel: usize) -> Array2<T> {
    let (h, w, cin) = (geo.input.height, geo.input.width, geo.input.channels);
    let (ho, wo) = (geo.output.height, geo.output.width);
    let batch = x.nrows();
    let row_len = kernel * cin;
    let mut cols = Array2::zeros((batch * ho * wo, kernel * row_len));
    for b in 0..batch {
        let img = x.row(b);
        let img = img.as_slice().expect("standard layout");
        for oy in 0..ho {
            for ox in 0..wo {
                let mut out_row = cols.row_mut((b * ho + oy) * wo + ox);
                let out_row = out_row.as_slice_mut().expect("standard layout");
                for ky in 0..kernel {
                    let src = ((oy + ky) * w + ox) * cin;
                    out_row[ky * row_len..(ky + 1) * row_len].copy_from_slice(&img[src..src + row_len]);
                }
            }
        }
    }
    debug_assert_eq!(h * w * cin, x.ncols());
    cols
}

fn col2im<T: Scalar>(dcols: &Array2<T>, geo: &LayerGeometry, kernel: usize, batch: usize) -> Array2<T> {
    let (w, cin) = (geo.input.width, geo.input.channels);
    let (ho, wo) = (geo.output.height, geo.output.width);
    let row_len = kernel * cin;
    let mut dx = Array2::zeros((batch, geo.input.len()));
    for b in 0..batch {
        let mut img = dx.row_mut(b);
        let img = img.as_slice_mut().expect("standard layout");
        for oy in 0..ho {
            for ox in 0..wo {
                let row = dcols.row((b * ho + oy) * wo + ox);
                let row = row.as_slice().expect("standard layout");
                for ky in 0..kernel {
                    let dst = ((oy + ky) * w + ox) * cin;
                    for (d, &g) in img[dst..dst + row_len].iter_mut().zip(&row[ky * row_len..(ky + 1) * row_len]) {
                        *d += g;
                    }
                }
            }
        }
    }
    dx
}

fn max_pool<T: Scalar>(x: &Array2<T>, geo: &LayerGeometry, size: usize) -> (Array2<T>, Vec<usize>) {
    let (w, c) = (geo.input.width, geo.input.channels);
    let (ho, wo) = (geo.output.height, geo.output.width);
    let batch = x.nrows();
    let out_len = geo.output.len();
    let mut out = Array2::zeros((batch, out_len));
    let mut argmax = vec![0usize; batch * out_len];
    for b in 0..batch {
        let row = x.row(b);
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best_idx = ((oy * size) * w + ox * size) * c + ch;
                    let mut best = row[best_idx];
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = ((oy * size + dy) * w + ox * size + dx) * c + ch;
                            if row[idx] > best {
                                best = row[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (oy * wo + ox) * c + ch;
                    out[[b, o]] = best;
                    argmax[b * out_len + o] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

/// Stacks images into a `batch × D` matrix.
pub fn images_to_matrix<'a, T: Scalar, I>(images: I) -> Array2<T>
where
    I: IntoIterator<Item = &'a ImageTensor>,
{
    let images: Vec<&ImageTensor> = images.into_iter().collect();
    let d = images.first().map_or(0, |i| i.len());
    let mut m = Array2::zeros((images.len(), d));
    for (mut row, img) in m.rows_mut().into_iter().zip(&images) {
        assert_eq!(img.len(), d, "images of different sizes");
        for (dst, &p) in row.iter_mut().zip(&img.pixels) {
            *dst = T::from_f64_lossy(f64::from(p));
        }
    }
    m
}

pub fn init_params<T: Scalar>(config: &ModelConfig, classes: usize, seed: u64) -> Result<ModelParams<T>, ModelError> {
    if classes == 0 {
        return Err(ModelError::InvalidConfig("K must be positive".into()));
    }
    let mut config = config.clone();
    config.dtype = T::DTYPE;
    let geometry = config.geometry()?;
    let mut rng = rng::seeded(seed);
    let mut uniform = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| -> Array2<T> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        Array2::from_shape_simple_fn((rows, cols), || T::from_f64_lossy(dist.sample(&mut rng)))
    };
    let mut backbone = Vec::with_capacity(geometry.len());
    for g in &geometry {
        let (rows, cols) = g.weight_shape();
        let (fi, fo) = g.fans();
        let weight = if g.has_params() { uniform(rows, cols, fi, fo) } else { Array2::zeros((0, 0)) };
        backbone.push(LayerParams { weight, bias: Array1::zeros(cols) });
    }
    let output = uniform(config.embed_dim, classes, config.embed_dim, classes);
    Ok(ModelParams { config, geometry, backbone, output })
}

impl<T: Scalar> ModelParams<T> {
    /// Builds from explicit arrays, validating every shape against `config`.
    pub fn from_parts(
        mut config: ModelConfig,
        backbone: Vec<LayerParams<T>>,
        output: Array2<T>,
    ) -> Result<Self, ModelError> {
        config.dtype = T::DTYPE;
        let geometry = config.geometry()?;
        if backbone.len() != geometry.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} backbone stages for {} layers",
                backbone.len(),
                geometry.len()
            )));
        }
        for (i, (g, l)) in geometry.iter().zip(&backbone).enumerate() {
            let (r, c) = g.weight_shape();
            let bias_len = if g.has_params() { c } else { 0 };
            if l.weight.dim() != (r, c) || l.bias.len() != bias_len {
                return Err(ModelError::ShapeMismatch(format!(
                    "layer {i}: weight {:?} bias {} (expected {:?} and {bias_len})",
                    l.weight.dim(),
                    l.bias.len(),
                    (r, c)
                )));
            }
        }
        if output.nrows() != config.embed_dim || output.ncols() == 0 {
            return Err(ModelError::ShapeMismatch(format!(
                "output matrix {:?} for embed_dim {}",
                output.dim(),
                config.embed_dim
            )));
        }
        Ok(ModelParams { config, geometry, backbone, output })
    }

    pub fn classes(&self) -> usize {
        self.output.ncols()
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn input_len(&self) -> usize {
        self.config.input.len()
    }

    pub fn geometry(&self) -> &[LayerGeometry] {
        &self.geometry
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |v: &T| U::from_f64_lossy(v.to_f64_lossless());
        let mut config = self.config.clone();
        config.dtype = U::DTYPE;
        ModelParams {
            config,
            geometry: self.geometry.clone(),
            backbone: self
                .backbone
                .iter()
                .map(|l| LayerParams { weight: l.weight.map(conv), bias: l.bias.map(conv) })
                .collect(),
            output: self.output.map(conv),
        }
    }

    /// Every parameter array with its checkpoint name, in declaration order.
    pub fn named_arrays(&self) -> Vec<(String, ndarray::ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        for (i, (l, g)) in self.backbone.iter().zip(&self.geometry).enumerate() {
            if g.has_params() {
                out.push((format!("layer{i}.weight"), l.weight.view().into_dyn()));
                out.push((format!("layer{i}.bias"), l.bias.view().into_dyn()));
            }
        }
        out.push(("output.weight".to_owned(), self.output.view().into_dyn()));
        out
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<(), ModelError> {
        if x.ncols() != self.input_len() {
            return Err(ModelError::ShapeMismatch(format!(
                "input rows have {} values, model expects {}",
                x.ncols(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn run(&self, x: ArrayView2<T>, keep_trace: bool) -> (Array2<T>, Vec<LayerTrace<T>>) {
        let batch = x.nrows();
        let mut cur = x.to_owned();
        let mut trace = Vec::with_capacity(if keep_trace { self.geometry.len() } else { 0 });
        for (geo, layer) in self.geometry.iter().zip(&self.backbone) {
            match geo.spec {
                LayerSpec::FullyConnected { .. } => {
                    let mut pre = cur.dot(&layer.weight);
                    pre += &layer.bias;
                    let mut act = pre.clone();
                    relu_inplace(&mut act);
                    if keep_trace {
                        trace.push(LayerTrace::Dense { input: cur, pre });
                    }
                    cur = act;
                }
                LayerSpec::Conv { kernel, .. } => {
                    let cols = im2col(cur.view(), geo, kernel);
                    let mut pre = cols.dot(&layer.weight);
                    pre += &layer.bias;
                    let pre = pre.into_shape_with_order((batch, geo.output.len())).expect("contiguous conv output");
                    let mut act = pre.clone();
                    relu_inplace(&mut act);
                    if keep_trace {
                        trace.push(LayerTrace::Conv { cols, pre });
                    }
                    cur = act;
                }
                LayerSpec::MaxPool { size } => {
                    let (out, argmax) = max_pool(&cur, geo, size);
                    if keep_trace {
                        trace.push(LayerTrace::Pool { argmax, in_len: geo.input.len() });
                    }
                    cur = out;
                }
            }
        }
        (cur, trace)
    }

    /// Embeddings `e = f(x; θ)` (batch × E) and the trace for [`Self::backward`].
    pub fn forward(&self, x: ArrayView2<T>) -> Result<(Array2<T>, ForwardTrace<T>), ModelError> {
        self.check_input(&x)?;
        let batch = x.nrows();
        let (e, layers) = self.run(x, true);
        Ok((e, ForwardTrace { batch, layers }))
    }

    /// Same values as [`Self::forward`] without keeping a trace.
    pub fn embed(&self, x: ArrayView2<T>) -> Result<Array2<T>, ModelError> {
        self.check_input(&x)?;
        Ok(self.run(x, false).0)
    }

    fn check_classes(&self, classes: &[usize]) -> Result<(), ModelError> {
        let k = self.classes();
        match classes.iter().find(|&&c| c >= k) {
            Some(&class) => Err(ModelError::ClassOutOfRange { class, classes: k }),
            None => Ok(()),
        }
    }

    /// Columns of `W` for `classes`, as an E × |classes| matrix.
    pub fn output_columns(&self, classes: &[usize]) -> Result<Array2<T>, ModelError> {
        self.check_classes(classes)?;
        Ok(self.output.select(Axis(1), classes))
    }

    /// `logits[i][j] = w_{classes[j]} · e_i`.
    pub fn score_subset(&self, e: ArrayView2<T>, classes: &[usize]) -> Result<Array2<T>, ModelError> {
        if e.ncols() != self.embed_dim() {
            return Err(ModelError::ShapeMismatch(format!(
                "embeddings have {} columns, E = {}",
                e.ncols(),
                self.embed_dim()
            )));
        }
        let w = self.output_columns(classes)?;
        Ok(e.dot(&w))
    }

    /// Scores over all K classes.
    pub fn score_all(&self, e: ArrayView2<T>) -> Result<Array2<T>, ModelError> {
        if e.ncols() != self.embed_dim() {
            return Err(ModelError::ShapeMismatch("embedding width".into()));
        }
        Ok(e.dot(&self.output))
    }

    /// Back-propagates `d_logits` (batch × |classes|) through the output layer:
    /// returns (dL/de, dL/dW restricted to `classes`).
    pub fn output_backward(
        &self,
        e: ArrayView2<T>,
        classes: &[usize],
        d_logits: ArrayView2<T>,
    ) -> Result<(Array2<T>, Array2<T>), ModelError> {
        if d_logits.dim() != (e.nrows(), classes.len()) || e.ncols() != self.embed_dim() {
            return Err(ModelError::ShapeMismatch(format!(
                "d_logits {:?} for {} rows and {} classes",
                d_logits.dim(),
                e.nrows(),
                classes.len()
            )));
        }
        let w = self.output_columns(classes)?;
        let d_e = d_logits.dot(&w.t());
        let d_w = e.t().dot(&d_logits);
        Ok((d_e, d_w))
    }

    /// Exact gradients of the backbone given `dL/de`.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        d_embeddings: ArrayView2<T>,
    ) -> Result<Vec<LayerParams<T>>, ModelError> {
        if d_embeddings.dim() != (trace.batch, self.embed_dim()) || trace.layers.len() != self.geometry.len() {
            return Err(ModelError::TraceMismatch);
        }
        let batch = trace.batch;
        let mut grads: Vec<LayerParams<T>> = Vec::with_capacity(self.geometry.len());
        let mut upstream = d_embeddings.to_owned();
        for (idx, ((geo, layer), lt)) in self.geometry.iter().zip(&self.backbone).zip(&trace.layers).enumerate().rev() {
            let need_input_grad = idx > 0;
            match (geo.spec, lt) {
                (LayerSpec::FullyConnected { .. }, LayerTrace::Dense { input, pre }) => {
                    relu_mask(&mut upstream, pre);
                    let dw = input.t().dot(&upstream);
                    let db = upstream.sum_axis(Axis(0));
                    let next = if need_input_grad { upstream.dot(&layer.weight.t()) } else { Array2::zeros((0, 0)) };
                    grads.push(LayerParams { weight: dw, bias: db });
                    upstream = next;
                }
                (LayerSpec::Conv { kernel, channels }, LayerTrace::Conv { cols, pre }) => {
                    relu_mask(&mut upstream, pre);
                    let dz =
                        upstream.into_shape_with_order((cols.nrows(), channels)).expect("contiguous conv gradient");
                    let dw = cols.t().dot(&dz);
                    let db = dz.sum_axis(Axis(0));
                    let next = if need_input_grad {
                        col2im(&dz.dot(&layer.weight.t()), geo, kernel, batch)
                    } else {
                        Array2::zeros((0, 0))
                    };
                    grads.push(LayerParams { weight: dw, bias: db });
                    upstream = next;
                }
                (LayerSpec::MaxPool { .. }, LayerTrace::Pool { argmax, in_len }) => {
                    let out_len = upstream.ncols();
                    let mut dx = Array2::zeros((batch, *in_len));
                    for b in 0..batch {
                        for o in 0..out_len {
                            dx[[b, argmax[b * out_len + o]]] += upstream[[b, o]];
                        }
                    }
                    grads.push(LayerParams::zeros(0, 0));
                    upstream = dx;
                }
                _ => return Err(ModelError::TraceMismatch),
            }
        }
        grads.reverse();
        Ok(grads)
    }
}

/// Penultimate features for a slice of images, computed in chunks.
pub fn extract_features<T: Scalar>(
    params: &ModelParams<T>,
    images: &[&ImageTensor],
    chunk: usize,
) -> Result<Array2<T>, ModelError> {
    let mut out = Array2::zeros((images.len(), params.embed_dim()));
    for (i, part) in images.chunks(chunk.max(1)).enumerate() {
        let x = images_to_matrix::<T, _>(part.iter().copied());
        let e = params.embed(x.view())?;
        let start = i * chunk.max(1);
        out.slice_mut(s![start..start + part.len(), ..]).assign(&e);
    }
    Ok(out)
}
