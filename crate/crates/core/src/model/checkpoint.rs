//! `WLCKPT1` checkpoint files.
//!
//! ```text
//! WLCKPT1\n
//! config=<model config as one-line JSON>\n
//! classes=<K>\n
//! dtype=<f32|f64>\n
//! rng_algorithm=<id>\n
//! rng_state=<key hex>:<stream>:<word position>\n
//! step=<count>\n
//! learning_rate=<value>\n
//! arrays=<count>\n
//! then per array: "array <name> <d0>x<d1>...\n" and the raw little-endian values
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{LayerParams, ModelConfig, ModelError, ModelParams};
use crate::rng::{RngState, RNG_ALGORITHM};
use crate::scalar::{DType, Scalar};

pub const CKPT_MAGIC: &[u8] = b"WLCKPT1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub rng_state: RngState,
    pub step: u64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn dtype(&self) -> DType {
        match self {
            AnyCheckpoint::F32(_) => DType::F32,
            AnyCheckpoint::F64(_) => DType::F64,
        }
    }

    pub fn into_f64(self) -> Checkpoint<f64> {
        match self {
            AnyCheckpoint::F64(c) => c,
            AnyCheckpoint::F32(c) => Checkpoint {
                params: c.params.cast(),
                rng_state: c.rng_state,
                step: c.step,
                learning_rate: c.learning_rate,
            },
        }
    }
}

pub fn encode_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>) -> Vec<u8> {
    let p = &ckpt.params;
    let config = &p.config;
    let arrays = p.named_arrays();
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    let header = format!(
        "config={}\nclasses={}\ndtype={}\nrng_algorithm={}\nrng_state={}\nstep={}\nlearning_rate={:?}\narrays={}\n",
        serde_json::to_string(config).expect("config serializes"),
        p.classes(),
        T::DTYPE,
        RNG_ALGORITHM,
        ckpt.rng_state,
        ckpt.step,
        ckpt.learning_rate,
        arrays.len()
    );
    out.extend_from_slice(header.as_bytes());
    for (name, arr) in arrays {
        let shape: Vec<String> = arr.shape().iter().map(usize::to_string).collect();
        out.extend_from_slice(format!("array {name} {}\n", shape.join("x")).as_bytes());
        for &v in arr.iter() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str, ModelError> {
        let rest = &self.bytes[self.pos..];
        let nl =
            rest.iter().position(|&b| b == b'\n').ok_or_else(|| ModelError::Checkpoint("truncated header".into()))?;
        self.pos += nl + 1;
        std::str::from_utf8(&rest[..nl]).map_err(|_| ModelError::Checkpoint("header is not UTF-8".into()))
    }

    fn field(&mut self, key: &str) -> Result<&'a str, ModelError> {
        let line = self.line()?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| ModelError::Checkpoint(format!("expected {key}=..., found {line:?}")))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() - self.pos < n {
            return Err(ModelError::Checkpoint("truncated array data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn parse<F: std::str::FromStr>(s: &str, what: &str) -> Result<F, ModelError> {
    s.parse().map_err(|_| ModelError::Checkpoint(format!("bad {what}: {s:?}")))
}

fn decode_as<T: Scalar>(
    cur: &mut Cursor<'_>,
    config: ModelConfig,
    classes: usize,
    rng_state: RngState,
    step: u64,
    learning_rate: f64,
    count: usize,
) -> Result<Checkpoint<T>, ModelError> {
    let template = super::init_params::<T>(&config, classes, 0)?;
    let expected: Vec<(String, Vec<usize>)> =
        template.named_arrays().into_iter().map(|(n, a)| (n, a.shape().to_vec())).collect();
    if expected.len() != count {
        return Err(ModelError::Checkpoint(format!("{count} arrays, config implies {}", expected.len())));
    }
    let width = T::DTYPE.byte_width();
    let mut values: Vec<Vec<T>> = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let line = cur.line()?;
        let mut parts = line.split(' ');
        let (Some("array"), Some(n), Some(dims), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(ModelError::Checkpoint(format!("bad array line {line:?}")));
        };
        let dims: Vec<usize> = dims.split('x').map(|d| parse(d, "array shape")).collect::<Result<_, _>>()?;
        if n != name || &dims != shape {
            return Err(ModelError::Checkpoint(format!("array {n} {dims:?}, expected {name} {shape:?}")));
        }
        let len: usize = dims.iter().product();
        let raw = cur.take(len * width)?;
        values.push(raw.chunks_exact(width).map(T::read_le).collect());
    }
    if cur.pos != cur.bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }
    let mut it = values.into_iter();
    let mut backbone = Vec::with_capacity(template.backbone.len());
    for (g, l) in template.geometry.iter().zip(&template.backbone) {
        if g.has_params() {
            let w = it.next().expect("counted");
            let b = it.next().expect("counted");
            backbone.push(LayerParams {
                weight: Array2::from_shape_vec(l.weight.dim(), w).expect("shape checked"),
                bias: Array1::from_vec(b),
            });
        } else {
            backbone.push(l.clone());
        }
    }
    let output =
        Array2::from_shape_vec((config.embed_dim, classes), it.next().expect("counted")).expect("shape checked");
    Ok(Checkpoint { params: ModelParams::from_parts(config, backbone, output)?, rng_state, step, learning_rate })
}

pub fn decode_checkpoint_any(bytes: &[u8]) -> Result<AnyCheckpoint, ModelError> {
    let rest = bytes.strip_prefix(CKPT_MAGIC).ok_or_else(|| ModelError::Checkpoint("bad magic".into()))?;
    let mut cur = Cursor { bytes: rest, pos: 0 };
    let mut config: ModelConfig =
        serde_json::from_str(cur.field("config")?).map_err(|e| ModelError::Checkpoint(format!("bad config: {e}")))?;
    let classes: usize = parse(cur.field("classes")?, "classes")?;
    let dtype = DType::parse(cur.field("dtype")?).ok_or_else(|| ModelError::Checkpoint("bad dtype".into()))?;
    let algo = cur.field("rng_algorithm")?;
    if algo != RNG_ALGORITHM {
        return Err(ModelError::Checkpoint(format!("unsupported rng algorithm {algo:?}")));
    }
    let rng_state: RngState = cur.field("rng_state")?.parse().map_err(ModelError::Checkpoint)?;
    let step: u64 = parse(cur.field("step")?, "step")?;
    let learning_rate: f64 = parse(cur.field("learning_rate")?, "learning rate")?;
    let count: usize = parse(cur.field("arrays")?, "array count")?;
    config.dtype = dtype;
    Ok(match dtype {
        DType::F32 => AnyCheckpoint::F32(decode_as(&mut cur, config, classes, rng_state, step, learning_rate, count)?),
        DType::F64 => AnyCheckpoint::F64(decode_as(&mut cur, config, classes, rng_state, step, learning_rate, count)?),
    })
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_checkpoint<T: Scalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<(), ModelError> {
    crate::io_util::write_atomic(path, &encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn read_checkpoint_any(path: &Path) -> Result<AnyCheckpoint, ModelError> {
    decode_checkpoint_any(&std::fs::read(path)?)
}

/// Reads a checkpoint that must already be stored as `T`.
pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, ModelError> {
    let any = read_checkpoint_any(path)?;
    let found = any.dtype();
    let boxed: Box<dyn std::any::Any> = match any {
        AnyCheckpoint::F32(c) => Box::new(c),
        AnyCheckpoint::F64(c) => Box::new(c),
    };
    boxed
        .downcast::<Checkpoint<T>>()
        .map(|b| *b)
        .map_err(|_| ModelError::Checkpoint(format!("checkpoint holds {found}, expected {}", T::DTYPE)))
}
