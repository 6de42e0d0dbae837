use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::scalar::DType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputDims {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One backbone stage. Convolution and fully connected stages are followed by a rectifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (unpadded) stride-1 convolution with a square kernel.
    Conv {
        kernel: usize,
        channels: usize,
    },
    /// Non-overlapping square max-pooling; trailing rows/columns are dropped.
    MaxPool {
        size: usize,
    },
    FullyConnected {
        width: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input: InputDims,
    pub layers: Vec<LayerSpec>,
    pub embed_dim: usize,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
}

fn default_dtype() -> DType {
    DType::F32
}

/// Resolved geometry of one stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerGeometry {
    pub spec: LayerSpec,
    pub input: InputDims,
    pub output: InputDims,
}

impl LayerGeometry {
    /// (rows, cols) of the weight matrix; (0, 0) for parameter-free stages.
    pub fn weight_shape(&self) -> (usize, usize) {
        match self.spec {
            LayerSpec::Conv { kernel, channels } => (kernel * kernel * self.input.channels, channels),
            LayerSpec::FullyConnected { width } => (self.input.len(), width),
            LayerSpec::MaxPool { .. } => (0, 0),
        }
    }

    /// Fan-in and fan-out used by the uniform initializer.
    pub fn fans(&self) -> (usize, usize) {
        match self.spec {
            LayerSpec::Conv { kernel, channels } => (kernel * kernel * self.input.channels, kernel * kernel * channels),
            LayerSpec::FullyConnected { width } => (self.input.len(), width),
            LayerSpec::MaxPool { .. } => (0, 0),
        }
    }

    pub fn has_params(&self) -> bool {
        !matches!(self.spec, LayerSpec::MaxPool { .. })
    }
}

pub const PRESET_HIDDEN: usize = 128;
pub const PRESET_EMBED_DIM: usize = 64;

impl ModelConfig {
    /// Fully connected stack `hidden..., embed_dim`.
    pub fn mlp(input: InputDims, hidden: &[usize], embed_dim: usize) -> Self {
        let mut layers: Vec<LayerSpec> = hidden.iter().map(|&width| LayerSpec::FullyConnected { width }).collect();
        layers.push(LayerSpec::FullyConnected { width: embed_dim });
        ModelConfig { input, layers, embed_dim, dtype: DType::F32 }
    }

    /// Default backbone for synthetic data: one hidden layer of 128, E = 64.
    pub fn preset(input: InputDims) -> Self {
        Self::mlp(input, &[PRESET_HIDDEN], PRESET_EMBED_DIM)
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn geometry(&self) -> Result<Vec<LayerGeometry>, ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.input.is_empty() {
            return bad("input dimensions must be positive".into());
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        match self.layers.last() {
            Some(LayerSpec::FullyConnected { width }) if *width == self.embed_dim => {}
            Some(_) => return bad(format!("last layer must be fully_connected with width {}", self.embed_dim)),
            None => return bad("at least one layer is required".into()),
        }
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, &spec) in self.layers.iter().enumerate() {
            let next = match spec {
                LayerSpec::Conv { kernel, channels } => {
                    if kernel == 0 || channels == 0 || kernel > cur.height || kernel > cur.width {
                        return bad(format!("layer {i}: conv kernel {kernel} does not fit {cur:?}"));
                    }
                    InputDims { height: cur.height - kernel + 1, width: cur.width - kernel + 1, channels }
                }
                LayerSpec::MaxPool { size } => {
                    if size == 0 || size > cur.height || size > cur.width {
                        return bad(format!("layer {i}: pool size {size} does not fit {cur:?}"));
                    }
                    InputDims { height: cur.height / size, width: cur.width / size, channels: cur.channels }
                }
                LayerSpec::FullyConnected { width } => {
                    if width == 0 {
                        return bad(format!("layer {i}: zero width"));
                    }
                    InputDims { height: 1, width: 1, channels: width }
                }
            };
            out.push(LayerGeometry { spec, input: cur, output: next });
            cur = next;
        }
        Ok(out)
    }

    /// Backbone parameter count (weights and biases, excluding the output matrix).
    pub fn backbone_params(&self) -> Result<usize, ModelError> {
        Ok(self
            .geometry()?
            .iter()
            .map(|g| {
                let (r, c) = g.weight_shape();
                r * c + if g.has_params() { c } else { 0 }
            })
            .sum())
    }
}
