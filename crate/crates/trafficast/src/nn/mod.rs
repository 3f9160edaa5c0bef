//! Minimal deterministic neural-network engine: conv / pool / dense /
//! recurrent layers with manual backpropagation, a triplet loss, and Adam.
//!
//! Everything runs in 64-bit floats so gradients can be checked against
//! central finite differences. Images are stored `[H, W, C]` row-major;
//! sequences `[T, features]`.

mod adam;
mod layer;
mod loss;
mod lstm;
mod network;
mod tensor;

pub use adam::{AdamState, TrainConfig};
pub use layer::{Activation, AvgPool2d, Conv2d, Dense, L2Norm, Layer, LayerCache, MaxPool2d};
pub use loss::{l2_normalize, mse_loss, triplet_loss, triplet_loss_grads};
pub use lstm::Lstm;
pub use network::{add_grads, load_checkpoint, save_checkpoint, scale_grads, Network};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("data length {got} does not match shape product {expected}")]
    BadDataLength { got: usize, expected: usize },
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("embedding norm {0} is not 1 within 1e-6")]
    NotUnitNorm(f64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid checkpoint: {reason}")]
    BadCheckpoint { path: String, reason: String },
}

/// Output extent of a convolution or pooling axis:
/// `floor((input - window) / stride) + 1`.
pub fn conv_output_extent(input: usize, window: usize, stride: usize) -> Option<usize> {
    if stride == 0 || window == 0 || window > input {
        return None;
    }
    Some((input - window) / stride + 1)
}

/// Learnable weights of a conv layer: one bias per kernel plus
/// `kernel_w * kernel_h * input_depth` weights per kernel.
pub fn conv_param_count(
    kernel_w: usize,
    kernel_h: usize,
    input_depth: usize,
    kernels: usize,
) -> usize {
    kernel_w * kernel_h * input_depth * kernels + kernels
}

/// Declarative layer description; [`Network::from_specs`] turns a list of
/// these into an initialized network and validates every extent.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        kernels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        activation: Activation,
    },
    MaxPool {
        window_h: usize,
        window_w: usize,
        stride: usize,
    },
    AvgPool {
        window_h: usize,
        window_w: usize,
        stride: usize,
    },
    Dense {
        units: usize,
        activation: Activation,
    },
    Activation(Activation),
    L2Norm,
    Lstm {
        hidden: usize,
        return_sequence: bool,
    },
}

impl LayerSpec {
    /// Shape produced from `input_shape`, checking the extent laws.
    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>, NnError> {
        match self {
            LayerSpec::Conv {
                kernels,
                kernel_h,
                kernel_w,
                stride,
                ..
            } => {
                let [h, w, _c] = as_image(input_shape)?;
                let ho = conv_output_extent(h, *kernel_h, *stride);
                let wo = conv_output_extent(w, *kernel_w, *stride);
                match (ho, wo) {
                    (Some(ho), Some(wo)) if *kernels > 0 => Ok(vec![ho, wo, *kernels]),
                    _ => Err(NnError::InvalidSpec(format!(
                        "conv {kernel_h}x{kernel_w} stride {stride} does not fit {h}x{w}"
                    ))),
                }
            }
            LayerSpec::MaxPool {
                window_h,
                window_w,
                stride,
            }
            | LayerSpec::AvgPool {
                window_h,
                window_w,
                stride,
            } => {
                let [h, w, c] = as_image(input_shape)?;
                let ho = conv_output_extent(h, *window_h, *stride);
                let wo = conv_output_extent(w, *window_w, *stride);
                match (ho, wo) {
                    (Some(ho), Some(wo)) => Ok(vec![ho, wo, c]),
                    _ => Err(NnError::InvalidSpec(format!(
                        "pool {window_h}x{window_w} stride {stride} does not fit {h}x{w}"
                    ))),
                }
            }
            LayerSpec::Dense { units, .. } => {
                if *units == 0 {
                    return Err(NnError::InvalidSpec("dense layer with 0 units".into()));
                }
                Ok(vec![*units])
            }
            LayerSpec::Activation(_) | LayerSpec::L2Norm => Ok(input_shape.to_vec()),
            LayerSpec::Lstm {
                hidden,
                return_sequence,
            } => {
                if input_shape.len() != 2 {
                    return Err(NnError::ShapeMismatch(format!(
                        "lstm expects [T, features], got {input_shape:?}"
                    )));
                }
                if *return_sequence {
                    Ok(vec![input_shape[0], *hidden])
                } else {
                    Ok(vec![*hidden])
                }
            }
        }
    }

    /// Number of learnable parameters given the input shape.
    pub fn param_count(&self, input_shape: &[usize]) -> Result<usize, NnError> {
        match self {
            LayerSpec::Conv {
                kernels,
                kernel_h,
                kernel_w,
                ..
            } => {
                let [_h, _w, c] = as_image(input_shape)?;
                Ok(conv_param_count(*kernel_w, *kernel_h, c, *kernels))
            }
            LayerSpec::Dense { units, .. } => {
                let fan_in: usize = input_shape.iter().product();
                Ok(fan_in * units + units)
            }
            LayerSpec::Lstm { hidden, .. } => {
                let fan_in = input_shape[1];
                Ok(4 * (fan_in * hidden + hidden * hidden + hidden))
            }
            _ => Ok(0),
        }
    }
}

fn as_image(shape: &[usize]) -> Result<[usize; 3], NnError> {
    match shape {
        [h, w, c] => Ok([*h, *w, *c]),
        other => Err(NnError::ShapeMismatch(format!(
            "expected [H, W, C], got {other:?}"
        ))),
    }
}

/// Embedder layout: two conv/pool stages, two dense layers, then L2
/// normalization onto the unit sphere.
pub fn embedder_specs(embedding_dim: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv {
            kernels: 16,
            kernel_h: 5,
            kernel_w: 5,
            stride: 1,
            activation: Activation::Relu,
        },
        LayerSpec::MaxPool {
            window_h: 2,
            window_w: 2,
            stride: 2,
        },
        LayerSpec::Conv {
            kernels: 32,
            kernel_h: 5,
            kernel_w: 5,
            stride: 1,
            activation: Activation::Relu,
        },
        LayerSpec::MaxPool {
            window_h: 2,
            window_w: 2,
            stride: 2,
        },
        LayerSpec::Dense {
            units: 256,
            activation: Activation::Relu,
        },
        LayerSpec::Dense {
            units: embedding_dim,
            activation: Activation::Identity,
        },
        LayerSpec::L2Norm,
    ]
}

/// Predictor layout: LSTM(in->50) -> LSTM(50->25, final state) ->
/// Dense(200, relu) -> Dense(1).
pub fn predictor_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Lstm {
            hidden: 50,
            return_sequence: true,
        },
        LayerSpec::Lstm {
            hidden: 25,
            return_sequence: false,
        },
        LayerSpec::Dense {
            units: 200,
            activation: Activation::Relu,
        },
        LayerSpec::Dense {
            units: 1,
            activation: Activation::Identity,
        },
    ]
}

pub use tensor::Tensor;
