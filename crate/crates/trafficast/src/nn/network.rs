use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Activation, AvgPool2d, Conv2d, Dense, L2Norm, Layer, LayerCache, MaxPool2d};
use super::lstm::Lstm;
use super::tensor::Tensor;
use super::{LayerSpec, NnError};

const CHECKPOINT_MAGIC: &[u8; 8] = b"TFNC0001";

/// A feed-forward stack of layers with reverse-mode differentiation.
#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

fn glorot_uniform(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(shape, data).expect("generated data matches shape")
}

impl Network {
    /// Build and initialize a network from layer specs, validating every
    /// extent against the input shape.
    pub fn from_specs(
        specs: &[LayerSpec],
        input_shape: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let out_shape = spec.output_shape(&shape)?;
            let layer = match spec {
                LayerSpec::Conv {
                    kernels,
                    kernel_h,
                    kernel_w,
                    stride,
                    activation,
                } => {
                    let c = shape[2];
                    let fan_in = kernel_h * kernel_w * c;
                    let fan_out = kernel_h * kernel_w * kernels;
                    Layer::Conv2d(Conv2d {
                        kernels: glorot_uniform(
                            rng,
                            &[*kernels, *kernel_h, *kernel_w, c],
                            fan_in,
                            fan_out,
                        ),
                        bias: Tensor::zeros(&[*kernels]),
                        stride: *stride,
                        activation: *activation,
                    })
                }
                LayerSpec::MaxPool {
                    window_h,
                    window_w,
                    stride,
                } => Layer::MaxPool2d(MaxPool2d {
                    window_h: *window_h,
                    window_w: *window_w,
                    stride: *stride,
                }),
                LayerSpec::AvgPool {
                    window_h,
                    window_w,
                    stride,
                } => Layer::AvgPool2d(AvgPool2d {
                    window_h: *window_h,
                    window_w: *window_w,
                    stride: *stride,
                }),
                LayerSpec::Dense { units, activation } => {
                    let fan_in: usize = shape.iter().product();
                    Layer::Dense(Dense {
                        weights: glorot_uniform(rng, &[*units, fan_in], fan_in, *units),
                        bias: Tensor::zeros(&[*units]),
                        activation: *activation,
                    })
                }
                LayerSpec::Activation(act) => Layer::Activation(*act),
                LayerSpec::L2Norm => Layer::L2Norm(L2Norm),
                LayerSpec::Lstm {
                    hidden,
                    return_sequence,
                } => {
                    let features = shape[1];
                    let wx = glorot_uniform(rng, &[4 * hidden, features], features, *hidden);
                    let wh = glorot_uniform(rng, &[4 * hidden, *hidden], *hidden, *hidden);
                    // forget-gate bias starts at 1 so early training keeps memory
                    let mut bias = Tensor::zeros(&[4 * hidden]);
                    for j in 0..*hidden {
                        bias.data_mut()[hidden + j] = 1.0;
                    }
                    Layer::Lstm(Lstm {
                        wx,
                        wh,
                        bias,
                        hidden: *hidden,
                        return_sequence: *return_sequence,
                    })
                }
            };
            layers.push(layer);
            shape = out_shape;
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let mut x = input.clone();
        for layer in &self.layers {
            let (out, _) = layer.forward(&x)?;
            x = out;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<(Tensor, Vec<LayerCache>), NnError> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(&x)?;
            caches.push(cache);
            x = out;
        }
        Ok((x, caches))
    }

    /// Gradients for every parameter, aligned with [`Network::params`].
    /// The gradient w.r.t. the network input is not computed.
    pub fn backward(
        &self,
        caches: &[LayerCache],
        grad_out: &Tensor,
    ) -> Result<Vec<Tensor>, NnError> {
        let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut grad = grad_out.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let needs_input_grad = i > 0;
            let (gin, grads) = layer.backward(cache, &grad, needs_input_grad)?;
            per_layer.push(grads);
            if let Some(gin) = gin {
                grad = gin;
            }
        }
        per_layer.reverse();
        Ok(per_layer.into_iter().flatten().collect())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Zero gradient accumulators aligned with [`Network::params`].
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params()
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect()
    }
}

/// `acc += grads`, tensor by tensor.
pub fn add_grads(acc: &mut [Tensor], grads: &[Tensor]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
            *av += gv;
        }
    }
}

/// `acc *= factor`, used to average batch gradients.
pub fn scale_grads(acc: &mut [Tensor], factor: f64) {
    for a in acc.iter_mut() {
        for v in a.data_mut() {
            *v *= factor;
        }
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_shape(w: &mut impl Write, shape: &[usize]) -> std::io::Result<()> {
    write_u32(w, shape.len() as u32)?;
    for d in shape {
        write_u32(w, *d as u32)?;
    }
    Ok(())
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
        Activation::Tanh => 2,
        Activation::Sigmoid => 3,
    }
}

fn activation_from_code(code: u8) -> Option<Activation> {
    Some(match code {
        0 => Activation::Identity,
        1 => Activation::Relu,
        2 => Activation::Tanh,
        3 => Activation::Sigmoid,
        _ => return None,
    })
}

/// Write a versioned binary checkpoint: magic bytes, layer manifest, then
/// all parameter tensors as little-endian 64-bit floats. Loading the file
/// reproduces the network bitwise.
pub fn save_checkpoint(network: &Network, path: impl AsRef<Path>) -> Result<(), NnError> {
    let path = path.as_ref();
    let wrap = |source: std::io::Error| NnError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(wrap)?;
    let mut w = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        write_shape(&mut w, network.input_shape())?;
        write_u32(&mut w, network.layers.len() as u32)?;
        for layer in &network.layers {
            match layer {
                Layer::Conv2d(l) => {
                    w.write_all(&[1])?;
                    write_shape(&mut w, l.kernels.shape())?;
                    write_u32(&mut w, l.stride as u32)?;
                    w.write_all(&[activation_code(l.activation)])?;
                }
                Layer::MaxPool2d(l) => {
                    w.write_all(&[2])?;
                    write_u32(&mut w, l.window_h as u32)?;
                    write_u32(&mut w, l.window_w as u32)?;
                    write_u32(&mut w, l.stride as u32)?;
                }
                Layer::AvgPool2d(l) => {
                    w.write_all(&[3])?;
                    write_u32(&mut w, l.window_h as u32)?;
                    write_u32(&mut w, l.window_w as u32)?;
                    write_u32(&mut w, l.stride as u32)?;
                }
                Layer::Dense(l) => {
                    w.write_all(&[4])?;
                    write_shape(&mut w, l.weights.shape())?;
                    w.write_all(&[activation_code(l.activation)])?;
                }
                Layer::Activation(a) => {
                    w.write_all(&[5, activation_code(*a)])?;
                }
                Layer::L2Norm(_) => {
                    w.write_all(&[6])?;
                }
                Layer::Lstm(l) => {
                    w.write_all(&[7])?;
                    write_u32(&mut w, l.hidden as u32)?;
                    write_u32(&mut w, l.wx.shape()[1] as u32)?;
                    w.write_all(&[u8::from(l.return_sequence)])?;
                }
            }
        }
        for param in network.params() {
            write_shape(&mut w, param.shape())?;
            for v in param.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    })()
    .map_err(wrap)
}

struct CheckpointReader<R> {
    inner: R,
    path: String,
}

impl<R: Read> CheckpointReader<R> {
    fn fail<T>(&self, reason: &str) -> Result<T, NnError> {
        Err(NnError::BadCheckpoint {
            path: self.path.clone(),
            reason: reason.to_string(),
        })
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], NnError> {
        let mut buf = [0_u8; N];
        match self.inner.read_exact(&mut buf) {
            Ok(()) => Ok(buf),
            Err(_) => self.fail("unexpected end of file"),
        }
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?))
    }

    fn usize(&mut self) -> Result<usize, NnError> {
        Ok(self.u32()? as usize)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.bytes::<1>()?[0])
    }

    fn shape(&mut self) -> Result<Vec<usize>, NnError> {
        let ndim = self.usize()?;
        if ndim > 8 {
            return self.fail("implausible tensor rank");
        }
        (0..ndim).map(|_| self.usize()).collect()
    }

    fn activation(&mut self) -> Result<Activation, NnError> {
        let code = self.u8()?;
        match activation_from_code(code) {
            Some(a) => Ok(a),
            None => self.fail("unknown activation code"),
        }
    }

    fn tensor(&mut self, expected_shape: &[usize]) -> Result<Tensor, NnError> {
        let shape = self.shape()?;
        if shape != expected_shape {
            return self.fail("parameter shape does not match manifest");
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(self.bytes::<8>()?));
        }
        Tensor::from_vec(&shape, data)
    }
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network, NnError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = CheckpointReader {
        inner: std::io::BufReader::new(file),
        path: path.display().to_string(),
    };
    if &r.bytes::<8>()? != CHECKPOINT_MAGIC {
        return r.fail("bad magic bytes");
    }
    let input_shape = r.shape()?;
    let n_layers = r.usize()?;
    if n_layers > 256 {
        return r.fail("implausible layer count");
    }

    enum Manifest {
        Conv(Vec<usize>, usize, Activation),
        MaxPool(usize, usize, usize),
        AvgPool(usize, usize, usize),
        Dense(Vec<usize>, Activation),
        Activation(Activation),
        L2Norm,
        Lstm(usize, usize, bool),
    }

    let mut manifests = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = r.u8()?;
        manifests.push(match tag {
            1 => {
                let shape = r.shape()?;
                let stride = r.usize()?;
                let act = r.activation()?;
                if shape.len() != 4 {
                    return r.fail("conv kernels must be 4-d");
                }
                Manifest::Conv(shape, stride, act)
            }
            2 => Manifest::MaxPool(r.usize()?, r.usize()?, r.usize()?),
            3 => Manifest::AvgPool(r.usize()?, r.usize()?, r.usize()?),
            4 => {
                let shape = r.shape()?;
                let act = r.activation()?;
                if shape.len() != 2 {
                    return r.fail("dense weights must be 2-d");
                }
                Manifest::Dense(shape, act)
            }
            5 => Manifest::Activation(r.activation()?),
            6 => Manifest::L2Norm,
            7 => {
                let hidden = r.usize()?;
                let features = r.usize()?;
                let return_sequence = r.u8()? != 0;
                Manifest::Lstm(hidden, features, return_sequence)
            }
            _ => return r.fail("unknown layer tag"),
        });
    }

    let mut layers = Vec::with_capacity(n_layers);
    for manifest in manifests {
        layers.push(match manifest {
            Manifest::Conv(shape, stride, activation) => {
                let kernels = r.tensor(&shape)?;
                let bias = r.tensor(&[shape[0]])?;
                Layer::Conv2d(Conv2d {
                    kernels,
                    bias,
                    stride,
                    activation,
                })
            }
            Manifest::MaxPool(window_h, window_w, stride) => Layer::MaxPool2d(MaxPool2d {
                window_h,
                window_w,
                stride,
            }),
            Manifest::AvgPool(window_h, window_w, stride) => Layer::AvgPool2d(AvgPool2d {
                window_h,
                window_w,
                stride,
            }),
            Manifest::Dense(shape, activation) => {
                let weights = r.tensor(&shape)?;
                let bias = r.tensor(&[shape[0]])?;
                Layer::Dense(Dense {
                    weights,
                    bias,
                    activation,
                })
            }
            Manifest::Activation(a) => Layer::Activation(a),
            Manifest::L2Norm => Layer::L2Norm(L2Norm),
            Manifest::Lstm(hidden, features, return_sequence) => {
                let wx = r.tensor(&[4 * hidden, features])?;
                let wh = r.tensor(&[4 * hidden, hidden])?;
                let bias = r.tensor(&[4 * hidden])?;
                Layer::Lstm(Lstm {
                    wx,
                    wh,
                    bias,
                    hidden,
                    return_sequence,
                })
            }
        });
    }

    Ok(Network {
        input_shape,
        layers,
    })
}
