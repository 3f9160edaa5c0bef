use serde::{Deserialize, Serialize};

use super::lstm::{Lstm, LstmCache};
use super::tensor::Tensor;
use super::{conv_output_extent, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// 2-D convolution: `g(K (x) input + b)` per kernel, stride `s`.
///
/// Input `[H, W, C]`, kernels `[N_k, H_k, W_k, C]`, output `[H_o, W_o, N_k]`
/// with the floor extent law on each spatial axis.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub activation: Activation,
}

pub struct Conv2dCache {
    input_shape: Vec<usize>,
    patches: Vec<f64>,
    out: Tensor,
}

impl Conv2d {
    fn dims(&self) -> (usize, usize, usize, usize) {
        match self.kernels.shape() {
            [nk, kh, kw, c] => (*nk, *kh, *kw, *c),
            _ => unreachable!("conv kernels are 4-d"),
        }
    }

    fn output_dims(&self, input: &Tensor) -> Result<(usize, usize, usize), NnError> {
        let (nk, kh, kw, c) = self.dims();
        let [h, w, ci] = match input.shape() {
            [h, w, ci] => [*h, *w, *ci],
            other => {
                return Err(NnError::ShapeMismatch(format!(
                    "conv input must be [H, W, C], got {other:?}"
                )))
            }
        };
        if ci != c {
            return Err(NnError::ShapeMismatch(format!(
                "conv kernel depth {c} vs input depth {ci}"
            )));
        }
        let ho = conv_output_extent(h, kh, self.stride);
        let wo = conv_output_extent(w, kw, self.stride);
        match (ho, wo) {
            (Some(ho), Some(wo)) => Ok((ho, wo, nk)),
            _ => Err(NnError::InvalidSpec(format!(
                "conv {kh}x{kw} stride {} does not fit {h}x{w}",
                self.stride
            ))),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Conv2dCache), NnError> {
        let (ho, wo, nk) = self.output_dims(input)?;
        let (_, kh, kw, c) = self.dims();
        let [_h, w, _] = [input.shape()[0], input.shape()[1], c];
        let dim = kh * kw * c;
        let positions = ho * wo;

        // im2col: one row of kh*kw*c values per output position
        let mut patches = vec![0.0_f64; positions * dim];
        let x = input.data();
        let row_len = kw * c;
        for oy in 0..ho {
            for ox in 0..wo {
                let pos = oy * wo + ox;
                let dst = &mut patches[pos * dim..(pos + 1) * dim];
                for dy in 0..kh {
                    let src_start = ((oy * self.stride + dy) * w + ox * self.stride) * c;
                    dst[dy * row_len..(dy + 1) * row_len]
                        .copy_from_slice(&x[src_start..src_start + row_len]);
                }
            }
        }

        // kernels transposed to [dim][nk] so the inner loop runs over kernels
        let kt = self.transposed_kernels(dim, nk);
        let mut out = Tensor::zeros(&[ho, wo, nk]);
        let out_data = out.data_mut();
        let bias = self.bias.data();
        for pos in 0..positions {
            let out_row = &mut out_data[pos * nk..(pos + 1) * nk];
            out_row.copy_from_slice(bias);
            let patch = &patches[pos * dim..(pos + 1) * dim];
            for (d, &a) in patch.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let krow = &kt[d * nk..(d + 1) * nk];
                for (o, k) in out_row.iter_mut().zip(krow) {
                    *o += a * k;
                }
            }
            for o in out_row.iter_mut() {
                *o = self.activation.apply(*o);
            }
        }
        let cache = Conv2dCache {
            input_shape: input.shape().to_vec(),
            patches,
            out: out.clone(),
        };
        Ok((out, cache))
    }

    fn transposed_kernels(&self, dim: usize, nk: usize) -> Vec<f64> {
        let kdata = self.kernels.data();
        let mut kt = vec![0.0_f64; dim * nk];
        for k in 0..nk {
            for d in 0..dim {
                kt[d * nk + k] = kdata[k * dim + d];
            }
        }
        kt
    }

    pub fn backward(
        &self,
        cache: &Conv2dCache,
        grad_out: &Tensor,
        needs_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>), NnError> {
        let (nk, kh, kw, c) = self.dims();
        let dim = kh * kw * c;
        let [ho, wo, _] = [cache.out.shape()[0], cache.out.shape()[1], nk];
        let positions = ho * wo;
        if grad_out.shape() != cache.out.shape() {
            return Err(NnError::ShapeMismatch("conv grad shape".into()));
        }

        // through the activation
        let mut dz = vec![0.0_f64; positions * nk];
        for (i, d) in dz.iter_mut().enumerate() {
            *d = grad_out.data()[i]
                * self.activation.derivative_from_output(cache.out.data()[i]);
        }

        let mut d_kernels = Tensor::zeros(self.kernels.shape());
        let mut d_bias = Tensor::zeros(self.bias.shape());
        {
            let dk = d_kernels.data_mut();
            let db = d_bias.data_mut();
            for pos in 0..positions {
                let patch = &cache.patches[pos * dim..(pos + 1) * dim];
                let dz_row = &dz[pos * nk..(pos + 1) * nk];
                for (k, &g) in dz_row.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    db[k] += g;
                    let krow = &mut dk[k * dim..(k + 1) * dim];
                    for (w, &p) in krow.iter_mut().zip(patch) {
                        *w += g * p;
                    }
                }
            }
        }

        let grad_in = if needs_input_grad {
            let [_, w, _] = [cache.input_shape[0], cache.input_shape[1], c];
            let mut gin = Tensor::zeros(&cache.input_shape);
            let gdata = gin.data_mut();
            let kdata = self.kernels.data();
            let mut dpatch = vec![0.0_f64; dim];
            let row_len = kw * c;
            for oy in 0..ho {
                for ox in 0..wo {
                    let pos = oy * wo + ox;
                    dpatch.fill(0.0);
                    let dz_row = &dz[pos * nk..(pos + 1) * nk];
                    for (k, &g) in dz_row.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let krow = &kdata[k * dim..(k + 1) * dim];
                        for (dp, &kv) in dpatch.iter_mut().zip(krow) {
                            *dp += g * kv;
                        }
                    }
                    // col2im scatter-add
                    for dy in 0..kh {
                        let dst_start = ((oy * self.stride + dy) * w + ox * self.stride) * c;
                        let src = &dpatch[dy * row_len..(dy + 1) * row_len];
                        for (dst, &v) in gdata[dst_start..dst_start + row_len]
                            .iter_mut()
                            .zip(src)
                        {
                            *dst += v;
                        }
                    }
                }
            }
            Some(gin)
        } else {
            None
        };
        Ok((grad_in, vec![d_kernels, d_bias]))
    }
}

/// Max pooling over `window_h x window_w` regions; depth is preserved.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub window_h: usize,
    pub window_w: usize,
    pub stride: usize,
}

pub struct PoolCache {
    input_shape: Vec<usize>,
    /// flat input index of the max, per output element
    argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, PoolCache), NnError> {
        let [h, w, c] = match input.shape() {
            [h, w, c] => [*h, *w, *c],
            other => {
                return Err(NnError::ShapeMismatch(format!(
                    "pool input must be [H, W, C], got {other:?}"
                )))
            }
        };
        let ho = conv_output_extent(h, self.window_h, self.stride);
        let wo = conv_output_extent(w, self.window_w, self.stride);
        let (ho, wo) = match (ho, wo) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(NnError::InvalidSpec(format!(
                    "pool {}x{} stride {} does not fit {h}x{w}",
                    self.window_h, self.window_w, self.stride
                )))
            }
        };
        let x = input.data();
        let mut out = Tensor::zeros(&[ho, wo, c]);
        let mut argmax = vec![0_usize; ho * wo * c];
        let out_data = out.data_mut();
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dy in 0..self.window_h {
                        for dx in 0..self.window_w {
                            let idx = ((oy * self.stride + dy) * w + ox * self.stride + dx) * c
                                + ch;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (oy * wo + ox) * c + ch;
                    out_data[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        Ok((
            out,
            PoolCache {
                input_shape: input.shape().to_vec(),
                argmax,
            },
        ))
    }

    pub fn backward(&self, cache: &PoolCache, grad_out: &Tensor) -> Tensor {
        let mut gin = Tensor::zeros(&cache.input_shape);
        let gdata = gin.data_mut();
        for (o, &idx) in cache.argmax.iter().enumerate() {
            gdata[idx] += grad_out.data()[o];
        }
        gin
    }
}

/// Average pooling; implemented for completeness, unused by the defaults.
#[derive(Debug, Clone)]
pub struct AvgPool2d {
    pub window_h: usize,
    pub window_w: usize,
    pub stride: usize,
}

impl AvgPool2d {
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, PoolCache), NnError> {
        let [h, w, c] = match input.shape() {
            [h, w, c] => [*h, *w, *c],
            other => {
                return Err(NnError::ShapeMismatch(format!(
                    "pool input must be [H, W, C], got {other:?}"
                )))
            }
        };
        let ho = conv_output_extent(h, self.window_h, self.stride);
        let wo = conv_output_extent(w, self.window_w, self.stride);
        let (ho, wo) = match (ho, wo) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(NnError::InvalidSpec(format!(
                    "pool {}x{} stride {} does not fit {h}x{w}",
                    self.window_h, self.window_w, self.stride
                )))
            }
        };
        let x = input.data();
        let norm = 1.0 / (self.window_h * self.window_w) as f64;
        let mut out = Tensor::zeros(&[ho, wo, c]);
        let out_data = out.data_mut();
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut sum = 0.0;
                    for dy in 0..self.window_h {
                        for dx in 0..self.window_w {
                            sum += x[((oy * self.stride + dy) * w + ox * self.stride + dx) * c
                                + ch];
                        }
                    }
                    out_data[(oy * wo + ox) * c + ch] = sum * norm;
                }
            }
        }
        Ok((
            out,
            PoolCache {
                input_shape: input.shape().to_vec(),
                argmax: Vec::new(),
            },
        ))
    }

    pub fn backward(&self, cache: &PoolCache, grad_out: &Tensor) -> Tensor {
        let [h, w, c] = [
            cache.input_shape[0],
            cache.input_shape[1],
            cache.input_shape[2],
        ];
        let ho = conv_output_extent(h, self.window_h, self.stride).unwrap();
        let wo = conv_output_extent(w, self.window_w, self.stride).unwrap();
        let norm = 1.0 / (self.window_h * self.window_w) as f64;
        let mut gin = Tensor::zeros(&cache.input_shape);
        let gdata = gin.data_mut();
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let g = grad_out.data()[(oy * wo + ox) * c + ch] * norm;
                    for dy in 0..self.window_h {
                        for dx in 0..self.window_w {
                            gdata[((oy * self.stride + dy) * w + ox * self.stride + dx) * c
                                + ch] += g;
                        }
                    }
                }
            }
        }
        gin
    }
}

/// Fully connected layer `g(W x + b)` over the flattened input.
#[derive(Debug, Clone)]
pub struct Dense {
    /// `[units, fan_in]`
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

pub struct DenseCache {
    input: Tensor,
    out: Tensor,
}

impl Dense {
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, DenseCache), NnError> {
        let (units, fan_in) = match self.weights.shape() {
            [u, f] => (*u, *f),
            _ => unreachable!("dense weights are 2-d"),
        };
        if input.len() != fan_in {
            return Err(NnError::ShapeMismatch(format!(
                "dense expects {fan_in} inputs, got {}",
                input.len()
            )));
        }
        let x = input.data();
        let wdata = self.weights.data();
        let mut out = Tensor::zeros(&[units]);
        let out_data = out.data_mut();
        for u in 0..units {
            let row = &wdata[u * fan_in..(u + 1) * fan_in];
            let mut z = self.bias.data()[u];
            for (wi, xi) in row.iter().zip(x) {
                z += wi * xi;
            }
            out_data[u] = self.activation.apply(z);
        }
        let cache = DenseCache {
            input: input.clone(),
            out: out.clone(),
        };
        Ok((out, cache))
    }

    pub fn backward(
        &self,
        cache: &DenseCache,
        grad_out: &Tensor,
        needs_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>), NnError> {
        let (units, fan_in) = match self.weights.shape() {
            [u, f] => (*u, *f),
            _ => unreachable!(),
        };
        if grad_out.len() != units {
            return Err(NnError::ShapeMismatch("dense grad shape".into()));
        }
        let x = cache.input.data();
        let mut dw = Tensor::zeros(self.weights.shape());
        let mut db = Tensor::zeros(self.bias.shape());
        let mut gin = needs_input_grad.then(|| Tensor::zeros(&[fan_in]));
        {
            let dwd = dw.data_mut();
            let dbd = db.data_mut();
            for u in 0..units {
                let g = grad_out.data()[u]
                    * self
                        .activation
                        .derivative_from_output(cache.out.data()[u]);
                if g == 0.0 {
                    continue;
                }
                dbd[u] = g;
                let row = &mut dwd[u * fan_in..(u + 1) * fan_in];
                for (w, &xi) in row.iter_mut().zip(x) {
                    *w = g * xi;
                }
                if let Some(gin) = gin.as_mut() {
                    let wrow = &self.weights.data()[u * fan_in..(u + 1) * fan_in];
                    for (gi, &wv) in gin.data_mut().iter_mut().zip(wrow) {
                        *gi += g * wv;
                    }
                }
            }
        }
        Ok((
            gin.map(|g| {
                // keep the caller's input shape for chained backprop
                let mut t = g;
                if cache.input.shape().len() > 1 {
                    t = Tensor::from_vec(cache.input.shape(), t.data().to_vec())
                        .expect("same length");
                }
                t
            }),
            vec![dw, db],
        ))
    }
}

/// Projects onto the unit sphere: `y = x / ||x||`.
#[derive(Debug, Clone)]
pub struct L2Norm;

pub struct L2NormCache {
    out: Tensor,
    norm: f64,
}

impl L2Norm {
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, L2NormCache), NnError> {
        let norm = input.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(NnError::ZeroVector);
        }
        let mut out = input.clone();
        for v in out.data_mut() {
            *v /= norm;
        }
        let cache = L2NormCache {
            out: out.clone(),
            norm,
        };
        Ok((out, cache))
    }

    pub fn backward(&self, cache: &L2NormCache, grad_out: &Tensor) -> Tensor {
        // dL/dx = (g - y (y . g)) / ||x||
        let y = cache.out.data();
        let g = grad_out.data();
        let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        let mut gin = grad_out.clone();
        for (gi, &yi) in gin.data_mut().iter_mut().zip(y) {
            *gi = (*gi - yi * dot) / cache.norm;
        }
        gin
    }
}

/// A network layer; the enum keeps dispatch static and checkpointable.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    MaxPool2d(MaxPool2d),
    AvgPool2d(AvgPool2d),
    Dense(Dense),
    Activation(Activation),
    L2Norm(L2Norm),
    Lstm(Lstm),
}

pub enum LayerCache {
    Conv2d(Conv2dCache),
    Pool(PoolCache),
    Dense(DenseCache),
    Activation(Tensor),
    L2Norm(L2NormCache),
    Lstm(LstmCache),
}

impl Layer {
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, LayerCache), NnError> {
        match self {
            Layer::Conv2d(l) => {
                let (out, cache) = l.forward(input)?;
                Ok((out, LayerCache::Conv2d(cache)))
            }
            Layer::MaxPool2d(l) => {
                let (out, cache) = l.forward(input)?;
                Ok((out, LayerCache::Pool(cache)))
            }
            Layer::AvgPool2d(l) => {
                let (out, cache) = l.forward(input)?;
                Ok((out, LayerCache::Pool(cache)))
            }
            Layer::Dense(l) => {
                let (out, cache) = l.forward(input)?;
                Ok((out, LayerCache::Dense(cache)))
            }
            Layer::Activation(act) => {
                let mut out = input.clone();
                for v in out.data_mut() {
                    *v = act.apply(*v);
                }
                Ok((out.clone(), LayerCache::Activation(out)))
            }
            Layer::L2Norm(l) => {
                let (out, cache) = l.forward(input)?;
                Ok((out, LayerCache::L2Norm(cache)))
            }
            Layer::Lstm(l) => {
                let (out, cache) = l.forward(input)?;
                Ok((out, LayerCache::Lstm(cache)))
            }
        }
    }

    /// Reverse-mode step. Returns the gradient w.r.t. the layer input (when
    /// requested) and the gradients of the layer's own parameters.
    pub fn backward(
        &self,
        cache: &LayerCache,
        grad_out: &Tensor,
        needs_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>), NnError> {
        match (self, cache) {
            (Layer::Conv2d(l), LayerCache::Conv2d(c)) => {
                l.backward(c, grad_out, needs_input_grad)
            }
            (Layer::MaxPool2d(l), LayerCache::Pool(c)) => {
                Ok((Some(l.backward(c, grad_out)), Vec::new()))
            }
            (Layer::AvgPool2d(l), LayerCache::Pool(c)) => {
                Ok((Some(l.backward(c, grad_out)), Vec::new()))
            }
            (Layer::Dense(l), LayerCache::Dense(c)) => l.backward(c, grad_out, needs_input_grad),
            (Layer::Activation(act), LayerCache::Activation(out)) => {
                let mut gin = grad_out.clone();
                for (g, &y) in gin.data_mut().iter_mut().zip(out.data()) {
                    *g *= act.derivative_from_output(y);
                }
                Ok((Some(gin), Vec::new()))
            }
            (Layer::L2Norm(l), LayerCache::L2Norm(c)) => {
                Ok((Some(l.backward(c, grad_out)), Vec::new()))
            }
            (Layer::Lstm(l), LayerCache::Lstm(c)) => {
                let (gin, grads) = l.backward(c, grad_out)?;
                Ok((Some(gin), grads))
            }
            _ => Err(NnError::ShapeMismatch("cache does not match layer".into())),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d(l) => vec![&l.kernels, &l.bias],
            Layer::Dense(l) => vec![&l.weights, &l.bias],
            Layer::Lstm(l) => vec![&l.wx, &l.wh, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.kernels, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weights, &mut l.bias],
            Layer::Lstm(l) => vec![&mut l.wx, &mut l.wh, &mut l.bias],
            _ => Vec::new(),
        }
    }
}
