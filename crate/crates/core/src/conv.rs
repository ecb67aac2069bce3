//! Convolution, activation and pooling over `C x H x W` tensors, where `H`
//! is the spectral axis and `W` the temporal axis.
//!
//! Convolution is a valid-geometry cross-correlation (no padding, no filter
//! flip). A layer is `pool(activation(conv(x)))`, and every piece has an
//! exact backward pass.

use std::fmt;

use ndarray::{Array1, Array2, Array3, Array4, ArrayView3, Axis};
use rand::{Rng, RngExt};

use crate::error::{Error, Result};

pub type Tensor3 = Array3<f64>;

/// Filter-shape family of a convolutional layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvType {
    /// `h x 1` filters, spectral only.
    S,
    /// `1 x w` filters, temporal only.
    T,
    /// `h x w` filters local in both axes.
    ST,
    /// `M x w` filters spanning the whole spectrum.
    FST,
}

impl ConvType {
    pub const ALL: [ConvType; 4] = [ConvType::S, ConvType::T, ConvType::ST, ConvType::FST];

    pub fn name(self) -> &'static str {
        match self {
            ConvType::S => "S",
            ConvType::T => "T",
            ConvType::ST => "ST",
            ConvType::FST => "FST",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S" => Some(ConvType::S),
            "T" => Some(ConvType::T),
            "ST" => Some(ConvType::ST),
            "FST" => Some(ConvType::FST),
            _ => None,
        }
    }

    /// Pool window and pool stride: size 3, stride 2 along each convolved axis.
    pub fn default_pool(self) -> ((usize, usize), (usize, usize)) {
        match self {
            ConvType::S => ((3, 1), (2, 1)),
            ConvType::T | ConvType::FST => ((1, 3), (1, 2)),
            ConvType::ST => ((3, 3), (2, 2)),
        }
    }
}

impl fmt::Display for ConvType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    ReLU,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::ReLU => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PoolMode {
    #[default]
    Max,
    Mean,
}

/// Geometry and nonlinearity of one convolutional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerSpec {
    pub conv_type: ConvType,
    pub in_channels: usize,
    pub out_maps: usize,
    pub filter_h: usize,
    pub filter_w: usize,
    /// Convolution strides along (spectral, temporal).
    pub stride: (usize, usize),
    /// Pool window `(m, n)`.
    pub pool: (usize, usize),
    pub pool_stride: (usize, usize),
    pub activation: Activation,
    pub pool_mode: PoolMode,
}

impl ConvLayerSpec {
    /// A layer with unit conv strides, ReLU, max pooling and the type's
    /// standard pool window.
    pub fn preset(conv_type: ConvType, in_channels: usize, out_maps: usize, h: usize, w: usize) -> Self {
        let (pool, pool_stride) = conv_type.default_pool();
        Self {
            conv_type,
            in_channels,
            out_maps,
            filter_h: h,
            filter_w: w,
            stride: (1, 1),
            pool,
            pool_stride,
            activation: Activation::ReLU,
            pool_mode: PoolMode::Max,
        }
    }

    pub fn without_pooling(mut self) -> Self {
        self.pool = (1, 1);
        self.pool_stride = (1, 1);
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_pool_mode(mut self, mode: PoolMode) -> Self {
        self.pool_mode = mode;
        self
    }

    pub fn has_pooling(&self) -> bool {
        self.pool != (1, 1) || self.pool_stride != (1, 1)
    }

    /// Pre-pooling `(H1, W1)` for an `H0 x W0` input.
    pub fn conv_output_dims(&self, h0: usize, w0: usize) -> Result<(usize, usize)> {
        if self.filter_h > h0 || self.filter_w > w0 {
            return Err(Error::Geometry(format!(
                "{}x{} filter does not fit a {h0}x{w0} input",
                self.filter_h, self.filter_w
            )));
        }
        Ok((
            (h0 - self.filter_h) / self.stride.0 + 1,
            (w0 - self.filter_w) / self.stride.1 + 1,
        ))
    }

    /// Post-pooling `(H2, W2)` for a `H1 x W1` pre-pooling map.
    pub fn pool_output_dims(&self, h1: usize, w1: usize) -> Result<(usize, usize)> {
        let (m, n) = self.pool;
        if m > h1 || n > w1 {
            return Err(Error::Geometry(format!(
                "{m}x{n} pool window does not fit a {h1}x{w1} map"
            )));
        }
        Ok(((h1 - m) / self.pool_stride.0 + 1, (w1 - n) / self.pool_stride.1 + 1))
    }

    /// Final `(H2, W2)` of the whole layer.
    pub fn output_dims(&self, h0: usize, w0: usize) -> Result<(usize, usize)> {
        let (h1, w1) = self.conv_output_dims(h0, w0)?;
        self.pool_output_dims(h1, w1)
    }
}

/// Checks the filter-shape family against the input's spectral height `m`.
pub fn validate_spec(spec: &ConvLayerSpec, m: usize) -> Result<()> {
    let (h, w) = (spec.filter_h, spec.filter_w);
    let fail = |msg: String| Err(Error::Spec(format!("{}-type: {msg}", spec.conv_type)));
    match spec.conv_type {
        ConvType::S => {
            if w != 1 {
                return fail(format!("requires w = 1, got w = {w}"));
            }
            if h < 1 || h > m {
                return fail(format!("requires 1 <= h <= M = {m}, got h = {h}"));
            }
        }
        ConvType::T => {
            if h != 1 {
                return fail(format!("requires h = 1, got h = {h}"));
            }
            if w < 2 {
                return fail(format!("requires w >= 2, got w = {w}"));
            }
        }
        ConvType::ST => {
            if h < 2 || h + 1 > m {
                return fail(format!("requires 2 <= h <= M - 1 = {}, got h = {h}", m as isize - 1));
            }
            if w < 2 {
                return fail(format!("requires w >= 2, got w = {w}"));
            }
        }
        ConvType::FST => {
            if h != m {
                return fail(format!("requires h = M = {m}, got h = {h}"));
            }
            if w < 2 {
                return fail(format!("requires w >= 2, got w = {w}"));
            }
        }
    }
    if spec.stride != (1, 1) {
        return Err(Error::Spec(format!(
            "convolution stride must be 1, got {:?}",
            spec.stride
        )));
    }
    if spec.in_channels == 0 || spec.out_maps == 0 {
        return Err(Error::Spec("channel and map counts must be positive".into()));
    }
    if spec.pool.0 == 0 || spec.pool.1 == 0 || spec.pool_stride.0 == 0 || spec.pool_stride.1 == 0 {
        return Err(Error::Spec("pool window and strides must be positive".into()));
    }
    Ok(())
}

/// `K` filters of shape `C x h x w` and one bias per map.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub maps: Array4<f64>,
    pub bias: Array1<f64>,
}

impl ConvParams {
    pub fn zeros(spec: &ConvLayerSpec) -> Self {
        Self {
            maps: Array4::zeros((spec.out_maps, spec.in_channels, spec.filter_h, spec.filter_w)),
            bias: Array1::zeros(spec.out_maps),
        }
    }

    /// Uniform Glorot initialisation, zero bias.
    pub fn init<R: Rng + ?Sized>(spec: &ConvLayerSpec, rng: &mut R) -> Self {
        let receptive = spec.filter_h * spec.filter_w;
        let fan_in = spec.in_channels * receptive;
        let fan_out = spec.out_maps * receptive;
        let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut p = Self::zeros(spec);
        p.maps.mapv_inplace(|_| rng.random_range(-r..r));
        p
    }

    fn weight_matrix(&self) -> Array2<f64> {
        let (k, c, h, w) = self.maps.dim();
        self.maps
            .to_shape((k, c * h * w))
            .expect("contiguous filters")
            .to_owned()
    }

    fn check(&self, spec: &ConvLayerSpec) -> Result<()> {
        let want = (spec.out_maps, spec.in_channels, spec.filter_h, spec.filter_w);
        if self.maps.dim() != want || self.bias.len() != spec.out_maps {
            return Err(Error::Shape(format!(
                "conv params {:?} / bias {} do not match spec {want:?}",
                self.maps.dim(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

fn im2col(x: &ArrayView3<f64>, spec: &ConvLayerSpec, h1: usize, w1: usize) -> Array2<f64> {
    let c = x.dim().0;
    let (fh, fw) = (spec.filter_h, spec.filter_w);
    let (sh, sw) = spec.stride;
    let mut cols = Array2::zeros((c * fh * fw, h1 * w1));
    for ch in 0..c {
        for mu in 0..fh {
            for nu in 0..fw {
                let row = (ch * fh + mu) * fw + nu;
                let mut dst = cols.row_mut(row);
                for i in 0..h1 {
                    for j in 0..w1 {
                        dst[i * w1 + j] = x[[ch, i * sh + mu, j * sw + nu]];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, spec: &ConvLayerSpec, input_dim: (usize, usize, usize), h1: usize, w1: usize) -> Tensor3 {
    let (c, _, _) = input_dim;
    let (fh, fw) = (spec.filter_h, spec.filter_w);
    let (sh, sw) = spec.stride;
    let mut dx = Array3::zeros(input_dim);
    for ch in 0..c {
        for mu in 0..fh {
            for nu in 0..fw {
                let src = cols.row((ch * fh + mu) * fw + nu);
                for i in 0..h1 {
                    for j in 0..w1 {
                        dx[[ch, i * sh + mu, j * sw + nu]] += src[i * w1 + j];
                    }
                }
            }
        }
    }
    dx
}

fn conv_impl(x: &Tensor3, p: &ConvParams, spec: &ConvLayerSpec) -> Result<(Tensor3, Array2<f64>)> {
    p.check(spec)?;
    let (c, h0, w0) = x.dim();
    if c != spec.in_channels {
        return Err(Error::Shape(format!(
            "input has {c} channels, layer expects {}",
            spec.in_channels
        )));
    }
    let (h1, w1) = spec.conv_output_dims(h0, w0)?;
    let cols = im2col(&x.view(), spec, h1, w1);
    let mut y = p.weight_matrix().dot(&cols);
    for (mut row, b) in y.axis_iter_mut(Axis(0)).zip(p.bias.iter()) {
        row += *b;
    }
    let y = y
        .into_shape_with_order((spec.out_maps, h1, w1))
        .expect("K x H1 x W1");
    Ok((y, cols))
}

/// Cross-correlation of `x` with every filter plus its bias.
pub fn conv_forward(x: &Tensor3, p: &ConvParams, spec: &ConvLayerSpec) -> Result<Tensor3> {
    conv_impl(x, p, spec).map(|(y, _)| y)
}

fn pool_impl(y: &Tensor3, spec: &ConvLayerSpec, mode: PoolMode) -> Result<(Tensor3, Vec<usize>)> {
    let (k, h1, w1) = y.dim();
    let (h2, w2) = spec.pool_output_dims(h1, w1)?;
    let (m, n) = spec.pool;
    let (sp, tp) = spec.pool_stride;
    let mut out = Array3::zeros((k, h2, w2));
    let mut argmax = Vec::new();
    if mode == PoolMode::Max {
        argmax.reserve(k * h2 * w2);
    }
    for kk in 0..k {
        for i in 0..h2 {
            for j in 0..w2 {
                let (r0, c0) = (i * sp, j * tp);
                match mode {
                    PoolMode::Max => {
                        let mut best = (r0, c0);
                        let mut best_v = y[[kk, r0, c0]];
                        for a in 0..m {
                            for b in 0..n {
                                let v = y[[kk, r0 + a, c0 + b]];
                                if v > best_v {
                                    best_v = v;
                                    best = (r0 + a, c0 + b);
                                }
                            }
                        }
                        out[[kk, i, j]] = best_v;
                        argmax.push((kk * h1 + best.0) * w1 + best.1);
                    }
                    PoolMode::Mean => {
                        let mut s = 0.0;
                        for a in 0..m {
                            for b in 0..n {
                                s += y[[kk, r0 + a, c0 + b]];
                            }
                        }
                        out[[kk, i, j]] = s / (m * n) as f64;
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Max or mean over `m x n` windows placed every `(s_pi, t_pi)`.
pub fn pool_forward(y: &Tensor3, spec: &ConvLayerSpec, mode: PoolMode) -> Result<Tensor3> {
    pool_impl(y, spec, mode).map(|(o, _)| o)
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ConvCache {
    input_dim: (usize, usize, usize),
    cols: Array2<f64>,
    pre_activation: Tensor3,
    activated: Tensor3,
    argmax: Vec<usize>,
    output_dim: (usize, usize, usize),
}

impl ConvCache {
    /// Convolution output before the activation.
    pub fn pre_activation(&self) -> &Tensor3 {
        &self.pre_activation
    }
}

/// `pool(activation(conv(x)))`, returning the cache for [`conv_layer_backward`].
pub fn conv_layer_cached(x: &Tensor3, p: &ConvParams, spec: &ConvLayerSpec) -> Result<(Tensor3, ConvCache)> {
    let (z, cols) = conv_impl(x, p, spec)?;
    let act = spec.activation;
    let a = z.mapv(|v| act.apply(v));
    let (out, argmax) = if spec.has_pooling() {
        pool_impl(&a, spec, spec.pool_mode)?
    } else {
        (a.clone(), Vec::new())
    };
    let cache = ConvCache {
        input_dim: x.dim(),
        cols,
        pre_activation: z,
        activated: a,
        argmax,
        output_dim: out.dim(),
    };
    Ok((out, cache))
}

pub fn conv_layer(x: &Tensor3, p: &ConvParams, spec: &ConvLayerSpec) -> Result<Tensor3> {
    conv_layer_cached(x, p, spec).map(|(o, _)| o)
}

/// Gradients with respect to the layer input and parameters.
///
/// Max pooling routes each upstream gradient to the first maximal element
/// of its window in row-major order.
pub fn conv_layer_backward(
    grad_out: &Tensor3,
    cache: &ConvCache,
    p: &ConvParams,
    spec: &ConvLayerSpec,
) -> Result<(Tensor3, ConvParams)> {
    if grad_out.dim() != cache.output_dim {
        return Err(Error::StaleCache);
    }
    p.check(spec)?;
    let (k, h1, w1) = cache.activated.dim();
    let mut grad_a = if spec.has_pooling() {
        let mut g = Array3::<f64>::zeros((k, h1, w1));
        let (_, h2, w2) = cache.output_dim;
        match spec.pool_mode {
            PoolMode::Max => {
                let flat = g.as_slice_mut().expect("contiguous");
                for (idx, v) in cache.argmax.iter().zip(grad_out.iter()) {
                    flat[*idx] += v;
                }
            }
            PoolMode::Mean => {
                let (m, n) = spec.pool;
                let (sp, tp) = spec.pool_stride;
                let scale = 1.0 / (m * n) as f64;
                for kk in 0..k {
                    for i in 0..h2 {
                        for j in 0..w2 {
                            let v = grad_out[[kk, i, j]] * scale;
                            for a in 0..m {
                                for b in 0..n {
                                    g[[kk, i * sp + a, j * tp + b]] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
        g
    } else {
        grad_out.clone()
    };
    let act = spec.activation;
    ndarray::Zip::from(&mut grad_a)
        .and(&cache.pre_activation)
        .and(&cache.activated)
        .for_each(|g, &z, &a| *g *= act.derivative(z, a));
    let grad_z = grad_a
        .into_shape_with_order((k, h1 * w1))
        .expect("K x P");

    let gw = grad_z.dot(&cache.cols.t());
    let grad_params = ConvParams {
        maps: gw
            .into_shape_with_order((spec.out_maps, spec.in_channels, spec.filter_h, spec.filter_w))
            .expect("filter shape"),
        bias: grad_z.sum_axis(Axis(1)),
    };
    let grad_cols = p.weight_matrix().t().dot(&grad_z);
    let grad_x = col2im(&grad_cols, spec, cache.input_dim, h1, w1);
    Ok((grad_x, grad_params))
}
