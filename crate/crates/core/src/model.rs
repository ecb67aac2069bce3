//! LDNN and X-CLDNN classifiers.
//!
//! An LDNN reads one vector per frame, runs a BLSTM, averages its outputs
//! over time, applies dropout and a four-layer fully connected stack ending
//! in a softmax. An X-CLDNN puts two convolutional layers of type X in front
//! of it, applied independently to every spliced `D x W` block; the pooled
//! maps of the second layer are flattened in (map, spectral, temporal)
//! row-major order to form the frame vector.

use std::fmt;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, RngExt};

use crate::config::Config;
use crate::conv::{
    conv_layer_backward, conv_layer_cached, validate_spec, Activation, ConvCache, ConvLayerSpec,
    ConvParams, ConvType,
};
use crate::dsp::{FeatureKind, SplicedSequence};
use crate::error::{Error, Result};
use crate::recurrent::{blstm_backward, blstm_forward_cached, BlstmCache, BlstmParams, Gate};

/// Spliced input layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputKind {
    LogMel40,
    Mfcc13,
}

impl InputKind {
    pub fn height(self) -> usize {
        match self {
            InputKind::LogMel40 => 40,
            InputKind::Mfcc13 => 13,
        }
    }

    /// Spliced context width (10 left + current + 5 right).
    pub fn width(self) -> usize {
        16
    }

    pub fn feature_kind(self) -> FeatureKind {
        match self {
            InputKind::LogMel40 => FeatureKind::LogMel,
            InputKind::Mfcc13 => FeatureKind::Mfcc,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            InputKind::LogMel40 => "logmel",
            InputKind::Mfcc13 => "mfcc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logmel" | "log-mel" | "logmels" | "log-mels" => Some(InputKind::LogMel40),
            "mfcc" | "mfccs" => Some(InputKind::Mfcc13),
            _ => None,
        }
    }

    fn label(self) -> &'static str {
        match self {
            InputKind::LogMel40 => "log-Mels",
            InputKind::Mfcc13 => "MFCCs",
        }
    }
}

/// BLSTM and fully connected sizes shared by every model.
#[derive(Debug, Clone, PartialEq)]
pub struct LdnnConfig {
    pub blstm_cells: usize,
    /// Output sizes of the four FC layers; the last is the class count.
    pub fc_sizes: Vec<usize>,
    pub dropout: f64,
}

impl LdnnConfig {
    pub fn new(n_classes: usize) -> Self {
        Self {
            blstm_cells: 128,
            fc_sizes: vec![128, 32, 32, n_classes],
            dropout: 0.2,
        }
    }

    pub fn n_classes(&self) -> usize {
        *self.fc_sizes.last().expect("non-empty FC stack")
    }

    fn validate(&self) -> Result<()> {
        if self.fc_sizes.is_empty() || self.fc_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Spec("FC sizes must be positive and non-empty".into()));
        }
        if self.n_classes() < 2 {
            return Err(Error::Spec("need at least two classes".into()));
        }
        if self.blstm_cells == 0 {
            return Err(Error::Spec("BLSTM needs at least one cell".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Spec(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CldnnConfig {
    pub conv1: ConvLayerSpec,
    pub conv2: ConvLayerSpec,
    pub ldnn: LdnnConfig,
    pub input_kind: InputKind,
}

/// The eight model families: LDNN or X-CLDNN, on log-Mels or MFCCs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Ldnn(InputKind),
    Cldnn(ConvType, InputKind),
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Ldnn(InputKind::LogMel40),
        Variant::Ldnn(InputKind::Mfcc13),
        Variant::Cldnn(ConvType::T, InputKind::Mfcc13),
        Variant::Cldnn(ConvType::FST, InputKind::Mfcc13),
        Variant::Cldnn(ConvType::T, InputKind::LogMel40),
        Variant::Cldnn(ConvType::S, InputKind::LogMel40),
        Variant::Cldnn(ConvType::ST, InputKind::LogMel40),
        Variant::Cldnn(ConvType::FST, InputKind::LogMel40),
    ];

    pub fn input_kind(self) -> InputKind {
        match self {
            Variant::Ldnn(k) | Variant::Cldnn(_, k) => k,
        }
    }

    /// Config-file model name, e.g. `fst-cldnn` or `ldnn`.
    pub fn model_key(self) -> String {
        match self {
            Variant::Ldnn(_) => "ldnn".into(),
            Variant::Cldnn(t, _) => format!("{}-cldnn", t.name().to_ascii_lowercase()),
        }
    }

    pub fn parse(model: &str, input: InputKind) -> Option<Self> {
        let model = model.to_ascii_lowercase();
        if model == "ldnn" {
            return Some(Variant::Ldnn(input));
        }
        let t = model.strip_suffix("-cldnn")?;
        ConvType::parse(t).map(|t| Variant::Cldnn(t, input))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Ldnn(k) => write!(f, "LDNN ({})", k.label()),
            Variant::Cldnn(t, k) => write!(f, "{t}-CLDNN ({})", k.label()),
        }
    }
}

/// Filter sizes `(h1, w1, h2, w2)` of the stock X-CLDNN presets.
pub fn preset_filters(conv_type: ConvType, input: InputKind) -> (usize, usize, usize, usize) {
    match conv_type {
        ConvType::T => (1, 5, 1, 2),
        ConvType::S => (9, 1, 4, 1),
        ConvType::ST => (5, 5, 3, 2),
        ConvType::FST => (input.height(), 5, 1, 2),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Ldnn { input_kind: InputKind, ldnn: LdnnConfig },
    Cldnn(CldnnConfig),
}

impl ModelConfig {
    /// Stock configuration for `variant` with 32 maps per conv layer.
    pub fn preset(variant: Variant, n_classes: usize) -> Result<Self> {
        let ldnn = LdnnConfig::new(n_classes);
        match variant {
            Variant::Ldnn(input_kind) => Ok(ModelConfig::Ldnn { input_kind, ldnn }),
            Variant::Cldnn(t, input) => {
                let (h1, w1, h2, w2) = preset_filters(t, input);
                Self::cldnn(t, input, (h1, w1, h2, w2), 32, ldnn)
            }
        }
    }

    /// X-CLDNN with explicit filter sizes.
    pub fn cldnn(
        conv_type: ConvType,
        input_kind: InputKind,
        (h1, w1, h2, w2): (usize, usize, usize, usize),
        maps: usize,
        ldnn: LdnnConfig,
    ) -> Result<Self> {
        let cfg = ModelConfig::Cldnn(CldnnConfig {
            conv1: ConvLayerSpec::preset(conv_type, 1, maps, h1, w1),
            conv2: ConvLayerSpec::preset(conv_type, maps, maps, h2, w2),
            ldnn,
            input_kind,
        });
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn input_kind(&self) -> InputKind {
        match self {
            ModelConfig::Ldnn { input_kind, .. } => *input_kind,
            ModelConfig::Cldnn(c) => c.input_kind,
        }
    }

    pub fn ldnn(&self) -> &LdnnConfig {
        match self {
            ModelConfig::Ldnn { ldnn, .. } => ldnn,
            ModelConfig::Cldnn(c) => &c.ldnn,
        }
    }

    pub fn ldnn_mut(&mut self) -> &mut LdnnConfig {
        match self {
            ModelConfig::Ldnn { ldnn, .. } => ldnn,
            ModelConfig::Cldnn(c) => &mut c.ldnn,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.ldnn().n_classes()
    }

    pub fn variant(&self) -> Variant {
        match self {
            ModelConfig::Ldnn { input_kind, .. } => Variant::Ldnn(*input_kind),
            ModelConfig::Cldnn(c) => Variant::Cldnn(c.conv1.conv_type, c.input_kind),
        }
    }

    /// Per-frame `(maps, H2, W2)` after each conv layer.
    pub fn conv_output_dims(&self) -> Result<Option<((usize, usize, usize), (usize, usize, usize))>> {
        let ModelConfig::Cldnn(c) = self else {
            return Ok(None);
        };
        let (h, w) = (c.input_kind.height(), c.input_kind.width());
        let (h1, w1) = c.conv1.output_dims(h, w)?;
        let (h2, w2) = c.conv2.output_dims(h1, w1)?;
        Ok(Some(((c.conv1.out_maps, h1, w1), (c.conv2.out_maps, h2, w2))))
    }

    /// Length of the per-frame vector fed to the BLSTM.
    pub fn frame_dim(&self) -> Result<usize> {
        Ok(match self.conv_output_dims()? {
            None => self.input_kind().height() * self.input_kind().width(),
            Some((_, (k, h, w))) => k * h * w,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.ldnn().validate()?;
        if let ModelConfig::Cldnn(c) = self {
            let t = c.conv1.conv_type;
            if c.conv2.conv_type != t {
                return Err(Error::Spec("both conv layers must share one type".into()));
            }
            if c.input_kind == InputKind::Mfcc13 && matches!(t, ConvType::S | ConvType::ST) {
                return Err(Error::Spec(format!(
                    "{t}-type convolution is not applied to MFCCs (only T and FST)"
                )));
            }
            if c.conv1.in_channels != 1 || c.conv2.in_channels != c.conv1.out_maps {
                return Err(Error::Spec("conv channel counts do not chain".into()));
            }
            validate_spec(&c.conv1, c.input_kind.height())?;
            let (h1, w1) = c
                .conv1
                .output_dims(c.input_kind.height(), c.input_kind.width())?;
            validate_spec(&c.conv2, h1)?;
            c.conv2.output_dims(h1, w1)?;
        }
        Ok(())
    }

    pub fn to_config(&self) -> Config {
        let ldnn = self.ldnn();
        let mut cfg = Config::new();
        cfg.set("model", self.variant().model_key())
            .set("input", self.input_kind().key())
            .set("classes", ldnn.n_classes())
            .set("blstm_cells", ldnn.blstm_cells)
            .set(
                "fc_sizes",
                ldnn.fc_sizes[..ldnn.fc_sizes.len() - 1]
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            )
            .set("dropout", ldnn.dropout);
        if let ModelConfig::Cldnn(c) = self {
            cfg.set("h1", c.conv1.filter_h)
                .set("w1", c.conv1.filter_w)
                .set("h2", c.conv2.filter_h)
                .set("w2", c.conv2.filter_w)
                .set("maps", c.conv1.out_maps);
        }
        cfg
    }

    /// Reads `model`, `input`, `classes` and the optional size keys.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let input_s = cfg.get_str("input").unwrap_or("logmel");
        let input = InputKind::parse(input_s)
            .ok_or_else(|| Error::config("input", format!("unknown input kind `{input_s}`")))?;
        let model_s = cfg.require_str("model")?;
        let variant = Variant::parse(model_s, input)
            .ok_or_else(|| Error::config("model", format!("unknown model `{model_s}`")))?;
        let n_classes: usize = cfg.get_or("classes", 6)?;
        let mut ldnn = LdnnConfig::new(n_classes);
        ldnn.blstm_cells = cfg.get_or("blstm_cells", ldnn.blstm_cells)?;
        if let Some(mut sizes) = cfg.get_list::<usize>("fc_sizes")? {
            sizes.push(n_classes);
            ldnn.fc_sizes = sizes;
        }
        ldnn.dropout = cfg.get_or("dropout", ldnn.dropout)?;
        let out = match variant {
            Variant::Ldnn(input_kind) => ModelConfig::Ldnn { input_kind, ldnn },
            Variant::Cldnn(t, k) => {
                let (h1, w1, h2, w2) = preset_filters(t, k);
                let filters = (
                    cfg.get_or("h1", h1)?,
                    cfg.get_or("w1", w1)?,
                    cfg.get_or("h2", h2)?,
                    cfg.get_or("w2", w2)?,
                );
                let maps = cfg.get_or("maps", 32)?;
                ModelConfig::cldnn(t, k, filters, maps, ldnn)?
            }
        };
        out.validate()?;
        Ok(out)
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            w: Array2::zeros((d_out, d_in)),
            b: Array1::zeros(d_out),
        }
    }

    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let r = (6.0 / (d_in + d_out) as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((d_out, d_in), |_| rng.random_range(-r..r)),
            b: Array1::zeros(d_out),
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }
}

/// Every trainable tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv1: Option<ConvParams>,
    pub conv2: Option<ConvParams>,
    pub blstm: BlstmParams,
    pub fc: Vec<Dense>,
}

/// Name, dimensions and contents of one parameter tensor.
pub type NamedTensor = (String, Vec<usize>, Vec<f64>);

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ldnn = config.ldnn();
        let frame_dim = config.frame_dim()?;
        let (conv1, conv2) = match config {
            ModelConfig::Cldnn(c) => (
                Some(ConvParams::init(&c.conv1, rng)),
                Some(ConvParams::init(&c.conv2, rng)),
            ),
            ModelConfig::Ldnn { .. } => (None, None),
        };
        let blstm = BlstmParams::init(frame_dim, ldnn.blstm_cells, rng);
        let mut fc = Vec::new();
        let mut d_in = 2 * ldnn.blstm_cells;
        for &d_out in &ldnn.fc_sizes {
            fc.push(Dense::init(d_in, d_out, rng));
            d_in = d_out;
        }
        Ok(Self {
            conv1,
            conv2,
            blstm,
            fc,
        })
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let ldnn = config.ldnn();
        let frame_dim = config.frame_dim()?;
        let (conv1, conv2) = match config {
            ModelConfig::Cldnn(c) => (Some(ConvParams::zeros(&c.conv1)), Some(ConvParams::zeros(&c.conv2))),
            ModelConfig::Ldnn { .. } => (None, None),
        };
        let mut fc = Vec::new();
        let mut d_in = 2 * ldnn.blstm_cells;
        for &d_out in &ldnn.fc_sizes {
            fc.push(Dense::zeros(d_in, d_out));
            d_in = d_out;
        }
        Ok(Self {
            conv1,
            conv2,
            blstm: BlstmParams::zeros(frame_dim, ldnn.blstm_cells),
            fc,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, _, s| s.fill(0.0));
        z
    }

    /// Visits every tensor in a fixed order with its checkpoint name.
    pub fn for_each(&self, mut f: impl FnMut(&str, &[usize], &[f64])) {
        for (name, conv) in [("conv1", &self.conv1), ("conv2", &self.conv2)] {
            if let Some(c) = conv {
                let d = c.maps.dim();
                f(&format!("{name}.maps"), &[d.0, d.1, d.2, d.3], c.maps.as_slice().unwrap());
                f(&format!("{name}.bias"), &[d.0], c.bias.as_slice().unwrap());
            }
        }
        for (dir, p) in [("fwd", &self.blstm.fwd), ("bwd", &self.blstm.bwd)] {
            let h = p.hidden();
            let d = p.input_dim();
            let wx = p.w_x.as_slice().unwrap();
            let ws = p.w_s.as_slice().unwrap();
            let b = p.bias.as_slice().unwrap();
            for (g, gate) in Gate::ALL.iter().enumerate() {
                let l = gate.letter();
                f(&format!("blstm.{dir}.U_{l}x"), &[h, d], &wx[g * h * d..(g + 1) * h * d]);
                f(&format!("blstm.{dir}.U_{l}s"), &[h, h], &ws[g * h * h..(g + 1) * h * h]);
                f(&format!("blstm.{dir}.u_{l}"), &[h], &b[g * h..(g + 1) * h]);
            }
        }
        for (i, layer) in self.fc.iter().enumerate() {
            let (o, n) = layer.w.dim();
            f(&format!("fc{}.W", i + 1), &[o, n], layer.w.as_slice().unwrap());
            f(&format!("fc{}.b", i + 1), &[o], layer.b.as_slice().unwrap());
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &[usize], &mut [f64])) {
        for (name, conv) in [("conv1", &mut self.conv1), ("conv2", &mut self.conv2)] {
            if let Some(c) = conv {
                let d = c.maps.dim();
                f(&format!("{name}.maps"), &[d.0, d.1, d.2, d.3], c.maps.as_slice_mut().unwrap());
                f(&format!("{name}.bias"), &[d.0], c.bias.as_slice_mut().unwrap());
            }
        }
        for (dir, p) in [("fwd", &mut self.blstm.fwd), ("bwd", &mut self.blstm.bwd)] {
            let h = p.hidden();
            let d = p.input_dim();
            let wx = p.w_x.as_slice_mut().unwrap();
            let ws = p.w_s.as_slice_mut().unwrap();
            let b = p.bias.as_slice_mut().unwrap();
            for (g, gate) in Gate::ALL.iter().enumerate() {
                let l = gate.letter();
                f(&format!("blstm.{dir}.U_{l}x"), &[h, d], &mut wx[g * h * d..(g + 1) * h * d]);
                f(&format!("blstm.{dir}.U_{l}s"), &[h, h], &mut ws[g * h * h..(g + 1) * h * h]);
                f(&format!("blstm.{dir}.u_{l}"), &[h], &mut b[g * h..(g + 1) * h]);
            }
        }
        for (i, layer) in self.fc.iter_mut().enumerate() {
            let (o, n) = layer.w.dim();
            f(&format!("fc{}.W", i + 1), &[o, n], layer.w.as_slice_mut().unwrap());
            f(&format!("fc{}.b", i + 1), &[o], layer.b.as_slice_mut().unwrap());
        }
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.for_each(|n, d, s| out.push((n.to_string(), d.to_vec(), s.to_vec())));
        out
    }

    /// Rebuilds parameters for `config` from named tensors; every expected
    /// tensor must be present with matching dimensions.
    pub fn from_named_tensors(config: &ModelConfig, tensors: &[NamedTensor]) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut missing = None;
        p.for_each_mut(|name, dims, dst| {
            match tensors.iter().find(|(n, _, _)| n == name) {
                Some((_, d, v)) if d == dims && v.len() == dst.len() => dst.copy_from_slice(v),
                Some((_, d, _)) => {
                    missing.get_or_insert(format!("tensor `{name}` has dims {d:?}, expected {dims:?}"));
                }
                None => {
                    missing.get_or_insert(format!("tensor `{name}` missing"));
                }
            }
        });
        match missing {
            Some(m) => Err(Error::Format(m)),
            None => Ok(p),
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, _, s| n += s.len());
        n
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in [(&mut self.conv1, &other.conv1), (&mut self.conv2, &other.conv2)] {
            if let (Some(a), Some(b)) = (a, b) {
                a.maps += &b.maps;
                a.bias += &b.bias;
            }
        }
        for (a, b) in [
            (&mut self.blstm.fwd, &other.blstm.fwd),
            (&mut self.blstm.bwd, &other.blstm.bwd),
        ] {
            a.w_x += &b.w_x;
            a.w_s += &b.w_s;
            a.bias += &b.bias;
        }
        for (a, b) in self.fc.iter_mut().zip(&other.fc) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_mut(|_, _, d| d.iter_mut().for_each(|v| *v *= factor));
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, _, s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Numerically stable softmax.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

/// `-ln p[label]` (floored at 1e-300) and its gradient `p - onehot(label)`
/// with respect to the pre-softmax logits.
pub fn cross_entropy(probs: &Array1<f64>, label: usize) -> (f64, Array1<f64>) {
    let loss = -probs[label].max(1e-300).ln();
    let mut grad = probs.clone();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Per-utterance outputs, including the representations probed per module.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub probs: Array1<f64>,
    pub logits: Array1<f64>,
    /// `T x F` frame vectors entering the BLSTM (conv2 output for CLDNNs,
    /// flattened spliced blocks for LDNNs).
    pub frame_features: Array2<f64>,
    /// Temporal mean of the BLSTM outputs, before dropout.
    pub blstm_mean: Array1<f64>,
}

#[derive(Debug, Clone)]
struct FcCache {
    input: Array1<f64>,
    pre: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    conv: Vec<(ConvCache, ConvCache)>,
    conv2_dim: Option<(usize, usize, usize)>,
    blstm: BlstmCache,
    steps: usize,
    dropout_mask: Array1<f64>,
    fc: Vec<FcCache>,
}

fn check_blocks(input: &SplicedSequence, kind: InputKind) -> Result<()> {
    if input.is_empty() {
        return Err(Error::Shape("utterance has no frames".into()));
    }
    let want = (kind.height(), kind.width());
    if let Some(b) = input.blocks.iter().find(|b| b.dim() != want) {
        return Err(Error::Shape(format!(
            "spliced block {:?} does not match {want:?}",
            b.dim()
        )));
    }
    Ok(())
}

fn flatten_blocks(input: &SplicedSequence) -> Array2<f64> {
    let (d, w) = input.block_shape();
    let mut out = Array2::zeros((input.len(), d * w));
    for (t, b) in input.blocks.iter().enumerate() {
        out.row_mut(t)
            .assign(&b.to_shape(d * w).expect("block flatten"));
    }
    out
}

/// Inverted-dropout multipliers: `0` with probability `p`, else `1 / (1 - p)`;
/// all ones in Eval mode.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, p: f64, mode: Mode, rng: &mut R) -> Array1<f64> {
    match mode {
        Mode::Eval => Array1::ones(n),
        Mode::Train => {
            let keep = 1.0 / (1.0 - p);
            Array1::from_shape_fn(n, |_| if rng.random::<f64>() < p { 0.0 } else { keep })
        }
    }
}

/// LDNN on a `T x F` frame sequence, returning outputs and the backward cache.
pub fn ldnn_forward_cached<R: Rng + ?Sized>(
    frames: &Array2<f64>,
    params: &ModelParams,
    ldnn: &LdnnConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(ForwardOutput, ModelCache)> {
    if frames.nrows() == 0 {
        return Err(Error::Shape("utterance has no frames".into()));
    }
    if params.fc.len() != ldnn.fc_sizes.len() {
        return Err(Error::Shape("FC stack does not match config".into()));
    }
    let (z, blstm_cache) = blstm_forward_cached(frames, &params.blstm)?;
    let steps = z.nrows();
    let c = z.mean_axis(Axis(0)).expect("T >= 1");
    let mask = dropout_mask(c.len(), ldnn.dropout, mode, rng);
    let mut x = &c * &mask;
    let mut fc_cache = Vec::with_capacity(params.fc.len());
    let last = params.fc.len() - 1;
    for (i, layer) in params.fc.iter().enumerate() {
        if layer.w.ncols() != x.len() {
            return Err(Error::Shape(format!("fc{} expects {} inputs", i + 1, layer.w.ncols())));
        }
        let pre = layer.forward(&x);
        let next = if i == last { pre.clone() } else { pre.mapv(|v| v.max(0.0)) };
        fc_cache.push(FcCache { input: x, pre });
        x = next;
    }
    let logits = x;
    let probs = softmax(&logits);
    Ok((
        ForwardOutput {
            probs,
            logits,
            frame_features: frames.clone(),
            blstm_mean: c,
        },
        ModelCache {
            conv: Vec::new(),
            conv2_dim: None,
            blstm: blstm_cache,
            steps,
            dropout_mask: mask,
            fc: fc_cache,
        },
    ))
}

pub fn ldnn_forward<R: Rng + ?Sized>(
    frames: &Array2<f64>,
    params: &ModelParams,
    ldnn: &LdnnConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Array1<f64>> {
    ldnn_forward_cached(frames, params, ldnn, mode, rng).map(|(o, _)| o.probs)
}

/// Runs both conv layers on every spliced block and returns the flattened
/// `T x F` frame vectors with the per-block caches.
fn conv_frames(
    input: &SplicedSequence,
    params: &ModelParams,
    c: &CldnnConfig,
) -> Result<(Array2<f64>, Vec<(ConvCache, ConvCache)>, (usize, usize, usize))> {
    let (p1, p2) = match (&params.conv1, &params.conv2) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Shape("CLDNN parameters lack conv layers".into())),
    };
    let mut rows = Vec::with_capacity(input.len());
    let mut caches = Vec::with_capacity(input.len());
    let mut dim = (0, 0, 0);
    for block in &input.blocks {
        let x = block.clone().insert_axis(Axis(0));
        let (y1, c1) = conv_layer_cached(&x, p1, &c.conv1)?;
        let (y2, c2) = conv_layer_cached(&y1, p2, &c.conv2)?;
        dim = y2.dim();
        rows.push(y2.into_raw_vec_and_offset().0);
        caches.push((c1, c2));
    }
    let f = dim.0 * dim.1 * dim.2;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let frames = Array2::from_shape_vec((input.len(), f), flat).expect("T x F");
    Ok((frames, caches, dim))
}

/// Full model forward pass on one spliced utterance.
pub fn model_forward_cached<R: Rng + ?Sized>(
    input: &SplicedSequence,
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(ForwardOutput, ModelCache)> {
    check_blocks(input, config.input_kind())?;
    match config {
        ModelConfig::Ldnn { ldnn, .. } => {
            ldnn_forward_cached(&flatten_blocks(input), params, ldnn, mode, rng)
        }
        ModelConfig::Cldnn(c) => {
            let (frames, caches, dim) = conv_frames(input, params, c)?;
            let (out, mut cache) = ldnn_forward_cached(&frames, params, &c.ldnn, mode, rng)?;
            cache.conv = caches;
            cache.conv2_dim = Some(dim);
            Ok((out, cache))
        }
    }
}

/// Class probabilities of an X-CLDNN (or LDNN) on spliced blocks.
pub fn cldnn_forward<R: Rng + ?Sized>(
    input: &SplicedSequence,
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Array1<f64>> {
    model_forward_cached(input, params, config, mode, rng).map(|(o, _)| o.probs)
}

/// Backpropagates `grad_logits` (gradient at the pre-softmax layer) through
/// the whole model.
pub fn model_backward(
    grad_logits: &Array1<f64>,
    cache: &ModelCache,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ModelParams> {
    let mut grads = params.zeros_like();
    if cache.fc.len() != params.fc.len() {
        return Err(Error::StaleCache);
    }
    let last = params.fc.len() - 1;
    let mut g = grad_logits.clone();
    for i in (0..params.fc.len()).rev() {
        let fc = &cache.fc[i];
        if g.len() != fc.pre.len() {
            return Err(Error::StaleCache);
        }
        if i != last {
            g.zip_mut_with(&fc.pre, |d, &z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
        }
        let gw = g
            .view()
            .insert_axis(Axis(1))
            .dot(&fc.input.view().insert_axis(Axis(0)));
        grads.fc[i].w.assign(&gw);
        grads.fc[i].b = g.clone();
        g = params.fc[i].w.t().dot(&g);
    }
    let dc = g * &cache.dropout_mask;
    let steps = cache.steps;
    let dz = Array2::from_shape_fn((steps, dc.len()), |(_, j)| dc[j] / steps as f64);
    let (gb, dx) = blstm_backward(&dz, &cache.blstm, &params.blstm)?;
    grads.blstm = gb;

    if let ModelConfig::Cldnn(c) = config {
        let dim = cache.conv2_dim.ok_or(Error::StaleCache)?;
        if cache.conv.len() != steps {
            return Err(Error::StaleCache);
        }
        let (p1, p2) = match (&params.conv1, &params.conv2) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::StaleCache),
        };
        let mut g1 = ConvParams::zeros(&c.conv1);
        let mut g2 = ConvParams::zeros(&c.conv2);
        for (t, (c1, c2)) in cache.conv.iter().enumerate() {
            let gy2: Array3<f64> = dx
                .row(t)
                .to_owned()
                .into_shape_with_order(dim)
                .map_err(|_| Error::StaleCache)?;
            let (gy1, gp2) = conv_layer_backward(&gy2, c2, p2, &c.conv2)?;
            let (_, gp1) = conv_layer_backward(&gy1, c1, p1, &c.conv1)?;
            g2.maps += &gp2.maps;
            g2.bias += &gp2.bias;
            g1.maps += &gp1.maps;
            g1.bias += &gp1.bias;
        }
        grads.conv1 = Some(g1);
        grads.conv2 = Some(g2);
    }
    Ok(grads)
}

/// A configured model with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let params = ModelParams::init(&config, rng)?;
        Ok(Self { config, params })
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &SplicedSequence,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(ForwardOutput, ModelCache)> {
        model_forward_cached(input, &self.params, &self.config, mode, rng)
    }

    /// Eval-mode forward pass (no dropout, no randomness consumed).
    pub fn evaluate(&self, input: &SplicedSequence) -> Result<ForwardOutput> {
        let mut rng = NoRng;
        model_forward_cached(input, &self.params, &self.config, Mode::Eval, &mut rng).map(|(o, _)| o)
    }

    pub fn predict(&self, input: &SplicedSequence) -> Result<usize> {
        let out = self.evaluate(input)?;
        Ok(argmax(&out.probs))
    }

    /// Cross-entropy loss and parameter gradients for one labelled utterance.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        input: &SplicedSequence,
        label: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, ModelParams)> {
        let (out, cache) = self.forward(input, mode, rng)?;
        let (loss, g) = cross_entropy(&out.probs, label);
        let grads = model_backward(&g, &cache, &self.params, &self.config)?;
        Ok((loss, grads))
    }
}

/// Index of the largest entry (first on ties).
pub fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// RNG that is never sampled; Eval mode draws no dropout mask.
struct NoRng;

impl rand::TryRng for NoRng {
    type Error = std::convert::Infallible;

    fn try_next_u32(&mut self) -> std::result::Result<u32, Self::Error> {
        unreachable!("eval mode consumes no randomness")
    }

    fn try_next_u64(&mut self) -> std::result::Result<u64, Self::Error> {
        unreachable!("eval mode consumes no randomness")
    }

    fn try_fill_bytes(&mut self, _dst: &mut [u8]) -> std::result::Result<(), Self::Error> {
        unreachable!("eval mode consumes no randomness")
    }
}

/// Identity activation marker used by DCT-style fixed front ends.
pub fn identity_spec(mut spec: ConvLayerSpec) -> ConvLayerSpec {
    spec.activation = Activation::Identity;
    spec.without_pooling()
}
