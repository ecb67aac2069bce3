//! Central-difference gradient checks shared by the gradient tests and the
//! acceptance runner. Every check returns the worst relative error.

use std::collections::BTreeMap;

use cldnn::conv::{conv_layer_backward, conv_layer_cached, Activation, ConvLayerSpec, ConvParams, ConvType, PoolMode};
use cldnn::dsp::SplicedSequence;
use cldnn::model::{cross_entropy, model_backward, model_forward_cached, softmax, InputKind, LdnnConfig, Mode, ModelConfig, ModelParams};
use cldnn::recurrent::{blstm_backward, blstm_forward_cached, lstm_backward, lstm_forward_cached, rnn_backward, rnn_forward, BlstmParams, LstmParams, RnnParams};
use ndarray::{Array, Array1, Array2, Array3, Dimension, ShapeBuilder};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{flatten, max_fd_error, unflatten};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array<Sh: ShapeBuilder>(shape: Sh, rng: &mut ChaCha8Rng) -> Array<f64, Sh::Dim> {
    Array::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

fn pack(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn unpack<'a>(v: &'a [f64], sizes: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::new();
    let mut k = 0;
    for &s in sizes {
        out.push(&v[k..k + s]);
        k += s;
    }
    out
}

fn weighted_sum<D: Dimension>(y: &Array<f64, D>, r: &Array<f64, D>) -> f64 {
    y.iter().zip(r.iter()).map(|(a, b)| a * b).sum()
}

/// Conv layer on a random `C x H0 x W0` input under the loss `sum(r * out)`;
/// covers both the parameters and the layer input.
pub fn conv_layer_error(spec: &ConvLayerSpec, h0: usize, w0: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let x: Array3<f64> = random_array((spec.in_channels, h0, w0), &mut g);
    let mut p = ConvParams::init(spec, &mut g);
    p.bias = random_array(spec.out_maps, &mut g).mapv(|v| 0.1 * v);
    let (out, cache) = conv_layer_cached(&x, &p, spec).unwrap();
    let r: Array3<f64> = random_array(out.dim(), &mut g);
    let (gx, gp) = conv_layer_backward(&r, &cache, &p, spec).unwrap();

    let maps_dim = p.maps.dim();
    let sizes = [p.maps.len(), p.bias.len()];
    let x0 = pack(&[p.maps.as_slice().unwrap(), p.bias.as_slice().unwrap()]);
    let an = pack(&[gp.maps.as_slice().unwrap(), gp.bias.as_slice().unwrap()]);
    let e_params = max_fd_error(&x0, &an, |v| {
        let parts = unpack(v, &sizes);
        let q = ConvParams {
            maps: Array::from_shape_vec(maps_dim, parts[0].to_vec()).unwrap(),
            bias: Array1::from(parts[1].to_vec()),
        };
        let (o, _) = conv_layer_cached(&x, &q, spec).unwrap();
        weighted_sum(&o, &r)
    });
    let e_input = max_fd_error(x.as_slice().unwrap(), gx.as_slice().unwrap(), |v| {
        let xi = Array3::from_shape_vec(x.dim(), v.to_vec()).unwrap();
        let (o, _) = conv_layer_cached(&xi, &p, spec).unwrap();
        weighted_sum(&o, &r)
    });
    e_params.max(e_input)
}

/// Small layer of each type on a `6 x 8` input.
pub fn conv_spec(t: ConvType, pool: bool, mode: PoolMode, act: Activation) -> (ConvLayerSpec, usize, usize) {
    let (h0, w0) = (6, 8);
    let (h, w) = match t {
        ConvType::S => (3, 1),
        ConvType::T => (1, 3),
        ConvType::ST => (3, 2),
        ConvType::FST => (h0, 3),
    };
    let mut spec = ConvLayerSpec::preset(t, 2, 3, h, w).with_activation(act).with_pool_mode(mode);
    if !pool {
        spec = spec.without_pooling();
    }
    (spec, h0, w0)
}

pub fn rnn_error(act_h: Activation, act_y: Activation, seed: u64) -> f64 {
    let mut g = rng(seed);
    let xs: Array2<f64> = random_array((5, 3), &mut g);
    let mut p = RnnParams::init(3, 4, 2, &mut g);
    p.u_h = random_array(4, &mut g).mapv(|v| 0.1 * v);
    p.u_y = random_array(2, &mut g).mapv(|v| 0.1 * v);
    p.act_h = act_h;
    p.act_y = act_y;
    let (ys, cache) = rnn_forward(&xs, &p).unwrap();
    let r: Array2<f64> = random_array(ys.dim(), &mut g);
    let (gp, gx) = rnn_backward(&r, &cache, &p).unwrap();

    let sizes = [p.u_hx.len(), p.u_hh.len(), p.u_h.len(), p.u_yh.len(), p.u_y.len()];
    let sl = |q: &RnnParams| {
        pack(&[
            q.u_hx.as_slice().unwrap(),
            q.u_hh.as_slice().unwrap(),
            q.u_h.as_slice().unwrap(),
            q.u_yh.as_slice().unwrap(),
            q.u_y.as_slice().unwrap(),
        ])
    };
    let e_params = max_fd_error(&sl(&p), &sl(&gp), |v| {
        let parts = unpack(v, &sizes);
        let mut q = p.clone();
        q.u_hx.as_slice_mut().unwrap().copy_from_slice(parts[0]);
        q.u_hh.as_slice_mut().unwrap().copy_from_slice(parts[1]);
        q.u_h.as_slice_mut().unwrap().copy_from_slice(parts[2]);
        q.u_yh.as_slice_mut().unwrap().copy_from_slice(parts[3]);
        q.u_y.as_slice_mut().unwrap().copy_from_slice(parts[4]);
        weighted_sum(&rnn_forward(&xs, &q).unwrap().0, &r)
    });
    let e_input = max_fd_error(xs.as_slice().unwrap(), gx.as_slice().unwrap(), |v| {
        let xi = Array2::from_shape_vec(xs.dim(), v.to_vec()).unwrap();
        weighted_sum(&rnn_forward(&xi, &p).unwrap().0, &r)
    });
    e_params.max(e_input)
}

fn lstm_slices(p: &LstmParams) -> Vec<f64> {
    pack(&[p.w_x.as_slice().unwrap(), p.w_s.as_slice().unwrap(), p.bias.as_slice().unwrap()])
}

fn lstm_from(template: &LstmParams, v: &[f64]) -> LstmParams {
    let sizes = [template.w_x.len(), template.w_s.len(), template.bias.len()];
    let parts = unpack(v, &sizes);
    let mut q = template.clone();
    q.w_x.as_slice_mut().unwrap().copy_from_slice(parts[0]);
    q.w_s.as_slice_mut().unwrap().copy_from_slice(parts[1]);
    q.bias.as_slice_mut().unwrap().copy_from_slice(parts[2]);
    q
}

fn random_lstm(d_in: usize, hidden: usize, g: &mut ChaCha8Rng) -> LstmParams {
    let mut p = LstmParams::init(d_in, hidden, g);
    p.bias = random_array(4 * hidden, g).mapv(|v| 0.3 * v);
    p
}

pub fn lstm_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let xs: Array2<f64> = random_array((6, 3), &mut g);
    let p = random_lstm(3, 4, &mut g);
    let (ys, cache) = lstm_forward_cached(&xs, &p).unwrap();
    let r: Array2<f64> = random_array(ys.dim(), &mut g);
    let (gp, gx) = lstm_backward(&r, &cache, &p).unwrap();
    let loss = |q: &LstmParams, x: &Array2<f64>| weighted_sum(&lstm_forward_cached(x, q).unwrap().0, &r);
    let e_params = max_fd_error(&lstm_slices(&p), &lstm_slices(&gp), |v| loss(&lstm_from(&p, v), &xs));
    let e_input = max_fd_error(xs.as_slice().unwrap(), gx.as_slice().unwrap(), |v| {
        loss(&p, &Array2::from_shape_vec(xs.dim(), v.to_vec()).unwrap())
    });
    e_params.max(e_input)
}

pub fn blstm_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let xs: Array2<f64> = random_array((5, 3), &mut g);
    let p = BlstmParams {
        fwd: random_lstm(3, 3, &mut g),
        bwd: random_lstm(3, 3, &mut g),
    };
    let (ys, cache) = blstm_forward_cached(&xs, &p).unwrap();
    let r: Array2<f64> = random_array(ys.dim(), &mut g);
    let (gp, gx) = blstm_backward(&r, &cache, &p).unwrap();
    let loss = |q: &BlstmParams, x: &Array2<f64>| weighted_sum(&blstm_forward_cached(x, q).unwrap().0, &r);
    let x0 = pack(&[&lstm_slices(&p.fwd), &lstm_slices(&p.bwd)]);
    let an = pack(&[&lstm_slices(&gp.fwd), &lstm_slices(&gp.bwd)]);
    let n_fwd = lstm_slices(&p.fwd).len();
    let e_params = max_fd_error(&x0, &an, |v| {
        let q = BlstmParams {
            fwd: lstm_from(&p.fwd, &v[..n_fwd]),
            bwd: lstm_from(&p.bwd, &v[n_fwd..]),
        };
        loss(&q, &xs)
    });
    let e_input = max_fd_error(xs.as_slice().unwrap(), gx.as_slice().unwrap(), |v| {
        loss(&p, &Array2::from_shape_vec(xs.dim(), v.to_vec()).unwrap())
    });
    e_params.max(e_input)
}

/// Gradient of `-ln softmax(z)[label]` with respect to the logits.
pub fn softmax_ce_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let z: Array1<f64> = random_array(7, &mut g).mapv(|v| 3.0 * v);
    let label = 4;
    let (_, grad) = cross_entropy(&softmax(&z), label);
    max_fd_error(z.as_slice().unwrap(), grad.as_slice().unwrap(), |v| {
        cross_entropy(&softmax(&Array1::from(v.to_vec())), label).0
    })
}

/// Random spliced input with `frames` blocks shaped for `kind`.
pub fn toy_input(kind: InputKind, frames: usize, seed: u64) -> SplicedSequence {
    let mut g = rng(seed);
    SplicedSequence {
        blocks: (0..frames)
            .map(|_| random_array((kind.height(), kind.width()), &mut g))
            .collect(),
        source_kind: kind.feature_kind(),
        left: 10,
        right: 5,
    }
}

pub fn toy_ldnn(n_classes: usize) -> LdnnConfig {
    LdnnConfig {
        blstm_cells: 4,
        fc_sizes: vec![12, 8, 8, n_classes],
        dropout: 0.2,
    }
}

/// Small-map model of the given type with toy BLSTM and FC sizes.
pub fn toy_config(t: Option<ConvType>, input: InputKind) -> ModelConfig {
    let ldnn = toy_ldnn(3);
    match t {
        None => ModelConfig::Ldnn { input_kind: input, ldnn },
        Some(t) => {
            let filters = match t {
                ConvType::T => (1, 5, 1, 2),
                ConvType::S => (9, 1, 4, 1),
                ConvType::ST => (5, 5, 3, 2),
                ConvType::FST => (input.height(), 5, 1, 2),
            };
            ModelConfig::cldnn(t, input, filters, 3, ldnn).unwrap()
        }
    }
}

/// End-to-end check of every parameter tensor under Train mode, with the
/// dropout mask held fixed by re-seeding. Returns the worst error per tensor.
pub fn full_model_errors(config: &ModelConfig, input: &SplicedSequence, label: usize, seed: u64) -> BTreeMap<String, f64> {
    // A dead ReLU stack or a mask that drops a whole BLSTM direction would
    // make comparisons 0 == 0, so redraw until gradient reaches every stage.
    let watched = ["conv1.maps", "blstm.fwd.U_ix", "blstm.bwd.U_ix", "fc1.W"];
    let (params, grads, dropout_seed) = (0..64u64)
        .find_map(|k| {
            let mut g = rng(seed.wrapping_add(k << 32));
            let dropout_seed = (seed ^ 0xd0).wrapping_add(k << 32);
            let mut params = ModelParams::init(config, &mut g).unwrap();
            params.for_each_mut(|name, _, s| {
                if name.ends_with(".b") || name.ends_with("bias") || name.contains(".u_") {
                    s.iter_mut().for_each(|v| *v = 0.1 * g.random_range(-1.0..1.0));
                }
            });
            let (out, cache) = model_forward_cached(input, &params, config, Mode::Train, &mut rng(dropout_seed)).unwrap();
            let (_, gl) = cross_entropy(&out.probs, label);
            let grads = model_backward(&gl, &cache, &params, config).unwrap();
            let mut live = true;
            grads.for_each(|name, _, s| {
                if watched.contains(&name) && s.iter().all(|v| *v == 0.0) {
                    live = false;
                }
            });
            live.then_some((params, grads, dropout_seed))
        })
        .expect("no parameter draw with live gradients");
    let loss = |p: &ModelParams| {
        let (out, _) = model_forward_cached(input, p, config, Mode::Train, &mut rng(dropout_seed)).unwrap();
        cross_entropy(&out.probs, label).0
    };
    let x0 = flatten(&params);
    let an = flatten(&grads);
    let mut spans = Vec::new();
    params.for_each(|name, _, s| spans.push((name.to_string(), s.len())));
    let mut errs = BTreeMap::new();
    let mut start = 0;
    let mut work = params.clone();
    for (name, len) in spans {
        let range = start..start + len;
        let e = max_fd_error(&x0[range.clone()], &an[range.clone()], |v| {
            let mut full = x0.clone();
            full[range.clone()].copy_from_slice(v);
            unflatten(&mut work, &full);
            loss(&work)
        });
        errs.insert(name, e);
        start += len;
    }
    errs
}

/// Worst error over all tensors whose name starts with `prefix`.
pub fn worst_with_prefix(errs: &BTreeMap<String, f64>, prefix: &str) -> f64 {
    errs.iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .map(|(_, v)| *v)
        .fold(0.0, f64::max)
}
