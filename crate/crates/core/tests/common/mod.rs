#![allow(dead_code)]

pub mod fd;

use cldnn::conv::PoolMode;
use cldnn::model::ModelParams;
use ndarray::{Array1, Array3, Array4};

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-5)`: relative error, absolute below 1e-5.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Largest relative error between `analytic` and central differences of
/// `loss` around `x0`.
pub fn max_fd_error(x0: &[f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x0.len(), analytic.len());
    let mut x = x0.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        x[i] = x0[i] + FD_EPS;
        let lp = loss(&x);
        x[i] = x0[i] - FD_EPS;
        let lm = loss(&x);
        x[i] = x0[i];
        let numeric = (lp - lm) / (2.0 * FD_EPS);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

pub fn flatten(p: &ModelParams) -> Vec<f64> {
    let mut v = Vec::new();
    p.for_each(|_, _, s| v.extend_from_slice(s));
    v
}

pub fn unflatten(p: &mut ModelParams, v: &[f64]) {
    let mut k = 0;
    p.for_each_mut(|_, _, s| {
        s.copy_from_slice(&v[k..k + s.len()]);
        k += s.len();
    });
    assert_eq!(k, v.len());
}

/// Direct six-loop convolution with per-map bias.
pub fn naive_conv(x: &Array3<f64>, maps: &Array4<f64>, bias: &Array1<f64>, stride: (usize, usize)) -> Array3<f64> {
    let (c_in, h0, w0) = x.dim();
    let (k, c, h, w) = maps.dim();
    assert_eq!(c, c_in);
    let h1 = (h0 - h) / stride.0 + 1;
    let w1 = (w0 - w) / stride.1 + 1;
    let mut y = Array3::zeros((k, h1, w1));
    for kk in 0..k {
        for i in 0..h1 {
            for j in 0..w1 {
                let mut s = bias[kk];
                for cc in 0..c {
                    for a in 0..h {
                        for b in 0..w {
                            s += maps[[kk, cc, a, b]] * x[[cc, i * stride.0 + a, j * stride.1 + b]];
                        }
                    }
                }
                y[[kk, i, j]] = s;
            }
        }
    }
    y
}

pub fn naive_pool(y: &Array3<f64>, pool: (usize, usize), stride: (usize, usize), mode: PoolMode) -> Array3<f64> {
    let (k, h1, w1) = y.dim();
    let h2 = (h1 - pool.0) / stride.0 + 1;
    let w2 = (w1 - pool.1) / stride.1 + 1;
    let mut out = Array3::zeros((k, h2, w2));
    for kk in 0..k {
        for i in 0..h2 {
            for j in 0..w2 {
                let mut vals = Vec::new();
                for a in 0..pool.0 {
                    for b in 0..pool.1 {
                        vals.push(y[[kk, i * stride.0 + a, j * stride.1 + b]]);
                    }
                }
                out[[kk, i, j]] = match mode {
                    PoolMode::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    PoolMode::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                };
            }
        }
    }
    out
}

/// Class centres, mean per-class spread, and mean squared centre distance
/// over ordered class pairs, all by direct loops.
pub fn brute_inertia(xs: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let d = xs[0].len();
    let members = |c: usize| xs.iter().zip(labels).filter(move |(_, &l)| l == c).map(|(x, _)| x);
    let centers: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            let n = members(c).count() as f64;
            (0..d).map(|k| members(c).map(|x| x[k]).sum::<f64>() / n).collect()
        })
        .collect();
    let mut intra = 0.0;
    for (ci, &c) in classes.iter().enumerate() {
        let n = members(c).count() as f64;
        let s: f64 = members(c)
            .map(|x| (0..d).map(|k| (x[k] - centers[ci][k]).powi(2)).sum::<f64>())
            .sum();
        intra += s / n;
    }
    intra /= classes.len() as f64;
    let mut inter = 0.0;
    for i in 0..classes.len() {
        for j in 0..classes.len() {
            if i != j {
                inter += (0..d).map(|k| (centers[i][k] - centers[j][k]).powi(2)).sum::<f64>();
            }
        }
    }
    let c = classes.len() as f64;
    (intra, inter / (c * c - c))
}
