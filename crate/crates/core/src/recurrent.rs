//! Elman RNN, LSTM and bidirectional LSTM with full backpropagation
//! through time.
//!
//! Sequences are `T x D` matrices, one time step per row. Initial states
//! are zero.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngExt};

use crate::conv::{sigmoid, Activation};
use crate::error::{Error, Result};

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-r..r))
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: expected length {want}, got {got}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Elman RNN

/// Affine maps and activations of a simple recurrent network.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    pub u_hx: Array2<f64>,
    pub u_hh: Array2<f64>,
    pub u_h: Array1<f64>,
    pub u_yh: Array2<f64>,
    pub u_y: Array1<f64>,
    pub act_h: Activation,
    pub act_y: Activation,
}

impl RnnParams {
    pub fn zeros(d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Self {
            u_hx: Array2::zeros((d_hidden, d_in)),
            u_hh: Array2::zeros((d_hidden, d_hidden)),
            u_h: Array1::zeros(d_hidden),
            u_yh: Array2::zeros((d_out, d_hidden)),
            u_y: Array1::zeros(d_out),
            act_h: Activation::Tanh,
            act_y: Activation::Tanh,
        }
    }

    pub fn init<R: Rng + ?Sized>(d_in: usize, d_hidden: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            u_hx: glorot(d_hidden, d_in, rng),
            u_hh: glorot(d_hidden, d_hidden, rng),
            u_yh: glorot(d_out, d_hidden, rng),
            ..Self::zeros(d_in, d_hidden, d_out)
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            u_hx: Array2::zeros(self.u_hx.dim()),
            u_hh: Array2::zeros(self.u_hh.dim()),
            u_h: Array1::zeros(self.u_h.len()),
            u_yh: Array2::zeros(self.u_yh.dim()),
            u_y: Array1::zeros(self.u_y.len()),
            ..*self
        }
    }
}

/// One step: `h_t = act_h(U_hx x_t + U_hh h_{t-1} + u_h)`, `y_t = act_y(U_yh h_t + u_y)`.
pub fn rnn_step(
    x: ArrayView1<f64>,
    h_prev: ArrayView1<f64>,
    p: &RnnParams,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_len("rnn input", x.len(), p.u_hx.ncols())?;
    check_len("rnn state", h_prev.len(), p.u_hh.ncols())?;
    let h = (p.u_hx.dot(&x) + p.u_hh.dot(&h_prev) + &p.u_h).mapv(|v| p.act_h.apply(v));
    let y = (p.u_yh.dot(&h) + &p.u_y).mapv(|v| p.act_y.apply(v));
    Ok((h, y))
}

#[derive(Debug, Clone)]
pub struct RnnCache {
    xs: Array2<f64>,
    /// Pre-activations and activations of the hidden layer; row 0 of
    /// `hidden` is the zero initial state.
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
    out_pre: Array2<f64>,
    out: Array2<f64>,
}

/// Runs the RNN over `xs`, returning the outputs `y_t` one per row.
pub fn rnn_forward(xs: &Array2<f64>, p: &RnnParams) -> Result<(Array2<f64>, RnnCache)> {
    let (t_len, d_in) = xs.dim();
    check_len("rnn input", d_in, p.u_hx.ncols())?;
    let dh = p.u_hh.nrows();
    let dy = p.u_yh.nrows();
    let mut hidden = Array2::zeros((t_len + 1, dh));
    let mut hidden_pre = Array2::zeros((t_len, dh));
    let mut out_pre = Array2::zeros((t_len, dy));
    let mut out = Array2::zeros((t_len, dy));
    for t in 0..t_len {
        let a = p.u_hx.dot(&xs.row(t)) + p.u_hh.dot(&hidden.row(t)) + &p.u_h;
        let h = a.mapv(|v| p.act_h.apply(v));
        let b = p.u_yh.dot(&h) + &p.u_y;
        let y = b.mapv(|v| p.act_y.apply(v));
        hidden_pre.row_mut(t).assign(&a);
        hidden.row_mut(t + 1).assign(&h);
        out_pre.row_mut(t).assign(&b);
        out.row_mut(t).assign(&y);
    }
    let cache = RnnCache {
        xs: xs.clone(),
        hidden_pre,
        hidden,
        out_pre,
        out: out.clone(),
    };
    Ok((out, cache))
}

pub fn rnn_backward(
    grad_out: &Array2<f64>,
    cache: &RnnCache,
    p: &RnnParams,
) -> Result<(RnnParams, Array2<f64>)> {
    if grad_out.dim() != cache.out.dim() {
        return Err(Error::StaleCache);
    }
    let t_len = cache.xs.nrows();
    let mut g = p.zeros_like();
    let mut grad_x = Array2::zeros(cache.xs.dim());
    let mut dh_next = Array1::<f64>::zeros(p.u_hh.nrows());
    for t in (0..t_len).rev() {
        let db: Array1<f64> = ndarray::Zip::from(grad_out.row(t))
            .and(cache.out_pre.row(t))
            .and(cache.out.row(t))
            .map_collect(|&gy, &z, &a| gy * p.act_y.derivative(z, a));
        let h = cache.hidden.row(t + 1);
        g.u_yh += &outer(&db.view(), &h);
        g.u_y += &db;
        let dh = p.u_yh.t().dot(&db) + &dh_next;
        let da: Array1<f64> = ndarray::Zip::from(&dh)
            .and(cache.hidden_pre.row(t))
            .and(h)
            .map_collect(|&d, &z, &a| d * p.act_h.derivative(z, a));
        g.u_hx += &outer(&da.view(), &cache.xs.row(t));
        g.u_hh += &outer(&da.view(), &cache.hidden.row(t));
        g.u_h += &da;
        grad_x.row_mut(t).assign(&p.u_hx.t().dot(&da));
        dh_next = p.u_hh.t().dot(&da);
    }
    Ok((g, grad_x))
}

fn outer(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

// ---------------------------------------------------------------------------
// LSTM

/// Gate order inside the stacked parameter matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Cell];

    fn index(self) -> usize {
        self as usize
    }

    /// Single-letter name used in checkpoints (`U_ix`, `U_fs`, `u_g`, ...).
    pub fn letter(self) -> char {
        match self {
            Gate::Input => 'i',
            Gate::Forget => 'f',
            Gate::Output => 'o',
            Gate::Cell => 'g',
        }
    }
}

/// LSTM weights stacked gate-wise (`i, f, o, g`) into `4H`-row matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `4H x D_in` input weights.
    pub w_x: Array2<f64>,
    /// `4H x H` recurrent weights.
    pub w_s: Array2<f64>,
    /// `4H` biases.
    pub bias: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(d_in: usize, hidden: usize) -> Self {
        Self {
            w_x: Array2::zeros((4 * hidden, d_in)),
            w_s: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    /// Glorot-uniform per gate matrix, zero biases.
    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(d_in, hidden);
        for gate in Gate::ALL {
            let rows = gate.index() * hidden..(gate.index() + 1) * hidden;
            p.w_x
                .slice_mut(s![rows.clone(), ..])
                .assign(&glorot(hidden, d_in, rng));
            p.w_s
                .slice_mut(s![rows, ..])
                .assign(&glorot(hidden, hidden, rng));
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_s.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.ncols()
    }

    fn rows(&self, gate: Gate) -> std::ops::Range<usize> {
        let h = self.hidden();
        gate.index() * h..(gate.index() + 1) * h
    }

    pub fn gate_input(&self, gate: Gate) -> ArrayView2<'_, f64> {
        self.w_x.slice(s![self.rows(gate), ..])
    }

    pub fn gate_recurrent(&self, gate: Gate) -> ArrayView2<'_, f64> {
        self.w_s.slice(s![self.rows(gate), ..])
    }

    pub fn gate_bias(&self, gate: Gate) -> ArrayView1<'_, f64> {
        self.bias.slice(s![self.rows(gate)])
    }

    pub fn gate_bias_mut(&mut self, gate: Gate) -> ndarray::ArrayViewMut1<'_, f64> {
        let r = self.rows(gate);
        self.bias.slice_mut(s![r])
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden();
        if self.w_x.nrows() != 4 * h || self.w_s.nrows() != 4 * h || self.bias.len() != 4 * h {
            return Err(Error::Shape("inconsistent LSTM parameter shapes".into()));
        }
        Ok(())
    }
}

/// Cell and output vectors after one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub cell: Array1<f64>,
    pub output: Array1<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            cell: Array1::zeros(hidden),
            output: Array1::zeros(hidden),
        }
    }
}

/// Applies the gate nonlinearities in place to a stacked `4H` pre-activation.
fn activate_gates(a: &mut ndarray::ArrayViewMut1<f64>, h: usize) {
    for (k, v) in a.iter_mut().enumerate() {
        *v = if k < 3 * h { sigmoid(*v) } else { v.tanh() };
    }
}

/// `c_t = c_{t-1} * f + g * i`, `s_t = tanh(c_t) * o`.
pub fn lstm_step(x: ArrayView1<f64>, prev: &LstmState, p: &LstmParams) -> Result<LstmState> {
    p.check()?;
    let h = p.hidden();
    check_len("lstm input", x.len(), p.input_dim())?;
    check_len("lstm cell", prev.cell.len(), h)?;
    check_len("lstm output", prev.output.len(), h)?;
    let mut a = p.w_x.dot(&x) + p.w_s.dot(&prev.output) + &p.bias;
    activate_gates(&mut a.view_mut(), h);
    let (i, f, o, g) = (
        a.slice(s![0..h]),
        a.slice(s![h..2 * h]),
        a.slice(s![2 * h..3 * h]),
        a.slice(s![3 * h..]),
    );
    let cell = &prev.cell * &f + &g * &i;
    let output = cell.mapv(f64::tanh) * o;
    Ok(LstmState { cell, output })
}

/// Forward activations retained for [`lstm_backward`].
#[derive(Debug, Clone)]
pub struct LstmCache {
    xs: Array2<f64>,
    /// `T x 4H` gate activations.
    gates: Array2<f64>,
    /// `(T+1) x H`; row 0 is the zero initial state.
    cells: Array2<f64>,
    outputs: Array2<f64>,
}

impl LstmCache {
    /// Gate activations `[i, f, o, g]` at every step.
    pub fn gates(&self) -> &Array2<f64> {
        &self.gates
    }
}

pub fn lstm_forward(xs: &Array2<f64>, p: &LstmParams) -> Result<Array2<f64>> {
    lstm_forward_cached(xs, p).map(|(o, _)| o)
}

pub fn lstm_forward_cached(xs: &Array2<f64>, p: &LstmParams) -> Result<(Array2<f64>, LstmCache)> {
    p.check()?;
    let (t_len, d_in) = xs.dim();
    if t_len == 0 {
        return Err(Error::Shape("empty input sequence".into()));
    }
    check_len("lstm input", d_in, p.input_dim())?;
    let h = p.hidden();
    let mut gates = xs.dot(&p.w_x.t());
    gates += &p.bias;
    let mut cells = Array2::<f64>::zeros((t_len + 1, h));
    let mut outputs = Array2::<f64>::zeros((t_len + 1, h));
    for t in 0..t_len {
        let rec = p.w_s.dot(&outputs.row(t));
        let mut a = gates.row_mut(t);
        a += &rec;
        activate_gates(&mut a, h);
        for k in 0..h {
            let (i, f, o, g) = (a[k], a[h + k], a[2 * h + k], a[3 * h + k]);
            let c = cells[[t, k]] * f + g * i;
            cells[[t + 1, k]] = c;
            outputs[[t + 1, k]] = c.tanh() * o;
        }
    }
    let out = outputs.slice(s![1.., ..]).to_owned();
    Ok((
        out,
        LstmCache {
            xs: xs.clone(),
            gates,
            cells,
            outputs,
        },
    ))
}

/// Exact gradients of a loss whose derivative with respect to every `s_t`
/// is `grad_out[t]`.
pub fn lstm_backward(
    grad_out: &Array2<f64>,
    cache: &LstmCache,
    p: &LstmParams,
) -> Result<(LstmParams, Array2<f64>)> {
    let t_len = cache.xs.nrows();
    let h = p.hidden();
    if grad_out.dim() != (t_len, h) || cache.gates.ncols() != 4 * h {
        return Err(Error::StaleCache);
    }
    let mut d_pre = Array2::<f64>::zeros((t_len, 4 * h));
    let mut ds_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);
    for t in (0..t_len).rev() {
        let a = cache.gates.row(t);
        let mut row = d_pre.row_mut(t);
        for k in 0..h {
            let (i, f, o, g) = (a[k], a[h + k], a[2 * h + k], a[3 * h + k]);
            let c = cache.cells[[t + 1, k]];
            let c_prev = cache.cells[[t, k]];
            let tc = c.tanh();
            let ds = grad_out[[t, k]] + ds_next[k];
            let d_o = ds * tc;
            let dc = dc_next[k] + ds * o * (1.0 - tc * tc);
            let d_f = dc * c_prev;
            let d_i = dc * g;
            let d_g = dc * i;
            dc_next[k] = dc * f;
            row[k] = d_i * i * (1.0 - i);
            row[h + k] = d_f * f * (1.0 - f);
            row[2 * h + k] = d_o * o * (1.0 - o);
            row[3 * h + k] = d_g * (1.0 - g * g);
        }
        ds_next = p.w_s.t().dot(&row);
    }
    let prev_outputs = cache.outputs.slice(s![..t_len, ..]);
    let grads = LstmParams {
        w_x: d_pre.t().dot(&cache.xs).as_standard_layout().into_owned(),
        w_s: d_pre.t().dot(&prev_outputs).as_standard_layout().into_owned(),
        bias: d_pre.sum_axis(Axis(0)),
    };
    let grad_x = d_pre.dot(&p.w_x);
    Ok((grads, grad_x))
}

// ---------------------------------------------------------------------------
// BLSTM

#[derive(Debug, Clone, PartialEq)]
pub struct BlstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BlstmParams {
    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let fwd = LstmParams::init(d_in, hidden, rng);
        let bwd = LstmParams::init(d_in, hidden, rng);
        Self { fwd, bwd }
    }

    pub fn zeros(d_in: usize, hidden: usize) -> Self {
        Self {
            fwd: LstmParams::zeros(d_in, hidden),
            bwd: LstmParams::zeros(d_in, hidden),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden() + self.bwd.hidden()
    }
}

#[derive(Debug, Clone)]
pub struct BlstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

fn reversed(xs: &Array2<f64>) -> Array2<f64> {
    xs.slice(s![..;-1, ..]).to_owned()
}

/// `z_t = [y_t^f ; y_t^b]` where the backward LSTM reads the reversed
/// sequence and its outputs are flipped back into natural time order.
pub fn blstm_forward(xs: &Array2<f64>, p: &BlstmParams) -> Result<Array2<f64>> {
    blstm_forward_cached(xs, p).map(|(o, _)| o)
}

pub fn blstm_forward_cached(xs: &Array2<f64>, p: &BlstmParams) -> Result<(Array2<f64>, BlstmCache)> {
    let (yf, cf) = lstm_forward_cached(xs, &p.fwd)?;
    let (yb, cb) = lstm_forward_cached(&reversed(xs), &p.bwd)?;
    let z = ndarray::concatenate(Axis(1), &[yf.view(), yb.slice(s![..;-1, ..])])
        .expect("equal lengths");
    Ok((z, BlstmCache { fwd: cf, bwd: cb }))
}

pub fn blstm_backward(
    grad_out: &Array2<f64>,
    cache: &BlstmCache,
    p: &BlstmParams,
) -> Result<(BlstmParams, Array2<f64>)> {
    let hf = p.fwd.hidden();
    if grad_out.ncols() != hf + p.bwd.hidden() {
        return Err(Error::StaleCache);
    }
    let gf = grad_out.slice(s![.., ..hf]).to_owned();
    let gb = grad_out.slice(s![..;-1, hf..]).to_owned();
    let (pf, xf) = lstm_backward(&gf, &cache.fwd, &p.fwd)?;
    let (pb, xb) = lstm_backward(&gb, &cache.bwd, &p.bwd)?;
    let grad_x = xf + xb.slice(s![..;-1, ..]);
    Ok((BlstmParams { fwd: pf, bwd: pb }, grad_x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_seq(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0..1.0))
    }

    // Scalar re-implementation of one LSTM step, reading per-gate blocks.
    fn scalar_step(x: &[f64], c_prev: &[f64], s_prev: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>) {
        let h = p.hidden();
        let gate = |g: Gate, k: usize| {
            let wx = p.gate_input(g);
            let ws = p.gate_recurrent(g);
            let mut a = p.gate_bias(g)[k];
            for (j, xj) in x.iter().enumerate() {
                a += wx[[k, j]] * xj;
            }
            for (j, sj) in s_prev.iter().enumerate() {
                a += ws[[k, j]] * sj;
            }
            a
        };
        let mut c = vec![0.0; h];
        let mut s = vec![0.0; h];
        for k in 0..h {
            let i = 1.0 / (1.0 + (-gate(Gate::Input, k)).exp());
            let f = 1.0 / (1.0 + (-gate(Gate::Forget, k)).exp());
            let o = 1.0 / (1.0 + (-gate(Gate::Output, k)).exp());
            let g = gate(Gate::Cell, k).tanh();
            c[k] = c_prev[k] * f + g * i;
            s[k] = c[k].tanh() * o;
        }
        (c, s)
    }

    #[test]
    fn rnn_zero_params() {
        let p = RnnParams::zeros(3, 4, 2);
        let mut h = Array1::zeros(4);
        let x = Array1::from(vec![0.3, -1.0, 2.0]);
        for _ in 0..3 {
            let (h2, y) = rnn_step(x.view(), h.view(), &p).unwrap();
            assert!(h2.iter().chain(y.iter()).all(|&v| v == 0.0));
            h = h2;
        }
    }

    #[test]
    fn rnn_without_recurrence_is_feed_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = RnnParams::init(3, 4, 2, &mut rng);
        p.u_hh.fill(0.0);
        let xs = rand_seq(&mut rng, 5, 3);
        let (ys, _) = rnn_forward(&xs, &p).unwrap();
        for t in 0..5 {
            let (_, y) = rnn_step(xs.row(t), Array1::zeros(4).view(), &p).unwrap();
            assert_eq!(ys.row(t), y);
        }
    }

    #[test]
    fn rnn_matches_unrolled_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = RnnParams::init(2, 3, 2, &mut rng);
        let xs = rand_seq(&mut rng, 4, 2);
        let (ys, _) = rnn_forward(&xs, &p).unwrap();
        let mut h = [0.0; 3];
        for t in 0..4 {
            let mut hn = [0.0; 3];
            for (k, hk) in hn.iter_mut().enumerate() {
                let mut a = p.u_h[k];
                for j in 0..2 {
                    a += p.u_hx[[k, j]] * xs[[t, j]];
                }
                for j in 0..3 {
                    a += p.u_hh[[k, j]] * h[j];
                }
                *hk = a.tanh();
            }
            h = hn;
            for k in 0..2 {
                let mut b = p.u_y[k];
                for j in 0..3 {
                    b += p.u_yh[[k, j]] * h[j];
                }
                assert!((ys[[t, k]] - b.tanh()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rnn_shape_error() {
        let p = RnnParams::zeros(3, 4, 2);
        let x = Array1::zeros(2);
        let h = Array1::zeros(4);
        assert_eq!(rnn_step(x.view(), h.view(), &p).unwrap_err().kind(), "ShapeError");
    }

    #[test]
    fn zero_lstm() {
        let p = LstmParams::zeros(3, 5);
        let x = Array1::from(vec![1.0, -2.0, 0.5]);
        let st = lstm_step(x.view(), &LstmState::zeros(5), &p).unwrap();
        assert!(st.cell.iter().chain(st.output.iter()).all(|&v| v == 0.0));
        let (_, cache) = lstm_forward_cached(&Array2::from_shape_fn((1, 3), |(_, j)| x[j]), &p).unwrap();
        let g = cache.gates().row(0);
        assert!(g.slice(s![..15]).iter().all(|&v| v == 0.5));
        assert!(g.slice(s![15..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_hold_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = LstmParams::init(3, 4, &mut rng);
        p.gate_bias_mut(Gate::Forget).fill(40.0);
        p.gate_bias_mut(Gate::Input).fill(-40.0);
        let prev = LstmState {
            cell: Array1::from(vec![0.3, -0.7, 1.2, 0.0]),
            output: Array1::from(vec![0.1, 0.2, -0.3, 0.4]),
        };
        let x = Array1::from(vec![0.5, -0.5, 0.9]);
        let st = lstm_step(x.view(), &prev, &p).unwrap();
        for (a, b) in st.cell.iter().zip(prev.cell.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn lstm_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = LstmParams::init(4, 3, &mut rng);
        let mut p = p;
        p.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let xs = rand_seq(&mut rng, 7, 4);
        let out = lstm_forward(&xs, &p).unwrap();
        let (mut c, mut s_prev) = (vec![0.0; 3], vec![0.0; 3]);
        let mut state = LstmState::zeros(3);
        for t in 0..7 {
            let (c2, s2) = scalar_step(&xs.row(t).to_vec(), &c, &s_prev, &p);
            state = lstm_step(xs.row(t), &state, &p).unwrap();
            for k in 0..3 {
                assert!((out[[t, k]] - s2[k]).abs() < 1e-14);
                assert!((state.output[k] - s2[k]).abs() < 1e-14);
                assert!((state.cell[k] - c2[k]).abs() < 1e-14);
            }
            c = c2;
            s_prev = s2;
        }
    }

    #[test]
    fn gate_ranges_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let p = LstmParams::init(3, 6, &mut rng);
        let xs = rand_seq(&mut rng, 20, 3).mapv(|v| v * 50.0);
        let (out, cache) = lstm_forward_cached(&xs, &p).unwrap();
        for row in cache.gates().rows() {
            for (k, &v) in row.iter().enumerate() {
                if k < 18 {
                    assert!(v >= 0.0 && v <= 1.0);
                } else {
                    assert!(v.abs() <= 1.0);
                }
            }
        }
        assert!(out.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn blstm_dimensions_and_single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = BlstmParams::init(32, 128, &mut rng);
        let xs = rand_seq(&mut rng, 3, 32);
        assert_eq!(blstm_forward(&xs, &p).unwrap().dim(), (3, 256));

        let p = BlstmParams::init(4, 3, &mut rng);
        let x1 = rand_seq(&mut rng, 1, 4);
        let z = blstm_forward(&x1, &p).unwrap();
        let f = lstm_step(x1.row(0), &LstmState::zeros(3), &p.fwd).unwrap();
        let b = lstm_step(x1.row(0), &LstmState::zeros(3), &p.bwd).unwrap();
        for k in 0..3 {
            assert!((z[[0, k]] - f.output[k]).abs() < 1e-14);
            assert!((z[[0, 3 + k]] - b.output[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn reversal_with_swapped_directions_reverses_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let p = BlstmParams::init(3, 4, &mut rng);
        let swapped = BlstmParams {
            fwd: p.bwd.clone(),
            bwd: p.fwd.clone(),
        };
        let xs = rand_seq(&mut rng, 9, 3);
        let z = blstm_forward(&xs, &p).unwrap();
        let zr = blstm_forward(&reversed(&xs), &swapped).unwrap();
        for t in 0..9 {
            let src = 8 - t;
            assert_eq!(zr.slice(s![t, ..4]), z.slice(s![src, 4..]));
            assert_eq!(zr.slice(s![t, 4..]), z.slice(s![src, ..4]));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = BlstmParams::init(3, 4, &mut rng);
        let xs = rand_seq(&mut rng, 5, 3);
        let (z, cache) = blstm_forward_cached(&xs, &p).unwrap();
        let (g, gx) = blstm_backward(&Array2::zeros(z.dim()), &cache, &p).unwrap();
        for a in [&g.fwd, &g.bwd] {
            assert!(a.w_x.iter().chain(a.w_s.iter()).chain(a.bias.iter()).all(|&v| v == 0.0));
        }
        assert!(gx.iter().all(|&v| v == 0.0));
        assert!(matches!(
            blstm_backward(&Array2::zeros((5, 3)), &cache, &p),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn blstm_gradient_decomposes_by_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = BlstmParams::init(3, 2, &mut rng);
        let xs = rand_seq(&mut rng, 5, 3);
        let (z, cache) = blstm_forward_cached(&xs, &p).unwrap();
        let up = rand_seq(&mut rng, z.nrows(), z.ncols());
        let (g, _) = blstm_backward(&up, &cache, &p).unwrap();

        let (_, cf) = lstm_forward_cached(&xs, &p.fwd).unwrap();
        let (gf, _) = lstm_backward(&up.slice(s![.., ..2]).to_owned(), &cf, &p.fwd).unwrap();
        assert_eq!(g.fwd, gf);
        let (_, cb) = lstm_forward_cached(&reversed(&xs), &p.bwd).unwrap();
        let (gb, _) = lstm_backward(&up.slice(s![..;-1, 2..]).to_owned(), &cb, &p.bwd).unwrap();
        assert_eq!(g.bwd, gb);
    }
}
