//! Speaker-independent partitions, Adam, early stopping and the training loop.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::SplicedSequence;
use crate::error::{Error, Result};
use crate::model::{argmax, cross_entropy, model_backward, Mode, Model, ModelConfig, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

/// Disjoint train / validation / test speaker sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl Partition {
    pub fn split_of(&self, speaker: &str) -> Option<Split> {
        if self.train.contains(speaker) {
            Some(Split::Train)
        } else if self.validation.contains(speaker) {
            Some(Split::Validation)
        } else if self.test.contains(speaker) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn speakers(&self, split: Split) -> &BTreeSet<String> {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn is_disjoint(&self) -> bool {
        self.train.is_disjoint(&self.validation)
            && self.train.is_disjoint(&self.test)
            && self.validation.is_disjoint(&self.test)
    }

    /// Writes `speaker,split` rows.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["speaker", "split"])?;
        for split in [Split::Train, Split::Validation, Split::Test] {
            for s in self.speakers(split) {
                w.write_record([s.as_str(), split.name()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl std::io::Read) -> Result<Self> {
        let mut p = Partition {
            train: BTreeSet::new(),
            validation: BTreeSet::new(),
            test: BTreeSet::new(),
        };
        for row in csv::Reader::from_reader(r).records() {
            let row = row?;
            let (spk, split) = (row.get(0).unwrap_or(""), row.get(1).unwrap_or(""));
            let set = match split {
                "train" => &mut p.train,
                "val" => &mut p.validation,
                "test" => &mut p.test,
                other => return Err(Error::Format(format!("unknown split `{other}`"))),
            };
            set.insert(spk.to_string());
        }
        if !p.is_disjoint() {
            return Err(Error::Partition("speaker listed in more than one split".into()));
        }
        Ok(p)
    }
}

/// Split sizes under the floor-then-remainder rule: train and validation get
/// `floor(ratio * n)` speakers (at least one each), test gets the rest.
pub fn partition_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(Error::Partition(format!("need at least 3 speakers, got {n}")));
    }
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(r.is_finite() && *r > 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Partition(format!("bad ratios {ratios:?}")));
    }
    let n_train = ((a * n as f64 + 1e-9).floor() as usize).max(1);
    let n_val = ((b * n as f64 + 1e-9).floor() as usize).max(1);
    let n_train = n_train.min(n - 2);
    let n_val = n_val.min(n - n_train - 1);
    Ok((n_train, n_val, n - n_train - n_val))
}

/// Shuffles the distinct speakers with `seed` and splits them by ratio.
pub fn make_partitions<'a>(
    speakers: impl IntoIterator<Item = &'a str>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Partition> {
    let unique: BTreeSet<&str> = speakers.into_iter().collect();
    let mut order: Vec<&str> = unique.into_iter().collect();
    let (n_train, n_val, _) = partition_sizes(order.len(), ratios)?;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let to_set = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
    let p = Partition {
        train: to_set(&order[..n_train]),
        validation: to_set(&order[n_train..n_train + n_val]),
        test: to_set(&order[n_train + n_val..]),
    };
    debug_assert!(p.is_disjoint());
    Ok(p)
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.70, 0.10, 0.20);

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators, one flat buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_params(config: AdamConfig, params: &ModelParams) -> Self {
        let mut sizes = Vec::new();
        params.for_each(|_, _, s| sizes.push(s.len()));
        Self::new(config, &sizes)
    }

    /// One bias-corrected update over a list of tensors.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("Adam tensor count mismatch".into()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Shape(format!("Adam tensor {i} size mismatch")));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            update_tensor(p, g, &mut self.m[i], &mut self.v[i], lr, beta1, beta2, eps, c1, c2);
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_tensor(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for k in 0..p.len() {
        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
        let m_hat = m[k] / c1;
        let v_hat = v[k] / c2;
        p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Applies one Adam step to every tensor of `params`.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState) -> Result<()> {
    let mut g_dims = Vec::new();
    grads.for_each(|_, d, _| g_dims.push(d.to_vec()));
    let mut p_dims = Vec::new();
    params.for_each(|_, d, _| p_dims.push(d.to_vec()));
    if g_dims != p_dims || p_dims.len() != state.m.len() {
        return Err(Error::Shape("gradient layout does not mirror parameters".into()));
    }
    let mut grad_slices: Vec<&[f64]> = Vec::with_capacity(g_dims.len());
    collect_slices(grads, &mut grad_slices);
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    let mut i = 0;
    let (ms, vs) = (&mut state.m, &mut state.v);
    params.for_each_mut(|_, _, p| {
        update_tensor(p, grad_slices[i], &mut ms[i], &mut vs[i], lr, beta1, beta2, eps, c1, c2);
        i += 1;
    });
    Ok(())
}

fn collect_slices<'a>(p: &'a ModelParams, out: &mut Vec<&'a [f64]>) {
    for c in [&p.conv1, &p.conv2].into_iter().flatten() {
        out.push(c.maps.as_slice().expect("contiguous"));
        out.push(c.bias.as_slice().expect("contiguous"));
    }
    for l in [&p.blstm.fwd, &p.blstm.bwd] {
        let (h, d) = (l.hidden(), l.input_dim());
        let wx = l.w_x.as_slice().expect("contiguous");
        let ws = l.w_s.as_slice().expect("contiguous");
        let b = l.bias.as_slice().expect("contiguous");
        for g in 0..4 {
            out.push(&wx[g * h * d..(g + 1) * h * d]);
            out.push(&ws[g * h * h..(g + 1) * h * h]);
            out.push(&b[g * h..(g + 1) * h]);
        }
    }
    for f in &p.fc {
        out.push(f.w.as_slice().expect("contiguous"));
        out.push(f.b.as_slice().expect("contiguous"));
    }
}

/// Patience-based early stopping on a metric to maximise.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub since_improvement: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    /// Records the metric of `epoch`; returns true if it is a new best.
    /// Ties are not improvements.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.since_improvement = 0;
            true
        } else {
            self.since_improvement = (self.since_improvement + 1).min(self.patience);
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_improvement >= self.patience
    }
}

/// Mean of per-class recalls. Every class in `0..n_classes` must occur in
/// `labels`.
pub fn unweighted_accuracy(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut hits = vec![0usize; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if l >= n_classes {
            return Err(Error::Metric(format!("label {l} out of range")));
        }
        counts[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Metric(format!("class {c} absent from labels")));
    }
    Ok(hits
        .iter()
        .zip(&counts)
        .map(|(&h, &n)| h as f64 / n as f64)
        .sum::<f64>()
        / n_classes as f64)
}

/// One labelled, spliced utterance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub input: SplicedSequence,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop as soon as training UA (eval mode) reaches this value.
    pub stop_at_train_ua: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 10,
            patience: 3,
            max_epochs: 200,
            adam: AdamConfig::default(),
            seed: 0,
            stop_at_train_ua: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ua: f64,
    pub train_ua: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation UA.
    pub best: Model,
    /// Parameters after the last epoch run.
    pub last: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

pub fn predict_all(model: &Model, samples: &[Sample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| model.evaluate(&s.input).map(|o| argmax(&o.probs)))
        .collect()
}

pub fn evaluate_ua(model: &Model, samples: &[Sample]) -> Result<f64> {
    let preds = predict_all(model, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    unweighted_accuracy(&preds, &labels, model.config.n_classes())
}

/// Writes the `epoch,train_loss,val_ua` history.
pub fn write_history(w: impl Write, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["epoch", "train_loss", "val_ua"])?;
    for r in history {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_ua.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Initialises a model from `config` with `opts.seed` and trains it.
pub fn train(config: &ModelConfig, train_set: &[Sample], val_set: &[Sample], opts: &TrainOptions) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let model = Model::new(config.clone(), &mut rng)?;
    train_model(model, train_set, val_set, opts, &mut rng)
}

/// Trains an existing model. Shuffling and dropout draw from `rng`.
pub fn train_model(
    mut model: Model,
    train_set: &[Sample],
    val_set: &[Sample],
    opts: &TrainOptions,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Partition("empty training split".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Partition("empty validation split".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    let mut adam = AdamState::for_params(opts.adam, &model.params);
    let mut stop = EarlyStop::new(opts.patience);
    let mut history = Vec::new();
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=opts.max_epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let mut acc = model.params.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = &train_set[i];
                let (out, cache) = model.forward(&s.input, Mode::Train, rng)?;
                let (loss, g) = cross_entropy(&out.probs, s.label);
                let grads = model_backward(&g, &cache, &model.params, &model.config)?;
                acc.add_assign(&grads);
                batch_loss += loss;
            }
            if !batch_loss.is_finite() || !acc.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_finite: Box::new(model.params),
                });
            }
            acc.scale(1.0 / batch.len() as f64);
            let before = model.params.clone();
            adam_step(&mut model.params, &acc, &mut adam)?;
            if !model.params.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_finite: Box::new(before),
                });
            }
            loss_sum += batch_loss;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_ua = evaluate_ua(&model, val_set)?;
        let train_ua = match opts.stop_at_train_ua {
            Some(_) => Some(evaluate_ua(&model, train_set)?),
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_ua,
            train_ua,
        });
        if stop.observe(epoch, val_ua) {
            best = model.clone();
        }
        let reached = matches!((opts.stop_at_train_ua, train_ua), (Some(t), Some(u)) if u >= t);
        if reached || stop.should_stop() {
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        last: model,
        best_epoch: stop.best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn forty_two_speakers_split_29_4_9() {
        assert_eq!(partition_sizes(42, DEFAULT_RATIOS).unwrap(), (29, 4, 9));
        assert!(matches!(partition_sizes(2, DEFAULT_RATIOS), Err(Error::Partition(_))));
        assert_eq!(partition_sizes(3, DEFAULT_RATIOS).unwrap(), (1, 1, 1));
        assert_eq!(partition_sizes(4, DEFAULT_RATIOS).unwrap(), (2, 1, 1));
    }

    #[test]
    fn seeds_permute_differently() {
        let names: Vec<String> = (0..42).map(|i| format!("s{i:02}")).collect();
        let a = make_partitions(names.iter().map(String::as_str), DEFAULT_RATIOS, 1).unwrap();
        let b = make_partitions(names.iter().map(String::as_str), DEFAULT_RATIOS, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!((b.train.len(), b.validation.len(), b.test.len()), (29, 4, 9));
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(Partition::read_csv(buf.as_slice()).unwrap(), a);
    }

    proptest! {
        #[test]
        fn partitions_are_disjoint_and_complete(n in 3usize..60, seed: u64) {
            let names: Vec<String> = (0..n).map(|i| format!("spk{i}")).collect();
            let p = make_partitions(names.iter().map(String::as_str), DEFAULT_RATIOS, seed).unwrap();
            prop_assert!(p.is_disjoint());
            prop_assert_eq!(p.train.len() + p.validation.len() + p.test.len(), n);
            prop_assert!(!p.train.is_empty() && !p.validation.is_empty() && !p.test.is_empty());
        }

        #[test]
        fn adam_second_moment_stays_nonnegative(gs in proptest::collection::vec(-1e3f64..1e3, 1..30)) {
            let mut st = AdamState::new(AdamConfig::default(), &[1]);
            let mut x = [0.0];
            for g in gs {
                st.step_slices(&mut [&mut x[..]], &[&[g][..]]).unwrap();
                prop_assert!(st.v[0][0] >= 0.0);
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [3.7, -0.02, 1e4] {
            let mut st = AdamState::new(AdamConfig::default(), &[1]);
            let mut x = [0.5];
            st.step_slices(&mut [&mut x[..]], &[&[g][..]]).unwrap();
            let step = 0.5 - x[0];
            assert!((step / (1e-3 * g.signum()) - 1.0).abs() < 1e-6, "{step}");
            assert_eq!(st.t, 1);
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut st = AdamState::new(AdamConfig::default(), &[3]);
        let mut x = [1.0, -2.0, 0.25];
        for _ in 0..50 {
            st.step_slices(&mut [&mut x[..]], &[&[0.0; 3][..]]).unwrap();
        }
        assert_eq!(x, [1.0, -2.0, 0.25]);
    }

    fn descend(lr: f64) -> f64 {
        let mut st = AdamState::new(AdamConfig { lr, ..AdamConfig::default() }, &[1]);
        let mut x = [1.0];
        for _ in 0..100 {
            let g = 2.0 * x[0];
            st.step_slices(&mut [&mut x[..]], &[&[g][..]]).unwrap();
        }
        x[0]
    }

    fn oracle_descent(lr: f64) -> f64 {
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
        }
        x
    }

    #[test]
    fn adam_descends_quadratic() {
        let x = descend(1e-3);
        assert!((x - oracle_descent(1e-3)).abs() < 1e-12);
        assert!(x.abs() < 1.0);
        // Each step moves roughly lr, so halving |x| within 100 steps needs a
        // larger rate than the training default.
        let x = descend(1e-2);
        assert!((x - oracle_descent(1e-2)).abs() < 1e-12);
        assert!(x.abs() < 0.5);
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut st = AdamState::new(AdamConfig::default(), &[2]);
        let mut x = [0.0; 3];
        assert!(st.step_slices(&mut [&mut x[..]], &[&[0.0; 3][..]]).is_err());
    }

    #[test]
    fn patience_trace() {
        let mut es = EarlyStop::new(3);
        let mut stopped_at = None;
        for (i, ua) in [0.5, 0.6, 0.59, 0.58, 0.57].into_iter().enumerate() {
            es.observe(i + 1, ua);
            assert!(es.since_improvement <= es.patience);
            if es.should_stop() {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(5));
        assert_eq!(es.best_epoch, 2);
        let mut tie = EarlyStop::new(1);
        tie.observe(1, 0.5);
        assert!(!tie.observe(2, 0.5));
        assert!(tie.should_stop());
    }

    #[test]
    fn ua_definition() {
        assert_eq!(unweighted_accuracy(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        let labels = [0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
        let preds = [0; 10];
        assert_eq!(unweighted_accuracy(&preds, &labels, 2).unwrap(), 0.5);
        assert!(matches!(unweighted_accuracy(&[0, 0], &[0, 0], 2), Err(Error::Metric(_))));
    }

    #[test]
    fn ua_matches_confusion_matrix() {
        use rand::RngExt;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let labels: Vec<usize> = (0..300).map(|i| i % 6).collect();
        let preds: Vec<usize> = (0..300).map(|_| rng.random_range(0..6)).collect();
        let mut conf = [[0usize; 6]; 6];
        for (&p, &l) in preds.iter().zip(&labels) {
            conf[l][p] += 1;
        }
        let brute: f64 = (0..6)
            .map(|c| conf[c][c] as f64 / conf[c].iter().sum::<usize>() as f64)
            .sum::<f64>()
            / 6.0;
        let ua = unweighted_accuracy(&preds, &labels, 6).unwrap();
        assert!((ua - brute).abs() < 1e-15);
    }
}
