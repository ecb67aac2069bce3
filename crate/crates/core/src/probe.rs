//! Module-wise probes: what each part of a trained model encodes.
//!
//! Every utterance is summarised at four taps (raw spliced features, conv
//! output, BLSTM output, final FC output). For each tap and label type a
//! linear one-vs-rest classifier is fitted, the cluster inertia ratio
//! `rho = intra / inter` is measured on the raw representations, and LDA
//! coordinates are exported for plotting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::SplicedSequence;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::train::{unweighted_accuracy, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModuleTap {
    Raw,
    Cnn,
    Blstm,
    Mlp,
}

impl ModuleTap {
    pub const ALL: [ModuleTap; 4] = [ModuleTap::Raw, ModuleTap::Cnn, ModuleTap::Blstm, ModuleTap::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ModuleTap::Raw => "raw",
            ModuleTap::Cnn => "cnn",
            ModuleTap::Blstm => "blstm",
            ModuleTap::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModuleTap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelType {
    Emotion,
    Speaker,
    Gender,
}

impl LabelType {
    pub const ALL: [LabelType; 3] = [LabelType::Emotion, LabelType::Speaker, LabelType::Gender];

    pub fn name(self) -> &'static str {
        match self {
            LabelType::Emotion => "emotion",
            LabelType::Speaker => "speaker",
            LabelType::Gender => "gender",
        }
    }
}

/// Mean over rows.
pub fn temporal_mean(frames: &Array2<f64>) -> Result<Array1<f64>> {
    frames
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::Shape("cannot average an empty sequence".into()))
}

fn raw_mean(input: &SplicedSequence) -> Result<Array1<f64>> {
    let (d, w) = input.block_shape();
    if input.is_empty() {
        return Err(Error::Shape("cannot average an empty sequence".into()));
    }
    let mut acc = Array1::zeros(d * w);
    for b in &input.blocks {
        acc += &b.to_shape(d * w).map_err(|e| Error::Shape(e.to_string()))?;
    }
    Ok(acc / input.len() as f64)
}

/// Utterance-level vectors at every tap; `cnn` is `None` for LDNNs.
#[derive(Debug, Clone)]
pub struct TapVectors {
    pub raw: Array1<f64>,
    pub cnn: Option<Array1<f64>>,
    pub blstm: Array1<f64>,
    pub mlp: Array1<f64>,
}

impl TapVectors {
    pub fn get(&self, tap: ModuleTap) -> Result<&Array1<f64>> {
        match tap {
            ModuleTap::Raw => Ok(&self.raw),
            ModuleTap::Cnn => self
                .cnn
                .as_ref()
                .ok_or_else(|| Error::Shape("model has no conv module to tap".into())),
            ModuleTap::Blstm => Ok(&self.blstm),
            ModuleTap::Mlp => Ok(&self.mlp),
        }
    }
}

/// One eval-mode forward pass, summarised at all taps.
pub fn extract_all(model: &Model, input: &SplicedSequence) -> Result<TapVectors> {
    let out = model.evaluate(input)?;
    let cnn = match model.config {
        crate::model::ModelConfig::Cldnn(_) => Some(temporal_mean(&out.frame_features)?),
        crate::model::ModelConfig::Ldnn { .. } => None,
    };
    Ok(TapVectors {
        raw: raw_mean(input)?,
        cnn,
        blstm: out.blstm_mean,
        mlp: out.logits,
    })
}

pub fn extract_representation(model: &Model, input: &SplicedSequence, tap: ModuleTap) -> Result<Array1<f64>> {
    extract_all(model, input)?.get(tap).cloned()
}

fn distinct_classes(labels: &[usize]) -> usize {
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Per-feature standardisation fitted on training vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(xs: &[Array1<f64>]) -> Result<Self> {
        let m = stack(xs)?;
        let mean = m.mean_axis(Axis(0)).expect("non-empty");
        let std = m.std_axis(Axis(0), 0.0);
        let scale = std.mapv(|s| if s > 1e-12 { 1.0 / s } else { 1.0 });
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        (x - &self.mean) * &self.scale
    }
}

fn stack(xs: &[Array1<f64>]) -> Result<Array2<f64>> {
    let d = xs
        .first()
        .ok_or_else(|| Error::Probe("no vectors".into()))?
        .len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::Shape("vectors differ in length".into()));
    }
    let mut m = Array2::zeros((xs.len(), d));
    for (i, x) in xs.iter().enumerate() {
        m.row_mut(i).assign(x);
    }
    Ok(m)
}

/// One-vs-rest linear classifier with L2-regularised hinge loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub standardizer: Standardizer,
    /// `n_classes x (dim + 1)`; the last column multiplies a constant 1.
    pub weights: Array2<f64>,
}

pub const PROBE_LAMBDA: f64 = 1e-3;
pub const PROBE_EPOCHS: usize = 200;

impl LinearProbe {
    fn augmented(&self, x: &Array1<f64>) -> Array1<f64> {
        let z = self.standardizer.apply(x);
        let mut a = Array1::ones(z.len() + 1);
        a.slice_mut(ndarray::s![..z.len()]).assign(&z);
        a
    }

    pub fn scores(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weights.dot(&self.augmented(x))
    }

    pub fn predict(&self, x: &Array1<f64>) -> usize {
        crate::model::argmax(&self.scores(x))
    }
}

/// Fits one Pegasos-style sub-gradient solver per class.
pub fn train_linear_probe(xs: &[Array1<f64>], labels: &[usize], n_classes: usize, seed: u64) -> Result<LinearProbe> {
    if xs.len() != labels.len() {
        return Err(Error::Probe("vector and label counts differ".into()));
    }
    if distinct_classes(labels) < 2 {
        return Err(Error::Probe("need at least two classes".into()));
    }
    if labels.iter().any(|&l| l >= n_classes) {
        return Err(Error::Probe("label out of range".into()));
    }
    let standardizer = Standardizer::fit(xs)?;
    let mut probe = LinearProbe {
        standardizer,
        weights: Array2::zeros((n_classes, xs[0].len() + 1)),
    };
    let data: Vec<Array1<f64>> = xs.iter().map(|x| probe.augmented(x)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut t = 0usize;
    for _ in 0..PROBE_EPOCHS {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (PROBE_LAMBDA * t as f64);
            let x = &data[i];
            for c in 0..n_classes {
                let y = if labels[i] == c { 1.0 } else { -1.0 };
                let mut w = probe.weights.row_mut(c);
                let margin = y * w.dot(x);
                w *= 1.0 - eta * PROBE_LAMBDA;
                if margin < 1.0 {
                    w.scaled_add(eta * y, x);
                }
            }
        }
    }
    Ok(probe)
}

/// Fits a probe on the training vectors and reports UA on the test vectors.
pub fn probe_ua(
    train_x: &[Array1<f64>],
    train_y: &[usize],
    test_x: &[Array1<f64>],
    test_y: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<f64> {
    let probe = train_linear_probe(train_x, train_y, n_classes, seed)?;
    let preds: Vec<usize> = test_x.iter().map(|x| probe.predict(x)).collect();
    unweighted_accuracy(&preds, test_y, n_classes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    /// Class centres keyed by label.
    pub centers: BTreeMap<usize, Array1<f64>>,
    pub intra: f64,
    pub inter: f64,
    pub rho: f64,
}

/// Intra- and inter-class inertia of labelled vectors and their ratio.
pub fn cluster_inertia(xs: &[Array1<f64>], labels: &[usize]) -> Result<ClusterStats> {
    if xs.len() != labels.len() || xs.is_empty() {
        return Err(Error::Probe("vector and label counts differ".into()));
    }
    let mut groups: BTreeMap<usize, Vec<&Array1<f64>>> = BTreeMap::new();
    for (x, &l) in xs.iter().zip(labels) {
        groups.entry(l).or_default().push(x);
    }
    if groups.len() < 2 {
        return Err(Error::Probe("need at least two classes".into()));
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::Shape("vectors differ in length".into()));
    }
    let centers: BTreeMap<usize, Array1<f64>> = groups
        .iter()
        .map(|(&l, g)| {
            let mut c = Array1::zeros(d);
            for x in g {
                c += *x;
            }
            (l, c / g.len() as f64)
        })
        .collect();
    let sq = |a: &Array1<f64>, b: &Array1<f64>| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let n_c = groups.len() as f64;
    let intra = groups
        .iter()
        .map(|(l, g)| g.iter().map(|x| sq(&centers[l], x)).sum::<f64>() / g.len() as f64)
        .sum::<f64>()
        / n_c;
    let mut inter = 0.0;
    for (a, ca) in &centers {
        for (b, cb) in &centers {
            if a != b {
                inter += sq(cb, ca);
            }
        }
    }
    inter /= n_c * n_c - n_c;
    if inter == 0.0 {
        return Err(Error::InfiniteRho);
    }
    Ok(ClusterStats {
        centers,
        intra,
        inter,
        rho: intra / inter,
    })
}

/// Fitted LDA projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Lda {
    pub mean: Array1<f64>,
    /// `out_dim x dim`.
    pub components: Array2<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Lda {
    pub fn out_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn project(&self, x: &Array1<f64>) -> Array1<f64> {
        self.components.dot(&(x - &self.mean))
    }
}

/// Fits LDA with `min(N - 1, 2)` output dimensions. Class scatter is weighted
/// by class priors proportional to class sizes.
pub fn lda_fit(xs: &[Array1<f64>], labels: &[usize]) -> Result<Lda> {
    let n_classes = distinct_classes(labels);
    if n_classes < 2 {
        return Err(Error::Lda("need at least two classes".into()));
    }
    if xs.len() != labels.len() {
        return Err(Error::Lda("vector and label counts differ".into()));
    }
    let m = stack(xs)?;
    let (n, d) = m.dim();
    let mean = m.mean_axis(Axis(0)).expect("non-empty");
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut sw = DMatrix::<f64>::zeros(d, d);
    let mut sb = DMatrix::<f64>::zeros(d, d);
    for idx in groups.values() {
        let prior = idx.len() as f64 / n as f64;
        let mut mu = Array1::<f64>::zeros(d);
        for &i in idx {
            mu += &m.row(i);
        }
        mu /= idx.len() as f64;
        let diff = DMatrix::from_iterator(d, 1, (&mu - &mean).into_iter());
        sb += prior * &diff * diff.transpose();
        for &i in idx {
            let r = DMatrix::from_iterator(d, 1, m.row(i).iter().zip(&mu).map(|(a, b)| a - b));
            sw += (1.0 / n as f64) * &r * r.transpose();
        }
    }
    let trace = sw.trace();
    let reg = if trace > 0.0 { 1e-6 * trace / d as f64 } else { 1e-12 };
    for i in 0..d {
        sw[(i, i)] += reg;
    }
    let chol = sw
        .cholesky()
        .ok_or_else(|| Error::Lda("within-class scatter is not positive definite".into()))?;
    let l = chol.l();
    // M = L^-1 Sb L^-T is symmetric with the same spectrum as Sw^-1 Sb.
    let a = l
        .solve_lower_triangular(&sb)
        .ok_or_else(|| Error::Lda("singular Cholesky factor".into()))?;
    let mm = l
        .solve_lower_triangular(&a.transpose())
        .ok_or_else(|| Error::Lda("singular Cholesky factor".into()))?;
    let mm = (&mm + mm.transpose()) * 0.5;
    let eig = SymmetricEigen::new(mm);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let out_dim = (n_classes - 1).min(2).min(d);
    let lt = l.transpose();
    let mut components = Array2::zeros((out_dim, d));
    let mut eigenvalues = Vec::with_capacity(out_dim);
    for (k, &i) in order.iter().take(out_dim).enumerate() {
        let v = eig.eigenvectors.column(i).into_owned();
        let w = lt
            .solve_upper_triangular(&v)
            .ok_or_else(|| Error::Lda("singular Cholesky factor".into()))?;
        let norm = w.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Lda("degenerate discriminant direction".into()));
        }
        // Sign convention: largest-magnitude entry positive.
        let pivot = w.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[k, j]] = sign * w[j] / norm;
        }
        eigenvalues.push(eig.eigenvalues[i]);
    }
    Ok(Lda {
        mean,
        components,
        eigenvalues,
    })
}

/// Fit-and-project convenience on one set.
pub fn lda_project(xs: &[Array1<f64>], labels: &[usize]) -> Result<Vec<Array1<f64>>> {
    let lda = lda_fit(xs, labels)?;
    Ok(xs.iter().map(|x| lda.project(x)).collect())
}

/// An utterance prepared for probing.
#[derive(Debug, Clone)]
pub struct ProbeItem {
    pub id: String,
    pub input: SplicedSequence,
    pub emotion: usize,
    pub speaker: String,
    pub gender: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub model: String,
    pub tap: ModuleTap,
    pub label_type: LabelType,
    pub probe_ua: f64,
    /// `None` when all class centres coincide.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub utterance_id: String,
    pub label: String,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    pub scatter: BTreeMap<(ModuleTap, LabelType), Vec<ScatterPoint>>,
}

impl ProbeReport {
    pub fn row(&self, tap: ModuleTap, label_type: LabelType) -> Option<&ProbeRow> {
        self.rows.iter().find(|r| r.tap == tap && r.label_type == label_type)
    }
}

/// Probe-train / probe-test index sets for one label type. Emotion follows
/// the speaker partition (train vs test speakers, validation when no test
/// speakers are present). Speaker and gender use a seeded per-label 70:30
/// utterance split so the same identities appear on both sides.
pub fn probe_split(items: &[ProbeItem], labels: &[usize], label_type: LabelType, seed: u64) -> (Vec<usize>, Vec<usize>) {
    match label_type {
        LabelType::Emotion => {
            let train: Vec<usize> = (0..items.len()).filter(|&i| items[i].split == Split::Train).collect();
            let mut test: Vec<usize> = (0..items.len()).filter(|&i| items[i].split == Split::Test).collect();
            if test.is_empty() {
                test = (0..items.len()).filter(|&i| items[i].split == Split::Validation).collect();
            }
            (train, test)
        }
        _ => {
            let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &l) in labels.iter().enumerate() {
                by_label.entry(l).or_default().push(i);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for idx in by_label.values_mut() {
                idx.shuffle(&mut rng);
                let n_train = ((idx.len() as f64 * 0.7).round() as usize).clamp(1, idx.len().saturating_sub(1).max(1));
                train.extend_from_slice(&idx[..n_train]);
                test.extend_from_slice(&idx[n_train..]);
            }
            train.sort_unstable();
            test.sort_unstable();
            (train, test)
        }
    }
}

fn index_labels(items: &[ProbeItem], label_type: LabelType) -> (Vec<usize>, Vec<String>) {
    match label_type {
        LabelType::Emotion => {
            let n = items.iter().map(|i| i.emotion).max().map_or(0, |m| m + 1);
            (items.iter().map(|i| i.emotion).collect(), (0..n).map(|c| c.to_string()).collect())
        }
        _ => {
            let key = |i: &ProbeItem| match label_type {
                LabelType::Speaker => i.speaker.clone(),
                _ => i.gender.clone(),
            };
            let mut names: Vec<String> = items.iter().map(key).collect();
            names.sort();
            names.dedup();
            let labels = items
                .iter()
                .map(|i| names.binary_search(&key(i)).expect("present"))
                .collect();
            (labels, names)
        }
    }
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// Extracts every tap for every item and fills the report. Taps a model
/// lacks (conv on an LDNN) are skipped. Classes of the emotion label are
/// `0..n_emotions`.
pub fn probe_all(model: &Model, model_name: &str, items: &[ProbeItem], n_emotions: usize, seed: u64) -> Result<ProbeReport> {
    let taps: Vec<TapVectors> = items
        .iter()
        .map(|it| extract_all(model, &it.input))
        .collect::<Result<_>>()?;
    let mut report = ProbeReport::default();
    for label_type in LabelType::ALL {
        let (labels, names) = index_labels(items, label_type);
        let n_classes = match label_type {
            LabelType::Emotion => n_emotions,
            _ => names.len(),
        };
        let (tr, te) = probe_split(items, &labels, label_type, seed);
        if tr.is_empty() || te.is_empty() {
            return Err(Error::Probe(format!("empty probe split for {}", label_type.name())));
        }
        for tap in ModuleTap::ALL {
            let Ok(vectors) = taps.iter().map(|t| t.get(tap).cloned()).collect::<Result<Vec<_>>>() else {
                continue;
            };
            let (xtr, ytr) = (pick(&vectors, &tr), pick(&labels, &tr));
            let (xte, yte) = (pick(&vectors, &te), pick(&labels, &te));
            let ua = probe_ua(&xtr, &ytr, &xte, &yte, n_classes, seed)?;
            let rho = match cluster_inertia(&xtr, &ytr) {
                Ok(s) => Some(s.rho),
                Err(Error::InfiniteRho) => None,
                Err(e) => return Err(e),
            };
            let lda = lda_fit(&xtr, &ytr)?;
            let points = items
                .iter()
                .zip(&vectors)
                .zip(&labels)
                .map(|((it, v), &l)| ScatterPoint {
                    utterance_id: it.id.clone(),
                    label: names.get(l).cloned().unwrap_or_else(|| l.to_string()),
                    coords: lda.project(v).to_vec(),
                })
                .collect();
            report.scatter.insert((tap, label_type), points);
            report.rows.push(ProbeRow {
                model: model_name.to_string(),
                tap,
                label_type,
                probe_ua: ua,
                rho,
            });
        }
    }
    Ok(report)
}

/// `model,tap,label_type,probe_ua,rho` rows; infinite rho is written `inf`.
pub fn write_report(w: impl Write, rows: &[ProbeRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["model", "tap", "label_type", "probe_ua", "rho"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.tap.name().to_string(),
            r.label_type.name().to_string(),
            r.probe_ua.to_string(),
            r.rho.map_or_else(|| "inf".to_string(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `utterance_id,label,x,y`; the `y` column is dropped for 1-D projections.
pub fn write_scatter(w: impl Write, points: &[ScatterPoint]) -> Result<()> {
    let dims = points.first().map_or(2, |p| p.coords.len());
    let mut w = csv::Writer::from_writer(w);
    if dims >= 2 {
        w.write_record(["utterance_id", "label", "x", "y"])?;
    } else {
        w.write_record(["utterance_id", "label", "x"])?;
    }
    for p in points {
        let mut rec = vec![p.utterance_id.clone(), p.label.clone()];
        rec.extend(p.coords.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
