//! Experiment orchestration driven by a flat [`Config`].
//!
//! Artifacts land under `<out>/<name>/`:
//!
//! ```text
//! features/<utterance>.feat     spliced-source feature dumps (clean audio)
//! features/augmented.csv        augmented manifest
//! checkpoints/best.ckpt         best-validation model
//! reports/partition.csv         speaker,split
//! reports/history.csv           epoch,train_loss,val_ua
//! reports/eval.csv              split,condition,ua
//! reports/probe.csv             model,tap,label_type,probe_ua,rho
//! reports/scatter_<tap>_<label>.csv
//! reports/sweep.csv
//! ```
//!
//! Recognised keys (defaults in brackets): `name` [experiment], `out` [out],
//! `seed` [0], `manifest`, `speakers` [speakers.csv beside the manifest],
//! `noise_manifest`, `condition` clean|noisy [clean], `eval_condition`
//! [= condition], `n_noise` [20], `n_snr` [3], `snr_min` [-10], `snr_max`
//! [15], `batch_size` [10], `patience` [3], `max_epochs` [200], `lr`
//! [0.001], `stop_at_train_ua`, `probe_condition` [clean], `checkpoint`,
//! plus the model keys read by [`ModelConfig::from_config`].

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::augment::{augment_corpus, render_mix, splitmix64, AugmentConfig, NoiseClip};
use crate::checkpoint;
use crate::config::Config;
use crate::corpus::{
    label_set, read_augmented_manifest, read_clean_manifest, read_noise_manifest, read_speakers,
    write_augmented_manifest, AugmentedEntry, CleanEntry,
};
use crate::dsp::{read_wav, write_feature_dump, FeatureExtractor, FrontendConfig, Waveform};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::probe::{probe_all, write_report, write_scatter, ProbeItem, ProbeReport};
use crate::synth::{write_corpus, SynthCorpus, SynthSpec};
use crate::train::{
    evaluate_ua, make_partitions, train, write_history, AdamConfig, Partition, Sample, Split, TrainOptions,
    TrainOutcome, DEFAULT_RATIOS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Clean,
    Noisy,
}

impl Condition {
    pub fn parse(key: &str, s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Condition::Clean),
            "noisy" => Ok(Condition::Noisy),
            other => Err(Error::config(key, format!("expected clean or noisy, got `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Noisy => "noisy",
        }
    }
}

/// Independent seeds derived from the run seed.
pub fn derived_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0x5eed)))
}

const STREAM_PARTITION: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_PROBE: u64 = 4;

/// Output directory layout of one experiment.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(out: impl AsRef<Path>, name: &str) -> Self {
        Self {
            root: out.as_ref().join(name),
        }
    }

    pub fn features(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("best.ckpt")
    }

    pub fn create(&self) -> Result<()> {
        for d in [self.features(), self.checkpoints(), self.reports()] {
            fs::create_dir_all(d)?;
        }
        Ok(())
    }
}

/// Loaded corpus plus everything derived from the config.
pub struct Experiment {
    pub config: Config,
    pub layout: Layout,
    pub seed: u64,
    pub clean: Vec<CleanEntry>,
    pub audio: Vec<Waveform>,
    pub genders: BTreeMap<String, String>,
    pub labels: Vec<String>,
    pub partition: Partition,
    extractor: FeatureExtractor,
    noise: Option<Vec<NoiseClip>>,
    augmented: Option<Vec<AugmentedEntry>>,
}

impl Experiment {
    /// Reads the manifest, audio and speaker sidecar, and draws the partition.
    pub fn load(config: &Config) -> Result<Self> {
        let config = config.clone();
        let seed: u64 = config.get_or("seed", 0)?;
        let name = config.get_str("name").unwrap_or("experiment").to_string();
        let out = config.get_str("out").unwrap_or("out").to_string();
        let manifest = PathBuf::from(config.require_str("manifest")?);
        let clean = read_clean_manifest(&manifest)?;
        if clean.is_empty() {
            return Err(Error::config("manifest", "manifest has no rows"));
        }
        let audio = clean.iter().map(|e| read_wav(&e.path)).collect::<Result<Vec<_>>>()?;
        let speakers_path = match config.get_str("speakers") {
            Some(p) => PathBuf::from(p),
            None => manifest.with_file_name("speakers.csv"),
        };
        let genders = if speakers_path.exists() {
            read_speakers(&speakers_path)?
        } else {
            BTreeMap::new()
        };
        let labels = label_set(clean.iter().map(|e| e.label.as_str()));
        let partition = make_partitions(
            clean.iter().map(|e| e.speaker.as_str()),
            DEFAULT_RATIOS,
            derived_seed(seed, STREAM_PARTITION),
        )?;
        Ok(Self {
            layout: Layout::new(out, &name),
            seed,
            clean,
            audio,
            genders,
            labels,
            partition,
            extractor: FeatureExtractor::new(FrontendConfig::default())?,
            noise: None,
            augmented: None,
            config,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| Error::Format(format!("unknown label `{label}`")))
    }

    /// Model configuration with `classes` taken from the corpus.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = self.config.clone();
        match cfg.get::<usize>("classes")? {
            Some(n) if n != self.n_classes() => {
                return Err(Error::config(
                    "classes",
                    format!("{n} given but the manifest has {} labels", self.n_classes()),
                ))
            }
            _ => {
                cfg.set("classes", self.n_classes());
            }
        }
        ModelConfig::from_config(&cfg)
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        let c = &self.config;
        Ok(TrainOptions {
            batch_size: c.get_or("batch_size", 10)?,
            patience: c.get_or("patience", 3)?,
            max_epochs: c.get_or("max_epochs", 200)?,
            adam: AdamConfig {
                lr: c.get_or("lr", 1e-3)?,
                ..AdamConfig::default()
            },
            seed: derived_seed(self.seed, STREAM_TRAIN),
            stop_at_train_ua: c.get("stop_at_train_ua")?,
        })
    }

    fn condition(&self, key: &str, default: Condition) -> Result<Condition> {
        match self.config.get_str(key) {
            Some(s) => Condition::parse(key, s),
            None => Ok(default),
        }
    }

    pub fn train_condition(&self) -> Result<Condition> {
        self.condition("condition", Condition::Clean)
    }

    pub fn eval_condition(&self) -> Result<Condition> {
        let train = self.train_condition()?;
        self.condition("eval_condition", train)
    }

    pub fn augment_config(&self) -> Result<AugmentConfig> {
        let c = &self.config;
        Ok(AugmentConfig {
            n_noise: c.get_or("n_noise", 20)?,
            n_snr: c.get_or("n_snr", 3)?,
            snr_range: (c.get_or("snr_min", -10.0)?, c.get_or("snr_max", 15.0)?),
            seed: derived_seed(self.seed, STREAM_AUGMENT),
        })
    }

    fn noise_pool(&mut self) -> Result<&[NoiseClip]> {
        if self.noise.is_none() {
            let path = self.config.require_str("noise_manifest")?;
            let rows = read_noise_manifest(path)?;
            let pool = rows
                .iter()
                .map(|r| NoiseClip::new(r.id.clone(), read_wav(&r.path)?))
                .collect::<Result<Vec<_>>>()?;
            self.noise = Some(pool);
        }
        Ok(self.noise.as_deref().expect("loaded"))
    }

    /// Draws (or reuses) the augmented manifest for every clean utterance.
    pub fn augmented(&mut self) -> Result<&[AugmentedEntry]> {
        if self.augmented.is_none() {
            let cfg = self.augment_config()?;
            self.noise_pool()?;
            let pool = self.noise.as_deref().expect("loaded");
            let rows = augment_corpus(&self.clean, pool, &cfg)?;
            self.augmented = Some(rows);
        }
        Ok(self.augmented.as_deref().expect("drawn"))
    }

    /// Uses an existing augmented manifest instead of drawing one.
    pub fn set_augmented(&mut self, rows: Vec<AugmentedEntry>) {
        self.augmented = Some(rows);
    }

    pub fn write_augmented(&mut self) -> Result<PathBuf> {
        self.layout.create()?;
        let path = self.layout.features().join("augmented.csv");
        let rows = self.augmented()?.to_vec();
        write_augmented_manifest(&path, &rows)?;
        Ok(path)
    }

    /// Writes one feature dump per clean utterance for the configured input.
    pub fn write_features(&self) -> Result<usize> {
        self.layout.create()?;
        let kind = self.model_config()?.input_kind().feature_kind();
        for (e, w) in self.clean.iter().zip(&self.audio) {
            let seq = self.extractor.features(w, kind)?;
            let f = File::create(self.layout.features().join(format!("{}.feat", e.id())))?;
            write_feature_dump(BufWriter::new(f), &seq)?;
        }
        Ok(self.clean.len())
    }

    pub fn write_partition(&self) -> Result<PathBuf> {
        self.layout.create()?;
        let path = self.layout.reports().join("partition.csv");
        self.partition.write_csv(File::create(&path)?)?;
        Ok(path)
    }

    fn clean_indices(&self, split: Split) -> Vec<usize> {
        (0..self.clean.len())
            .filter(|&i| self.partition.split_of(&self.clean[i].speaker) == Some(split))
            .collect()
    }

    /// Spliced samples of `split` under `condition`: clean utterances, plus
    /// their noisy children when the condition is noisy.
    pub fn samples(&mut self, split: Split, condition: Condition, kind: crate::dsp::FeatureKind) -> Result<Vec<Sample>> {
        let idx = self.clean_indices(split);
        let mut out = Vec::new();
        for &i in &idx {
            let e = &self.clean[i];
            out.push(Sample {
                id: e.id(),
                input: self.extractor.spliced(&self.audio[i], kind)?,
                label: self.label_index(&e.label)?,
            });
        }
        if condition == Condition::Noisy {
            let ids: BTreeMap<String, usize> = idx.iter().map(|&i| (self.clean[i].id(), i)).collect();
            let rows = self.augmented()?.to_vec();
            let pool = self.noise_pool()?.to_vec();
            for r in rows {
                let Some(&i) = ids.get(&r.parent_id) else {
                    continue;
                };
                let mix = render_mix(&r, &self.audio[i], &pool)?;
                out.push(Sample {
                    id: r.path.clone(),
                    input: self.extractor.spliced(&mix, kind)?,
                    label: self.label_index(&r.label)?,
                });
            }
        }
        Ok(out)
    }

    /// Trains on the train split, selects on the validation split, and
    /// writes the checkpoint and history.
    pub fn train(&mut self) -> Result<TrainOutcome> {
        self.layout.create()?;
        let model_cfg = self.model_config()?;
        let kind = model_cfg.input_kind().feature_kind();
        let train_set = self.samples(Split::Train, self.train_condition()?, kind)?;
        let val_set = self.samples(Split::Validation, self.eval_condition()?, kind)?;
        let outcome = train(&model_cfg, &train_set, &val_set, &self.train_options()?)?;
        checkpoint::save(self.layout.best_checkpoint(), &outcome.best)?;
        write_history(File::create(self.layout.reports().join("history.csv"))?, &outcome.history)?;
        Ok(outcome)
    }

    /// Loads `checkpoint` (or the default best checkpoint).
    pub fn load_model(&self) -> Result<Model> {
        let path = match self.config.get_str("checkpoint") {
            Some(p) => PathBuf::from(p),
            None => self.layout.best_checkpoint(),
        };
        checkpoint::load(path)
    }

    /// UA on validation and test splits; rows `(split, condition, ua)`.
    pub fn evaluate(&mut self, model: &Model) -> Result<Vec<(Split, Condition, f64)>> {
        self.layout.create()?;
        let cond = self.eval_condition()?;
        let kind = model.config.input_kind().feature_kind();
        let mut rows = Vec::new();
        for split in [Split::Validation, Split::Test] {
            let set = self.samples(split, cond, kind)?;
            rows.push((split, cond, evaluate_ua(model, &set)?));
        }
        let mut w = csv::Writer::from_path(self.layout.reports().join("eval.csv"))?;
        w.write_record(["split", "condition", "ua"])?;
        for (s, c, ua) in &rows {
            w.write_record([s.name(), c.name(), &ua.to_string()])?;
        }
        w.flush()?;
        Ok(rows)
    }

    /// Probe items for every utterance under `probe_condition`.
    pub fn probe_items(&mut self, kind: crate::dsp::FeatureKind) -> Result<Vec<ProbeItem>> {
        let cond = self.condition("probe_condition", Condition::Clean)?;
        let mut items = Vec::new();
        for split in [Split::Train, Split::Validation, Split::Test] {
            let samples = self.samples(split, cond, kind)?;
            for s in samples {
                let parent = s.id.strip_prefix("noisy/").map(|p| p.split("__").next().unwrap_or(p).to_string());
                let parent = parent.unwrap_or_else(|| s.id.clone());
                let speaker = self
                    .clean
                    .iter()
                    .find(|e| e.id() == parent)
                    .map(|e| e.speaker.clone())
                    .ok_or_else(|| Error::Format(format!("no parent for `{}`", s.id)))?;
                let gender = self.genders.get(&speaker).cloned().unwrap_or_else(|| "unknown".into());
                items.push(ProbeItem {
                    id: s.id,
                    input: s.input,
                    emotion: s.label,
                    speaker,
                    gender,
                    split,
                });
            }
        }
        Ok(items)
    }

    /// Probes `model` and writes `probe.csv` plus one scatter file per
    /// (tap, label type).
    pub fn probe(&mut self, model: &Model) -> Result<ProbeReport> {
        self.layout.create()?;
        let items = self.probe_items(model.config.input_kind().feature_kind())?;
        let name = model.config.variant().to_string();
        let report = probe_all(model, &name, &items, self.n_classes(), derived_seed(self.seed, STREAM_PROBE))?;
        write_report(File::create(self.layout.reports().join("probe.csv"))?, &report.rows)?;
        for ((tap, label), points) in &report.scatter {
            let path = self
                .layout
                .reports()
                .join(format!("scatter_{}_{}.csv", tap.name(), label.name()));
            write_scatter(File::create(path)?, points)?;
        }
        Ok(report)
    }
}

/// Summary of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub layout: Layout,
    pub best_epoch: usize,
    pub eval: Vec<(Split, Condition, f64)>,
    pub probe: Option<ProbeReport>,
}

/// Features, partition, optional augmentation, training, evaluation and
/// (when `probe = true`) probing.
pub fn run_experiment(config: &Config) -> Result<RunSummary> {
    let mut exp = Experiment::load(config)?;
    exp.write_features()?;
    exp.write_partition()?;
    let noisy = exp.train_condition()? == Condition::Noisy || exp.eval_condition()? == Condition::Noisy;
    if noisy {
        exp.write_augmented()?;
    }
    let outcome = exp.train()?;
    let eval = exp.evaluate(&outcome.best)?;
    let probe = if config.get_or("probe", false)? {
        Some(exp.probe(&outcome.best)?)
    } else {
        None
    };
    Ok(RunSummary {
        layout: exp.layout.clone(),
        best_epoch: outcome.best_epoch,
        eval,
        probe,
    })
}

/// Edge-clamped running median with an odd window.
pub fn median_filter(xs: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    let n = xs.len();
    (0..n)
        .map(|i| {
            let mut w: Vec<f64> = (0..=2 * half)
                .map(|k| xs[(i + k).saturating_sub(half).min(n - 1)])
                .collect();
            w.sort_by(f64::total_cmp);
            w[half]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub seed: u64,
    pub val_ua_clean: f64,
    pub val_ua_noisy: f64,
}

/// One training run per value of `param` (e.g. `h1`) under each condition,
/// reporting best validation UA. Cell seeds derive from the base seed and
/// the value.
pub fn run_sweep(config: &Config, param: &str, values: &[usize], median_window: usize) -> Result<Vec<SweepRow>> {
    let base = Experiment::load(config)?;
    if values.is_empty() {
        return Err(Error::config(param, "sweep needs at least one value"));
    }
    for &v in values {
        Experiment::load_with_partition(&base.config.clone().with(param, v), &base)?.model_config()?;
    }
    let mut rows = Vec::new();
    for &v in values {
        let cell_seed = derived_seed(base.seed, 1000 + v as u64);
        let mut uas = [0.0; 2];
        for (k, cond) in [Condition::Clean, Condition::Noisy].into_iter().enumerate() {
            let mut c = base.config.clone();
            c.set(param, v)
                .set("condition", cond.name())
                .set("eval_condition", cond.name())
                .set("name", format!("{}_sweep_{param}{v}_{}", config.get_str("name").unwrap_or("experiment"), cond.name()));
            let mut exp = Experiment::load_with_partition(&c, &base)?;
            exp.seed = cell_seed;
            let model_cfg = exp.model_config()?;
            let kind = model_cfg.input_kind().feature_kind();
            let train_set = exp.samples(Split::Train, cond, kind)?;
            let val_set = exp.samples(Split::Validation, cond, kind)?;
            let outcome = train(&model_cfg, &train_set, &val_set, &exp.train_options()?)?;
            uas[k] = evaluate_ua(&outcome.best, &val_set)?;
        }
        rows.push(SweepRow {
            value: v,
            seed: cell_seed,
            val_ua_clean: uas[0],
            val_ua_noisy: uas[1],
        });
    }
    base.layout.create()?;
    let clean_med = median_filter(&rows.iter().map(|r| r.val_ua_clean).collect::<Vec<_>>(), median_window);
    let noisy_med = median_filter(&rows.iter().map(|r| r.val_ua_noisy).collect::<Vec<_>>(), median_window);
    let mut w = csv::Writer::from_path(base.layout.reports().join("sweep.csv"))?;
    w.write_record([
        param,
        "seed",
        "val_ua_clean",
        "val_ua_noisy",
        "val_ua_clean_median",
        "val_ua_noisy_median",
    ])?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([
            r.value.to_string(),
            r.seed.to_string(),
            r.val_ua_clean.to_string(),
            r.val_ua_noisy.to_string(),
            clean_med[i].to_string(),
            noisy_med[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

impl Experiment {
    /// Shares the corpus, audio and partition of `base` under a new config.
    fn load_with_partition(config: &Config, base: &Experiment) -> Result<Self> {
        let name = config.get_str("name").unwrap_or("experiment").to_string();
        let out = config.get_str("out").unwrap_or("out").to_string();
        Ok(Self {
            config: config.clone(),
            layout: Layout::new(out, &name),
            seed: base.seed,
            clean: base.clean.clone(),
            audio: base.audio.clone(),
            genders: base.genders.clone(),
            labels: base.labels.clone(),
            partition: base.partition.clone(),
            extractor: base.extractor.clone(),
            noise: base.noise.clone(),
            augmented: None,
        })
    }
}

/// Writes a synthetic corpus described by `classes`, `speakers`,
/// `utterances`, `min_secs`, `max_secs`, `n_noise_clips` and `seed` into
/// `dir`.
pub fn run_synth(config: &Config, dir: impl AsRef<Path>) -> Result<SynthCorpus> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        n_classes: config.get_or("classes", d.n_classes)?,
        n_speakers: config.get_or("speakers", d.n_speakers)?,
        utterances_per_speaker_per_class: config.get_or("utterances", d.utterances_per_speaker_per_class)?,
        duration: (
            config.get_or("min_secs", d.duration.0)?,
            config.get_or("max_secs", d.duration.1)?,
        ),
        seed: config.get_or("seed", d.seed)?,
    };
    write_corpus(&spec, config.get_or("n_noise_clips", 20)?, dir)
}

/// Reads an augmented manifest written earlier.
pub fn load_augmented(path: impl AsRef<Path>) -> Result<Vec<AugmentedEntry>> {
    read_augmented_manifest(path)
}
