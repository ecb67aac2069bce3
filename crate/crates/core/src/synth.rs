//! Synthetic labelled corpus and noise pool.
//!
//! Each class is a harmonic stack with its own spectral tilt, formant bump
//! and amplitude-modulation rate. Speakers shift the fundamental; even
//! speakers are `f` and sit higher, odd speakers are `m`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{utterance_seed, NoiseClip};
use crate::corpus::{write_clean_manifest, write_noise_manifest, write_speakers, CleanEntry, NoiseEntry, SpeakerEntry};
use crate::dsp::write_wav;
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_speakers: usize,
    pub utterances_per_speaker_per_class: usize,
    /// Duration range in seconds.
    pub duration: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 6,
            n_speakers: 4,
            utterances_per_speaker_per_class: 5,
            duration: (0.25, 0.35),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.n_classes > 12 {
            return Err(Error::config("classes", "must be between 2 and 12"));
        }
        if self.n_speakers == 0 || self.utterances_per_speaker_per_class == 0 {
            return Err(Error::config("speakers", "speaker and utterance counts must be positive"));
        }
        let (lo, hi) = self.duration;
        if !(lo >= 0.05 && hi >= lo) {
            return Err(Error::config("duration", "need 0.05 <= min <= max seconds"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_classes * self.n_speakers * self.utterances_per_speaker_per_class
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn class_label(c: usize) -> String {
    format!("e{c:02}")
}

pub fn speaker_name(s: usize) -> String {
    format!("spk{s:02}")
}

pub fn speaker_gender(s: usize) -> &'static str {
    if s % 2 == 0 {
        "f"
    } else {
        "m"
    }
}

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub id: String,
    pub speaker: String,
    pub gender: String,
    pub label: String,
    pub class: usize,
    pub waveform: Waveform,
}

struct ClassTemplate {
    tilt: f64,
    formant: f64,
    am_rate: f64,
}

fn template(c: usize, n: usize) -> ClassTemplate {
    let u = c as f64 / (n - 1) as f64;
    ClassTemplate {
        tilt: 0.7 + 0.3 * ((c * 7 % n) as f64 / (n - 1) as f64),
        formant: 500.0 * (8.0f64).powf(u),
        am_rate: 4.0 + 3.0 * (c as f64),
    }
}

fn render<R: Rng + ?Sized>(class: &ClassTemplate, f0: f64, secs: f64, rng: &mut R) -> Vec<f64> {
    let n = (secs * SAMPLE_RATE as f64).round() as usize;
    let sr = SAMPLE_RATE as f64;
    let n_harm = ((7000.0 / f0).floor() as usize).max(1);
    let amps: Vec<f64> = (1..=n_harm)
        .map(|k| {
            let f = k as f64 * f0;
            let bump = 1.0 + 0.5 * (-((f - class.formant) / (0.25 * class.formant)).powi(2)).exp();
            (k as f64).powf(-class.tilt) * bump
        })
        .collect();
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let am_phase = rng.random_range(0.0..2.0 * PI);
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let am = 1.0 + 0.8 * (2.0 * PI * class.am_rate * t + am_phase).sin();
            let s: f64 = amps
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(k, (a, p))| a * (2.0 * PI * (k + 1) as f64 * f0 * t + p).sin())
                .sum();
            am * s + 1e-3 * rng.random_range(-1.0..1.0)
        })
        .collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

/// Generates every utterance in (speaker, class, index) order.
pub fn synth_utterances(spec: &SynthSpec) -> Result<Vec<SynthUtterance>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.len());
    let mut idx = 0;
    for s in 0..spec.n_speakers {
        let gender = speaker_gender(s);
        let base = if gender == "f" { 210.0 } else { 120.0 };
        let f0_speaker = base * (1.0 + 0.04 * (s / 2) as f64);
        for c in 0..spec.n_classes {
            let tpl = template(c, spec.n_classes);
            for k in 0..spec.utterances_per_speaker_per_class {
                let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(spec.seed, idx));
                idx += 1;
                let (lo, hi) = spec.duration;
                let secs = if hi > lo { rng.random_range(lo..hi) } else { lo };
                let f0 = f0_speaker * rng.random_range(0.97..1.03);
                let samples = render(&tpl, f0, secs, &mut rng);
                out.push(SynthUtterance {
                    id: format!("{}_{}_{k:02}", speaker_name(s), class_label(c)),
                    speaker: speaker_name(s),
                    gender: gender.to_string(),
                    label: class_label(c),
                    class: c,
                    waveform: Waveform::new(samples, SAMPLE_RATE),
                });
            }
        }
    }
    Ok(out)
}

/// Coloured noise clips: first-order filtered white noise with a per-clip
/// pole, some with a low hum.
pub fn synth_noise_pool(n_clips: usize, secs: f64, seed: u64) -> Result<Vec<NoiseClip>> {
    let len = (secs * SAMPLE_RATE as f64).round() as usize;
    (0..n_clips)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(seed ^ 0x6e6f_6973_6500, i));
            let pole = -0.9 + 1.8 * i as f64 / (n_clips.max(2) - 1) as f64;
            let hum = if i % 3 == 0 { rng.random_range(50.0..400.0) } else { 0.0 };
            let mut prev = 0.0;
            let samples: Vec<f64> = (0..len)
                .map(|t| {
                    prev = pole * prev + rng.random_range(-1.0..1.0);
                    let h = if hum > 0.0 {
                        0.5 * (2.0 * PI * hum * t as f64 / SAMPLE_RATE as f64).sin()
                    } else {
                        0.0
                    };
                    0.2 * prev + h
                })
                .collect();
            NoiseClip::new(format!("noise{i:02}"), Waveform::new(samples, SAMPLE_RATE))
        })
        .collect()
}

/// Paths written by [`write_corpus`].
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: PathBuf,
    pub speakers: PathBuf,
    pub noise_manifest: PathBuf,
    pub entries: Vec<CleanEntry>,
}

/// Writes `wav/*.wav`, `manifest.csv`, `speakers.csv`, and a noise pool of
/// `n_noise` one-second clips under `noise/` with `noise.csv`.
pub fn write_corpus(spec: &SynthSpec, n_noise: usize, dir: impl AsRef<Path>) -> Result<SynthCorpus> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("wav"))?;
    fs::create_dir_all(dir.join("noise"))?;
    let utts = synth_utterances(spec)?;
    let mut entries = Vec::with_capacity(utts.len());
    for u in &utts {
        let rel = PathBuf::from("wav").join(format!("{}.wav", u.id));
        write_wav(dir.join(&rel), &u.waveform)?;
        entries.push(CleanEntry {
            path: rel,
            speaker: u.speaker.clone(),
            label: u.label.clone(),
        });
    }
    let speakers: Vec<SpeakerEntry> = (0..spec.n_speakers)
        .map(|s| SpeakerEntry {
            speaker: speaker_name(s),
            gender: speaker_gender(s).to_string(),
        })
        .collect();
    let mut noise_rows = Vec::new();
    for clip in synth_noise_pool(n_noise, 1.0, spec.seed)? {
        let rel = PathBuf::from("noise").join(format!("{}.wav", clip.id));
        write_wav(dir.join(&rel), &clip.samples)?;
        noise_rows.push(NoiseEntry { path: rel, id: clip.id });
    }
    let out = SynthCorpus {
        manifest: dir.join("manifest.csv"),
        speakers: dir.join("speakers.csv"),
        noise_manifest: dir.join("noise.csv"),
        entries,
    };
    write_clean_manifest(&out.manifest, &out.entries)?;
    write_speakers(&out.speakers, &speakers)?;
    write_noise_manifest(&out.noise_manifest, &noise_rows)?;
    Ok(out)
}
