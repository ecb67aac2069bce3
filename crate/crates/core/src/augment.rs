//! Additive-noise augmentation at controlled signal-to-noise ratios.

use rand::seq::index;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AugmentedEntry, CleanEntry};
use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// A noise recording with nonzero power.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseClip {
    pub id: String,
    pub samples: Waveform,
}

impl NoiseClip {
    pub fn new(id: impl Into<String>, samples: Waveform) -> Result<Self> {
        let id = id.into();
        if samples.is_empty() || rms_power(&samples) <= 0.0 {
            return Err(Error::CannotComputeSnr(format!("noise clip `{id}` is silent")));
        }
        Ok(Self { id, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub n_noise: usize,
    pub n_snr: usize,
    pub snr_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            n_noise: 20,
            n_snr: 3,
            snr_range: (-10.0, 15.0),
            seed: 0,
        }
    }
}

/// Mean of squared samples.
pub fn rms_power(w: &Waveform) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    w.samples.iter().map(|x| x * x).sum::<f64>() / w.len() as f64
}

/// The noise segment that covers `len` samples starting at `offset`,
/// looping the clip cyclically.
pub fn noise_segment(noise: &NoiseClip, offset: usize, len: usize) -> Vec<f64> {
    let n = noise.len();
    (0..len).map(|i| noise.samples.samples[(offset + i) % n]).collect()
}

/// Gain applied to the noise segment so that the mix has the requested SNR.
pub fn snr_gain(p_clean: f64, p_noise: f64, snr_db: f64) -> f64 {
    (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Adds `noise` (looped from `offset`) to `clean` at `snr_db`, measured over
/// the whole utterance. Output length equals the clean length.
pub fn mix_at_snr(clean: &Waveform, noise: &NoiseClip, snr_db: f64, offset: usize) -> Result<Waveform> {
    let p_clean = rms_power(clean);
    if p_clean <= 0.0 {
        return Err(Error::CannotComputeSnr("clean utterance is silent".into()));
    }
    if noise.is_empty() {
        return Err(Error::CannotComputeSnr(format!("noise clip `{}` is empty", noise.id)));
    }
    let segment = noise_segment(noise, offset % noise.len(), clean.len());
    let p_noise = segment.iter().map(|x| x * x).sum::<f64>() / segment.len() as f64;
    if p_noise <= 0.0 {
        return Err(Error::CannotComputeSnr(format!(
            "noise clip `{}` is silent over the mixed segment",
            noise.id
        )));
    }
    let g = snr_gain(p_clean, p_noise, snr_db);
    let samples = clean
        .samples
        .iter()
        .zip(&segment)
        .map(|(c, n)| c + g * n)
        .collect();
    Ok(Waveform::new(samples, clean.sample_rate))
}

/// Measured SNR in dB of `mixed` relative to its clean component.
pub fn measured_snr_db(clean: &Waveform, mixed: &Waveform) -> f64 {
    let residual: Vec<f64> = mixed
        .samples
        .iter()
        .zip(&clean.samples)
        .map(|(m, c)| m - c)
        .collect();
    let p_noise = residual.iter().map(|x| x * x).sum::<f64>() / residual.len() as f64;
    10.0 * (rms_power(clean) / p_noise).log10()
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-utterance seed: the run seed mixed with a hash of the utterance index.
pub fn utterance_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

/// Draws the mixes for every clean utterance.
///
/// Each utterance gets `n_noise` distinct clips and `n_snr` SNR levels; every
/// (clip, level) pair becomes one entry, so `|out| = |clean| * n_noise * n_snr`.
pub fn augment_corpus(
    clean: &[CleanEntry],
    pool: &[NoiseClip],
    config: &AugmentConfig,
) -> Result<Vec<AugmentedEntry>> {
    if pool.is_empty() || pool.len() < config.n_noise {
        return Err(Error::PoolTooSmall {
            pool: pool.len(),
            needed: config.n_noise.max(1),
        });
    }
    let (lo, hi) = config.snr_range;
    if !(lo <= hi) {
        return Err(Error::config("snr_range", format!("empty interval [{lo}, {hi}]")));
    }
    let mut out = Vec::with_capacity(clean.len() * config.n_noise * config.n_snr);
    for (u, entry) in clean.iter().enumerate() {
        let seed = utterance_seed(config.seed, u);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clips = index::sample(&mut rng, pool.len(), config.n_noise).into_vec();
        let snrs: Vec<f64> = (0..config.n_snr)
            .map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) })
            .collect();
        let parent_id = entry.id();
        for &c in &clips {
            let clip = &pool[c];
            for (k, &snr_db) in snrs.iter().enumerate() {
                let offset = rng.random_range(0..clip.len());
                out.push(AugmentedEntry {
                    path: format!("noisy/{parent_id}__{}__{k}", clip.id),
                    speaker: entry.speaker.clone(),
                    label: entry.label.clone(),
                    parent_id: parent_id.clone(),
                    noise_id: clip.id.clone(),
                    snr_db,
                    offset,
                    seed,
                });
            }
        }
    }
    Ok(out)
}

/// Regenerates the audio of one augmented entry.
pub fn render_mix(entry: &AugmentedEntry, clean: &Waveform, pool: &[NoiseClip]) -> Result<Waveform> {
    let clip = pool
        .iter()
        .find(|c| c.id == entry.noise_id)
        .ok_or_else(|| Error::Format(format!("unknown noise id `{}`", entry.noise_id)))?;
    mix_at_snr(clean, clip, entry.snr_db, entry.offset)
}
