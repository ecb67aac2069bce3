//! Audio front end: framing, power spectra, log-Mel filterbank energies,
//! cepstral coefficients and context splicing.
//!
//! All arithmetic is `f64`. Extraction is a pure function of the waveform
//! samples, so identical input always yields bitwise-identical features.

mod io;
mod mel;
mod splice;

pub use io::{read_feature_dump, read_wav, write_feature_dump, write_wav};
pub use mel::{dct_filters, hz_to_mel, mel_to_hz, mfcc_from_logmels, MelFilterBank};
pub use splice::{splice, SplicedSequence};

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    LogMel,
    Mfcc,
}

impl FeatureKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            FeatureKind::LogMel => 0,
            FeatureKind::Mfcc => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::LogMel),
            1 => Some(FeatureKind::Mfcc),
            _ => None,
        }
    }
}

/// A `T x D` matrix of per-frame spectral vectors for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSequence {
    pub frames: Array2<f64>,
    pub kind: FeatureKind,
    pub frame_shift: f64,
}

impl SpectralSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Front-end settings. The defaults are the 16 kHz pipeline preset.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub win_sec: f64,
    pub hop_sec: f64,
    pub fft_size: usize,
    pub num_banks: usize,
    pub f_low: f64,
    pub f_high: f64,
    /// Mel energies are clamped at this value before the log.
    pub log_floor: f64,
    pub num_cepstra: usize,
    pub splice_left: usize,
    pub splice_right: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            win_sec: 0.025,
            hop_sec: 0.010,
            fft_size: 512,
            num_banks: 40,
            f_low: 20.0,
            f_high: 7600.0,
            log_floor: 1e-10,
            num_cepstra: 13,
            splice_left: 10,
            splice_right: 5,
        }
    }
}

/// Symmetric Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

/// Cuts the signal into Hann-windowed frames, one per row.
///
/// Window and hop lengths are rounded to the nearest sample. Trailing
/// samples that do not fill a whole window are dropped.
pub fn frame_signal(w: &Waveform, win_sec: f64, hop_sec: f64) -> Result<Array2<f64>> {
    let win = (win_sec * w.sample_rate as f64).round() as usize;
    let hop = (hop_sec * w.sample_rate as f64).round() as usize;
    if win < 2 || hop == 0 {
        return Err(Error::Geometry(format!(
            "window of {win} samples / hop of {hop} samples is not usable"
        )));
    }
    if w.len() < win {
        return Err(Error::EmptySignal {
            len: w.len(),
            window: win,
        });
    }
    let n_frames = (w.len() - win) / hop + 1;
    let window = hann_window(win);
    let mut frames = Array2::zeros((n_frames, win));
    for (t, mut row) in frames.axis_iter_mut(Axis(0)).enumerate() {
        let start = t * hop;
        for (j, v) in row.iter_mut().enumerate() {
            *v = w.samples[start + j] * window[j];
        }
    }
    Ok(frames)
}

/// Reusable FFT plan for one-sided power spectra.
///
/// Entry `k` is `|X_k|^2` of the unnormalised DFT `X_k = sum_n x_n e^{-2 pi i k n / N}`,
/// so Parseval reads `sum x_n^2 = (|X_0|^2 + 2 sum_{0<k<N/2} |X_k|^2 + |X_{N/2}|^2) / N`.
#[derive(Clone)]
pub struct PowerSpectrum {
    fft_size: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PowerSpectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PowerSpectrum")
            .field("fft_size", &self.fft_size)
            .finish()
    }
}

impl PowerSpectrum {
    pub fn new(fft_size: usize) -> Result<Self> {
        if fft_size < 2 || !fft_size.is_power_of_two() {
            return Err(Error::Geometry(format!(
                "FFT size {fft_size} is not a power of two >= 2"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        Ok(Self { fft_size, fft })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Zero-pads `frame` to the FFT size and returns the one-sided power spectrum.
    pub fn compute(&self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() > self.fft_size {
            return Err(Error::Geometry(format!(
                "frame of {} samples exceeds FFT size {}",
                frame.len(),
                self.fft_size
            )));
        }
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.fft_size)
            .collect();
        self.fft.process(&mut buf);
        Ok(buf[..self.num_bins()].iter().map(|c| c.norm_sqr()).collect())
    }
}

/// One-shot convenience wrapper around [`PowerSpectrum`].
pub fn power_spectrum(frame: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    PowerSpectrum::new(fft_size)?.compute(frame)
}

/// Log-Mel / MFCC extractor with a prebuilt filterbank and FFT plan.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: FrontendConfig,
    filterbank: MelFilterBank,
    spectrum: PowerSpectrum,
}

impl FeatureExtractor {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        let filterbank = MelFilterBank::new(
            config.num_banks,
            config.fft_size,
            SAMPLE_RATE,
            config.f_low,
            config.f_high,
        )?;
        let spectrum = PowerSpectrum::new(config.fft_size)?;
        Ok(Self {
            config,
            filterbank,
            spectrum,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterBank {
        &self.filterbank
    }

    fn check_rate(w: &Waveform) -> Result<()> {
        if w.sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedRate(format!(
                "{} Hz (expected {SAMPLE_RATE} Hz)",
                w.sample_rate
            )));
        }
        Ok(())
    }

    pub fn log_mels(&self, w: &Waveform) -> Result<SpectralSequence> {
        Self::check_rate(w)?;
        let frames = frame_signal(w, self.config.win_sec, self.config.hop_sec)?;
        let m = self.filterbank.num_banks();
        let mut out = Array2::zeros((frames.nrows(), m));
        for (t, frame) in frames.axis_iter(Axis(0)).enumerate() {
            let power = self.spectrum.compute(frame.as_slice().expect("row-major frames"))?;
            let energies = self.filterbank.apply(&power);
            for (b, e) in energies.into_iter().enumerate() {
                out[[t, b]] = e.max(self.config.log_floor).ln();
            }
        }
        Ok(SpectralSequence {
            frames: out,
            kind: FeatureKind::LogMel,
            frame_shift: self.config.hop_sec,
        })
    }

    pub fn mfccs(&self, w: &Waveform) -> Result<SpectralSequence> {
        mfcc_from_logmels(&self.log_mels(w)?, self.config.num_cepstra)
    }

    pub fn features(&self, w: &Waveform, kind: FeatureKind) -> Result<SpectralSequence> {
        match kind {
            FeatureKind::LogMel => self.log_mels(w),
            FeatureKind::Mfcc => self.mfccs(w),
        }
    }

    /// Features spliced with the configured left/right context.
    pub fn spliced(&self, w: &Waveform, kind: FeatureKind) -> Result<SplicedSequence> {
        let seq = self.features(w, kind)?;
        Ok(splice(&seq, self.config.splice_left, self.config.splice_right))
    }
}

/// Log-Mel energies of `w` under `fb` with the default framing and floor.
pub fn log_mels(w: &Waveform, fb: &MelFilterBank) -> Result<SpectralSequence> {
    let config = FrontendConfig {
        num_banks: fb.num_banks(),
        fft_size: fb.fft_size(),
        ..FrontendConfig::default()
    };
    let extractor = FeatureExtractor {
        spectrum: PowerSpectrum::new(config.fft_size)?,
        filterbank: fb.clone(),
        config,
    };
    extractor.log_mels(w)
}
