use ndarray::{s, Array2};

use super::{FeatureKind, SpectralSequence};
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with centres equally spaced on the Mel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterBank {
    /// `num_banks x (fft_size / 2 + 1)` nonnegative weights.
    pub weights: Array2<f64>,
    /// `num_banks + 2` edge frequencies in Hz; filter `m` spans
    /// `band_edges[m]..band_edges[m + 2]` and peaks at `band_edges[m + 1]`.
    pub band_edges: Vec<f64>,
    fft_size: usize,
}

impl MelFilterBank {
    pub fn new(
        num_banks: usize,
        fft_size: usize,
        sample_rate: u32,
        f_low: f64,
        f_high: f64,
    ) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if num_banks == 0 {
            return Err(Error::BadBandEdges("need at least one filter".into()));
        }
        if !(f_low >= 0.0 && f_low < f_high && f_high <= nyquist) {
            return Err(Error::BadBandEdges(format!(
                "require 0 <= f_low < f_high <= {nyquist}, got {f_low}..{f_high}"
            )));
        }
        let (mel_lo, mel_hi) = (hz_to_mel(f_low), hz_to_mel(f_high));
        let step = (mel_hi - mel_lo) / (num_banks + 1) as f64;
        let mel_edges: Vec<f64> = (0..num_banks + 2)
            .map(|i| mel_lo + step * i as f64)
            .collect();
        let n_bins = fft_size / 2 + 1;
        let bin_hz = sample_rate as f64 / fft_size as f64;

        let mut weights = Array2::zeros((num_banks, n_bins));
        for m in 0..num_banks {
            let (left, centre, right) = (mel_edges[m], mel_edges[m + 1], mel_edges[m + 2]);
            for k in 0..n_bins {
                let mel = hz_to_mel(k as f64 * bin_hz);
                let w = if mel > left && mel <= centre {
                    (mel - left) / (centre - left)
                } else if mel > centre && mel < right {
                    (right - mel) / (right - centre)
                } else {
                    0.0
                };
                weights[[m, k]] = w;
            }
            if weights.row(m).sum() <= 0.0 {
                return Err(Error::BadBandEdges(format!(
                    "filter {m} covers no FFT bin; use fewer filters or a larger FFT"
                )));
            }
        }
        Ok(Self {
            weights,
            band_edges: mel_edges.into_iter().map(mel_to_hz).collect(),
            fft_size,
        })
    }

    pub fn num_banks(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    /// Peak frequency of each filter in Hz.
    pub fn centres(&self) -> &[f64] {
        &self.band_edges[1..self.band_edges.len() - 1]
    }

    /// Filterbank energies for one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Unnormalised DCT-II basis: entry `(k, m) = cos(k pi / M * (m + 1/2))`.
pub fn dct_filters(num_banks: usize) -> Array2<f64> {
    let m_f = num_banks as f64;
    Array2::from_shape_fn((num_banks, num_banks), |(k, m)| {
        (k as f64 * std::f64::consts::PI / m_f * (m as f64 + 0.5)).cos()
    })
}

/// Projects each log-Mel frame onto the first `keep` DCT rows.
pub fn mfcc_from_logmels(s: &SpectralSequence, keep: usize) -> Result<SpectralSequence> {
    if s.kind != FeatureKind::LogMel {
        return Err(Error::Shape("MFCCs are computed from log-Mels".into()));
    }
    let bands = s.dim();
    if keep == 0 || keep > bands {
        return Err(Error::BadOrder { keep, bands });
    }
    let dct = dct_filters(bands);
    let basis = dct.slice(s![..keep, ..]);
    Ok(SpectralSequence {
        frames: s.frames.dot(&basis.t()),
        kind: FeatureKind::Mfcc,
        frame_shift: s.frame_shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;

    #[test]
    fn mel_formula() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn preset_filterbank_shape_and_structure() {
        let fb = MelFilterBank::new(40, 512, SAMPLE_RATE, 20.0, 7600.0).unwrap();
        assert_eq!(fb.weights.dim(), (40, 257));
        assert!(fb.weights.iter().all(|&w| w >= 0.0));
        assert!(fb.centres().windows(2).all(|p| p[0] < p[1]));
        // adjacent filters overlap
        for m in 0..39 {
            let overlap = fb
                .weights
                .row(m)
                .iter()
                .zip(fb.weights.row(m + 1).iter())
                .any(|(a, b)| *a > 0.0 && *b > 0.0);
            assert!(overlap, "filters {m} and {} do not overlap", m + 1);
        }
        // every bin strictly inside the outer edges carries weight
        let lo = fb.band_edges[0];
        let hi = *fb.band_edges.last().unwrap();
        for k in 0..257 {
            let f = k as f64 * 16000.0 / 512.0;
            if f > lo && f < hi {
                assert!(fb.weights.column(k).sum() > 0.0, "bin {k} uncovered");
            }
        }
        // peaks land on the expected centre bins
        for m in 0..40 {
            let row = fb.weights.row(m);
            let peak = (0..257)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            let f = peak as f64 * 31.25;
            assert!((f - fb.centres()[m]).abs() <= 31.25 + 1e-9);
        }
    }

    #[test]
    fn bad_band_edges() {
        for (lo, hi) in [(100.0, 50.0), (0.0, 9000.0), (-1.0, 100.0)] {
            assert!(matches!(
                MelFilterBank::new(40, 512, SAMPLE_RATE, lo, hi),
                Err(Error::BadBandEdges(_))
            ));
        }
        assert!(MelFilterBank::new(0, 512, SAMPLE_RATE, 20.0, 7600.0).is_err());
    }

    #[test]
    fn dct_row_sums() {
        let d = dct_filters(40);
        assert!(d.row(0).iter().all(|&v| v == 1.0));
        for k in 1..40 {
            assert!(d.row(k).sum().abs() < 1e-10, "row {k}");
        }
        assert!((d.row(0).sum() - 40.0).abs() < 1e-10);
    }

    #[test]
    fn dct_matches_double_loop_and_rows_are_orthogonal() {
        let n = 17;
        let d = dct_filters(n);
        for k in 0..n {
            for m in 0..n {
                let want = ((k as f64) * std::f64::consts::PI * (2 * m + 1) as f64
                    / (2 * n) as f64)
                    .cos();
                assert!((d[[k, m]] - want).abs() < 1e-14);
            }
        }
        // D D^T = diag(N, N/2, ..., N/2)
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|m| d[[a, m]] * d[[b, m]]).sum();
                let want = match (a == b, a) {
                    (false, _) => 0.0,
                    (true, 0) => n as f64,
                    (true, _) => n as f64 / 2.0,
                };
                assert!((dot - want).abs() < 1e-10, "({a},{b}) {dot}");
            }
        }
    }

    fn logmel(frames: Array2<f64>) -> SpectralSequence {
        SpectralSequence {
            frames,
            kind: FeatureKind::LogMel,
            frame_shift: 0.01,
        }
    }

    #[test]
    fn constant_frame_cepstrum() {
        let c = -3.25;
        let s = logmel(Array2::from_elem((4, 40), c));
        let mfcc = mfcc_from_logmels(&s, 13).unwrap();
        assert_eq!(mfcc.frames.dim(), (4, 13));
        assert_eq!(mfcc.kind, FeatureKind::Mfcc);
        for t in 0..4 {
            assert!((mfcc.frames[[t, 0]] - 40.0 * c).abs() < 1e-10);
            for k in 1..13 {
                assert!(mfcc.frames[[t, k]].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn full_order_inverts_with_normalised_idct() {
        let m = 40;
        let s = logmel(Array2::from_shape_fn((3, m), |(t, j)| {
            ((t * 31 + j * 7) % 13) as f64 * 0.37 - 2.0
        }));
        let c = mfcc_from_logmels(&s, m).unwrap();
        for t in 0..3 {
            for j in 0..m {
                let mut x = c.frames[[t, 0]] / m as f64;
                for k in 1..m {
                    x += 2.0 / m as f64
                        * c.frames[[t, k]]
                        * (k as f64 * std::f64::consts::PI / m as f64 * (j as f64 + 0.5)).cos();
                }
                assert!((x - s.frames[[t, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn order_checks() {
        let s = logmel(Array2::zeros((2, 40)));
        assert!(matches!(
            mfcc_from_logmels(&s, 41),
            Err(Error::BadOrder { keep: 41, bands: 40 })
        ));
        let m = mfcc_from_logmels(&s, 13).unwrap();
        assert!(mfcc_from_logmels(&m, 5).is_err());
    }
}
