//! Filterbanks mapping STFT power onto mel, pitch-class and constant-Q axes.

use super::{FeatureError, Matrix, Spectrogram, SpectrogramKind};

const MEL_F_SP: f64 = 200.0 / 3.0;
const MEL_MIN_LOG_HZ: f64 = 1000.0;
const MEL_MIN_LOG_MEL: f64 = MEL_MIN_LOG_HZ / MEL_F_SP;

fn mel_logstep() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MEL_MIN_LOG_HZ {
        MEL_MIN_LOG_MEL + (hz / MEL_MIN_LOG_HZ).ln() / mel_logstep()
    } else {
        hz / MEL_F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MEL_MIN_LOG_MEL {
        MEL_MIN_LOG_HZ * (mel_logstep() * (mel - MEL_MIN_LOG_MEL)).exp()
    } else {
        mel * MEL_F_SP
    }
}

fn fft_frequencies(n_fft: usize, sample_rate: u32) -> Vec<f64> {
    (0..=n_fft / 2)
        .map(|b| b as f64 * sample_rate as f64 / n_fft as f64)
        .collect()
}

fn power_input(spec: &Spectrogram) -> std::borrow::Cow<'_, Matrix> {
    match spec.kind {
        SpectrogramKind::Power => std::borrow::Cow::Borrowed(&spec.values),
        SpectrogramKind::Magnitude => std::borrow::Cow::Owned(spec.values.map(|v| v * v)),
    }
}

/// Triangular mel filters with Slaney area normalization (each triangle
/// scaled by `2 / (f_hi - f_lo)`).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Vec<Vec<f64>>,
    centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_fft: usize, sample_rate: u32, n_mels: usize, fmin: f64, fmax: f64) -> Self {
        let lo = hz_to_mel(fmin);
        let hi = hz_to_mel(fmax);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let freqs = fft_frequencies(n_fft, sample_rate);
        let weights = (0..n_mels)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                let norm = 2.0 / (r - l);
                freqs
                    .iter()
                    .map(|&f| {
                        let up = (f - l) / (c - l);
                        let down = (r - f) / (r - c);
                        up.min(down).max(0.0) * norm
                    })
                    .collect()
            })
            .collect();
        Self {
            weights,
            centers: edges[1..=n_mels].to_vec(),
        }
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Center frequency of each band in Hz.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn apply(&self, spec: &Spectrogram) -> Spectrogram {
        let values = Matrix::apply_rows(&self.weights, &power_input(spec));
        Spectrogram {
            values,
            kind: SpectrogramKind::Power,
            frame_params: spec.frame_params,
            sample_rate: spec.sample_rate,
        }
    }
}

/// Width (standard deviation, in semitones) of the pitch-class kernel.
pub const CHROMA_SIGMA: f64 = 0.5;

/// Projects every non-DC STFT bin onto the 12 pitch classes (0 = C) with a
/// circular Gaussian around the bin's fractional pitch class. Each bin's
/// weights sum to one, so chroma energy equals non-DC spectral energy.
#[derive(Debug, Clone)]
pub struct ChromaFilterbank {
    weights: Vec<Vec<f64>>,
}

impl ChromaFilterbank {
    pub fn new(n_fft: usize, sample_rate: u32) -> Self {
        let freqs = fft_frequencies(n_fft, sample_rate);
        let mut weights = vec![vec![0.0; freqs.len()]; 12];
        for (b, &f) in freqs.iter().enumerate().skip(1) {
            // A4 = 440 Hz is MIDI 69, pitch class 9
            let pc = (12.0 * (f / 440.0).log2() + 69.0).rem_euclid(12.0);
            let g: Vec<f64> = (0..12)
                .map(|k| {
                    let d = (pc - k as f64 + 6.0).rem_euclid(12.0) - 6.0;
                    (-0.5 * (d / CHROMA_SIGMA).powi(2)).exp()
                })
                .collect();
            let total: f64 = g.iter().sum();
            for (k, w) in g.into_iter().enumerate() {
                weights[k][b] = w / total;
            }
        }
        Self { weights }
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn apply(&self, spec: &Spectrogram) -> Matrix {
        Matrix::apply_rows(&self.weights, &power_input(spec))
    }
}

/// Constant-Q triangles applied in the STFT domain.
///
/// Bin `k` peaks at `fmin * 2^(k / bins_per_octave)` and falls to zero at
/// its geometric neighbours. Below roughly 250 Hz a semitone is narrower than
/// one STFT bin, so each slope is widened to at least one bin spacing.
#[derive(Debug, Clone)]
pub struct PseudoCqtFilterbank {
    weights: Vec<Vec<f64>>,
    centers: Vec<f64>,
}

impl PseudoCqtFilterbank {
    pub fn new(
        n_fft: usize,
        sample_rate: u32,
        n_bins: usize,
        bins_per_octave: usize,
        fmin: f64,
    ) -> Self {
        let freqs = fft_frequencies(n_fft, sample_rate);
        let spacing = sample_rate as f64 / n_fft as f64;
        let step = 2f64.powf(1.0 / bins_per_octave as f64);
        let centers: Vec<f64> = (0..n_bins)
            .map(|k| fmin * 2f64.powf(k as f64 / bins_per_octave as f64))
            .collect();
        let weights = centers
            .iter()
            .map(|&c| {
                let left = (c - c / step).max(spacing);
                let right = (c * step - c).max(spacing);
                freqs
                    .iter()
                    .map(|&f| {
                        let w = if f <= c {
                            1.0 - (c - f) / left
                        } else {
                            1.0 - (f - c) / right
                        };
                        w.max(0.0)
                    })
                    .collect()
            })
            .collect();
        Self { weights, centers }
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn apply(&self, spec: &Spectrogram) -> Matrix {
        Matrix::apply_rows(&self.weights, &power_input(spec))
    }
}

/// Fold a 12-bins-per-octave constant-Q matrix (starting at C) into pitch
/// classes: class `c` sums bins `12 * octave + c`.
pub fn chroma_cqt(pcqt: &Matrix) -> Result<Matrix, FeatureError> {
    if !pcqt.rows().is_multiple_of(12) {
        return Err(FeatureError::Dimension(pcqt.rows()));
    }
    let mut out = Matrix::zeros(12, pcqt.cols());
    for t in 0..pcqt.cols() {
        let src = pcqt.col(t);
        let dst = out.col_mut(t);
        for (k, v) in src.iter().enumerate() {
            dst[k % 12] += v;
        }
    }
    Ok(out)
}
