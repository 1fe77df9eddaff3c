//! Acoustic feature extraction.
//!
//! Ten features are computed from mono 16 kHz audio, each reduced to a
//! fixed-length [`FeatureSummary`] so that a reference and a generated
//! sample can be compared with cosine similarity regardless of duration:
//!
//! * matrix features (mel, tempogram, chroma, pseudo-CQT, CQT chroma) are
//!   averaged over time into one value per row;
//! * per-frame scalar tracks (pitch, RMS, centroid, flatness, roll-off) are
//!   linearly resampled onto [`CONTOUR_LEN`] points.
//!
//! All spectral matrices hold linear power; nothing is converted to dB.

mod filters;
mod matrix;
mod pitch;
mod rhythm;
mod spectral;
mod stft;
mod summary;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioBuffer, CANONICAL_RATE};

pub use filters::{chroma_cqt, ChromaFilterbank, MelFilterbank, PseudoCqtFilterbank};
pub use filters::{hz_to_mel, mel_to_hz};
pub use matrix::Matrix;
pub use pitch::{f0_contour, YinParams};
pub use rhythm::{onset_strength, tempogram, TEMPOGRAM_WIN};
pub use spectral::{spectral_centroid, spectral_flatness, spectral_rolloff, FLATNESS_FLOOR};
pub use stft::{frame_count, rms_envelope, stft, Stft};
pub use summary::{summarize, RawFeature, CONTOUR_LEN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("input too short: {len} samples (need at least 2)")]
    InputTooShort { len: usize },
    #[error("expected mono audio, got {0} channels")]
    NotMono(u16),
    #[error("expected {expected} Hz audio, got {actual} Hz")]
    SampleRate { expected: u32, actual: u32 },
    #[error("invalid frame parameters: {0}")]
    FrameParams(String),
    #[error("matrix with {0} rows cannot be folded into 12 pitch classes")]
    Dimension(usize),
    #[error("feature {0} has no frames")]
    EmptyFeature(FeatureId),
    #[error("{feature} summary has {actual} values, expected {expected}")]
    SummaryLength {
        feature: FeatureId,
        expected: usize,
        actual: usize,
    },
    #[error("unknown feature id '{0}'")]
    UnknownFeature(String),
}

/// Framing used by every frame-based extractor: Hann window, frames
/// centered on `t * hop` with reflect padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameParams {
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for FrameParams {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 256,
        }
    }
}

impl FrameParams {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return Err(FeatureError::FrameParams(format!(
                "n_fft {} is not a power of two",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(FeatureError::FrameParams(format!(
                "hop {} outside 1..={}",
                self.hop, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrogramKind {
    Magnitude,
    Power,
}

/// Non-negative time-frequency matrix, `[bins x frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Matrix,
    pub kind: SpectrogramKind,
    pub frame_params: FrameParams,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.values.rows()
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    /// Frequency in Hz of STFT bin `b`.
    pub fn bin_frequency(&self, b: usize) -> f64 {
        b as f64 * self.sample_rate as f64 / self.frame_params.n_fft as f64
    }

    pub fn to_power(&self) -> Spectrogram {
        match self.kind {
            SpectrogramKind::Power => self.clone(),
            SpectrogramKind::Magnitude => Spectrogram {
                values: self.values.map(|v| v * v),
                kind: SpectrogramKind::Power,
                ..*self
            },
        }
    }

    pub fn to_magnitude(&self) -> Spectrogram {
        match self.kind {
            SpectrogramKind::Magnitude => self.clone(),
            SpectrogramKind::Power => Spectrogram {
                values: self.values.map(f64::sqrt),
                kind: SpectrogramKind::Magnitude,
                ..*self
            },
        }
    }
}

/// The ten compared acoustic features, in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureId {
    Pitch,
    MelSpectrogram,
    Rms,
    SpectralCentroid,
    SpectralFlatness,
    SpectralRolloff,
    Tempogram,
    Chromagram,
    PseudoCqt,
    ChromaCqt,
}

impl FeatureId {
    pub const ALL: [FeatureId; 10] = [
        FeatureId::Pitch,
        FeatureId::MelSpectrogram,
        FeatureId::Rms,
        FeatureId::SpectralCentroid,
        FeatureId::SpectralFlatness,
        FeatureId::SpectralRolloff,
        FeatureId::Tempogram,
        FeatureId::Chromagram,
        FeatureId::PseudoCqt,
        FeatureId::ChromaCqt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureId::Pitch => "pitch",
            FeatureId::MelSpectrogram => "mel_spectrogram",
            FeatureId::Rms => "rms",
            FeatureId::SpectralCentroid => "spectral_centroid",
            FeatureId::SpectralFlatness => "spectral_flatness",
            FeatureId::SpectralRolloff => "spectral_rolloff",
            FeatureId::Tempogram => "tempogram",
            FeatureId::Chromagram => "chromagram",
            FeatureId::PseudoCqt => "pseudo_cqt",
            FeatureId::ChromaCqt => "chroma_cqt",
        }
    }

    /// Length of this feature's summary vector.
    pub fn summary_len(self) -> usize {
        match self {
            FeatureId::MelSpectrogram => N_MELS,
            FeatureId::Tempogram => TEMPOGRAM_WIN,
            FeatureId::Chromagram | FeatureId::ChromaCqt => 12,
            FeatureId::PseudoCqt => CQT_BINS,
            _ => CONTOUR_LEN,
        }
    }

    pub fn is_matrix(self) -> bool {
        matches!(
            self,
            FeatureId::MelSpectrogram
                | FeatureId::Tempogram
                | FeatureId::Chromagram
                | FeatureId::PseudoCqt
                | FeatureId::ChromaCqt
        )
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureId {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| FeatureError::UnknownFeature(s.to_string()))
    }
}

pub const N_MELS: usize = 128;
pub const MEL_FMIN: f64 = 0.0;
pub const MEL_FMAX: f64 = 8000.0;
pub const CQT_BINS: usize = 84;
pub const CQT_BINS_PER_OCTAVE: usize = 12;
/// C1 in Hz.
pub const CQT_FMIN: f64 = 32.703;
pub const ROLLOFF_FRACTION: f64 = 0.85;

/// Fixed-length reduction of one feature for one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub feature_id: FeatureId,
    pub vector: Vec<f64>,
}

impl FeatureSummary {
    pub fn new(feature_id: FeatureId, vector: Vec<f64>) -> Result<Self, FeatureError> {
        let expected = feature_id.summary_len();
        if vector.len() != expected {
            return Err(FeatureError::SummaryLength {
                feature: feature_id,
                expected,
                actual: vector.len(),
            });
        }
        debug_assert!(vector.iter().all(|v| v.is_finite()));
        Ok(Self { feature_id, vector })
    }
}

/// Holds the filterbanks and FFT plan for repeated extraction.
///
/// Cheap to share between threads; every method takes `&self`.
pub struct FeatureExtractor {
    frame_params: FrameParams,
    stft: Stft,
    mel: MelFilterbank,
    chroma: ChromaFilterbank,
    pcqt: PseudoCqtFilterbank,
    yin: YinParams,
}

impl FeatureExtractor {
    pub fn new(frame_params: FrameParams) -> Result<Self, FeatureError> {
        frame_params.validate()?;
        let sr = CANONICAL_RATE;
        Ok(Self {
            frame_params,
            stft: Stft::new(frame_params)?,
            mel: MelFilterbank::new(frame_params.n_fft, sr, N_MELS, MEL_FMIN, MEL_FMAX),
            chroma: ChromaFilterbank::new(frame_params.n_fft, sr),
            pcqt: PseudoCqtFilterbank::new(
                frame_params.n_fft,
                sr,
                CQT_BINS,
                CQT_BINS_PER_OCTAVE,
                CQT_FMIN,
            ),
            yin: YinParams {
                frame: frame_params.n_fft,
                hop: frame_params.hop,
                ..YinParams::default()
            },
        })
    }

    pub fn frame_params(&self) -> FrameParams {
        self.frame_params
    }

    /// Compute the summaries for `features` (in the given order).
    pub fn extract(
        &self,
        buf: &AudioBuffer,
        features: &[FeatureId],
    ) -> Result<Vec<FeatureSummary>, FeatureError> {
        if buf.channels() != 1 {
            return Err(FeatureError::NotMono(buf.channels()));
        }
        if buf.sample_rate() != CANONICAL_RATE {
            return Err(FeatureError::SampleRate {
                expected: CANONICAL_RATE,
                actual: buf.sample_rate(),
            });
        }
        if buf.frames() < 2 {
            return Err(FeatureError::InputTooShort { len: buf.frames() });
        }
        let magnitude = self.stft.process(buf)?;
        let power = magnitude.to_power();
        let needs_mel = features
            .iter()
            .any(|f| matches!(f, FeatureId::MelSpectrogram | FeatureId::Tempogram));
        let needs_pcqt = features
            .iter()
            .any(|f| matches!(f, FeatureId::PseudoCqt | FeatureId::ChromaCqt));
        let mel = needs_mel.then(|| self.mel.apply(&power));
        let pcqt = needs_pcqt.then(|| self.pcqt.apply(&power));

        features
            .iter()
            .map(|&id| {
                let raw = match id {
                    FeatureId::Pitch => RawFeature::Sequence(f0_contour(buf, &self.yin)?),
                    FeatureId::MelSpectrogram => {
                        RawFeature::Matrix(mel.as_ref().expect("mel computed").values.clone())
                    }
                    FeatureId::Rms => RawFeature::Sequence(rms_envelope(buf, self.frame_params)?),
                    FeatureId::SpectralCentroid => {
                        RawFeature::Sequence(spectral_centroid(&magnitude))
                    }
                    FeatureId::SpectralFlatness => RawFeature::Sequence(spectral_flatness(&power)),
                    FeatureId::SpectralRolloff => {
                        RawFeature::Sequence(spectral_rolloff(&magnitude, ROLLOFF_FRACTION))
                    }
                    FeatureId::Tempogram => {
                        let onset = onset_strength(mel.as_ref().expect("mel computed"));
                        RawFeature::Matrix(tempogram(&onset, TEMPOGRAM_WIN))
                    }
                    FeatureId::Chromagram => RawFeature::Matrix(self.chroma.apply(&power)),
                    FeatureId::PseudoCqt => {
                        RawFeature::Matrix(pcqt.as_ref().expect("pcqt").clone())
                    }
                    FeatureId::ChromaCqt => {
                        RawFeature::Matrix(chroma_cqt(pcqt.as_ref().expect("pcqt"))?)
                    }
                };
                summarize(id, &raw)
            })
            .collect()
    }
}

/// Mel power spectrogram with the default 128-band, 0-8 kHz filterbank.
pub fn mel_spectrogram(buf: &AudioBuffer, fp: FrameParams) -> Result<Spectrogram, FeatureError> {
    let power = stft(buf, fp)?.to_power();
    let bank = MelFilterbank::new(fp.n_fft, buf.sample_rate(), N_MELS, MEL_FMIN, MEL_FMAX);
    Ok(bank.apply(&power))
}

/// Pitch-class energy from a power (or magnitude) STFT, `[12 x frames]`.
pub fn chroma_stft(spec: &Spectrogram) -> Matrix {
    ChromaFilterbank::new(spec.frame_params.n_fft, spec.sample_rate).apply(&spec.to_power())
}

/// Default 84-bin pseudo constant-Q power, `[84 x frames]`.
pub fn pseudo_cqt(spec: &Spectrogram) -> Matrix {
    PseudoCqtFilterbank::new(
        spec.frame_params.n_fft,
        spec.sample_rate,
        CQT_BINS,
        CQT_BINS_PER_OCTAVE,
        CQT_FMIN,
    )
    .apply(&spec.to_power())
}
