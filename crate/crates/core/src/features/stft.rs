use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureError, FrameParams, Matrix, Spectrogram, SpectrogramKind};
use crate::audio::AudioBuffer;

/// Number of centered frames for a signal of `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    1 + len / hop
}

/// Index into `x` after reflect-padding (mirror without repeating the
/// edge sample). Works for any offset, including pads longer than `x`.
fn reflect_index(j: i64, n: usize) -> usize {
    debug_assert!(n >= 2);
    let period = 2 * (n as i64 - 1);
    let m = j.rem_euclid(period);
    if m >= n as i64 {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Copy frame `t` (centered at `t * hop`) into `out`.
pub(crate) fn centered_frame(x: &[f32], t: usize, hop: usize, out: &mut [f64]) {
    let len = out.len();
    let start = (t * hop) as i64 - (len / 2) as i64;
    for (k, o) in out.iter_mut().enumerate() {
        let j = start + k as i64;
        let idx = if j >= 0 && (j as usize) < x.len() {
            j as usize
        } else {
            reflect_index(j, x.len())
        };
        *o = x[idx] as f64;
    }
}

pub(crate) fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn check_input(buf: &AudioBuffer) -> Result<(), FeatureError> {
    if buf.channels() != 1 {
        return Err(FeatureError::NotMono(buf.channels()));
    }
    if buf.frames() < 2 {
        return Err(FeatureError::InputTooShort { len: buf.frames() });
    }
    Ok(())
}

/// Planned magnitude STFT.
pub struct Stft {
    params: FrameParams,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(params: FrameParams) -> Result<Self, FeatureError> {
        params.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(params.n_fft);
        Ok(Self {
            params,
            window: periodic_hann(params.n_fft),
            fft,
        })
    }

    pub fn process(&self, buf: &AudioBuffer) -> Result<Spectrogram, FeatureError> {
        check_input(buf)?;
        let FrameParams { n_fft, hop } = self.params;
        let x = buf.samples();
        let n_frames = frame_count(x.len(), hop);
        let n_bins = self.params.n_bins();
        let mut out = Matrix::zeros(n_bins, n_frames);
        let mut frame = vec![0.0; n_fft];
        let mut spectrum = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..n_frames {
            centered_frame(x, t, hop, &mut frame);
            for ((s, &v), &w) in spectrum.iter_mut().zip(&frame).zip(&self.window) {
                *s = Complex::new(v * w, 0.0);
            }
            self.fft.process_with_scratch(&mut spectrum, &mut scratch);
            for (dst, c) in out.col_mut(t).iter_mut().zip(&spectrum) {
                *dst = c.norm();
            }
        }
        Ok(Spectrogram {
            values: out,
            kind: SpectrogramKind::Magnitude,
            frame_params: self.params,
            sample_rate: buf.sample_rate(),
        })
    }
}

/// Magnitude STFT, `[n_fft/2 + 1 bins x (1 + len/hop) frames]`.
pub fn stft(buf: &AudioBuffer, fp: FrameParams) -> Result<Spectrogram, FeatureError> {
    Stft::new(fp)?.process(buf)
}

/// Root-mean-square of each unwindowed centered frame.
pub fn rms_envelope(buf: &AudioBuffer, fp: FrameParams) -> Result<Vec<f64>, FeatureError> {
    fp.validate()?;
    check_input(buf)?;
    let x = buf.samples();
    let mut frame = vec![0.0; fp.n_fft];
    Ok((0..frame_count(x.len(), fp.hop))
        .map(|t| {
            centered_frame(x, t, fp.hop, &mut frame);
            (frame.iter().map(|v| v * v).sum::<f64>() / fp.n_fft as f64).sqrt()
        })
        .collect())
}
