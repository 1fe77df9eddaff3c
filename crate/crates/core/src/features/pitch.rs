//! YIN fundamental-frequency tracking.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::stft::{centered_frame, frame_count};
use super::FeatureError;
use crate::audio::AudioBuffer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YinParams {
    pub fmin: f64,
    pub fmax: f64,
    pub frame: usize,
    pub hop: usize,
    pub threshold: f64,
}

impl Default for YinParams {
    fn default() -> Self {
        Self {
            fmin: 50.0,
            fmax: 500.0,
            frame: 1024,
            hop: 256,
            threshold: 0.1,
        }
    }
}

/// `d(tau) = sum_{j < win} (x[j] - x[j + tau])^2`, expanded into two energy
/// terms and one cross-correlation computed with an FFT.
struct DifferenceFunction {
    frame: usize,
    win: usize,
    tau_max: usize,
    fft_len: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl DifferenceFunction {
    fn new(frame: usize, win: usize, tau_max: usize) -> Self {
        let fft_len = (2 * frame).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        Self {
            frame,
            win,
            tau_max,
            fft_len,
            forward: planner.plan_fft_forward(fft_len),
            inverse: planner.plan_fft_inverse(fft_len),
        }
    }

    fn compute(&self, frame: &[f64], out: &mut [f64]) {
        debug_assert_eq!(frame.len(), self.frame);
        let mut head = vec![Complex::new(0.0, 0.0); self.fft_len];
        let mut full = vec![Complex::new(0.0, 0.0); self.fft_len];
        for (i, &v) in frame.iter().enumerate() {
            full[i] = Complex::new(v, 0.0);
            if i < self.win {
                head[i] = Complex::new(v, 0.0);
            }
        }
        self.forward.process(&mut head);
        self.forward.process(&mut full);
        for (h, f) in head.iter_mut().zip(&full) {
            *h = h.conj() * f;
        }
        self.inverse.process(&mut head);

        let mut sq_prefix = Vec::with_capacity(frame.len() + 1);
        sq_prefix.push(0.0);
        let mut acc = 0.0;
        for v in frame {
            acc += v * v;
            sq_prefix.push(acc);
        }
        let e0 = sq_prefix[self.win];
        for (tau, d) in out.iter_mut().enumerate().take(self.tau_max + 1) {
            let r = head[tau].re / self.fft_len as f64;
            let e_tau = sq_prefix[tau + self.win] - sq_prefix[tau];
            *d = (e0 + e_tau - 2.0 * r).max(0.0);
        }
        out[0] = 0.0;
    }
}

/// Per-frame f0 in Hz; 0 marks frames with no dip below the threshold.
///
/// Each centered frame is compared against lagged copies of itself over an
/// integration window of `frame - max_lag` samples. The difference function
/// is normalized by its cumulative mean, the first lag under the threshold
/// is followed down to its local minimum and refined with a parabola.
pub fn f0_contour(buf: &AudioBuffer, params: &YinParams) -> Result<Vec<f64>, FeatureError> {
    if buf.channels() != 1 {
        return Err(FeatureError::NotMono(buf.channels()));
    }
    if buf.frames() < 2 {
        return Err(FeatureError::InputTooShort { len: buf.frames() });
    }
    let sr = buf.sample_rate() as f64;
    let tau_min = (sr / params.fmax).floor() as usize;
    let tau_max = (sr / params.fmin).ceil() as usize;
    if params.hop == 0 || tau_min < 1 || tau_max + 2 > params.frame {
        return Err(FeatureError::FrameParams(format!(
            "YIN lag range {tau_min}..{tau_max} does not fit a {}-sample frame",
            params.frame
        )));
    }
    let win = params.frame - tau_max;

    let diff_fn = DifferenceFunction::new(params.frame, win, tau_max);
    let x = buf.samples();
    let n_frames = frame_count(x.len(), params.hop);
    let mut frame = vec![0.0; params.frame];
    let mut diff = vec![0.0; tau_max + 1];
    let mut cmnd = vec![0.0; tau_max + 1];
    let mut out = Vec::with_capacity(n_frames);

    for t in 0..n_frames {
        centered_frame(x, t, params.hop, &mut frame);
        diff_fn.compute(&frame, &mut diff);

        cmnd[0] = 1.0;
        let mut running = 0.0;
        for tau in 1..=tau_max {
            running += diff[tau];
            cmnd[tau] = if running > 0.0 {
                diff[tau] * tau as f64 / running
            } else {
                1.0
            };
        }

        let mut found = None;
        let mut tau = tau_min;
        while tau < tau_max {
            if cmnd[tau] < params.threshold {
                while tau + 1 < tau_max && cmnd[tau + 1] < cmnd[tau] {
                    tau += 1;
                }
                found = Some(tau);
                break;
            }
            tau += 1;
        }

        let f0 = match found {
            None => 0.0,
            Some(tau) => {
                let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
                let den = a - 2.0 * b + c;
                let shift = if den.abs() > 0.0 {
                    (0.5 * (a - c) / den).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                sr / (tau as f64 + shift)
            }
        };
        out.push(f0);
    }
    Ok(out)
}
