use super::stft::periodic_hann;
use super::{Matrix, Spectrogram, SpectrogramKind};

/// Tempogram window length in onset frames (6.1 s at 16 kHz / hop 256).
pub const TEMPOGRAM_WIN: usize = 384;

/// Spectral-flux onset envelope: mean positive increase of `log1p(mel)`
/// between consecutive frames. Frame 0 is always 0.
pub fn onset_strength(mel: &Spectrogram) -> Vec<f64> {
    let log_mel = match mel.kind {
        SpectrogramKind::Power => mel.values.map(f64::ln_1p),
        SpectrogramKind::Magnitude => mel.values.map(|v| (v * v).ln_1p()),
    };
    let bands = log_mel.rows().max(1) as f64;
    let mut out = Vec::with_capacity(log_mel.cols());
    if log_mel.cols() == 0 {
        return out;
    }
    out.push(0.0);
    for t in 1..log_mel.cols() {
        let flux: f64 = log_mel
            .col(t)
            .iter()
            .zip(log_mel.col(t - 1))
            .map(|(now, prev)| (now - prev).max(0.0))
            .sum();
        out.push(flux / bands);
    }
    out
}

/// Local autocorrelation tempogram, `[win_length lags x frames]`.
///
/// Column `t` is the autocorrelation of the Hann-weighted onset window
/// centered on frame `t` (zero beyond the signal), divided by its lag-0
/// value. Windows without energy give an all-zero column.
pub fn tempogram(onset: &[f64], win_length: usize) -> Matrix {
    let n = onset.len();
    let mut out = Matrix::zeros(win_length, n);
    if win_length == 0 {
        return out;
    }
    let window = periodic_hann(win_length);
    let half = win_length / 2;
    let mut seg = vec![0.0; win_length];
    for t in 0..n {
        for (k, s) in seg.iter_mut().enumerate() {
            let j = t as i64 - half as i64 + k as i64;
            let v = if j >= 0 && (j as usize) < n {
                onset[j as usize]
            } else {
                0.0
            };
            *s = v * window[k];
        }
        let energy: f64 = seg.iter().map(|v| v * v).sum();
        if energy <= 0.0 {
            continue;
        }
        let col = out.col_mut(t);
        col[0] = 1.0;
        for (lag, c) in col.iter_mut().enumerate().skip(1) {
            let ac: f64 = seg[..win_length - lag]
                .iter()
                .zip(&seg[lag..])
                .map(|(a, b)| a * b)
                .sum();
            *c = ac / energy;
        }
    }
    out
}
