//! Per-frame spectral shape descriptors.

use super::{Spectrogram, SpectrogramKind};

/// Floor applied to each power bin before taking logarithms.
pub const FLATNESS_FLOOR: f64 = 1e-10;

fn magnitudes(spec: &Spectrogram) -> std::borrow::Cow<'_, Spectrogram> {
    match spec.kind {
        SpectrogramKind::Magnitude => std::borrow::Cow::Borrowed(spec),
        SpectrogramKind::Power => std::borrow::Cow::Owned(spec.to_magnitude()),
    }
}

/// Magnitude-weighted mean frequency per frame; silent frames give 0.
pub fn spectral_centroid(spec: &Spectrogram) -> Vec<f64> {
    let mag = magnitudes(spec);
    let freqs: Vec<f64> = (0..mag.bins()).map(|b| mag.bin_frequency(b)).collect();
    mag.values
        .columns()
        .map(|col| {
            let total: f64 = col.iter().sum();
            if total > 0.0 {
                col.iter().zip(&freqs).map(|(m, f)| m * f).sum::<f64>() / total
            } else {
                0.0
            }
        })
        .collect()
}

/// Geometric over arithmetic mean of the floored power spectrum, in `[0, 1]`.
pub fn spectral_flatness(spec: &Spectrogram) -> Vec<f64> {
    let power = match spec.kind {
        SpectrogramKind::Power => std::borrow::Cow::Borrowed(spec),
        SpectrogramKind::Magnitude => std::borrow::Cow::Owned(spec.to_power()),
    };
    power
        .values
        .columns()
        .map(|col| {
            let n = col.len() as f64;
            let (log_sum, sum) = col.iter().fold((0.0, 0.0), |(l, s), &p| {
                let p = p.max(FLATNESS_FLOOR);
                (l + p.ln(), s + p)
            });
            ((log_sum / n).exp() / (sum / n)).min(1.0)
        })
        .collect()
}

/// Lowest bin frequency whose cumulative magnitude reaches `fraction` of
/// the frame total; silent frames give 0.
pub fn spectral_rolloff(spec: &Spectrogram, fraction: f64) -> Vec<f64> {
    let mag = magnitudes(spec);
    mag.values
        .columns()
        .map(|col| {
            let total: f64 = col.iter().sum();
            if total <= 0.0 {
                return 0.0;
            }
            let threshold = fraction * total;
            let mut acc = 0.0;
            for (b, m) in col.iter().enumerate() {
                acc += m;
                if acc >= threshold {
                    return mag.bin_frequency(b);
                }
            }
            mag.bin_frequency(col.len() - 1)
        })
        .collect()
}
