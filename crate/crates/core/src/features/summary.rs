use super::{FeatureError, FeatureId, FeatureSummary, Matrix};

/// Number of points every scalar contour is resampled to.
pub const CONTOUR_LEN: usize = 256;

/// Extractor output before reduction.
#[derive(Debug, Clone, PartialEq)]
pub enum RawFeature {
    Matrix(Matrix),
    Sequence(Vec<f64>),
}

/// Reduce an extractor output to its fixed-length summary: matrices become
/// per-row time means, sequences are linearly interpolated onto
/// [`CONTOUR_LEN`] evenly spaced points (first and last samples kept exact).
pub fn summarize(feature_id: FeatureId, raw: &RawFeature) -> Result<FeatureSummary, FeatureError> {
    let vector = match raw {
        RawFeature::Matrix(m) => {
            if m.cols() == 0 {
                return Err(FeatureError::EmptyFeature(feature_id));
            }
            m.row_means()
        }
        RawFeature::Sequence(s) => {
            if s.is_empty() {
                return Err(FeatureError::EmptyFeature(feature_id));
            }
            resample_contour(s, CONTOUR_LEN)
        }
    };
    FeatureSummary::new(feature_id, vector)
}

fn resample_contour(seq: &[f64], len: usize) -> Vec<f64> {
    if seq.len() == 1 {
        return vec![seq[0]; len];
    }
    let last = (seq.len() - 1) as f64;
    (0..len)
        .map(|i| {
            if i + 1 == len && len > 1 {
                return seq[seq.len() - 1];
            }
            let pos = if len == 1 {
                0.0
            } else {
                i as f64 * last / (len - 1) as f64
            };
            let lo = (pos.floor() as usize).min(seq.len() - 2);
            let frac = pos - lo as f64;
            seq[lo] + (seq[lo + 1] - seq[lo]) * frac
        })
        .collect()
}
