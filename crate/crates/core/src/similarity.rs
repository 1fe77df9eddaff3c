//! Cosine similarity and per-pair score records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::SpeakerEmbedding;
use crate::features::{FeatureError, FeatureId, FeatureSummary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("{metric}: vector lengths differ ({left} vs {right})")]
    LengthMismatch {
        metric: MetricId,
        left: usize,
        right: usize,
    },
    #[error("{0} is present on one side of the pair only")]
    MissingMetric(MetricId),
}

/// Result of one cosine comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// At least one input had zero norm and the fixed policy was applied.
    pub zero_norm: bool,
}

/// `u.v / (|u| |v|)` clamped to `[-1, 1]`.
///
/// Zero-norm inputs follow a fixed policy and are flagged: two zero vectors
/// score 1, a single zero vector scores 0.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<Cosine, (usize, usize)> {
    if u.len() != v.len() {
        return Err((u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let value = match (nu == 0.0, nv == 0.0) {
        (true, true) => {
            return Ok(Cosine {
                value: 1.0,
                zero_norm: true,
            })
        }
        (true, false) | (false, true) => {
            return Ok(Cosine {
                value: 0.0,
                zero_norm: true,
            })
        }
        // sqrt(n * n) == n in IEEE arithmetic, so self-similarity is exactly 1
        (false, false) => {
            let prod = nu * nv;
            if prod.is_normal() {
                dot / prod.sqrt()
            } else {
                dot / (nu.sqrt() * nv.sqrt())
            }
        }
    };
    Ok(Cosine {
        value: value.clamp(-1.0, 1.0),
        zero_norm: false,
    })
}

/// A reported similarity column: the speaker embedding or one feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricId {
    Embedding,
    Feature(FeatureId),
}

impl MetricId {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Embedding => "embedding",
            MetricId::Feature(f) => f.as_str(),
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "embedding" {
            Ok(MetricId::Embedding)
        } else {
            s.parse().map(MetricId::Feature)
        }
    }
}

impl Serialize for MetricId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MetricId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything computed for one audio file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleAnalysis {
    pub embedding: Option<SpeakerEmbedding>,
    pub features: Vec<FeatureSummary>,
}

/// Similarity scores of one reference/generated pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairScores {
    pub scores: BTreeMap<MetricId, f64>,
    /// Metrics where the zero-norm policy decided the score.
    pub zero_norm: BTreeSet<MetricId>,
}

/// Score every metric present on both sides.
///
/// Both analyses must carry the same metric set; a metric on one side only
/// means the two sides were produced with different configurations.
pub fn score_pair(
    reference: &SampleAnalysis,
    generated: &SampleAnalysis,
) -> Result<PairScores, SimilarityError> {
    let mut out = PairScores::default();
    let mut record = |metric: MetricId, u: &[f64], v: &[f64]| -> Result<(), SimilarityError> {
        let c = cosine(u, v).map_err(|(left, right)| SimilarityError::LengthMismatch {
            metric,
            left,
            right,
        })?;
        out.scores.insert(metric, c.value);
        if c.zero_norm {
            out.zero_norm.insert(metric);
        }
        Ok(())
    };

    match (&reference.embedding, &generated.embedding) {
        (Some(a), Some(b)) => record(MetricId::Embedding, a.as_slice(), b.as_slice())?,
        (None, None) => {}
        _ => return Err(SimilarityError::MissingMetric(MetricId::Embedding)),
    }

    let gen_by_id: BTreeMap<FeatureId, &FeatureSummary> = generated
        .features
        .iter()
        .map(|f| (f.feature_id, f))
        .collect();
    if gen_by_id.len() != reference.features.len() {
        let ref_ids: BTreeSet<FeatureId> =
            reference.features.iter().map(|f| f.feature_id).collect();
        let missing = gen_by_id
            .keys()
            .find(|id| !ref_ids.contains(id))
            .copied()
            .or_else(|| {
                ref_ids
                    .iter()
                    .find(|id| !gen_by_id.contains_key(id))
                    .copied()
            })
            .expect("sets differ");
        return Err(SimilarityError::MissingMetric(MetricId::Feature(missing)));
    }
    for r in &reference.features {
        let g = gen_by_id
            .get(&r.feature_id)
            .ok_or(SimilarityError::MissingMetric(MetricId::Feature(
                r.feature_id,
            )))?;
        record(MetricId::Feature(r.feature_id), &r.vector, &g.vector)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn summary(id: FeatureId, head: &[f64]) -> FeatureSummary {
        let mut v = vec![0.0; id.summary_len()];
        v[..head.len()].copy_from_slice(head);
        FeatureSummary::new(id, v).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[3.0, 4.0], &[3.0, 4.0]).unwrap().value, 1.0);
        let odd = [0.1, 0.7, -0.3333, 1e-3];
        assert_eq!(cosine(&odd, &odd).unwrap().value, 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap().value, 0.0);
        let u = [0.3, -1.2, 2.5];
        let v: Vec<f64> = u.iter().map(|x| 3.0 * x).collect();
        assert!((cosine(&u, &v).unwrap().value - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0], &[1.0, 2.0]), Err((1, 2)));
    }

    #[test]
    fn zero_norm_policy() {
        assert_eq!(
            cosine(&[0.0, 0.0], &[0.0, 0.0]).unwrap(),
            Cosine {
                value: 1.0,
                zero_norm: true
            }
        );
        assert_eq!(
            cosine(&[0.0, 0.0], &[0.0, 2.0]).unwrap(),
            Cosine {
                value: 0.0,
                zero_norm: true
            }
        );
        assert_eq!(
            cosine(&[1.0, 0.0], &[0.0, 0.0]).unwrap(),
            Cosine {
                value: 0.0,
                zero_norm: true
            }
        );
    }

    #[test]
    fn metric_ids_parse() {
        assert_eq!(
            "embedding".parse::<MetricId>().unwrap(),
            MetricId::Embedding
        );
        assert_eq!(
            "rms".parse::<MetricId>().unwrap(),
            MetricId::Feature(FeatureId::Rms)
        );
        assert!(MetricId::Embedding < MetricId::Feature(FeatureId::Pitch));
    }

    #[test]
    fn self_pair_scores_one() {
        let a = SampleAnalysis {
            embedding: Some(SpeakerEmbedding::new(vec![0.1, -0.4, 0.9]).unwrap()),
            features: vec![
                summary(FeatureId::MelSpectrogram, &[1.0, 2.0, 3.0]),
                summary(FeatureId::Rms, &[0.5, 0.2]),
            ],
        };
        let s = score_pair(&a, &a).unwrap();
        assert_eq!(s.scores.len(), 3);
        assert!(s.scores.values().all(|v| (v - 1.0).abs() < 1e-6));
        assert!(s.zero_norm.is_empty());
    }

    #[test]
    fn orthogonal_mel_profiles() {
        let a = SampleAnalysis {
            embedding: None,
            features: vec![summary(FeatureId::MelSpectrogram, &[1.0])],
        };
        let b = SampleAnalysis {
            embedding: None,
            features: vec![summary(FeatureId::MelSpectrogram, &[0.0, 1.0])],
        };
        let s = score_pair(&a, &b).unwrap();
        assert_eq!(s.scores[&MetricId::Feature(FeatureId::MelSpectrogram)], 0.0);
    }

    #[test]
    fn embedding_matches_hand_dot_product() {
        let u = [0.12, -0.53, 0.77, 0.05];
        let v = [0.10, -0.40, 0.70, 0.31];
        let dot = 0.12 * 0.10 + 0.53 * 0.40 + 0.77 * 0.70 + 0.05 * 0.31;
        let nu = (0.12f64.powi(2) + 0.53f64.powi(2) + 0.77f64.powi(2) + 0.05f64.powi(2)).sqrt();
        let nv = (0.10f64.powi(2) + 0.40f64.powi(2) + 0.70f64.powi(2) + 0.31f64.powi(2)).sqrt();
        let a = SampleAnalysis {
            embedding: Some(SpeakerEmbedding::new(u.to_vec()).unwrap()),
            features: vec![],
        };
        let b = SampleAnalysis {
            embedding: Some(SpeakerEmbedding::new(v.to_vec()).unwrap()),
            features: vec![],
        };
        let s = score_pair(&a, &b).unwrap();
        assert!((s.scores[&MetricId::Embedding] - dot / (nu * nv)).abs() < 1e-9);
    }

    #[test]
    fn config_drift_is_an_error() {
        let a = SampleAnalysis {
            embedding: Some(SpeakerEmbedding::new(vec![1.0, 2.0]).unwrap()),
            features: vec![],
        };
        let b = SampleAnalysis {
            embedding: Some(SpeakerEmbedding::new(vec![1.0, 2.0, 3.0]).unwrap()),
            features: vec![],
        };
        assert!(matches!(
            score_pair(&a, &b),
            Err(SimilarityError::LengthMismatch {
                metric: MetricId::Embedding,
                ..
            })
        ));
        let c = SampleAnalysis {
            embedding: None,
            features: vec![summary(FeatureId::Rms, &[1.0])],
        };
        let d = SampleAnalysis {
            embedding: None,
            features: vec![summary(FeatureId::Pitch, &[1.0])],
        };
        assert!(matches!(
            score_pair(&c, &d),
            Err(SimilarityError::MissingMetric(_))
        ));
        assert!(matches!(
            score_pair(&a, &SampleAnalysis::default()),
            Err(SimilarityError::MissingMetric(MetricId::Embedding))
        ));
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..64).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0f64..100.0, n),
                prop::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded((u, v) in vec_pair()) {
            let a = cosine(&u, &v).unwrap();
            let b = cosine(&v, &u).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((-1.0..=1.0).contains(&a.value));
        }

        #[test]
        fn self_similarity_is_exactly_one(u in prop::collection::vec(-100.0f64..100.0, 1..64)) {
            prop_assume!(u.iter().any(|&x| x != 0.0));
            prop_assert_eq!(cosine(&u, &u).unwrap().value, 1.0);
        }

        #[test]
        fn scale_invariant((u, v) in vec_pair(), s in 1e-3f64..1e3) {
            let base = cosine(&u, &v).unwrap().value;
            let scaled: Vec<f64> = u.iter().map(|x| x * s).collect();
            prop_assert!((cosine(&scaled, &v).unwrap().value - base).abs() < 1e-9);
        }

        #[test]
        fn nonnegative_inputs_score_in_unit_interval(
            (u, v) in vec_pair().prop_map(|(a, b)| (
                a.into_iter().map(f64::abs).collect::<Vec<_>>(),
                b.into_iter().map(f64::abs).collect::<Vec<_>>(),
            ))
        ) {
            let c = cosine(&u, &v).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }
}
