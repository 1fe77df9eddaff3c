//! Aggregation and the two report files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Emotion, PairFailure, PairRecord, PipelineError};
use crate::features::FrameParams;
use crate::similarity::MetricId;

pub const DETAILS_FILE: &str = "details.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Settings that produced a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: String,
    pub sample_rate: u32,
    pub frame_params: FrameParams,
    /// Reported metrics in column order.
    pub metrics: Vec<MetricId>,
    pub embedding_backend: Option<String>,
    pub embedding_dim: Option<usize>,
    pub emotions: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unmatched {
    pub reference: Vec<String>,
    pub generated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub config: RunConfig,
    /// Number of scored pairs.
    pub pairs: usize,
    /// Mean of each metric over all scored pairs.
    pub overall: BTreeMap<MetricId, f64>,
    /// Means per emotion group, including `unknown` when present.
    pub by_emotion: BTreeMap<Emotion, BTreeMap<MetricId, f64>>,
    /// Mean of the known-emotion group means; absent when no pair has a
    /// known emotion.
    pub emotion_average: Option<BTreeMap<MetricId, f64>>,
    pub counts: BTreeMap<Emotion, usize>,
    pub failures: Vec<PairFailure>,
    pub unmatched: Unmatched,
}

fn means<'a>(
    metrics: &[MetricId],
    records: impl Iterator<Item = &'a PairRecord> + Clone,
) -> BTreeMap<MetricId, f64> {
    let n = records.clone().count() as f64;
    metrics
        .iter()
        .map(|m| (*m, records.clone().map(|r| r.scores[m]).sum::<f64>() / n))
        .collect()
}

/// Overall, per-emotion and emotion-average means of `records`, which must
/// all carry exactly `config.metrics`.
pub fn aggregate(
    records: &[PairRecord],
    config: RunConfig,
) -> Result<SummaryReport, PipelineError> {
    if records.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let metrics = &config.metrics;
    if let Some(bad) = records.iter().find(|r| {
        r.scores.len() != metrics.len() || metrics.iter().any(|m| !r.scores.contains_key(m))
    }) {
        return Err(PipelineError::Config(format!(
            "pair {} does not carry the configured metric set",
            bad.pair_id
        )));
    }

    let mut sorted: Vec<&PairRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    let overall = means(metrics, sorted.iter().copied());

    let mut groups: BTreeMap<Emotion, Vec<&PairRecord>> = BTreeMap::new();
    for r in &sorted {
        groups.entry(r.emotion).or_default().push(r);
    }
    let counts = groups.iter().map(|(e, g)| (*e, g.len())).collect();
    let by_emotion: BTreeMap<Emotion, BTreeMap<MetricId, f64>> = groups
        .iter()
        .map(|(e, g)| (*e, means(metrics, g.iter().copied())))
        .collect();
    let known: Vec<&BTreeMap<MetricId, f64>> = by_emotion
        .iter()
        .filter(|(e, _)| e.is_known())
        .map(|(_, m)| m)
        .collect();
    let emotion_average = (!known.is_empty()).then(|| {
        metrics
            .iter()
            .map(|m| {
                (
                    *m,
                    known.iter().map(|g| g[m]).sum::<f64>() / known.len() as f64,
                )
            })
            .collect()
    });

    Ok(SummaryReport {
        config,
        pairs: records.len(),
        overall,
        by_emotion,
        emotion_average,
        counts,
        failures: Vec::new(),
        unmatched: Unmatched::default(),
    })
}

fn details_header(metrics: &[MetricId]) -> Vec<String> {
    ["pair_id", "reference_file", "generated_file", "emotion"]
        .iter()
        .map(|s| s.to_string())
        .chain(metrics.iter().map(|m| m.to_string()))
        .chain(["flags".to_string()])
        .collect()
}

/// The details table as CSV text, rows sorted by pair id.
pub fn format_details(records: &[PairRecord], metrics: &[MetricId]) -> String {
    let mut sorted: Vec<&PairRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(details_header(metrics))
        .expect("in-memory write");
    for r in sorted {
        let mut row = vec![
            r.pair_id.clone(),
            r.reference_file.clone(),
            r.generated_file.clone(),
            r.emotion.to_string(),
        ];
        row.extend(metrics.iter().map(|m| format!("{:.6}", r.scores[m])));
        row.push(r.flags());
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Write `details.csv` and `summary.json` into `out_dir`, creating it.
pub fn write_reports(
    out_dir: &Path,
    records: &[PairRecord],
    summary: &SummaryReport,
) -> Result<(), PipelineError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| PipelineError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let details = out_dir.join(DETAILS_FILE);
    std::fs::write(&details, format_details(records, &summary.config.metrics))
        .map_err(io(&details))?;
    let path = out_dir.join(SUMMARY_FILE);
    let mut json = serde_json::to_string_pretty(summary).expect("summary serializes");
    json.push('\n');
    std::fs::write(&path, json).map_err(io(&path))?;
    Ok(())
}

/// One parsed row of a details file.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailRow {
    pub pair_id: String,
    pub reference_file: String,
    pub generated_file: String,
    pub emotion: Emotion,
    pub scores: BTreeMap<MetricId, f64>,
    pub flags: String,
}

/// Parse a details file written by [`write_reports`].
pub fn read_details(path: &Path) -> Result<Vec<DetailRow>, PipelineError> {
    let bad = |msg: String| PipelineError::Details(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if header.len() < 5
        || header[..4] != ["pair_id", "reference_file", "generated_file", "emotion"]
        || header.last().map(String::as_str) != Some("flags")
    {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let metrics: Vec<MetricId> = header[4..header.len() - 1]
        .iter()
        .map(|h| h.parse().map_err(|_| bad(format!("unknown column '{h}'"))))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let emotion = rec[3]
            .parse()
            .map_err(|e| bad(format!("line {line}: {e}")))?;
        let mut scores = BTreeMap::new();
        for (k, m) in metrics.iter().enumerate() {
            let v: f64 = rec[4 + k]
                .parse()
                .map_err(|_| bad(format!("line {line}: bad number '{}'", &rec[4 + k])))?;
            scores.insert(*m, v);
        }
        rows.push(DetailRow {
            pair_id: rec[0].to_string(),
            reference_file: rec[1].to_string(),
            generated_file: rec[2].to_string(),
            emotion,
            scores,
            flags: rec[rec.len() - 1].to_string(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureId;
    use std::collections::BTreeSet;

    const E: MetricId = MetricId::Embedding;
    const RMS: MetricId = MetricId::Feature(FeatureId::Rms);

    fn config(metrics: Vec<MetricId>) -> RunConfig {
        RunConfig {
            version: "test".into(),
            sample_rate: 16000,
            frame_params: FrameParams::default(),
            metrics,
            embedding_backend: Some("precomputed:x.json".into()),
            embedding_dim: Some(4),
            emotions: "auto".into(),
        }
    }

    fn rec(id: &str, emotion: Emotion, e: f64, rms: f64) -> PairRecord {
        PairRecord {
            pair_id: id.into(),
            reference_file: format!("{id}.wav"),
            generated_file: format!("{id}.wav"),
            emotion,
            scores: [(E, e), (RMS, rms)].into_iter().collect(),
            zero_norm: BTreeSet::new(),
        }
    }

    #[test]
    fn emotion_means_and_average() {
        let records = vec![
            rec("a1", Emotion::Anger, 0.8, 0.5),
            rec("a2", Emotion::Anger, 0.6, 0.5),
            rec("n1", Emotion::Neutral, 0.9, 0.2),
            rec("u1", Emotion::Unknown, 0.1, 0.0),
        ];
        let s = aggregate(&records, config(vec![E, RMS])).unwrap();
        assert!((s.by_emotion[&Emotion::Anger][&E] - 0.7).abs() < 1e-12);
        let avg = s.emotion_average.as_ref().unwrap();
        assert!((avg[&E] - 0.8).abs() < 1e-12);
        assert!((s.overall[&E] - 0.6).abs() < 1e-12);
        assert_eq!(s.counts.values().sum::<usize>(), 4);
        assert_eq!(s.counts[&Emotion::Unknown], 1);
        assert_eq!(s.pairs, 4);
    }

    #[test]
    fn all_unknown_gives_single_group() {
        let records = vec![
            rec("x", Emotion::Unknown, 0.5, 0.5),
            rec("y", Emotion::Unknown, 0.7, 0.1),
        ];
        let s = aggregate(&records, config(vec![E, RMS])).unwrap();
        assert_eq!(s.by_emotion.keys().collect::<Vec<_>>(), [&Emotion::Unknown]);
        assert!(s.emotion_average.is_none());
    }

    #[test]
    fn empty_and_inconsistent_input() {
        assert!(matches!(
            aggregate(&[], config(vec![E])),
            Err(PipelineError::EmptyInput)
        ));
        let r = rec("x", Emotion::Unknown, 0.5, 0.5);
        assert!(matches!(
            aggregate(&[r], config(vec![E])),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn details_layout() {
        let mut b = rec("b", Emotion::Sadness, 0.25, 1.0);
        b.zero_norm.insert(RMS);
        b.reference_file = "b, with comma.wav".into();
        let records = vec![b, rec("a", Emotion::Unknown, 1.0, 0.123_457)];
        let text = format_details(&records, &[E, RMS]);
        let lines: Vec<&str> = text.split('\n').collect();
        assert_eq!(
            lines[0],
            "pair_id,reference_file,generated_file,emotion,embedding,rms,flags"
        );
        assert_eq!(lines[1], "a,a.wav,a.wav,unknown,1.000000,0.123457,");
        assert_eq!(
            lines[2],
            "b,\"b, with comma.wav\",b.wav,sadness,0.250000,1.000000,zero_norm:rms"
        );
        assert_eq!(lines[3], "");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn reports_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            rec("a", Emotion::Fear, 0.333_333, 0.1),
            rec("b", Emotion::Disgust, 0.666_667, 0.2),
        ];
        let mut s = aggregate(&records, config(vec![E, RMS])).unwrap();
        s.failures.push(PairFailure {
            pair_id: "c".into(),
            error: "generated: bad".into(),
        });
        s.unmatched.generated.push("d.wav".into());
        write_reports(dir.path(), &records, &s).unwrap();
        let text = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        let back: SummaryReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);

        let rows = read_details(&dir.path().join(DETAILS_FILE)).unwrap();
        assert_eq!(rows.len(), 2);
        let recomputed = rows.iter().map(|r| r.scores[&E]).sum::<f64>() / 2.0;
        assert!((recomputed - s.overall[&E]).abs() < 1e-9);

        let first = std::fs::read(dir.path().join(DETAILS_FILE)).unwrap();
        write_reports(dir.path(), &records, &s).unwrap();
        assert_eq!(std::fs::read(dir.path().join(DETAILS_FILE)).unwrap(), first);
    }
}
