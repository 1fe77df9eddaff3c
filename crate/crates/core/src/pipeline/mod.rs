//! Corpus evaluation: pair discovery, per-pair scoring, aggregation and
//! report writing, plus text-prompt assignment for the generation stage.

mod discover;
mod emotion;
mod prompts;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use discover::{discover_pairs, list_wavs, Discovery, Pair};
pub use emotion::{AliasTable, Emotion, EmotionMode, PositionalRule, ALIAS_TABLE_ENV};
pub use prompts::{make_prompt_assignments, read_manifest, write_assignments, PromptAssignment};
pub use report::{
    aggregate, format_details, read_details, write_reports, DetailRow, RunConfig, SummaryReport,
    Unmatched, DETAILS_FILE, SUMMARY_FILE,
};

use crate::audio::{load_canonical, AudioBuffer, AudioError, CANONICAL_RATE};
use crate::embedding::{Backend, EmbeddingError};
use crate::features::{FeatureError, FeatureExtractor, FeatureId, FrameParams};
use crate::similarity::{score_pair, MetricId, SampleAnalysis, SimilarityError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no file stems match between {reference_dir} and {generated_dir}")]
    NoPairs {
        reference_dir: String,
        generated_dir: String,
    },
    #[error("two files share the stem '{stem}': {first} and {second}")]
    DuplicateStem {
        stem: String,
        first: String,
        second: String,
    },
    #[error("every pair failed ({count}); first error: {first}")]
    AllPairsFailed { count: usize, first: String },
    #[error("no records to aggregate")]
    EmptyInput,
    #[error("prompt assignment needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("alias table {path}: {reason}")]
    AliasTable { path: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed details file: {0}")]
    Details(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Where speaker embeddings come from.
#[derive(Debug)]
pub enum Embeddings {
    Disabled,
    /// One backend for both sides (model mode).
    Shared(Backend),
    /// Separate precomputed stores for the reference and generated sides.
    Split {
        reference: Backend,
        generated: Backend,
    },
}

impl Embeddings {
    fn enabled(&self) -> bool {
        !matches!(self, Embeddings::Disabled)
    }

    fn sides(&self) -> Option<(&Backend, &Backend)> {
        match self {
            Embeddings::Disabled => None,
            Embeddings::Shared(b) => Some((b, b)),
            Embeddings::Split {
                reference,
                generated,
            } => Some((reference, generated)),
        }
    }

    pub fn id(&self) -> Option<String> {
        match self {
            Embeddings::Disabled => None,
            Embeddings::Shared(b) => Some(b.id()),
            Embeddings::Split {
                reference,
                generated,
            } => Some(format!("{} | {}", reference.id(), generated.id())),
        }
    }
}

/// Settings fixed for a whole run.
#[derive(Debug)]
pub struct EvalConfig {
    pub frame_params: FrameParams,
    pub features: Vec<FeatureId>,
    pub embeddings: Embeddings,
    pub emotions: EmotionMode,
    pub workers: usize,
    /// Write every feature summary as JSON under this directory.
    pub dump_features: Option<PathBuf>,
}

impl EvalConfig {
    pub fn new(embeddings: Embeddings) -> Self {
        Self {
            frame_params: FrameParams::default(),
            features: FeatureId::ALL.to_vec(),
            embeddings,
            emotions: EmotionMode::Auto(AliasTable::default()),
            workers: 1,
            dump_features: None,
        }
    }

    /// Selected features, deduplicated, in report column order.
    pub fn enabled_features(&self) -> Vec<FeatureId> {
        let set: BTreeSet<FeatureId> = self.features.iter().copied().collect();
        set.into_iter().collect()
    }

    /// Enabled metrics in report column order.
    pub fn metrics(&self) -> Vec<MetricId> {
        self.embeddings
            .enabled()
            .then_some(MetricId::Embedding)
            .into_iter()
            .chain(self.enabled_features().into_iter().map(MetricId::Feature))
            .collect()
    }

    /// Fingerprint recorded in the summary report.
    pub fn run_config(&self, embedding_dim: Option<usize>) -> RunConfig {
        RunConfig {
            version: env!("CARGO_PKG_VERSION").to_string(),
            sample_rate: CANONICAL_RATE,
            frame_params: self.frame_params,
            metrics: self.metrics(),
            embedding_backend: self.embeddings.id(),
            embedding_dim: embedding_dim
                .or_else(|| self.embeddings.sides().and_then(|(r, _)| r.dim())),
            emotions: self.emotions.name().to_string(),
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        self.frame_params.validate()?;
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        if self.metrics().is_empty() {
            return Err(PipelineError::Config(
                "nothing to evaluate: embeddings disabled and no features selected".into(),
            ));
        }
        if let Some((r, g)) = self.embeddings.sides() {
            if let (Some(a), Some(b)) = (r.dim(), g.dim()) {
                if a != b {
                    return Err(PipelineError::Embedding(
                        EmbeddingError::DimensionMismatch {
                            expected: a,
                            actual: b,
                            key: None,
                        },
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Scores of one successfully evaluated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub pair_id: String,
    pub reference_file: String,
    pub generated_file: String,
    pub emotion: Emotion,
    /// One entry per enabled metric, rounded to six decimals.
    pub scores: BTreeMap<MetricId, f64>,
    /// Metrics decided by the zero-norm policy.
    pub zero_norm: BTreeSet<MetricId>,
}

impl PairRecord {
    pub fn flags(&self) -> String {
        self.zero_norm
            .iter()
            .map(|m| format!("zero_norm:{m}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// A pair that could not be scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub records: Vec<PairRecord>,
    pub failures: Vec<PairFailure>,
    /// Embedding length seen in this run.
    pub embedding_dim: Option<usize>,
}

/// Round to the six decimals written to the details file, so every
/// aggregate is reproducible from that file.
pub fn quantize(x: f64) -> f64 {
    let q = (x * 1e6).round() / 1e6;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

#[derive(Debug, Error)]
enum PairError {
    #[error("{side}: {source}")]
    Audio {
        side: &'static str,
        #[source]
        source: AudioError,
    },
    #[error("{side}: {source}")]
    Feature {
        side: &'static str,
        #[source]
        source: FeatureError,
    },
    #[error("{side}: {source}")]
    Embedding {
        side: &'static str,
        #[source]
        source: EmbeddingError,
    },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("writing feature dump {path}: {source}")]
    Dump {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn analyze(
    side: &'static str,
    stem: &str,
    path: &Path,
    extractor: &FeatureExtractor,
    config: &EvalConfig,
    backend: Option<&Backend>,
) -> Result<SampleAnalysis, PairError> {
    let buf: AudioBuffer =
        load_canonical(path).map_err(|source| PairError::Audio { side, source })?;
    debug_assert_eq!(buf.sample_rate(), CANONICAL_RATE);
    let enabled = config.enabled_features();
    let features = if enabled.is_empty() {
        Vec::new()
    } else {
        extractor
            .extract(&buf, &enabled)
            .map_err(|source| PairError::Feature { side, source })?
    };
    let embedding = backend
        .map(|b| b.embed(stem, &buf))
        .transpose()
        .map_err(|source| PairError::Embedding { side, source })?;
    if let Some(dir) = &config.dump_features {
        let dir = dir.join(side);
        let path = dir.join(format!("{stem}.json"));
        let io = |source| PairError::Dump {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(&dir).map_err(io)?;
        let mut text = serde_json::to_string_pretty(&features).expect("summaries serialize");
        text.push('\n');
        std::fs::write(&path, text).map_err(io)?;
    }
    Ok(SampleAnalysis {
        embedding,
        features,
    })
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn evaluate_pair(
    pair: &Pair,
    extractor: &FeatureExtractor,
    config: &EvalConfig,
) -> Result<(PairRecord, Option<usize>), PairError> {
    let (rb, gb) = match config.embeddings.sides() {
        Some((r, g)) => (Some(r), Some(g)),
        None => (None, None),
    };
    let reference = analyze(
        "reference",
        &pair.stem,
        &pair.reference,
        extractor,
        config,
        rb,
    )?;
    let generated = analyze(
        "generated",
        &pair.stem,
        &pair.generated,
        extractor,
        config,
        gb,
    )?;
    let dim = reference.embedding.as_ref().map(|e| e.dim());
    let scores = score_pair(&reference, &generated)?;
    Ok((
        PairRecord {
            pair_id: pair.stem.clone(),
            reference_file: file_name(&pair.reference),
            generated_file: file_name(&pair.generated),
            emotion: config.emotions.label(&pair.stem),
            scores: scores
                .scores
                .into_iter()
                .map(|(m, v)| (m, quantize(v)))
                .collect(),
            zero_norm: scores.zero_norm,
        },
        dim,
    ))
}

/// Score every pair on a pool of `config.workers` threads.
///
/// A pair that fails to decode, extract or embed is reported in
/// `failures` and the run continues; the call fails only when no pair
/// succeeds. Output order and content do not depend on the worker count.
pub fn evaluate_corpus(pairs: &[Pair], config: &EvalConfig) -> Result<Evaluation, PipelineError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let extractor = FeatureExtractor::new(config.frame_params)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        pairs
            .par_iter()
            .map(|p| {
                let r = evaluate_pair(p, &extractor, config);
                match &r {
                    Ok(_) => log::debug!("scored {}", p.stem),
                    Err(e) => log::warn!("pair {} failed: {e}", p.stem),
                }
                (p.stem.clone(), r)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut embedding_dim = None;
    for (stem, r) in results {
        match r {
            Ok((rec, dim)) => {
                embedding_dim = embedding_dim.or(dim);
                records.push(rec);
            }
            Err(e) => failures.push(PairFailure {
                pair_id: stem,
                error: e.to_string(),
            }),
        }
    }
    records.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    failures.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    if records.is_empty() {
        return Err(PipelineError::AllPairsFailed {
            count: failures.len(),
            first: failures
                .first()
                .map(|f| format!("{}: {}", f.pair_id, f.error))
                .unwrap_or_default(),
        });
    }
    Ok(Evaluation {
        records,
        failures,
        embedding_dim,
    })
}
