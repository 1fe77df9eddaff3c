//! Speaker embeddings, either computed by a speaker-verification model or
//! read from a precomputed JSON manifest keyed by file stem.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};
use thiserror::Error;

use crate::audio::{AudioBuffer, CANONICAL_RATE};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("failed to load model {path}: {reason}")]
    ModelLoad { path: String, reason: String },
    #[error("model graph does not match the waveform -> embedding contract: {0}")]
    Schema(String),
    #[error("model inference failed: {0}")]
    Inference(String),
    #[error("embedding dimension mismatch: expected {expected}, got {actual}{}", key.as_ref().map(|k| format!(" for '{k}'")).unwrap_or_default())]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        key: Option<String>,
    },
    #[error("speaker models take {expected} Hz audio, got {actual} Hz")]
    Rate { expected: u32, actual: u32 },
    #[error("speaker models take mono audio, got {0} channels")]
    NotMono(u16),
    #[error("no precomputed embedding for '{0}'")]
    Missing(String),
    #[error("invalid embedding{}: {reason}", key.as_ref().map(|k| format!(" '{k}'")).unwrap_or_default())]
    Invalid { key: Option<String>, reason: String },
    #[error("cannot parse embeddings file {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Finite, nonzero speaker vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding(Vec<f64>);

impl SpeakerEmbedding {
    pub fn new(vector: Vec<f64>) -> Result<Self, EmbeddingError> {
        let invalid = |reason: &str| EmbeddingError::Invalid {
            key: None,
            reason: reason.to_string(),
        };
        if vector.is_empty() {
            return Err(invalid("empty vector"));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite entry"));
        }
        if vector.iter().all(|&v| v == 0.0) {
            return Err(invalid("zero norm"));
        }
        Ok(Self(vector))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Which backend to load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendMode {
    Model(PathBuf),
    Precomputed(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendSpec {
    pub mode: BackendMode,
    pub expected_dim: Option<usize>,
}

/// Any model mapping a 16 kHz mono waveform to one vector.
pub trait SpeakerEncoder: Send + Sync {
    /// Stable identifier recorded in reports.
    fn id(&self) -> String;
    /// Output dimension, when the model declares it.
    fn dim(&self) -> Option<usize>;
    fn encode(&self, samples: &[f32]) -> Result<Vec<f32>, EmbeddingError>;
}

/// Stem -> embedding map with a single shared dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: Option<usize>,
    entries: BTreeMap<String, SpeakerEmbedding>,
}

impl EmbeddingStore {
    pub fn from_entries(
        entries: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self, EmbeddingError> {
        let mut store = EmbeddingStore::default();
        for (key, vector) in entries {
            if store.entries.contains_key(&key) {
                return Err(EmbeddingError::Invalid {
                    key: Some(key),
                    reason: "duplicate stem".into(),
                });
            }
            match store.dim {
                Some(d) if d != vector.len() => {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: d,
                        actual: vector.len(),
                        key: Some(key),
                    })
                }
                _ => store.dim = Some(vector.len()),
            }
            let emb = SpeakerEmbedding::new(vector).map_err(|e| match e {
                EmbeddingError::Invalid { reason, .. } => EmbeddingError::Invalid {
                    key: Some(key.clone()),
                    reason,
                },
                other => other,
            })?;
            store.entries.insert(key, emb);
        }
        Ok(store)
    }

    /// `None` for an empty store.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, stem: &str) -> Result<&SpeakerEmbedding, EmbeddingError> {
        self.entries
            .get(stem)
            .ok_or_else(|| EmbeddingError::Missing(stem.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SpeakerEmbedding)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Serialize as a JSON object with keys in sorted order and one entry
    /// per line, so identical stores produce identical bytes.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{");
        for (i, (key, emb)) in self.entries.iter().enumerate() {
            out.push_str(if i == 0 { "\n  " } else { ",\n  " });
            out.push_str(&serde_json::to_string(key).expect("string serializes"));
            out.push_str(": ");
            out.push_str(&serde_json::to_string(emb.as_slice()).expect("floats serialize"));
        }
        if !self.entries.is_empty() {
            out.push('\n');
        }
        out.push_str("}\n");
        out
    }
}

/// Ordered key/value pairs that reject duplicate keys while deserializing.
struct RawEntries(Vec<(String, Vec<f64>)>);

impl<'de> Deserialize<'de> for RawEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;
        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = RawEntries;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping file stems to arrays of numbers")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<RawEntries, A::Error> {
                let mut out = Vec::new();
                let mut seen = std::collections::BTreeSet::new();
                while let Some((k, v)) = map.next_entry::<String, Vec<f64>>()? {
                    if !seen.insert(k.clone()) {
                        return Err(serde::de::Error::custom(format!("duplicate stem '{k}'")));
                    }
                    out.push((k, v));
                }
                Ok(RawEntries(out))
            }
        }
        deserializer.deserialize_map(EntriesVisitor)
    }
}

pub fn parse_precomputed(json: &str, origin: &str) -> Result<EmbeddingStore, EmbeddingError> {
    let raw: RawEntries = serde_json::from_str(json).map_err(|e| EmbeddingError::Parse {
        path: origin.to_string(),
        reason: e.to_string(),
    })?;
    EmbeddingStore::from_entries(raw.0)
}

/// Load a precomputed-embedding manifest (`{"stem": [numbers], ...}`).
pub fn read_precomputed(path: &Path) -> Result<EmbeddingStore, EmbeddingError> {
    let text = std::fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_precomputed(&text, &path.display().to_string())
}

/// A ready embedding source.
pub enum Backend {
    Model {
        encoder: Box<dyn SpeakerEncoder>,
        expected_dim: Option<usize>,
    },
    Precomputed {
        store: EmbeddingStore,
        source: String,
    },
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backend")
            .field("id", &self.id())
            .field("dim", &self.dim())
            .finish()
    }
}

impl Backend {
    pub fn load(spec: &BackendSpec) -> Result<Self, EmbeddingError> {
        match &spec.mode {
            BackendMode::Precomputed(path) => {
                let store = read_precomputed(path)?;
                if let (Some(expected), Some(actual)) = (spec.expected_dim, store.dim()) {
                    if expected != actual {
                        return Err(EmbeddingError::ModelLoad {
                            path: path.display().to_string(),
                            reason: format!(
                                "expected dimension {expected} but manifest vectors have {actual}"
                            ),
                        });
                    }
                }
                let source = path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok(Backend::Precomputed { store, source })
            }
            BackendMode::Model(path) => {
                let encoder = onnx::OnnxEncoder::load(path)?;
                Self::from_encoder(Box::new(encoder), spec.expected_dim)
            }
        }
    }

    pub fn from_encoder(
        encoder: Box<dyn SpeakerEncoder>,
        expected_dim: Option<usize>,
    ) -> Result<Self, EmbeddingError> {
        if let (Some(expected), Some(actual)) = (expected_dim, encoder.dim()) {
            if expected != actual {
                return Err(EmbeddingError::ModelLoad {
                    path: encoder.id(),
                    reason: format!("expected dimension {expected} but model declares {actual}"),
                });
            }
        }
        let expected_dim = expected_dim.or(encoder.dim());
        Ok(Backend::Model {
            encoder,
            expected_dim,
        })
    }

    pub fn from_store(store: EmbeddingStore, source: impl Into<String>) -> Self {
        Backend::Precomputed {
            store,
            source: source.into(),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Backend::Model { encoder, .. } => format!("model:{}", encoder.id()),
            Backend::Precomputed { source, .. } => format!("precomputed:{source}"),
        }
    }

    /// Embedding dimension when known before the first call.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Backend::Model { expected_dim, .. } => *expected_dim,
            Backend::Precomputed { store, .. } => store.dim(),
        }
    }

    /// Embed one file. `key` is the file stem used in precomputed mode.
    pub fn embed(&self, key: &str, buf: &AudioBuffer) -> Result<SpeakerEmbedding, EmbeddingError> {
        if buf.sample_rate() != CANONICAL_RATE {
            return Err(EmbeddingError::Rate {
                expected: CANONICAL_RATE,
                actual: buf.sample_rate(),
            });
        }
        if buf.channels() != 1 {
            return Err(EmbeddingError::NotMono(buf.channels()));
        }
        match self {
            Backend::Precomputed { store, .. } => store.get(key).cloned(),
            Backend::Model {
                encoder,
                expected_dim,
            } => {
                let raw = encoder.encode(buf.samples())?;
                if let Some(d) = expected_dim {
                    if raw.len() != *d {
                        return Err(EmbeddingError::DimensionMismatch {
                            expected: *d,
                            actual: raw.len(),
                            key: Some(key.to_string()),
                        });
                    }
                }
                SpeakerEmbedding::new(raw.into_iter().map(f64::from).collect()).map_err(|e| match e
                {
                    EmbeddingError::Invalid { reason, .. } => EmbeddingError::Invalid {
                        key: Some(key.to_string()),
                        reason,
                    },
                    other => other,
                })
            }
        }
    }
}

pub mod onnx;
mod proto;
