//! Emotion labels parsed from file stems.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Environment variable naming an alias file merged over the defaults.
pub const ALIAS_TABLE_ENV: &str = "CLONEVAL_ALIAS_TABLE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Anger,
    Disgust,
    Fear,
    Happiness,
    Neutral,
    Sadness,
    Unknown,
}

impl Emotion {
    pub const KNOWN: [Emotion; 6] = [
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Happiness,
        Emotion::Neutral,
        Emotion::Sadness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Happiness => "happiness",
            Emotion::Neutral => "neutral",
            Emotion::Sadness => "sadness",
            Emotion::Unknown => "unknown",
        }
    }

    pub fn is_known(self) -> bool {
        self != Emotion::Unknown
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Emotion::KNOWN
            .into_iter()
            .chain([Emotion::Unknown])
            .find(|e| e.as_str() == s)
            .ok_or_else(|| format!("unknown emotion label '{s}'"))
    }
}

/// Whole-stem rule for naming schemes that encode the emotion as a
/// numeric field at a fixed position (`03-01-05-01-02-01-12`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionalRule {
    pub separator: char,
    /// Exact number of fields the stem must have.
    pub fields: usize,
    /// Zero-based index of the emotion field.
    pub index: usize,
    pub codes: BTreeMap<String, Emotion>,
}

impl PositionalRule {
    fn apply(&self, stem: &str) -> Option<Emotion> {
        let parts: Vec<&str> = stem.split(self.separator).collect();
        if parts.len() != self.fields
            || parts
                .iter()
                .any(|p| p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()))
        {
            return None;
        }
        self.codes.get(parts[self.index]).copied()
    }
}

/// Token-to-label mapping plus optional structured rules.
///
/// Lookup order for a stem: positional rules on the whole stem, then each
/// `_`/`-`/`.` separated token left to right, matched case-insensitively
/// against the aliases and then against the prefix codes (`sa03`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasTable {
    #[serde(default)]
    pub aliases: BTreeMap<String, Emotion>,
    /// Prefixes of tokens that continue with digits only (`sa` matches `sa03`).
    #[serde(default)]
    pub prefix_codes: BTreeMap<String, Emotion>,
    #[serde(default)]
    pub positional: Vec<PositionalRule>,
}

/// Partial table read from a file; present sections override the defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AliasOverrides {
    #[serde(default)]
    aliases: BTreeMap<String, Emotion>,
    prefix_codes: Option<BTreeMap<String, Emotion>>,
    positional: Option<Vec<PositionalRule>>,
}

impl Default for AliasTable {
    fn default() -> Self {
        use Emotion::*;
        let words: &[(&str, Emotion)] = &[
            ("anger", Anger),
            ("angry", Anger),
            ("ang", Anger),
            ("disgust", Disgust),
            ("disgusted", Disgust),
            ("dis", Disgust),
            ("fear", Fear),
            ("fearful", Fear),
            ("scared", Fear),
            ("fea", Fear),
            ("happiness", Happiness),
            ("happy", Happiness),
            ("hap", Happiness),
            ("neutral", Neutral),
            ("neu", Neutral),
            ("sadness", Sadness),
            ("sad", Sadness),
        ];
        let ravdess = [
            ("01", Neutral),
            ("03", Happiness),
            ("04", Sadness),
            ("05", Anger),
            ("06", Fear),
            ("07", Disgust),
        ];
        let savee = [
            ("a", Anger),
            ("d", Disgust),
            ("f", Fear),
            ("h", Happiness),
            ("n", Neutral),
            ("sa", Sadness),
        ];
        AliasTable {
            aliases: words.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            prefix_codes: savee.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            positional: vec![PositionalRule {
                separator: '-',
                fields: 7,
                index: 2,
                codes: ravdess.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            }],
        }
    }
}

fn lowercase_keys(map: BTreeMap<String, Emotion>) -> BTreeMap<String, Emotion> {
    map.into_iter()
        .map(|(k, v)| (k.to_lowercase(), v))
        .collect()
}

impl AliasTable {
    /// Defaults merged with the JSON overrides in `text`.
    pub fn with_overrides(text: &str, origin: &str) -> Result<Self, PipelineError> {
        let o: AliasOverrides =
            serde_json::from_str(text).map_err(|e| PipelineError::AliasTable {
                path: origin.to_string(),
                reason: e.to_string(),
            })?;
        let mut table = AliasTable::default();
        table.aliases.extend(lowercase_keys(o.aliases));
        if let Some(p) = o.prefix_codes {
            table.prefix_codes = lowercase_keys(p);
        }
        if let Some(p) = o.positional {
            if let Some(bad) = p.iter().find(|r| r.index >= r.fields) {
                return Err(PipelineError::AliasTable {
                    path: origin.to_string(),
                    reason: format!(
                        "positional index {} outside {} fields",
                        bad.index, bad.fields
                    ),
                });
            }
            table.positional = p;
        }
        Ok(table)
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::AliasTable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::with_overrides(&text, &path.display().to_string())
    }

    /// Explicit path, else the environment variable, else the defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, PipelineError> {
        match explicit {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(ALIAS_TABLE_ENV) {
                Some(p) if !p.is_empty() => Self::from_file(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    fn token(&self, token: &str) -> Option<Emotion> {
        let t = token.to_lowercase();
        // an alias mapped to unknown disables that token
        if let Some(&e) = self.aliases.get(&t) {
            return e.is_known().then_some(e);
        }
        // longest matching prefix wins
        self.prefix_codes
            .iter()
            .filter(|(p, _)| {
                t.len() > p.len()
                    && t.starts_with(p.as_str())
                    && t[p.len()..].bytes().all(|b| b.is_ascii_digit())
            })
            .max_by_key(|(p, _)| p.len())
            .map(|(_, &e)| e)
    }

    pub fn parse(&self, stem: &str) -> Emotion {
        if let Some(e) = self.positional.iter().find_map(|r| r.apply(stem)) {
            return e;
        }
        stem.split(['_', '-', '.'])
            .filter(|t| !t.is_empty())
            .find_map(|t| self.token(t))
            .unwrap_or(Emotion::Unknown)
    }
}

/// `auto` parses stems with an alias table; `off` labels everything unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmotionMode {
    Auto(AliasTable),
    Off,
}

impl EmotionMode {
    pub fn label(&self, stem: &str) -> Emotion {
        match self {
            EmotionMode::Auto(table) => table.parse(stem),
            EmotionMode::Off => Emotion::Unknown,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EmotionMode::Auto(_) => "auto",
            EmotionMode::Off => "off",
        }
    }
}
