//! Text-prompt assignment: each sample is paired with the text of a
//! different, randomly drawn sample.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptAssignment {
    pub sample_id: String,
    pub assigned_text: String,
    pub source_sample_id: String,
}

/// For every sample draw, uniformly and independently, another sample
/// whose text it will be given. Same manifest and seed, same output.
pub fn make_prompt_assignments(
    manifest: &[(String, String)],
    seed: u64,
) -> Result<Vec<PromptAssignment>, PipelineError> {
    let n = manifest.len();
    if n < 2 {
        return Err(PipelineError::TooFewSamples(n));
    }
    let mut seen = BTreeSet::new();
    for (i, (id, text)) in manifest.iter().enumerate() {
        let problem = if id.is_empty() {
            Some("empty sample id")
        } else if text.trim().is_empty() {
            Some("empty text")
        } else if !seen.insert(id.as_str()) {
            Some("duplicate sample id")
        } else {
            None
        };
        if let Some(reason) = problem {
            return Err(PipelineError::Manifest {
                path: "manifest".into(),
                line: i + 1,
                reason: format!("{reason} ('{id}')"),
            });
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(manifest
        .iter()
        .enumerate()
        .map(|(i, (id, _))| {
            // draw from the n - 1 other indices
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            PromptAssignment {
                sample_id: id.clone(),
                assigned_text: manifest[j].1.clone(),
                source_sample_id: manifest[j].0.clone(),
            }
        })
        .collect())
}

/// Read a `sample_id<TAB>text` manifest. Blank lines are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, body)) = line.split_once('\t') else {
            return Err(PipelineError::Manifest {
                path: path.display().to_string(),
                line: i + 1,
                reason: "expected sample_id<TAB>text".into(),
            });
        };
        out.push((id.to_string(), body.to_string()));
    }
    Ok(out)
}

/// Write assignments as `sample_id<TAB>source_sample_id<TAB>text` lines.
pub fn write_assignments(
    path: &Path,
    assignments: &[PromptAssignment],
) -> Result<(), PipelineError> {
    let mut out = String::new();
    for a in assignments {
        out.push_str(&a.sample_id);
        out.push('\t');
        out.push_str(&a.source_sample_id);
        out.push('\t');
        out.push_str(&a.assigned_text);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}
