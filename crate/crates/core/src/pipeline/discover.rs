//! Pairing reference and generated files by stem.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub stem: String,
    pub reference: PathBuf,
    pub generated: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Discovery {
    pub pairs: Vec<Pair>,
    /// File names present on one side only.
    pub unmatched_reference: Vec<String>,
    pub unmatched_generated: Vec<String>,
}

fn is_wav(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// WAV files directly inside `dir`, keyed by stem. Subdirectories and
/// other extensions are ignored.
pub fn list_wavs(dir: &Path) -> Result<BTreeMap<String, PathBuf>, PipelineError> {
    let io = |source| PipelineError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let path = entry.path();
        if !entry.file_type().map_err(io)?.is_file() && !path.is_file() {
            continue;
        }
        if !is_wav(&path) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            log::warn!("skipping non-UTF-8 file name {}", path.display());
            continue;
        };
        if stem.is_empty() || stem.starts_with('.') {
            continue;
        }
        if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
            return Err(PipelineError::DuplicateStem {
                stem: stem.to_string(),
                first: prev.display().to_string(),
                second: path.display().to_string(),
            });
        }
    }
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Match files by exact (case-sensitive) stem, sorted by stem.
pub fn discover_pairs(
    reference_dir: &Path,
    generated_dir: &Path,
) -> Result<Discovery, PipelineError> {
    let refs = list_wavs(reference_dir)?;
    let mut gens = list_wavs(generated_dir)?;
    let mut d = Discovery::default();
    for (stem, reference) in refs {
        match gens.remove(&stem) {
            Some(generated) => d.pairs.push(Pair {
                stem,
                reference,
                generated,
            }),
            None => d.unmatched_reference.push(file_name(&reference)),
        }
    }
    d.unmatched_generated = gens.values().map(|p| file_name(p)).collect();
    if d.pairs.is_empty() {
        return Err(PipelineError::NoPairs {
            reference_dir: reference_dir.display().to_string(),
            generated_dir: generated_dir.display().to_string(),
        });
    }
    for name in &d.unmatched_reference {
        log::warn!("no generated file for reference {name}");
    }
    for name in &d.unmatched_generated {
        log::warn!("no reference file for generated {name}");
    }
    Ok(d)
}
