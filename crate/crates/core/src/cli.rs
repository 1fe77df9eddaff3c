//! Command-line interface: `evaluate`, `prompts` and `embed`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::audio::load_canonical;
use crate::embedding::{Backend, BackendMode, BackendSpec, EmbeddingStore};
use crate::features::FeatureId;
use crate::pipeline::{
    aggregate, discover_pairs, evaluate_corpus, list_wavs, make_prompt_assignments, read_manifest,
    write_assignments, write_reports, AliasTable, Embeddings, EmotionMode, EvalConfig,
    PipelineError, Unmatched, ALIAS_TABLE_ENV, DETAILS_FILE, SUMMARY_FILE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cloneval",
    version,
    about = "Score cloned speech against reference recordings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare matching files in two directories and write details.csv and summary.json
    Evaluate(EvaluateArgs),
    /// Assign each sample the text prompt of another, randomly drawn sample
    Prompts(PromptsArgs),
    /// Run a speaker model over a directory and save the embeddings as JSON
    Embed(EmbedArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmotionsFlag {
    /// Parse emotion labels from file names
    Auto,
    /// Label every pair unknown
    Off,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("embedding_source").required(true).multiple(false)
    .args(["embedding_model", "embeddings_ref", "no_embedding"]))]
struct EvaluateArgs {
    /// Directory of original recordings
    #[arg(long, value_name = "DIR")]
    reference_dir: PathBuf,
    /// Directory of cloned recordings, matched to the references by file stem
    #[arg(long, value_name = "DIR")]
    generated_dir: PathBuf,
    /// Where to write the reports
    #[arg(long, value_name = "DIR")]
    output_dir: PathBuf,
    /// ONNX speaker model taking a 16 kHz waveform
    #[arg(long, value_name = "PATH")]
    embedding_model: Option<PathBuf>,
    /// Precomputed embeddings for the reference side (JSON, stem -> vector)
    #[arg(long, value_name = "PATH", requires = "embeddings_gen")]
    embeddings_ref: Option<PathBuf>,
    /// Precomputed embeddings for the generated side
    #[arg(long, value_name = "PATH", requires = "embeddings_ref")]
    embeddings_gen: Option<PathBuf>,
    /// Skip speaker similarity and report acoustic features only
    #[arg(long)]
    no_embedding: bool,
    /// Fail unless embeddings have this length
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    expected_dim: Option<u64>,
    /// Comma-separated feature ids, `all` or `none`
    #[arg(long, value_name = "LIST", default_value = "all", value_parser = parse_features)]
    features: FeatureList,
    /// Emotion labelling
    #[arg(long, value_enum, default_value_t = EmotionsFlag::Auto)]
    emotions: EmotionsFlag,
    /// JSON alias table merged over the built-in emotion aliases
    #[arg(long, value_name = "PATH", env = ALIAS_TABLE_ENV)]
    alias_table: Option<PathBuf>,
    /// Worker threads (results do not depend on this) [default: logical cores]
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    /// Also write every feature summary as JSON under OUTPUT_DIR/features
    #[arg(long)]
    dump_features: bool,
}

#[derive(Debug, Args)]
struct PromptsArgs {
    /// TSV manifest of `sample_id<TAB>text` lines
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    /// Seed for the draws
    #[arg(long)]
    seed: u64,
    /// Output TSV of `sample_id<TAB>source_sample_id<TAB>text` lines
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Directory of WAV files
    #[arg(long, value_name = "DIR")]
    input_dir: PathBuf,
    /// ONNX speaker model taking a 16 kHz waveform
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Output JSON manifest (stem -> vector)
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Fail unless embeddings have this length
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    expected_dim: Option<u64>,
    /// Worker threads [default: logical cores]
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct FeatureList(Vec<FeatureId>);

fn parse_features(s: &str) -> Result<FeatureList, String> {
    match s.trim() {
        "all" => return Ok(FeatureList(FeatureId::ALL.to_vec())),
        "none" | "" => return Ok(FeatureList(Vec::new())),
        _ => {}
    }
    s.split(',')
        .map(|t| t.trim().parse::<FeatureId>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()
        .map(FeatureList)
}

/// Error carrying the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn run(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) | PipelineError::AliasTable { .. } => {
                Failure::config(e.to_string())
            }
            other => Failure::run(other.to_string()),
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn require_dir(flag: &str, dir: &Path) -> Result<(), Failure> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Failure::config(format!(
            "{flag} {} is not a directory",
            dir.display()
        )))
    }
}

fn load_backend(mode: BackendMode, expected_dim: Option<u64>) -> Result<Backend, Failure> {
    Backend::load(&BackendSpec {
        mode,
        expected_dim: expected_dim.map(|d| d as usize),
    })
    .map_err(|e| Failure::run(e.to_string()))
}

fn evaluate(args: EvaluateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    require_dir("--reference-dir", &args.reference_dir)?;
    require_dir("--generated-dir", &args.generated_dir)?;
    let emotions = match args.emotions {
        EmotionsFlag::Off => EmotionMode::Off,
        EmotionsFlag::Auto => EmotionMode::Auto(match &args.alias_table {
            Some(p) => AliasTable::from_file(p)?,
            None => AliasTable::default(),
        }),
    };
    if args.no_embedding && args.features.0.is_empty() {
        return Err(Failure::config(
            "nothing to evaluate: --no-embedding with --features none",
        ));
    }

    let embeddings = if let Some(model) = args.embedding_model {
        Embeddings::Shared(load_backend(BackendMode::Model(model), args.expected_dim)?)
    } else if let (Some(r), Some(g)) = (args.embeddings_ref, args.embeddings_gen) {
        Embeddings::Split {
            reference: load_backend(BackendMode::Precomputed(r), args.expected_dim)?,
            generated: load_backend(BackendMode::Precomputed(g), args.expected_dim)?,
        }
    } else {
        Embeddings::Disabled
    };

    let discovery = discover_pairs(&args.reference_dir, &args.generated_dir)?;
    let config = EvalConfig {
        features: args.features.0,
        embeddings,
        emotions,
        workers: args.workers.map_or_else(default_workers, |w| w as usize),
        dump_features: args.dump_features.then(|| args.output_dir.join("features")),
        ..EvalConfig::new(Embeddings::Disabled)
    };
    let evaluation = evaluate_corpus(&discovery.pairs, &config)?;
    let mut summary = aggregate(
        &evaluation.records,
        config.run_config(evaluation.embedding_dim),
    )?;
    summary.failures = evaluation.failures;
    summary.unmatched = Unmatched {
        reference: discovery.unmatched_reference,
        generated: discovery.unmatched_generated,
    };
    write_reports(&args.output_dir, &evaluation.records, &summary)?;

    let _ = writeln!(
        out,
        "evaluated {} pairs ({} failed, {} unmatched files)",
        summary.pairs,
        summary.failures.len(),
        summary.unmatched.reference.len() + summary.unmatched.generated.len()
    );
    for (metric, mean) in &summary.overall {
        let _ = writeln!(out, "{:<18} {mean:.6}", metric.as_str());
    }
    let _ = writeln!(
        out,
        "wrote {} and {}",
        args.output_dir.join(DETAILS_FILE).display(),
        args.output_dir.join(SUMMARY_FILE).display()
    );
    Ok(())
}

fn prompts(args: PromptsArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let manifest = read_manifest(&args.manifest)?;
    let assignments = make_prompt_assignments(&manifest, args.seed)?;
    write_assignments(&args.out, &assignments)?;
    let _ = writeln!(
        out,
        "assigned {} prompts to {}",
        assignments.len(),
        args.out.display()
    );
    Ok(())
}

fn embed(args: EmbedArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if !args.input_dir.is_dir() {
        return Err(Failure::config(format!(
            "--input-dir {} is not a directory",
            args.input_dir.display()
        )));
    }
    let files = list_wavs(&args.input_dir)?;
    if files.is_empty() {
        return Err(Failure::run(format!(
            "no audio files in {}",
            args.input_dir.display()
        )));
    }
    let backend = load_backend(BackendMode::Model(args.model), args.expected_dim)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.map_or_else(default_workers, |w| w as usize))
        .build()
        .map_err(|e| Failure::run(format!("cannot start worker pool: {e}")))?;
    let files: Vec<(String, PathBuf)> = files.into_iter().collect();
    let results: Vec<Result<(String, Vec<f64>), String>> = pool.install(|| {
        files
            .par_iter()
            .map(|(stem, path)| {
                let buf = load_canonical(path).map_err(|e| format!("{}: {e}", path.display()))?;
                let emb = backend
                    .embed(stem, &buf)
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                Ok((stem.clone(), emb.as_slice().to_vec()))
            })
            .collect()
    });
    let entries = results
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::run)?;
    let count = entries.len();
    let store = EmbeddingStore::from_entries(entries).map_err(|e| Failure::run(e.to_string()))?;
    std::fs::write(&args.out, store.to_json())
        .map_err(|e| Failure::run(format!("{}: {e}", args.out.display())))?;
    let _ = writeln!(
        out,
        "wrote {count} embeddings of dimension {} to {}",
        store.dim().unwrap_or(0),
        args.out.display()
    );
    Ok(())
}

/// Parse `args` (including the program name) and run the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
                return EXIT_OK;
            }
            let _ = write!(err, "{text}");
            return EXIT_CONFIG;
        }
    };
    let result = match cli.command {
        Command::Evaluate(a) => evaluate(a, out),
        Command::Prompts(a) => prompts(a, out),
        Command::Embed(a) => embed(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
