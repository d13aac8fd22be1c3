use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use airkit::harness::{self, exit, CommandSpec, IngestSpec, RagEvalSpec, RocSpec, RunManifest, SenseBenchConfig, WaterfillSpec};
use airkit::llm::{BackendConfig, TranscriptWriter};
use airkit::prompting::PromptStyle;
use airkit::ragstore::{ChunkIndex, IndexParams, DEFAULT_TOP_K};
use airkit::signal::{generate_frame, Hypothesis, NoisePower, SnrSpec};
use airkit::{Error, Result};

/// Wireless-task benchmarks for energy detection, water-filling and
/// retrieval-augmented question answering.
#[derive(Parser)]
#[command(name = "airkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Energy detector vs. few-shot LLM detector over an SNR list.
    SenseBench {
        /// JSON config; omitted fields take the reference preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the energy-detector trial count.
        #[arg(long)]
        trials: Option<u64>,
        /// Append every LLM exchange to this JSONL file.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Energy-detector operating points over a grid of target false-alarm rates.
    Roc {
        #[arg(long, allow_hyphen_values = true)]
        noise_dbm: f64,
        #[arg(long, allow_hyphen_values = true)]
        snr_db: f64,
        #[arg(long)]
        n: usize,
        #[arg(long = "pf", num_args = 1.., required = true)]
        pf: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a power-allocation problem, or validate a proposed allocation.
    Waterfill {
        #[arg(long)]
        problem: PathBuf,
        /// JSON object with `powers_mw`.
        #[arg(long, conflicts_with = "backend")]
        proposed: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Backend config JSON; its `ALLOCATION:` answer is validated.
        #[arg(long)]
        backend: Option<PathBuf>,
        #[arg(long, default_value = "chain_of_thought_with_program")]
        style: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrieval store: build an index, query it, or run a graded evaluation.
    Rag {
        #[command(subcommand)]
        command: RagCommand,
    },
    /// Rerun a manifest and compare output digests.
    Reproduce {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export one synthetic sensing frame as JSON.
    Frame(FrameArgs),
}

#[derive(Subcommand)]
enum RagCommand {
    Ingest {
        /// JSON array of `{doc_id, source, text, metadata}` records.
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 256)]
        chunk_tokens: usize,
        #[arg(long, default_value_t = 64)]
        overlap_tokens: usize,
        /// Manifest directory; defaults to the index's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        k: usize,
    },
    Eval {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        backend: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        k: usize,
        #[arg(long)]
        no_rag: bool,
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FrameArgs {
    /// `H0` or `H1`.
    #[arg(long)]
    truth: String,
    #[arg(long, allow_hyphen_values = true, default_value_t = -100.0)]
    noise_dbm: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })
}

fn parse_style(s: &str) -> Result<PromptStyle> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::InvalidParameter(format!("unknown prompt style `{s}`")))
}

fn transcript(path: Option<&PathBuf>) -> Result<Option<TranscriptWriter>> {
    Ok(path.map(TranscriptWriter::create).transpose()?)
}

/// Executes, writes artifacts, echoes standard output.
fn run_and_write(cmd: CommandSpec, out: Option<&Path>, transcript: Option<&TranscriptWriter>) -> Result<i32> {
    let run = harness::execute(&cmd, transcript)?;
    if let Some(dir) = out {
        harness::write_run(dir, &run)?;
    }
    print!("{}", run.stdout);
    if !run.stdout.ends_with('\n') {
        println!();
    }
    Ok(run.status.exit_code())
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::SenseBench {
            config,
            out,
            trials,
            transcript: tpath,
        } => {
            let mut cfg: SenseBenchConfig = match &config {
                Some(p) => read_json(p)?,
                None => SenseBenchConfig::default(),
            };
            if let Some(t) = trials {
                cfg.energy_trials = t;
            }
            let writer = transcript(tpath.as_ref())?;
            run_and_write(CommandSpec::SenseBench { config: cfg }, Some(&out), writer.as_ref())
        }
        Command::Roc {
            noise_dbm,
            snr_db,
            n,
            pf,
            trials,
            seed,
            out,
        } => {
            let spec = RocSpec {
                noise_dbm,
                snr_db,
                n,
                pf_grid: pf,
                trials,
                seed,
            };
            run_and_write(CommandSpec::Roc { spec }, Some(&out), None)
        }
        Command::Waterfill {
            problem,
            proposed,
            tol,
            backend,
            style,
            out,
        } => {
            let backend: Option<BackendConfig> = backend.as_deref().map(read_json).transpose()?;
            let spec = WaterfillSpec {
                problem,
                proposed,
                backend,
                style: parse_style(&style)?,
                tol,
            };
            run_and_write(CommandSpec::Waterfill { spec }, out.as_deref(), None)
        }
        Command::Rag { command } => match command {
            RagCommand::Ingest {
                docs,
                index,
                chunk_tokens,
                overlap_tokens,
                out,
            } => {
                let dir = out.unwrap_or_else(|| index.parent().map(Path::to_path_buf).unwrap_or_default());
                let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
                let spec = IngestSpec {
                    docs,
                    index,
                    params: IndexParams::with_chunking(chunk_tokens, overlap_tokens),
                };
                run_and_write(CommandSpec::RagIngest { spec }, Some(&dir), None)
            }
            RagCommand::Query { index, query, k } => {
                let index = ChunkIndex::load(&index)?;
                for (rank, (chunk, score)) in index.retrieve(&query, k).into_iter().enumerate() {
                    println!(
                        "{}\t{:.6}\t{}\t{}-{}\t{}",
                        rank + 1,
                        score,
                        chunk.doc_id,
                        chunk.span.0,
                        chunk.span.1,
                        chunk.text.replace('\n', " ")
                    );
                }
                Ok(exit::OK)
            }
            RagCommand::Eval {
                questions,
                index,
                backend,
                k,
                no_rag,
                transcript: tpath,
                out,
            } => {
                let spec = RagEvalSpec {
                    index,
                    questions,
                    backend: read_json(&backend)?,
                    k,
                    no_rag,
                };
                let writer = transcript(tpath.as_ref())?;
                run_and_write(CommandSpec::RagEval { spec }, Some(&out), writer.as_ref())
            }
        },
        Command::Reproduce { manifest, out } => {
            let m = RunManifest::load(&manifest)?;
            let report = harness::reproduce(&m, &out)?;
            for d in &report.inputs_changed {
                eprintln!("input changed: {} (recorded {})", d.name, d.expected);
            }
            for d in &report.outputs {
                println!(
                    "MISMATCH {} expected {} got {}",
                    d.name,
                    d.expected,
                    d.actual.as_deref().unwrap_or("<missing>")
                );
            }
            if report.is_exact() {
                println!("reproduced {} output(s) exactly", report.checked);
                Ok(exit::OK)
            } else {
                Ok(exit::VALIDATION)
            }
        }
        Command::Frame(a) => {
            let truth = match a.truth.to_ascii_uppercase().as_str() {
                "H0" => Hypothesis::H0,
                "H1" => Hypothesis::H1,
                other => return Err(Error::InvalidParameter(format!("truth must be H0 or H1, got `{other}`"))),
            };
            let frame = generate_frame(truth, NoisePower::from_dbm(a.noise_dbm)?, SnrSpec::from_db(a.snr_db)?, a.n, a.seed)?;
            let json = frame.to_json();
            match a.out {
                Some(p) => std::fs::write(&p, json).map_err(|e| Error::Io { path: p, source: e })?,
                None => println!("{json}"),
            }
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
