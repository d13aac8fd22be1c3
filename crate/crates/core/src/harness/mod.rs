//! Experiment driver behind the `airkit` command line.
//!
//! Every command that produces files also writes `manifest.json`, which
//! records the full command snapshot, design parameters, seeds and SHA-256
//! digests of inputs and outputs. [`reproduce`] reruns a manifest and
//! compares digests.

mod sense;

pub use sense::{sense_bench, LlmTally, SenseBenchConfig, SenseBenchResult, SnrDetail};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::detector::{monte_carlo_rates, RatePair, TargetFalseAlarm};
use crate::error::{Error, Result};
use crate::llm::{build_backend, BackendConfig, BackendKind, TranscriptWriter};
use crate::prompting::{parse_allocation, render_power_prompt, PromptStyle, RenderedPrompt};
use crate::ragstore::{self, augment, grade, load_questions, parse_choice, ChunkIndex, EvalReport, IndexParams, McQuestion};
use crate::signal::{NoisePower, SnrSpec};
use crate::waterfill::{validate_external_solution, waterfill, Problem, Verdict};

pub const CSV_HEADER: &str = "snr_db,n,pf_target,method,pd,pf,trials,half_width";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Energy,
    Llm,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Energy => "energy",
            Method::Llm => "llm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub snr_db: f64,
    pub n: usize,
    pub pf_target: f64,
    pub method: Method,
    pub pd: f64,
    pub pf: f64,
    pub trials: u64,
    pub half_width: f64,
}

impl RateRow {
    pub fn new(snr_db: f64, n: usize, pf_target: f64, method: Method, rates: RatePair) -> Self {
        RateRow {
            snr_db,
            n,
            pf_target,
            method,
            pd: rates.pd,
            pf: rates.pf,
            trials: rates.trials,
            half_width: rates.half_width,
        }
    }
}

/// Stable sort by `(snr_db, method)`.
pub fn sort_rows(rows: &mut [RateRow]) {
    rows.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db).then(a.method.cmp(&b.method)));
}

pub fn rates_csv(rows: &[RateRow]) -> String {
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.snr_db,
            r.n,
            r.pf_target,
            r.method.as_str(),
            r.pd,
            r.pf,
            r.trials,
            r.half_width
        );
    }
    out
}

pub fn parse_rates_csv(text: &str) -> Result<Vec<RateRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::invalid(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::invalid("unexpected CSV header"));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::invalid(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RocSpec {
    pub noise_dbm: f64,
    pub snr_db: f64,
    pub n: usize,
    pub pf_grid: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
}

/// One energy-detector row per `P_f*`. All rows share the same frames, so
/// empirical false-alarm rates are monotone in the target.
pub fn roc_sweep(spec: &RocSpec) -> Result<Vec<RateRow>> {
    if spec.pf_grid.is_empty() {
        return Err(Error::invalid("pf grid is empty"));
    }
    let noise = NoisePower::from_dbm(spec.noise_dbm)?;
    let snr = SnrSpec::from_db(spec.snr_db)?;
    let targets = spec
        .pf_grid
        .iter()
        .map(|p| TargetFalseAlarm::new(*p))
        .collect::<Result<Vec<_>>>()?;
    targets
        .into_iter()
        .map(|pf| {
            let rates = monte_carlo_rates(noise, snr, spec.n, pf, spec.trials, spec.seed)?;
            Ok(RateRow::new(spec.snr_db, spec.n, pf.value(), Method::Energy, rates))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterfillSpec {
    pub problem: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposed: Option<PathBuf>,
    /// Ask this backend for the allocation instead of reading a file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendConfig>,
    #[serde(default = "default_style")]
    pub style: PromptStyle,
    pub tol: f64,
}

fn default_style() -> PromptStyle {
    PromptStyle::ChainOfThoughtWithProgram
}

#[derive(Debug, Clone, PartialEq)]
pub enum WaterfillOutcome {
    Solution(crate::waterfill::Allocation),
    Verdict { proposed: Vec<f64>, verdict: Verdict },
}

impl WaterfillOutcome {
    pub fn to_json(&self) -> String {
        match self {
            WaterfillOutcome::Solution(a) => serde_json::to_string_pretty(a),
            WaterfillOutcome::Verdict { verdict, .. } => serde_json::to_string_pretty(verdict),
        }
        .expect("outcome serializes")
    }
}

#[derive(Deserialize)]
struct Proposal {
    powers_mw: Vec<f64>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Solves the problem file, or validates a proposal against the solver.
/// A proposal comes from `proposed` or, with `backend`, from the model's
/// `ALLOCATION:` line.
pub fn waterfill_cmd(spec: &WaterfillSpec) -> Result<WaterfillOutcome> {
    if !(spec.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let problem: Problem = read_json(&spec.problem)?;
    let proposed = match (&spec.proposed, &spec.backend) {
        (Some(_), Some(_)) => return Err(Error::invalid("give either a proposal file or a backend, not both")),
        (Some(path), None) => read_json::<Proposal>(path)?.powers_mw,
        (None, Some(cfg)) => {
            let backend = build_backend(cfg)?;
            let prompt = render_power_prompt(&problem.cnrs, problem.budget_mw, spec.style);
            let reply = backend.complete(&prompt)?.response_text;
            parse_allocation(&reply, problem.cnrs.len()).map_err(|e| Error::Rejected(e.to_string()))?
        }
        (None, None) => return Ok(WaterfillOutcome::Solution(waterfill(&problem.cnrs, problem.budget_mw))),
    };
    let verdict = validate_external_solution(&proposed, &problem.cnrs, problem.budget_mw, spec.tol)?;
    Ok(WaterfillOutcome::Verdict { proposed, verdict })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSpec {
    pub docs: PathBuf,
    pub index: PathBuf,
    pub params: IndexParams,
}

pub fn rag_ingest(spec: &IngestSpec) -> Result<ChunkIndex> {
    let docs = ragstore::load_documents(&spec.docs)?;
    let index = ragstore::ingest_with(&docs, spec.params)?;
    index.save(&spec.index)?;
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RagEvalSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    pub questions: PathBuf,
    pub backend: BackendConfig,
    pub k: usize,
    /// Pure-LLM baseline: no retrieved context.
    pub no_rag: bool,
}

/// The prompts [`rag_eval`] sends, one per question. Without an index the
/// prompts carry no context.
pub fn eval_prompts(index: Option<&ChunkIndex>, questions: &[McQuestion], k: usize) -> Result<Vec<RenderedPrompt>> {
    questions
        .iter()
        .map(|q| {
            let hits = index.map(|i| i.retrieve(&q.question, k)).unwrap_or_default();
            let contexts: Vec<&ragstore::Chunk> = hits.iter().map(|(c, _)| *c).collect();
            augment(q, &contexts)
        })
        .collect()
}

/// retrieve → augment → complete → parse_choice → grade.
pub fn rag_eval(spec: &RagEvalSpec, transcript: Option<&TranscriptWriter>) -> Result<EvalReport> {
    let questions = load_questions(&spec.questions)?;
    let index = match (&spec.index, spec.no_rag) {
        (_, true) => None,
        (Some(path), false) => Some(ChunkIndex::load(path)?),
        (None, false) => return Err(Error::invalid("rag eval needs --index unless --no-rag is given")),
    };
    if spec.k == 0 && !spec.no_rag {
        return Err(Error::invalid("k must be at least 1"));
    }
    let prompts = eval_prompts(index.as_ref(), &questions, spec.k)?;
    let backend = build_backend(&spec.backend)?;
    let results = crate::llm::complete_many(backend.as_ref(), &prompts);
    if let Some(w) = transcript {
        for (p, r) in prompts.iter().zip(&results) {
            match r {
                Ok(ex) => w.append(ex)?,
                Err(e) => w.append_error(p, backend.config(), e)?,
            }
        }
    }
    let mut predictions = Vec::with_capacity(questions.len());
    for (r, q) in results.into_iter().zip(&questions) {
        predictions.push(parse_choice(&r?.response_text, q.options.len()));
    }
    grade(&predictions, &questions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum CommandSpec {
    SenseBench { config: SenseBenchConfig },
    Roc { spec: RocSpec },
    Waterfill { spec: WaterfillSpec },
    RagIngest { spec: IngestSpec },
    RagEval { spec: RagEvalSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    #[serde(flatten)]
    pub command: CommandSpec,
    pub parameters: BTreeMap<String, Value>,
    pub seeds: Vec<u64>,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the output directory) → SHA-256.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Files produced by one command, before they are written.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub manifest: Option<RunManifest>,
    /// Text meant for standard output.
    pub stdout: String,
    /// Set when the run completed but something failed downstream
    /// (backend errors at some SNR, a non-optimal verdict).
    pub status: RunStatus,
}

/// Exit statuses of the command line.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const BACKEND: i32 = 3;
    pub const VALIDATION: i32 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RunStatus {
    #[default]
    Ok,
    BackendErrors,
    ValidationFailed,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => exit::OK,
            RunStatus::BackendErrors => exit::BACKEND,
            RunStatus::ValidationFailed => exit::VALIDATION,
        }
    }
}

fn input_digests(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), file_digest(p)?)))
        .collect()
}

fn backend_inputs(cfg: &BackendConfig) -> Vec<&Path> {
    match (&cfg.kind, &cfg.replay_path) {
        (BackendKind::ReplayFile, Some(p)) => vec![p.as_path()],
        _ => Vec::new(),
    }
}

/// Executes a command snapshot and assembles its outputs and manifest.
pub fn execute(command: &CommandSpec, transcript: Option<&TranscriptWriter>) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let mut parameters = BTreeMap::new();
    let mut seeds = Vec::new();
    let mut inputs = BTreeMap::new();
    let mut details = Value::Null;

    match command {
        CommandSpec::SenseBench { config } => {
            let result = sense_bench(config, transcript)?;
            parameters.insert("stride".into(), json!(config.stride));
            parameters.insert("precision".into(), serde_json::to_value(config.precision).unwrap_or(Value::Null));
            parameters.insert("prompt_style".into(), serde_json::to_value(config.style).unwrap_or(Value::Null));
            parameters.insert("threshold_mw".into(), json!(result.threshold.eta_mw));
            parameters.insert("example_frames".into(), json!("drawn at the test SNR"));
            parameters.insert("queries_per_hypothesis".into(), json!(config.test_prompts_per_snr));
            parameters.insert("unparseable_maps_to".into(), json!("H0"));
            let exact_oracle = config.backend.kind == BackendKind::OracleSensing
                && config.stride == 1
                && config.precision == crate::prompting::Precision::Full;
            parameters.insert("exact_oracle_mode".into(), json!(exact_oracle));
            seeds.push(config.seed);
            for d in &result.details {
                seeds.push(d.energy_seed);
                seeds.push(d.prompt_seed);
            }
            if let Some(t) = &config.template_path {
                inputs.insert(t.display().to_string(), file_digest(t)?);
            }
            inputs.extend(input_digests(&backend_inputs(&config.backend))?);
            if result.details.iter().any(|d| d.error.is_some()) {
                out.status = RunStatus::BackendErrors;
            }
            details = serde_json::to_value(&result.details).unwrap_or(Value::Null);
            let csv = rates_csv(&result.rows);
            out.stdout = csv.clone();
            out.files.push(("sense_bench.csv".into(), csv.into_bytes()));
        }
        CommandSpec::Roc { spec } => {
            let rows = roc_sweep(spec)?;
            seeds.push(spec.seed);
            parameters.insert("frames".into(), json!("shared across the pf grid"));
            let csv = rates_csv(&rows);
            out.stdout = csv.clone();
            out.files.push(("roc.csv".into(), csv.into_bytes()));
        }
        CommandSpec::Waterfill { spec } => {
            let outcome = waterfill_cmd(spec)?;
            parameters.insert("tol".into(), json!(spec.tol));
            inputs.insert(spec.problem.display().to_string(), file_digest(&spec.problem)?);
            if let Some(p) = &spec.proposed {
                inputs.insert(p.display().to_string(), file_digest(p)?);
            }
            if let Some(cfg) = &spec.backend {
                inputs.extend(input_digests(&backend_inputs(cfg))?);
            }
            let name = match &outcome {
                WaterfillOutcome::Solution(_) => "solution.json",
                WaterfillOutcome::Verdict { verdict, proposed } => {
                    if *verdict != Verdict::Optimal {
                        out.status = RunStatus::ValidationFailed;
                    }
                    details = json!({ "proposed_mw": proposed });
                    "verdict.json"
                }
            };
            let text = outcome.to_json();
            out.stdout = text.clone();
            out.files.push((name.into(), text.into_bytes()));
        }
        CommandSpec::RagIngest { spec } => {
            let index = rag_ingest(spec)?;
            inputs.insert(spec.docs.display().to_string(), file_digest(&spec.docs)?);
            parameters.insert("bm25".into(), serde_json::to_value(spec.params).unwrap_or(Value::Null));
            let json = index.to_json();
            let name = spec
                .index
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "index.json".into());
            out.stdout = format!(
                "indexed {} chunks, {} terms, average length {:.2} tokens\n",
                index.chunks.len(),
                index.df.len(),
                index.avg_len
            );
            out.files.push((name, json.into_bytes()));
        }
        CommandSpec::RagEval { spec } => {
            let report = rag_eval(spec, transcript)?;
            inputs.insert(spec.questions.display().to_string(), file_digest(&spec.questions)?);
            if let (Some(idx), false) = (&spec.index, spec.no_rag) {
                inputs.insert(idx.display().to_string(), file_digest(idx)?);
                let index = ChunkIndex::load(idx)?;
                parameters.insert("bm25".into(), serde_json::to_value(index.params).unwrap_or(Value::Null));
            }
            parameters.insert("k".into(), json!(spec.k));
            parameters.insert("no_rag".into(), json!(spec.no_rag));
            parameters.insert("unparseable".into(), json!("scored as incorrect"));
            inputs.extend(input_digests(&backend_inputs(&spec.backend))?);
            let table = report.table();
            out.stdout = table.clone();
            out.files.push(("report.json".into(), report.to_json().into_bytes()));
            out.files.push(("report.txt".into(), table.into_bytes()));
        }
    }

    let outputs = out
        .files
        .iter()
        .map(|(name, bytes)| (name.clone(), sha256_hex(bytes)))
        .collect();
    out.manifest = Some(RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.clone(),
        parameters,
        seeds,
        inputs,
        outputs,
        details,
    });
    Ok(out)
}

/// Writes every output file and the manifest into `dir`.
pub fn write_run(dir: &Path, run: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, bytes) in &run.files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    if let Some(m) = &run.manifest {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, m.to_json()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigestMismatch {
    pub name: String,
    pub expected: String,
    pub actual: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ReproduceReport {
    pub inputs_changed: Vec<DigestMismatch>,
    pub outputs: Vec<DigestMismatch>,
    pub checked: usize,
}

impl ReproduceReport {
    pub fn is_exact(&self) -> bool {
        self.inputs_changed.is_empty() && self.outputs.is_empty()
    }
}

/// Reruns a manifest's command with its own snapshot, writes the fresh
/// outputs to `out_dir`, and compares digests. Live HTTP backends are
/// refused since their replies are not reproducible.
pub fn reproduce(manifest: &RunManifest, out_dir: &Path) -> Result<ReproduceReport> {
    let live = match &manifest.command {
        CommandSpec::SenseBench { config } => !config.backend.is_offline(),
        CommandSpec::RagEval { spec } => !spec.backend.is_offline(),
        CommandSpec::Waterfill { spec } => spec.backend.as_ref().is_some_and(|b| !b.is_offline()),
        _ => false,
    };
    if live {
        return Err(Error::invalid("cannot reproduce a run against a live HTTP backend; record and replay it"));
    }
    let mut report = ReproduceReport::default();
    for (path, expected) in &manifest.inputs {
        let actual = file_digest(Path::new(path)).ok();
        if actual.as_deref() != Some(expected.as_str()) {
            report.inputs_changed.push(DigestMismatch {
                name: path.clone(),
                expected: expected.clone(),
                actual,
            });
        }
    }
    let mut command = manifest.command.clone();
    if let CommandSpec::RagIngest { spec } = &mut command {
        let name = spec.index.file_name().map(PathBuf::from).unwrap_or_else(|| "index.json".into());
        spec.index = out_dir.join(name);
    }
    let run = execute(&command, None)?;
    write_run(out_dir, &run)?;
    let fresh: BTreeMap<&str, String> = run
        .files
        .iter()
        .map(|(n, b)| (n.as_str(), sha256_hex(b)))
        .collect();
    for (name, expected) in &manifest.outputs {
        report.checked += 1;
        let actual = fresh.get(name.as_str()).cloned();
        if actual.as_deref() != Some(expected.as_str()) {
            report.outputs.push(DigestMismatch {
                name: name.clone(),
                expected: expected.clone(),
                actual,
            });
        }
    }
    Ok(report)
}
