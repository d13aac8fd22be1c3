//! Prompt construction for the sensing and power-allocation tasks, and
//! parsing of model replies back into decisions and allocations.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::{Hypothesis, SensingFrame};
use crate::waterfill::{waterfill, PowerBudget, SubcarrierCnrs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    ZeroShot,
    FewShot,
    ChainOfThought,
    ChainOfThoughtWithProgram,
}

impl PromptStyle {
    fn is_chain_of_thought(self) -> bool {
        matches!(self, PromptStyle::ChainOfThought | PromptStyle::ChainOfThoughtWithProgram)
    }
}

/// Significant digits used when printing observations.
///
/// `Full` prints the shortest representation that parses back to the same
/// `f64`, so a reader of the prompt sees exactly what the harness saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PrecisionRepr", into = "PrecisionRepr")]
pub enum Precision {
    Digits(u8),
    Full,
}

impl Default for Precision {
    fn default() -> Self {
        Precision::Digits(4)
    }
}

impl Precision {
    pub fn digits(d: u8) -> Result<Self> {
        if (1..=12).contains(&d) {
            Ok(Precision::Digits(d))
        } else {
            Err(Error::invalid(format!("precision must be 1..=12 significant digits, got {d}")))
        }
    }

    /// Scientific notation at this precision.
    pub fn format(self, v: f64) -> String {
        match self {
            Precision::Digits(d) => format!("{:.*e}", d as usize - 1, v),
            Precision::Full => format!("{v:e}"),
        }
    }

    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::Digits(_) => self.format(v).parse().unwrap_or(v),
            Precision::Full => v,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PrecisionRepr {
    Digits(u8),
    Word(String),
}

impl TryFrom<PrecisionRepr> for Precision {
    type Error = String;

    fn try_from(r: PrecisionRepr) -> std::result::Result<Self, String> {
        match r {
            PrecisionRepr::Digits(d) => Precision::digits(d).map_err(|e| e.to_string()),
            PrecisionRepr::Word(w) if w == "full" => Ok(Precision::Full),
            PrecisionRepr::Word(w) => Err(format!("unknown precision `{w}`")),
        }
    }
}

impl From<Precision> for PrecisionRepr {
    fn from(p: Precision) -> Self {
        match p {
            Precision::Digits(d) => PrecisionRepr::Digits(d),
            Precision::Full => PrecisionRepr::Word("full".into()),
        }
    }
}

/// `|x(n)|²` for every `stride`-th sample starting with the first.
pub fn downsample(frame: &SensingFrame, stride: usize, precision: Precision) -> Result<Vec<f64>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    Ok(frame
        .samples
        .iter()
        .step_by(stride)
        .map(|s| precision.round(s.energy()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub observation: Vec<f64>,
    pub label: Hypothesis,
}

impl LabeledExample {
    pub fn new(observation: Vec<f64>, label: Hypothesis) -> Result<Self> {
        if observation.is_empty() {
            return Err(Error::invalid("example observation is empty"));
        }
        if observation.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("example energies must be nonnegative"));
        }
        Ok(LabeledExample { observation, label })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
    pub style: PromptStyle,
    pub fingerprint: String,
}

impl RenderedPrompt {
    pub fn new(system_text: String, user_text: String, style: PromptStyle) -> Self {
        let fingerprint = fingerprint(&system_text, &user_text);
        RenderedPrompt {
            system_text,
            user_text,
            style,
            fingerprint,
        }
    }
}

/// SHA-256 hex of the canonical prompt `"system:\n{system}\nuser:\n{user}"`.
pub fn fingerprint(system_text: &str, user_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"system:\n");
    h.update(system_text.as_bytes());
    h.update(b"\nuser:\n");
    h.update(user_text.as_bytes());
    hex::encode(h.finalize())
}

/// Plain-text template with `{{task}}`, `{{examples}}` and `{{query}}`
/// placeholders. `{{query}}` expands to the bracketed observation list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if !text.contains("{{query}}") {
            return Err(Error::invalid("prompt template lacks a {{query}} placeholder"));
        }
        Ok(PromptTemplate { text })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text)
    }

    fn fill(&self, task: &str, examples: &str, query: &str) -> String {
        self.text
            .replace("{{task}}", task)
            .replace("{{examples}}", examples)
            .replace("{{query}}", query)
    }
}

pub const SENSING_SYSTEM: &str =
    "You are a spectrum sensing assistant for a cognitive radio secondary user.";

const SENSING_TASK: &str = "Task: each input is a list of received energy samples |x(n)|^2 in mW \
taken from one sensing window. Decide whether the licensed primary user's signal is absent \
(H0: noise only) or present (H1: primary signal plus noise). Reply with H0 or H1.";

const SENSING_COT: &str = "Think step by step: estimate the average energy of the query, compare \
it with the average energies of the H0 and H1 examples, then give your final answer on the last line.";

const SENSING_PROGRAM: &str = "You may write a short program that computes the statistics you need. \
End your reply with a final line of exactly the form `ANSWER: H0` or `ANSWER: H1`.";

/// Renders sensing prompts at a fixed numeric precision, optionally through
/// a user template.
#[derive(Debug, Clone, Default)]
pub struct SensingPrompter {
    pub precision: Precision,
    pub template: Option<PromptTemplate>,
}

impl SensingPrompter {
    pub fn new(precision: Precision) -> Self {
        SensingPrompter {
            precision,
            template: None,
        }
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = Some(template);
        self
    }

    fn list(&self, values: &[f64]) -> String {
        let mut out = String::from("[");
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&self.precision.format(*v));
        }
        out.push(']');
        out
    }

    pub fn render(&self, examples: &[LabeledExample], query: &[f64], style: PromptStyle) -> Result<RenderedPrompt> {
        match style {
            PromptStyle::ZeroShot if !examples.is_empty() => {
                return Err(Error::invalid("zero-shot prompts take no examples"))
            }
            PromptStyle::FewShot if examples.is_empty() => {
                return Err(Error::invalid("few-shot prompts need at least one example"))
            }
            _ => {}
        }

        let mut blocks = String::new();
        for (i, ex) in examples.iter().enumerate() {
            let _ = write!(blocks, "Example {}:\nInput: {}\nOutput: {}\n\n", i + 1, self.list(&ex.observation), ex.label);
        }
        let mut guidance = String::new();
        if style.is_chain_of_thought() {
            guidance.push_str(SENSING_COT);
            if style == PromptStyle::ChainOfThoughtWithProgram {
                guidance.push(' ');
                guidance.push_str(SENSING_PROGRAM);
            }
        }
        let query = self.list(query);

        let user_text = match &self.template {
            Some(t) => {
                let task = if guidance.is_empty() {
                    SENSING_TASK.to_string()
                } else {
                    format!("{SENSING_TASK}\n{guidance}")
                };
                t.fill(&task, blocks.trim_end(), &query)
            }
            None => {
                let mut text = format!("{SENSING_TASK}\n\n{blocks}");
                if !guidance.is_empty() {
                    text.push_str(&guidance);
                    text.push_str("\n\n");
                }
                let _ = write!(text, "Query:\nInput: {query}\nOutput:");
                text
            }
        };
        Ok(RenderedPrompt::new(SENSING_SYSTEM.to_string(), user_text, style))
    }
}

pub fn render_sensing_prompt(examples: &[LabeledExample], query: &[f64], style: PromptStyle) -> Result<RenderedPrompt> {
    SensingPrompter::default().render(examples, query, style)
}

pub const POWER_SYSTEM: &str = "You are a wireless resource allocation assistant for an OFDM transmitter.";
pub const CHANNEL_LINE: &str = "Channel states (carrier-to-noise ratio per mW):";
pub const BUDGET_LINE: &str = "Total power budget (mW):";
pub const ALLOCATION_MARKER: &str = "ALLOCATION:";

fn float_list(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn power_instance(cnrs: &SubcarrierCnrs, budget: PowerBudget) -> String {
    format!(
        "{CHANNEL_LINE} {}\n{BUDGET_LINE} {:e}",
        float_list(cnrs.as_slice()),
        budget.total_mw()
    )
}

pub fn render_power_prompt(cnrs: &SubcarrierCnrs, budget: PowerBudget, style: PromptStyle) -> RenderedPrompt {
    let k = cnrs.len();
    let mut text = format!(
        "Task: allocate transmit power over {k} OFDM subcarriers to maximize the sum capacity \
sum_k log2(1 + p_k * c_k) bits, subject to sum_k p_k = P and p_k >= 0.\n"
    );
    if style == PromptStyle::FewShot {
        let ex_c = SubcarrierCnrs::new(vec![2.0, 1.0]).expect("valid example");
        let ex_b = PowerBudget::new(1.0).expect("valid example");
        let sol = waterfill(&ex_c, ex_b);
        let _ = write!(
            text,
            "\nExample:\n{}\nAnswer: {}\n",
            power_instance(&ex_c, ex_b),
            float_list(&sol.powers_mw)
        );
    }
    let _ = write!(text, "\nProblem:\n{}\n", power_instance(cnrs, budget));
    if style.is_chain_of_thought() {
        text.push_str(
            "\nSolve this step by step:\n\
1. Identify the optimization problem and the algorithm that solves it.\n\
2. Compute the inverse channel states 1/c_k and order them.\n\
3. Find the water level mu such that sum_k max(0, mu - 1/c_k) = P.\n\
4. Compute each p_k = max(0, mu - 1/c_k) and check the budget.\n",
        );
    }
    if style == PromptStyle::ChainOfThoughtWithProgram {
        let _ = writeln!(
            text,
            "Write a runnable program for each step and report its output. \
End your reply with a final line of exactly the form `{ALLOCATION_MARKER} p1, p2, ..., p{k}` \
giving the power in mW of every subcarrier in order."
        );
    } else {
        text.push_str("\nReport the power allocated to each subcarrier in mW.\n");
    }
    RenderedPrompt::new(POWER_SYSTEM.to_string(), text, style)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParsedDecision {
    Decided(Hypothesis),
    /// First 256 characters of the reply.
    Unparseable(String),
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric() || c == '_')
}

/// Finds the last standalone occurrence of any `needles` in lowercased text.
fn last_token(haystack: &str, needles: &[(&str, Hypothesis)]) -> Option<Hypothesis> {
    let lower = haystack.to_lowercase();
    let mut best: Option<(usize, Hypothesis)> = None;
    for (needle, h) in needles {
        for (pos, _) in lower.match_indices(needle) {
            let before = lower[..pos].chars().next_back();
            let after = lower[pos + needle.len()..].chars().next();
            if is_word_char(before) || is_word_char(after) {
                continue;
            }
            if best.is_none_or(|(b, _)| pos > b) {
                best = Some((pos, *h));
            }
        }
    }
    best.map(|(_, h)| h)
}

/// Scans for `H0`/`H1`/`absent`/`present`; the last occurrence wins.
pub fn parse_decision(response: &str) -> ParsedDecision {
    const TOKENS: [(&str, Hypothesis); 4] = [
        ("h0", Hypothesis::H0),
        ("h1", Hypothesis::H1),
        ("absent", Hypothesis::H0),
        ("present", Hypothesis::H1),
    ];
    match last_token(response, &TOKENS) {
        Some(h) => ParsedDecision::Decided(h),
        None => ParsedDecision::Unparseable(response.chars().take(256).collect()),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllocationParseError {
    #[error("no line starting with `ALLOCATION:` found")]
    MissingMarker,
    #[error("expected {expected} values after `ALLOCATION:`, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("`{token}` is not a finite number")]
    NonNumeric { token: String },
}

/// Reads the values on the last `ALLOCATION:` line.
pub fn parse_allocation(response: &str, k: usize) -> std::result::Result<Vec<f64>, AllocationParseError> {
    let line = response
        .lines()
        .map(|l| l.trim().trim_matches('`').trim())
        .rfind(|l| l.starts_with(ALLOCATION_MARKER))
        .ok_or(AllocationParseError::MissingMarker)?;
    let body = line[ALLOCATION_MARKER.len()..].trim().trim_end_matches('.');
    let tokens: Vec<&str> = if body.is_empty() {
        Vec::new()
    } else {
        body.split(',').map(str::trim).collect()
    };
    if tokens.len() != k {
        return Err(AllocationParseError::Arity {
            expected: k,
            found: tokens.len(),
        });
    }
    tokens
        .into_iter()
        .map(|t| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(AllocationParseError::NonNumeric { token: t.to_string() }),
        })
        .collect()
}
