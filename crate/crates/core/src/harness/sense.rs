//! Energy detector versus few-shot LLM detector, per SNR.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Method, RateRow};
use crate::detector::{detect, monte_carlo_rates, np_threshold, Decision, EnergyThreshold, RatePair, TargetFalseAlarm};
use crate::error::{Error, Result};
use crate::llm::{build_backend, complete_many, BackendConfig, BackendKind, ChatBackend, TranscriptWriter};
use crate::prompting::{
    downsample, parse_decision, LabeledExample, ParsedDecision, Precision, PromptStyle, PromptTemplate,
    RenderedPrompt, SensingPrompter,
};
use crate::signal::{derive_seed, empirical_energy, generate_frame, Hypothesis, NoisePower, SensingFrame, SnrSpec};

/// Sensing benchmark settings. Defaults are the reference preset:
/// SNRs {−20, −10, −6, 0} dB, σ_n² = −100 dBm, P_f* = 0.5, N = 50,
/// 20 examples, 20 test prompts per SNR and hypothesis, 100 energy trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SenseBenchConfig {
    pub snr_db_list: Vec<f64>,
    pub noise_dbm: f64,
    pub pf_target: f64,
    pub n_samples: usize,
    /// Split evenly between H0 and H1.
    pub few_shot_examples: usize,
    /// Query frames per hypothesis and SNR.
    pub test_prompts_per_snr: usize,
    pub energy_trials: u64,
    pub stride: usize,
    pub precision: Precision,
    pub style: PromptStyle,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_path: Option<PathBuf>,
    pub seed: u64,
    pub backend: BackendConfig,
}

impl Default for SenseBenchConfig {
    fn default() -> Self {
        SenseBenchConfig {
            snr_db_list: vec![-20.0, -10.0, -6.0, 0.0],
            noise_dbm: -100.0,
            pf_target: 0.5,
            n_samples: 50,
            few_shot_examples: 20,
            test_prompts_per_snr: 20,
            energy_trials: 100,
            stride: 5,
            precision: Precision::default(),
            style: PromptStyle::FewShot,
            template_path: None,
            seed: 2024,
            backend: BackendConfig::new(BackendKind::OracleSensing),
        }
    }
}

impl SenseBenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db_list.is_empty() {
            return Err(Error::invalid("snr_db_list is empty"));
        }
        if self.n_samples == 0 || self.test_prompts_per_snr == 0 || self.energy_trials == 0 || self.stride == 0 {
            return Err(Error::invalid("n_samples, test_prompts_per_snr, energy_trials and stride must be at least 1"));
        }
        let zero_shot = self.style == PromptStyle::ZeroShot;
        if zero_shot != (self.few_shot_examples == 0) {
            return Err(Error::invalid("few_shot_examples must be 0 exactly for zero_shot prompts"));
        }
        if !self.few_shot_examples.is_multiple_of(2) {
            return Err(Error::invalid("few_shot_examples must be even"));
        }
        TargetFalseAlarm::new(self.pf_target)?;
        NoisePower::from_dbm(self.noise_dbm)?;
        for db in &self.snr_db_list {
            SnrSpec::from_db(*db)?;
        }
        self.backend.validate()?;
        Ok(())
    }
}

/// LLM-path outcome at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmTally {
    pub rates: RatePair,
    pub unparseable: u64,
    /// Energy detector applied to the very frames sent as queries.
    pub reference: RatePair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrDetail {
    pub snr_db: f64,
    pub energy_seed: u64,
    pub prompt_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmTally>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SenseBenchResult {
    pub rows: Vec<RateRow>,
    pub details: Vec<SnrDetail>,
    pub threshold: EnergyThreshold,
}

const LANE_SNR: u64 = 0x534E52;
const LANE_ENERGY: u64 = 1;
const LANE_PROMPTS: u64 = 2;
const LANE_EXAMPLE: u64 = 3;
const LANE_QUERY: u64 = 4;
const LANE_SHUFFLE: u64 = 5;

fn lane_for(base: u64, truth: Hypothesis) -> u64 {
    base * 2 + matches!(truth, Hypothesis::H1) as u64
}

struct PromptSet {
    prompts: Vec<RenderedPrompt>,
    truths: Vec<Hypothesis>,
    reference: RatePair,
}

fn build_prompts(
    config: &SenseBenchConfig,
    prompter: &SensingPrompter,
    threshold: &EnergyThreshold,
    noise: NoisePower,
    snr: SnrSpec,
    seed: u64,
) -> Result<PromptSet> {
    let n = config.n_samples;
    let frame = |truth, lane, j: usize| generate_frame(truth, noise, snr, n, derive_seed(seed, lane_for(lane, truth), j as u64));

    let per_class = config.few_shot_examples / 2;
    let mut examples = Vec::with_capacity(config.few_shot_examples);
    for truth in [Hypothesis::H0, Hypothesis::H1] {
        for j in 0..per_class {
            let obs = downsample(&frame(truth, LANE_EXAMPLE, j)?, config.stride, config.precision)?;
            examples.push(LabeledExample::new(obs, truth)?);
        }
    }
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, LANE_SHUFFLE, 0)));

    let mut prompts = Vec::new();
    let mut truths = Vec::new();
    let mut hits = [0u64; 2];
    for truth in [Hypothesis::H0, Hypothesis::H1] {
        for j in 0..config.test_prompts_per_snr {
            let query: SensingFrame = frame(truth, LANE_QUERY, j)?;
            if detect(empirical_energy(&query), threshold) == Decision::Present {
                hits[truth as usize] += 1;
            }
            let obs = downsample(&query, config.stride, config.precision)?;
            prompts.push(prompter.render(&examples, &obs, config.style)?);
            truths.push(truth);
        }
    }
    let t = config.test_prompts_per_snr as u64;
    Ok(PromptSet {
        prompts,
        truths,
        reference: RatePair::from_counts(hits[1], hits[0], t),
    })
}

/// Runs the benchmark. Energy rows are computed before any backend call
/// and do not depend on the backend. A backend failure at one SNR drops
/// that SNR's LLM row and is recorded in its detail entry.
pub fn sense_bench(config: &SenseBenchConfig, transcript: Option<&TranscriptWriter>) -> Result<SenseBenchResult> {
    config.validate()?;
    let noise = NoisePower::from_dbm(config.noise_dbm)?;
    let pf = TargetFalseAlarm::new(config.pf_target)?;
    let threshold = np_threshold(pf, config.n_samples, noise)?;

    let mut rows = Vec::new();
    let mut details = Vec::new();
    for (i, db) in config.snr_db_list.iter().enumerate() {
        let snr = SnrSpec::from_db(*db)?;
        let snr_seed = derive_seed(config.seed, LANE_SNR, i as u64);
        let energy_seed = derive_seed(snr_seed, LANE_ENERGY, 0);
        let rates = monte_carlo_rates(noise, snr, config.n_samples, pf, config.energy_trials, energy_seed)?;
        rows.push(RateRow::new(*db, config.n_samples, config.pf_target, Method::Energy, rates));
        details.push(SnrDetail {
            snr_db: *db,
            energy_seed,
            prompt_seed: derive_seed(snr_seed, LANE_PROMPTS, 0),
            llm: None,
            error: None,
        });
    }

    let mut backend_config = config.backend.clone();
    if backend_config.kind == BackendKind::OracleSensing && backend_config.oracle_threshold_mw.is_none() {
        backend_config.oracle_threshold_mw = Some(threshold.eta_mw);
    }
    let backend = build_backend(&backend_config)?;
    let mut prompter = SensingPrompter::new(config.precision);
    if let Some(path) = &config.template_path {
        prompter = prompter.with_template(PromptTemplate::load(path)?);
    }

    for detail in details.iter_mut() {
        let snr = SnrSpec::from_db(detail.snr_db)?;
        let set = build_prompts(config, &prompter, &threshold, noise, snr, detail.prompt_seed)?;
        match run_llm(backend.as_ref(), &set, transcript) {
            Ok((rates, unparseable)) => {
                rows.push(RateRow::new(detail.snr_db, config.n_samples, config.pf_target, Method::Llm, rates));
                detail.llm = Some(LlmTally {
                    rates,
                    unparseable,
                    reference: set.reference,
                });
            }
            Err(e) => detail.error = Some(e.to_string()),
        }
    }
    super::sort_rows(&mut rows);
    Ok(SenseBenchResult {
        rows,
        details,
        threshold,
    })
}

fn run_llm(
    backend: &dyn ChatBackend,
    set: &PromptSet,
    transcript: Option<&TranscriptWriter>,
) -> Result<(RatePair, u64)> {
    let results = complete_many(backend, &set.prompts);
    if let Some(w) = transcript {
        for (prompt, r) in set.prompts.iter().zip(&results) {
            match r {
                Ok(ex) => w.append(ex)?,
                Err(e) => w.append_error(prompt, backend.config(), e)?,
            }
        }
    }
    let mut unparseable = 0;
    let mut present = [0u64; 2];
    for (result, truth) in results.into_iter().zip(&set.truths) {
        let exchange = result?;
        let decided = match parse_decision(&exchange.response_text) {
            ParsedDecision::Decided(h) => h,
            ParsedDecision::Unparseable(_) => {
                unparseable += 1;
                Hypothesis::H0
            }
        };
        if decided == Hypothesis::H1 {
            present[*truth as usize] += 1;
        }
    }
    let per_class = (set.truths.len() / 2) as u64;
    Ok((RatePair::from_counts(present[1], present[0], per_class), unparseable))
}
