//! Deterministic stand-ins for a model that answer from the toolkit's own
//! detector and solver.

use super::{BackendConfig, ChatBackend, ChatExchange, LlmError};
use crate::prompting::{RenderedPrompt, ALLOCATION_MARKER, BUDGET_LINE, CHANNEL_LINE};
use crate::waterfill::{waterfill, PowerBudget, SubcarrierCnrs};

fn parse_list(text: &str) -> Result<Vec<f64>, LlmError> {
    let open = text.find('[').ok_or_else(|| LlmError::Oracle("no `[` in list".into()))?;
    let close = text[open..]
        .find(']')
        .map(|i| open + i)
        .ok_or_else(|| LlmError::Oracle("unterminated list".into()))?;
    let body = text[open + 1..close].trim();
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| LlmError::Oracle(format!("`{}` is not a number", t.trim())))
        })
        .collect()
}

/// Observation of the query: the first `Input:` line after the last
/// `Query:` marker, or the last `Input:` line when there is no marker.
fn query_observation(user_text: &str) -> Result<Vec<f64>, LlmError> {
    let tail = match user_text.rfind("Query:") {
        Some(i) => &user_text[i..],
        None => user_text,
    };
    let mut inputs = tail.lines().filter_map(|l| l.trim().strip_prefix("Input:"));
    let line = if user_text.contains("Query:") {
        inputs.next()
    } else {
        inputs.next_back()
    }
    .ok_or_else(|| LlmError::Oracle("prompt has no query observation".into()))?;
    let values = parse_list(line)?;
    if values.is_empty() {
        return Err(LlmError::Oracle("query observation is empty".into()));
    }
    Ok(values)
}

/// Declares H1 iff the mean of the query observation reaches the threshold.
#[derive(Debug, Clone)]
pub struct OracleSensing {
    config: BackendConfig,
    threshold_mw: f64,
}

impl OracleSensing {
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        let threshold_mw = config
            .oracle_threshold_mw
            .filter(|t| t.is_finite())
            .ok_or_else(|| LlmError::Config("oracle_sensing needs oracle_threshold_mw".into()))?;
        Ok(OracleSensing { config, threshold_mw })
    }

    pub fn decide(&self, user_text: &str) -> Result<&'static str, LlmError> {
        let values = query_observation(user_text)?;
        // same accumulation order as the detector's energy statistic
        let mean = values.iter().fold(0.0, |acc, v| acc + v) / values.len() as f64;
        Ok(if mean >= self.threshold_mw { "H1" } else { "H0" })
    }
}

impl ChatBackend for OracleSensing {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<ChatExchange, LlmError> {
        let answer = self.decide(&prompt.user_text)?;
        Ok(ChatExchange::new(prompt, answer.to_string(), &self.config, 0))
    }

    fn config(&self) -> &BackendConfig {
        &self.config
    }
}

/// Reads the power-allocation instance back out of the prompt and answers
/// with the solver's `ALLOCATION:` line.
#[derive(Debug, Clone)]
pub struct OracleWaterfill {
    config: BackendConfig,
}

impl OracleWaterfill {
    pub fn new(config: BackendConfig) -> Self {
        OracleWaterfill { config }
    }

    pub fn answer(&self, user_text: &str) -> Result<String, LlmError> {
        let last_line = |marker: &str| {
            user_text
                .lines()
                .filter_map(|l| l.trim().strip_prefix(marker))
                .next_back()
                .map(str::trim)
                .ok_or_else(|| LlmError::Oracle(format!("prompt lacks `{marker}`")))
        };
        let cnrs = SubcarrierCnrs::new(parse_list(last_line(CHANNEL_LINE)?)?)
            .map_err(|e| LlmError::Oracle(e.to_string()))?;
        let budget_text = last_line(BUDGET_LINE)?;
        let budget = budget_text
            .parse::<f64>()
            .map_err(|_| LlmError::Oracle(format!("budget `{budget_text}` is not a number")))
            .and_then(|b| PowerBudget::new(b).map_err(|e| LlmError::Oracle(e.to_string())))?;
        let alloc = waterfill(&cnrs, budget);
        let values: Vec<String> = alloc.powers_mw.iter().map(|p| p.to_string()).collect();
        Ok(format!(
            "The sum-capacity problem is solved by water-filling. Water level: {} mW.\n{} {}",
            alloc.water_level,
            ALLOCATION_MARKER,
            values.join(", ")
        ))
    }
}

impl ChatBackend for OracleWaterfill {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<ChatExchange, LlmError> {
        let answer = self.answer(&prompt.user_text)?;
        Ok(ChatExchange::new(prompt, answer, &self.config, 0))
    }

    fn config(&self) -> &BackendConfig {
        &self.config
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::BackendKind;
    use crate::prompting::{parse_allocation, render_power_prompt, render_sensing_prompt, LabeledExample, PromptStyle};
    use crate::signal::Hypothesis;

    fn sensing(threshold: f64) -> OracleSensing {
        let mut cfg = BackendConfig::new(BackendKind::OracleSensing);
        cfg.oracle_threshold_mw = Some(threshold);
        OracleSensing::new(cfg).unwrap()
    }

    #[test]
    fn sensing_oracle_rule() {
        let eta = 1e-10;
        let oracle = sensing(eta);
        let examples = [
            LabeledExample::new(vec![9e-10; 3], Hypothesis::H1).unwrap(),
            LabeledExample::new(vec![1e-12; 3], Hypothesis::H0).unwrap(),
        ];
        let loud = render_sensing_prompt(&examples, &[2.0 * eta; 4], PromptStyle::FewShot).unwrap();
        assert_eq!(oracle.complete(&loud).unwrap().response_text, "H1");
        let quiet = render_sensing_prompt(&examples, &[0.5 * eta; 4], PromptStyle::FewShot).unwrap();
        assert_eq!(oracle.complete(&quiet).unwrap().response_text, "H0");
        let tie = render_sensing_prompt(&[], &[eta], PromptStyle::ZeroShot).unwrap();
        assert_eq!(oracle.complete(&tie).unwrap().response_text, "H1");
    }

    #[test]
    fn sensing_oracle_needs_threshold_and_query() {
        assert!(OracleSensing::new(BackendConfig::new(BackendKind::OracleSensing)).is_err());
        assert!(sensing(1.0).decide("nothing to see").is_err());
        assert!(sensing(1.0).decide("Query:\nInput: [a, b]").is_err());
    }

    #[test]
    fn waterfill_oracle_answers_solver_output() {
        let oracle = OracleWaterfill::new(BackendConfig::new(BackendKind::OracleWaterfill));
        let c = SubcarrierCnrs::new(vec![2.0, 1.0]).unwrap();
        let b = PowerBudget::new(1.0).unwrap();
        for style in [PromptStyle::ChainOfThoughtWithProgram, PromptStyle::FewShot] {
            let p = render_power_prompt(&c, b, style);
            let reply = oracle.complete(&p).unwrap().response_text;
            assert_eq!(parse_allocation(&reply, 2).unwrap(), vec![0.75, 0.25]);
        }
        assert!(oracle.answer("no instance").is_err());
    }
}
