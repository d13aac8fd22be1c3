//! JSON-lines transcripts: a header line, then one `ChatExchange` per line.
//! Failed requests are kept as `{"error": ...}` marker lines.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendConfig, ChatBackend, ChatExchange, LlmError};
use crate::prompting::RenderedPrompt;

pub const TRANSCRIPT_FORMAT: &str = "airkit-transcript";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: String,
    prompt_fingerprint: &'a str,
    model_name: &'a str,
    timestamp: String,
}

type ReplayKey = (String, String, u64);

fn key(fingerprint: &str, model: &str, temperature: f64) -> ReplayKey {
    (fingerprint.to_string(), model.to_string(), temperature.to_bits())
}

#[derive(Debug, Clone, Default)]
pub struct Transcript {
    pub exchanges: Vec<ChatExchange>,
    /// Error marker lines seen while loading.
    pub errors: usize,
}

impl Transcript {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let err = |message: String| LlmError::Transcript {
            path: path.to_path_buf(),
            message,
        };
        let file = File::open(path).map_err(|e| err(e.to_string()))?;
        let mut out = Transcript::default();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Value = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
            if v.get("format").is_some() {
                continue;
            }
            if v.get("error").is_some() {
                out.errors += 1;
                continue;
            }
            let ex: ChatExchange = serde_json::from_value(v).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
            out.exchanges.push(ex);
        }
        Ok(out)
    }
}

/// Serializes appends from concurrent workers; every line is flushed as
/// it is written.
pub struct TranscriptWriter {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl TranscriptWriter {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| LlmError::Transcript {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let writer = TranscriptWriter {
            path,
            out: Mutex::new(BufWriter::new(file)),
        };
        writer.write_line(&Header {
            format: TRANSCRIPT_FORMAT.into(),
            version: 1,
        })?;
        Ok(writer)
    }

    fn write_line<T: Serialize>(&self, value: &T) -> Result<(), LlmError> {
        let line = serde_json::to_string(value).expect("transcript line serializes");
        let mut out = self.out.lock().expect("transcript writer poisoned");
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|e| LlmError::Transcript {
                path: self.path.clone(),
                message: e.to_string(),
            })
    }

    pub fn append(&self, exchange: &ChatExchange) -> Result<(), LlmError> {
        self.write_line(exchange)
    }

    pub fn append_error(&self, prompt: &RenderedPrompt, config: &BackendConfig, error: &LlmError) -> Result<(), LlmError> {
        self.write_line(&ErrorLine {
            error: error.to_string(),
            prompt_fingerprint: &prompt.fingerprint,
            model_name: &config.model_name,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        })
    }
}

/// Serves recorded responses keyed by `(fingerprint, model, temperature)`.
/// The first occurrence of a key wins.
pub struct ReplayBackend {
    config: BackendConfig,
    responses: HashMap<ReplayKey, String>,
}

impl ReplayBackend {
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        let path = config
            .replay_path
            .clone()
            .ok_or_else(|| LlmError::Config("replay_file backend needs replay_path".into()))?;
        let transcript = Transcript::load(&path)?;
        Ok(Self::from_transcript(config, &transcript))
    }

    pub fn from_transcript(config: BackendConfig, transcript: &Transcript) -> Self {
        let mut responses = HashMap::new();
        for ex in &transcript.exchanges {
            responses
                .entry(key(&ex.prompt_fingerprint, &ex.model_name, ex.temperature))
                .or_insert_with(|| ex.response_text.clone());
        }
        ReplayBackend { config, responses }
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<ChatExchange, LlmError> {
        let k = key(&prompt.fingerprint, &self.config.model_name, self.config.temperature);
        match self.responses.get(&k) {
            Some(text) => Ok(ChatExchange::new(prompt, text.clone(), &self.config, 0)),
            None => Err(LlmError::ReplayMiss {
                fingerprint: prompt.fingerprint.clone(),
            }),
        }
    }

    fn config(&self) -> &BackendConfig {
        &self.config
    }
}
