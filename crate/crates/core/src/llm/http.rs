use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{BackendConfig, ChatBackend, ChatExchange, LlmError};
use crate::prompting::RenderedPrompt;

static HTTP_ATTEMPTS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of HTTP requests sent by [`HttpBackend`]s.
pub fn http_attempts() -> u64 {
    HTTP_ATTEMPTS.load(Ordering::SeqCst)
}

pub struct HttpBackend {
    config: BackendConfig,
    endpoint: String,
    token: String,
    client: Client,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.config.model_name)
            .field("token", &"<redacted>")
            .finish()
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(LlmError),
}

fn is_retryable(status: StatusCode) -> bool {
    status == StatusCode::TOO_MANY_REQUESTS || status == StatusCode::REQUEST_TIMEOUT || status.is_server_error()
}

impl HttpBackend {
    /// Reads the credential from the configured environment variable.
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| LlmError::Config("http backend needs endpoint_url".into()))?;
        let token = std::env::var(&config.auth_token_env).map_err(|_| LlmError::CredentialMissing {
            var: config.auth_token_env.clone(),
        })?;
        let client = Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpBackend {
            config,
            endpoint,
            token,
            client,
        })
    }

    fn request_body(&self, prompt: &RenderedPrompt) -> Value {
        json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Attempt {
        HTTP_ATTEMPTS.fetch_add(1, Ordering::SeqCst);
        let response = match self.client.post(&self.endpoint).bearer_auth(&self.token).json(body).send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = response.status();
        let text = match response.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if is_retryable(status) {
            return Attempt::Retry(format!("HTTP {}", status.as_u16()));
        }
        if !status.is_success() {
            return Attempt::Fail(LlmError::Upstream {
                status: status.as_u16(),
                body: text.chars().take(512).collect(),
            });
        }
        match extract_content(&text) {
            Ok(content) => Attempt::Done(content),
            Err(e) => Attempt::Fail(e),
        }
    }
}

/// `choices[0].message.content` of a chat-completion response.
pub(crate) fn extract_content(body: &str) -> Result<String, LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::MalformedPayload(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::MalformedPayload("missing choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<ChatExchange, LlmError> {
        let body = self.request_body(prompt);
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Attempt::Done(text) => {
                    let latency = started.elapsed().as_millis() as u64;
                    return Ok(ChatExchange::new(prompt, text, &self.config, latency));
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(message) => {
                    if attempt >= self.config.max_retries {
                        return Err(LlmError::Network {
                            attempts: attempt + 1,
                            message,
                        });
                    }
                    std::thread::sleep(self.config.backoff_delay(attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn config(&self) -> &BackendConfig {
        &self.config
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_extraction() {
        let ok = r#"{"choices": [{"message": {"role": "assistant", "content": "H1"}}]}"#;
        assert_eq!(extract_content(ok).unwrap(), "H1");
        assert!(matches!(extract_content("{}"), Err(LlmError::MalformedPayload(_))));
        assert!(matches!(extract_content("not json"), Err(LlmError::MalformedPayload(_))));
    }

    #[test]
    fn missing_credential() {
        let mut cfg = BackendConfig::http("http://127.0.0.1:9", "m");
        cfg.auth_token_env = "AIRKIT_TEST_UNSET_CREDENTIAL".into();
        assert!(matches!(HttpBackend::new(cfg), Err(LlmError::CredentialMissing { .. })));
    }

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned `(status, body)` per connection, then stops.
    fn mock_server(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut auth = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth.push(line.trim().to_string());
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            auth
        });
        (url, handle)
    }

    fn backend(url: &str, retries: u32) -> HttpBackend {
        std::env::set_var("AIRKIT_TEST_MOCK_TOKEN", "tok-123");
        let mut cfg = BackendConfig::http(url, "mock-model");
        cfg.auth_token_env = "AIRKIT_TEST_MOCK_TOKEN".into();
        cfg.max_retries = retries;
        cfg.backoff_base_ms = 1;
        HttpBackend::new(cfg).unwrap()
    }

    fn prompt() -> RenderedPrompt {
        RenderedPrompt::new("s".into(), "u".into(), crate::prompting::PromptStyle::ZeroShot)
    }

    const OK: &str = r#"{"choices": [{"message": {"content": "H0"}}]}"#;

    #[test]
    fn retries_transient_statuses() {
        let (url, server) = mock_server(vec![(500, "{}".into()), (429, "{}".into()), (200, OK.into())]);
        let b = backend(&url, 3);
        let ex = b.complete(&prompt()).unwrap();
        assert_eq!(ex.response_text, "H0");
        let auth = server.join().unwrap();
        assert_eq!(auth.len(), 3);
        assert!(auth.iter().all(|a| a.ends_with("Bearer tok-123")));
    }

    #[test]
    fn retry_budget_is_bounded() {
        let (url, server) = mock_server(vec![(503, "{}".into()), (503, "{}".into())]);
        let b = backend(&url, 1);
        match b.complete(&prompt()) {
            Err(LlmError::Network { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("{other:?}"),
        }
        server.join().unwrap();
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, server) = mock_server(vec![(401, "nope".into())]);
        let b = backend(&url, 3);
        assert!(matches!(b.complete(&prompt()), Err(LlmError::Upstream { status: 401, .. })));
        server.join().unwrap();
    }

    #[test]
    fn debug_redacts_token() {
        std::env::set_var("AIRKIT_TEST_DEBUG_TOKEN", "sk-very-secret");
        let mut cfg = BackendConfig::http("http://127.0.0.1:9", "m");
        cfg.auth_token_env = "AIRKIT_TEST_DEBUG_TOKEN".into();
        let b = HttpBackend::new(cfg).unwrap();
        assert!(!format!("{b:?}").contains("sk-very-secret"));
    }
}
