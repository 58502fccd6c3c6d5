//! Client for a generic JSON-over-HTTP chat-completion service.
//!
//! Request body: `{"model": ..., "messages": [{"role": "user", "content": prompt}], "temperature": ...}`.
//! Expected reply: `{"choices": [{"message": {"content": "<JSON array>"}}]}`.
//!
//! Retry policy: HTTP 429, 5xx and timeouts are retried up to `max_retries`
//! times, waiting `base_delay * 2^attempt` before attempt `attempt + 1`.
//! Authentication failures (401, 403) and malformed replies are not retried.

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::validate::{validate_sample, SynthSample, Violation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: usize },
    #[error("service still failing after {attempts} attempt(s): HTTP {status}")]
    Exhausted { attempts: usize, status: u16 },
    #[error("HTTP {0} from service")]
    Http(u16),
    #[error("reply is not JSON: {0}")]
    NonJson(String),
    #[error("reply violates the expected schema: {0}")]
    Schema(String),
    #[error("transport failure: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub credential_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub base_delay_ms: u64,
    /// Upper bound on requests in flight in `generate_many`.
    pub max_concurrency: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: String::new(),
            model: String::new(),
            credential_env: "SALM_LLM_API_KEY".into(),
            temperature: 0.9,
            timeout_secs: 120,
            max_retries: 4,
            base_delay_ms: 1000,
            max_concurrency: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Status(u16, String),
    Timeout,
    Other(String),
}

/// One HTTP exchange. Implementations must be shareable across threads.
pub trait ChatTransport: Send + Sync {
    fn post(&self, endpoint: &str, credential: &str, body: &Value) -> Result<String, TransportError>;
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        HttpTransport {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl ChatTransport for HttpTransport {
    fn post(&self, endpoint: &str, credential: &str, body: &Value) -> Result<String, TransportError> {
        let reply = self
            .agent
            .post(endpoint)
            .set("Authorization", &format!("Bearer {credential}"))
            .send_json(body.clone());
        match reply {
            Ok(r) => r.into_string().map_err(|e| TransportError::Other(e.to_string())),
            Err(ureq::Error::Status(code, r)) => Err(TransportError::Status(code, r.into_string().unwrap_or_default())),
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") {
                    Err(TransportError::Timeout)
                } else {
                    Err(TransportError::Other(msg))
                }
            }
        }
    }
}

/// A record dropped by validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRecord {
    pub index: usize,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub samples: Vec<SynthSample>,
    pub rejected: Vec<RejectedRecord>,
    /// Waits taken before each retry.
    pub backoff: Vec<Duration>,
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct LlmClient {
    config: LlmConfig,
    credential: String,
    transport: Arc<dyn ChatTransport>,
    sleeper: Sleeper,
}

impl LlmClient {
    /// Reads the credential from the configured environment variable.
    pub fn from_env(config: LlmConfig, transport: Arc<dyn ChatTransport>) -> Result<Self, LlmError> {
        let credential = std::env::var(&config.credential_env)
            .ok()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| LlmError::MissingCredential(config.credential_env.clone()))?;
        Ok(Self::new(config, credential, transport))
    }

    pub fn new(config: LlmConfig, credential: String, transport: Arc<dyn ChatTransport>) -> Self {
        LlmClient {
            config,
            credential,
            transport,
            sleeper: Arc::new(thread::sleep),
        }
    }

    /// Replaces the wait function (tests record instead of sleeping).
    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        })
    }

    /// Sends one prompt and returns the records that pass validation.
    pub fn generate(&self, prompt: &str) -> Result<Generation, LlmError> {
        let body = self.request_body(prompt);
        let mut backoff = Vec::new();
        let attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        let raw = loop {
            attempt += 1;
            let transient = match self.transport.post(&self.config.endpoint, &self.credential, &body) {
                Ok(raw) => break raw,
                Err(TransportError::Status(code @ (401 | 403), _)) => return Err(LlmError::Auth(code)),
                Err(TransportError::Status(code, _)) if code == 429 || code >= 500 => {
                    if attempt >= attempts {
                        return Err(LlmError::Exhausted { attempts, status: code });
                    }
                    format!("HTTP {code}")
                }
                Err(TransportError::Status(code, _)) => return Err(LlmError::Http(code)),
                Err(TransportError::Timeout) => {
                    if attempt >= attempts {
                        return Err(LlmError::Timeout { attempts });
                    }
                    "timeout".to_string()
                }
                Err(TransportError::Other(msg)) => return Err(LlmError::Transport(msg)),
            };
            let wait = Duration::from_millis(self.config.base_delay_ms.saturating_mul(1 << (attempt - 1).min(20)));
            log::warn!("attempt {attempt} failed ({transient}); retrying in {wait:?}");
            backoff.push(wait);
            (self.sleeper)(wait);
        };
        let (samples, rejected) = parse_reply(&raw)?;
        Ok(Generation {
            samples,
            rejected,
            backoff,
        })
    }

    /// Runs several prompts with at most `max_concurrency` in flight. Results
    /// keep prompt order; each request retries independently.
    pub fn generate_many(&self, prompts: &[String]) -> Vec<Result<Generation, LlmError>> {
        let cap = self.config.max_concurrency.max(1);
        let results: Mutex<Vec<Option<Result<Generation, LlmError>>>> = Mutex::new(vec![None; prompts.len()]);
        for (c, chunk) in prompts.chunks(cap).enumerate() {
            thread::scope(|s| {
                for (k, prompt) in chunk.iter().enumerate() {
                    let results = &results;
                    s.spawn(move || {
                        let r = self.generate(prompt);
                        results.lock().expect("results lock")[c * cap + k] = Some(r);
                    });
                }
            });
        }
        results
            .into_inner()
            .expect("results lock")
            .into_iter()
            .map(|r| r.expect("every prompt ran"))
            .collect()
    }
}

/// Extracts and validates the records carried in a chat-completion reply.
pub fn parse_reply(raw: &str) -> Result<(Vec<SynthSample>, Vec<RejectedRecord>), LlmError> {
    let envelope: Value = serde_json::from_str(raw).map_err(|e| LlmError::NonJson(e.to_string()))?;
    let content = envelope
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::Schema("no choices[0].message.content string".into()))?;
    let records: Value = serde_json::from_str(content.trim())
        .map_err(|e| LlmError::Schema(format!("content is not a bare JSON array: {e}")))?;
    let items = records
        .as_array()
        .ok_or_else(|| LlmError::Schema("content is not a JSON array".into()))?;
    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    for (index, item) in items.iter().enumerate() {
        let violations = validate_sample(item);
        if violations.is_empty() {
            let sample: SynthSample =
                serde_json::from_value(item.clone()).map_err(|e| LlmError::Schema(e.to_string()))?;
            samples.push(sample);
        } else {
            rejected.push(RejectedRecord { index, violations });
        }
    }
    Ok((samples, rejected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::RESPONSE_SEPARATOR;

    /// Replays a fixed sequence of outcomes and records what it was sent.
    struct Scripted {
        replies: Mutex<Vec<Result<String, TransportError>>>,
        calls: Mutex<usize>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<String, TransportError>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Scripted {
                replies: Mutex::new(replies),
                calls: Mutex::new(0),
            })
        }
    }

    impl ChatTransport for Scripted {
        fn post(&self, _: &str, credential: &str, body: &Value) -> Result<String, TransportError> {
            assert_eq!(credential, "k");
            assert!(body["messages"][0]["content"].is_string());
            *self.calls.lock().unwrap() += 1;
            self.replies.lock().unwrap().pop().expect("scripted reply")
        }
    }

    fn envelope(content: &str) -> String {
        json!({"choices": [{"message": {"content": content}}]}).to_string()
    }

    fn valid_record() -> Value {
        let mut req = String::from("GET /?q=<script>alert(1)</script> HTTP/1.1\r\n");
        for i in 0..8 {
            req.push_str(&format!("X-H{i}: v\r\n"));
        }
        json!({"Category": "XSS", "HTTP Payload": format!("{req}{RESPONSE_SEPARATOR}HTTP/1.1 200 OK\r\n\r\nok")})
    }

    fn client(t: Arc<Scripted>) -> (LlmClient, Arc<Mutex<Vec<Duration>>>) {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let log = slept.clone();
        let config = LlmConfig {
            base_delay_ms: 10,
            max_retries: 2,
            ..LlmConfig::default()
        };
        let c = LlmClient::new(config, "k".into(), t).with_sleeper(Arc::new(move |d| log.lock().unwrap().push(d)));
        (c, slept)
    }

    #[test]
    fn one_valid_record() {
        let content = json!([valid_record()]).to_string();
        let (c, _) = client(Scripted::new(vec![Ok(envelope(&content))]));
        let g = c.generate("p").unwrap();
        assert_eq!(g.samples.len(), 1);
        assert!(g.rejected.is_empty() && g.backoff.is_empty());
    }

    #[test]
    fn prose_before_json_is_a_schema_violation() {
        let content = format!("Here are your samples:\n{}", json!([valid_record()]));
        let (c, _) = client(Scripted::new(vec![Ok(envelope(&content))]));
        assert!(matches!(c.generate("p"), Err(LlmError::Schema(_))));
    }

    #[test]
    fn non_json_body() {
        let (c, _) = client(Scripted::new(vec![Ok("<html>bad gateway</html>".into())]));
        assert!(matches!(c.generate("p"), Err(LlmError::NonJson(_))));
    }

    #[test]
    fn rate_limit_then_success_backs_off_once() {
        let content = json!([valid_record()]).to_string();
        let t = Scripted::new(vec![Err(TransportError::Status(429, String::new())), Ok(envelope(&content))]);
        let (c, slept) = client(t.clone());
        let g = c.generate("p").unwrap();
        assert_eq!(*t.calls.lock().unwrap(), 2);
        assert_eq!(g.backoff, vec![Duration::from_millis(10)]);
        assert_eq!(*slept.lock().unwrap(), g.backoff);
    }

    #[test]
    fn backoff_doubles_until_exhausted() {
        let fail = || Err(TransportError::Status(503, String::new()));
        let (c, slept) = client(Scripted::new(vec![fail(), fail(), fail()]));
        assert_eq!(c.generate("p"), Err(LlmError::Exhausted { attempts: 3, status: 503 }));
        assert_eq!(*slept.lock().unwrap(), vec![Duration::from_millis(10), Duration::from_millis(20)]);
        let (c, _) = client(Scripted::new(vec![Err(TransportError::Timeout); 3]));
        assert_eq!(c.generate("p"), Err(LlmError::Timeout { attempts: 3 }));
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let t = Scripted::new(vec![Err(TransportError::Status(401, String::new()))]);
        let (c, slept) = client(t.clone());
        assert!(matches!(c.generate("p"), Err(LlmError::Auth(_))));
        assert_eq!(*t.calls.lock().unwrap(), 1);
        assert!(slept.lock().unwrap().is_empty());
    }

    #[test]
    fn invalid_records_are_rejected_with_reasons() {
        let content = json!([valid_record(), {"Category": "XSS", "HTTP Payload": "GET / HTTP/1.1"}]).to_string();
        let (c, _) = client(Scripted::new(vec![Ok(envelope(&content))]));
        let g = c.generate("p").unwrap();
        assert_eq!(g.samples.len(), 1);
        assert_eq!(g.rejected.len(), 1);
        assert_eq!(g.rejected[0].index, 1);
        assert!(g.rejected[0].violations.contains(&Violation::MissingSeparator));
    }

    #[test]
    fn missing_credential() {
        let config = LlmConfig {
            credential_env: "SALM_TEST_SURELY_UNSET_VARIABLE".into(),
            ..LlmConfig::default()
        };
        let r = LlmClient::from_env(config, Scripted::new(vec![]));
        assert!(matches!(r, Err(LlmError::MissingCredential(_))));
    }

    #[test]
    fn many_prompts_keep_order() {
        let ok = |n: usize| Ok(envelope(&json!(vec![valid_record(); n]).to_string()));
        let t = Scripted::new(vec![ok(1), ok(1), ok(1)]);
        let (c, _) = client(t);
        let out = c.generate_many(&["a".into(), "b".into(), "c".into()]);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|r| r.as_ref().unwrap().samples.len() == 1));
    }
}
