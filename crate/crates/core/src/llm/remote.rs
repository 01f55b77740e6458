//! JSON-over-HTTP chat client.
//!
//! Speaks the common `POST {base_url}/chat/completions` shape:
//!
//! | internal              | wire                                                     |
//! |-----------------------|----------------------------------------------------------|
//! | `messages[].role`     | `messages[].role`                                        |
//! | `messages[].content`  | `messages[].content` (string, or parts when images ride along) |
//! | `messages[].images`   | `{"type":"image_url","image_url":{"url":..}}` parts      |
//! | `max_tokens`          | `max_tokens`                                             |
//! | `temperature`         | `temperature`                                            |
//! | `label_alphabet`      | `logprobs: true, top_logprobs: 20, max_tokens: 1`        |
//! | `text`                | `choices[0].message.content`                             |
//! | `label_probs`         | `exp(logprob)` of `choices[0].logprobs.content[0].top_logprobs` |

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Sampling seed forwarded to the server, when it honours one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_secs() -> u64 {
    60
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_secs: default_timeout_secs(),
            seed: None,
        }
    }

    /// Reads `{prefix}_BASE_URL`, `{prefix}_API_KEY` and `{prefix}_MODEL`.
    pub fn from_env(prefix: &str) -> Result<Self, BackendError> {
        let var = |name: &str| std::env::var(format!("{prefix}_{name}")).ok();
        let base_url = var("BASE_URL")
            .ok_or_else(|| BackendError::Config(format!("{prefix}_BASE_URL is not set")))?;
        let mut config = Self::new(base_url, var("MODEL").unwrap_or_else(|| "default".into()));
        config.api_key = var("API_KEY");
        Ok(config)
    }
}

#[derive(Clone)]
pub struct RemoteBackend {
    id: String,
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            id: format!("remote:{}", config.model),
            config,
            agent,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn wire_body(&self, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let content = if m.images.is_empty() {
                    json!(m.content)
                } else {
                    let mut parts = vec![json!({"type": "text", "text": m.content})];
                    parts.extend(
                        m.images
                            .iter()
                            .map(|url| json!({"type": "image_url", "image_url": {"url": url}})),
                    );
                    Value::Array(parts)
                };
                json!({"role": m.role, "content": content})
            })
            .collect();
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if let Some(seed) = self.config.seed {
            body["seed"] = json!(seed);
        }
        if request.label_alphabet.is_some() {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(20);
            body["max_tokens"] = json!(1);
        }
        body
    }

    /// One request-response exchange with retries on transport errors and
    /// 5xx replies. Safe to call from several threads at once.
    pub fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = self.wire_body(request);
        let attempts_allowed = self.config.retries + 1;
        let mut last_error = String::new();
        for attempt in 1..=attempts_allowed {
            if attempt > 1 {
                log::warn!(
                    "{}: attempt {} failed ({last_error}), retrying",
                    self.id,
                    attempt - 1
                );
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms));
            }
            let mut call = self.agent.post(&self.endpoint());
            if let Some(key) = &self.config.api_key {
                call = call.header("Authorization", &format!("Bearer {key}"));
            }
            match call.send_json(&body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status == 401 || status == 403 {
                        return Err(BackendError::Auth(format!("HTTP {status}")));
                    }
                    if status >= 500 {
                        last_error = format!("HTTP {status}");
                        continue;
                    }
                    if status >= 400 {
                        let text = resp.body_mut().read_to_string().unwrap_or_default();
                        return Err(BackendError::Malformed(format!("HTTP {status}: {text}")));
                    }
                    let reply: Value = resp
                        .body_mut()
                        .read_json()
                        .map_err(|e| BackendError::Malformed(e.to_string()))?;
                    return parse_reply(&reply, request);
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(BackendError::Transport {
            message: last_error,
            attempts: attempts_allowed,
        })
    }
}

fn parse_reply(reply: &Value, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
    let choice = reply
        .pointer("/choices/0")
        .ok_or_else(|| BackendError::Malformed("reply has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("reply has no message content".into()))?
        .to_string();

    let label_probs = request.label_alphabet.as_ref().and_then(|alphabet| {
        let top = choice
            .pointer("/logprobs/content/0/top_logprobs")?
            .as_array()?;
        let mut probs: BTreeMap<String, f64> = BTreeMap::new();
        for entry in top {
            let token = entry.get("token")?.as_str()?.trim();
            let logprob = entry.get("logprob")?.as_f64()?;
            if alphabet.iter().any(|a| a == token) {
                *probs.entry(token.to_string()).or_default() += logprob.exp();
            }
        }
        Some(probs)
    });

    Ok(ChatResponse {
        usage: Usage {
            prompt_chars: request.prompt_chars(),
            completion_chars: text.chars().count() as u64,
        },
        text,
        label_probs,
    })
}

impl ChatBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.send(request)
    }
}
