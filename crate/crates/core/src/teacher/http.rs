//! Chat-completion and scoring endpoints over HTTP.
//!
//! Completion: `POST {base_url}/chat/completions` with
//! `{"model", "messages": [{"role": "user", "content"}], "max_tokens", "temperature", "stop"?}`;
//! the answer is read from `choices[0].message.content`.
//!
//! Scoring: `POST {base_url}/score` with `{"model", "text", "window", "stride"}`;
//! the response carries `{"logprobs": [f64, ...]}`, one entry per scored token.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionRequest, Endpoint, EndpointError, ScoreRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

pub struct HttpEndpoint {
    config: EndpointConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(config: EndpointConfig) -> Self {
        let token = config.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self { config, token, agent }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, EndpointError> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let mut req = self.agent.post(&url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(|e| EndpointError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| EndpointError::Transient(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| EndpointError::Fatal(format!("invalid JSON response: {e}"))),
            408 | 429 | 500..=599 => Err(EndpointError::Transient(format!("HTTP {status}: {text}"))),
            _ => Err(EndpointError::Fatal(format!("HTTP {status}: {text}"))),
        }
    }
}

impl Endpoint for HttpEndpoint {
    fn id(&self) -> String {
        format!("{}#{}", self.config.base_url, self.config.model)
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, EndpointError> {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.params.max_tokens,
            "temperature": req.params.temperature,
        });
        if !req.params.stop.is_empty() {
            body["stop"] = json!(req.params.stop);
        }
        let v = self.post("chat/completions", &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| EndpointError::Fatal("response lacks choices[0].message.content".into()))
    }

    fn score(&self, req: &ScoreRequest) -> Result<Vec<f64>, EndpointError> {
        let body = json!({
            "model": self.config.model,
            "text": req.text,
            "window": req.window,
            "stride": req.stride,
        });
        let v = self.post("score", &body)?;
        v.get("logprobs")
            .and_then(Value::as_array)
            .ok_or_else(|| EndpointError::Fatal("response lacks logprobs".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| EndpointError::Fatal("non-numeric logprob".into())))
            .collect()
    }
}
