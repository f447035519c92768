//! Chat-completions backend over blocking HTTP.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::cache::Usage;
use crate::client::{Completion, MllmBackend, MllmClientConfig};
use crate::error::{Error, Result, TransportError};
use crate::request::MllmRequest;

const MAX_ERROR_BODY: usize = 512;

pub struct HttpBackend {
    http: reqwest::blocking::Client,
    endpoint: String,
    model_id: String,
    api_key: String,
}

impl HttpBackend {
    /// Reads the key from the environment variable named in `config`.
    pub fn from_config(config: &MllmClientConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| Error::MissingApiKey(config.api_key_env.clone()))?;
        Self::new(config, api_key)
    }

    pub fn new(config: &MllmClientConfig, api_key: impl Into<String>) -> Result<Self> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("http client: {e}")))?;
        Ok(Self {
            http,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model_id: config.model_id.clone(),
            api_key: api_key.into(),
        })
    }
}

/// JSON body for one request: a single user message whose parts are the
/// prompt text followed by the images in order.
pub fn request_body(model_id: &str, request: &MllmRequest) -> Value {
    let mut parts = vec![json!({"type": "text", "text": request.content.text})];
    for image in &request.content.images {
        parts.push(json!({"type": "image_url", "image_url": {"url": image.data_uri()}}));
    }
    json!({
        "model": model_id,
        "temperature": 0,
        "messages": [{"role": "user", "content": parts}],
    })
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<Value>,
}

/// Extracts the first choice's text. Content may be a string or a list of
/// typed parts.
pub fn parse_response(body: &str) -> std::result::Result<Completion, TransportError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| TransportError::InvalidResponse(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| TransportError::InvalidResponse("no choices".into()))?;
    let text = match choice.message.content {
        Some(Value::String(s)) => s,
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        None | Some(Value::Null) => String::new(),
        Some(other) => {
            return Err(TransportError::InvalidResponse(format!(
                "unexpected content {other}"
            )))
        }
    };
    Ok(Completion {
        text,
        usage: parsed.usage,
    })
}

impl MllmBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &MllmRequest) -> std::result::Result<Completion, TransportError> {
        let response = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&request_body(&self.model_id, request))
            .send()
            .map_err(classify)?;
        let status = response.status();
        let body = response.text().map_err(classify)?;
        if !status.is_success() {
            let mut body = body;
            if body.len() > MAX_ERROR_BODY {
                let cut = (0..=MAX_ERROR_BODY)
                    .rev()
                    .find(|&i| body.is_char_boundary(i))
                    .unwrap_or(0);
                body.truncate(cut);
            }
            return Err(TransportError::Status {
                code: status.as_u16(),
                body,
            });
        }
        parse_response(&body)
    }
}

fn classify(e: reqwest::Error) -> TransportError {
    if e.is_timeout() {
        TransportError::Timeout
    } else {
        TransportError::Connection(e.to_string())
    }
}
