//! Live oracle backend speaking the common multimodal chat-completion
//! wire protocol: one user message carrying the prompt text and the PNG
//! as a base64 data URL, answered by an assistant message whose text
//! content is taken as the raw response.

use std::time::{Duration, Instant};

use base64::Engine as _;
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::oracle::{Oracle, OracleError, OracleReply, OracleRequest};

/// Environment variables consulted when the config file leaves a field
/// unset.
pub const ENV_ENDPOINT: &str = "ORACLE_GRASP_ENDPOINT";
pub const ENV_API_KEY: &str = "ORACLE_GRASP_API_KEY";
pub const ENV_MODEL: &str = "ORACLE_GRASP_MODEL";

/// Connection settings for [`HttpOracle`]. File values win over
/// environment variables; the environment fills gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpOracleConfig {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub temperature: f64,
    pub timeout_s: u64,
}

impl Default for HttpOracleConfig {
    fn default() -> Self {
        Self { endpoint: None, model: None, api_key: None, temperature: 0.6, timeout_s: 60 }
    }
}

/// [`Oracle`] backed by an HTTP chat-completion endpoint.
pub struct HttpOracle {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
}

impl std::fmt::Debug for HttpOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpOracle")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("temperature", &self.temperature)
            .finish()
    }
}

impl HttpOracle {
    /// Build a client from config plus environment fallbacks. Fails when
    /// no endpoint can be determined.
    pub fn new(config: &HttpOracleConfig) -> Result<Self, OracleError> {
        let endpoint = config
            .endpoint
            .clone()
            .or_else(|| std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty()))
            .ok_or(OracleError::EndpointNotConfigured)?;
        let model = config
            .model
            .clone()
            .or_else(|| std::env::var(ENV_MODEL).ok().filter(|s| !s.is_empty()))
            .unwrap_or_else(|| "default".to_string());
        let api_key = config
            .api_key
            .clone()
            .or_else(|| std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty()));
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        Ok(Self { client, endpoint, model, api_key, temperature: config.temperature })
    }
}

/// Pull the assistant text out of a chat-completion reply body. Accepts
/// both a plain string `content` and the part-list form.
fn extract_content(value: &serde_json::Value) -> Option<String> {
    let content = value.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(parts) => {
            let mut text = String::new();
            for part in parts {
                if part.get("type").and_then(|t| t.as_str()) == Some("text") {
                    if let Some(t) = part.get("text").and_then(|t| t.as_str()) {
                        text.push_str(t);
                    }
                }
            }
            if text.is_empty() {
                None
            } else {
                Some(text)
            }
        }
        _ => None,
    }
}

fn snippet(text: &str) -> String {
    let mut s: String = text.chars().take(200).collect();
    if s.len() < text.len() {
        s.push('…');
    }
    s
}

impl Oracle for HttpOracle {
    fn backend_name(&self) -> &'static str {
        "http"
    }

    fn query(&self, request: &OracleRequest<'_>) -> Result<OracleReply, OracleError> {
        let image_b64 = base64::engine::general_purpose::STANDARD.encode(request.png_bytes);
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{
                "role": "user",
                "content": [
                    { "type": "text", "text": request.prompt },
                    {
                        "type": "image_url",
                        "image_url": { "url": format!("data:image/png;base64,{image_b64}") }
                    }
                ]
            }]
        });

        let started = Instant::now();
        let mut http_request = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            http_request = http_request.bearer_auth(key);
        }
        let response = http_request.send().map_err(|e| OracleError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| OracleError::Transport(e.to_string()))?;
        let latency_ms = started.elapsed().as_millis() as u64;

        if !status.is_success() {
            return Err(OracleError::Transport(format!("HTTP {status}: {}", snippet(&text))));
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|_| OracleError::MalformedReply(format!("reply is not JSON: {}", snippet(&text))))?;
        let content = extract_content(&value).ok_or_else(|| {
            OracleError::MalformedReply(format!("no assistant text content: {}", snippet(&text)))
        })?;

        Ok(OracleReply {
            response: content,
            latency_ms,
            timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_extraction_accepts_both_shapes() {
        let plain: serde_json::Value = serde_json::from_str(
            r#"{"choices":[{"message":{"role":"assistant","content":"GRID_CELL: 4"}}]}"#,
        )
        .unwrap();
        assert_eq!(extract_content(&plain).as_deref(), Some("GRID_CELL: 4"));

        let parts: serde_json::Value = serde_json::from_str(
            r#"{"choices":[{"message":{"content":[{"type":"text","text":"GRID_CELL: 2"},{"type":"text","text":"\nEXPLANATION: x"}]}}]}"#,
        )
        .unwrap();
        assert_eq!(extract_content(&parts).as_deref(), Some("GRID_CELL: 2\nEXPLANATION: x"));

        let empty: serde_json::Value = serde_json::from_str(r#"{"choices":[]}"#).unwrap();
        assert_eq!(extract_content(&empty), None);
        let no_content: serde_json::Value =
            serde_json::from_str(r#"{"choices":[{"message":{}}]}"#).unwrap();
        assert_eq!(extract_content(&no_content), None);
    }

    #[test]
    fn endpoint_resolution_requires_some_source() {
        // The test environment must not leak a real endpoint in.
        if std::env::var(ENV_ENDPOINT).is_ok() {
            return;
        }
        let err = HttpOracle::new(&HttpOracleConfig::default()).unwrap_err();
        assert!(err.to_string().contains("endpoint not configured"));

        let with = HttpOracleConfig {
            endpoint: Some("http://127.0.0.1:1/v1/chat/completions".into()),
            ..HttpOracleConfig::default()
        };
        let oracle = HttpOracle::new(&with).unwrap();
        assert_eq!(oracle.backend_name(), "http");
        assert_eq!(oracle.model, "default");
    }

    #[test]
    fn config_defaults_and_toml_round_trip() {
        let c = HttpOracleConfig::default();
        assert_eq!(c.temperature, 0.6);
        assert_eq!(c.timeout_s, 60);
        let parsed: HttpOracleConfig =
            toml::from_str("endpoint = \"http://x/v1\"\ntemperature = 0.2\n").unwrap();
        assert_eq!(parsed.endpoint.as_deref(), Some("http://x/v1"));
        assert_eq!(parsed.temperature, 0.2);
        assert_eq!(parsed.timeout_s, 60);
        assert!(toml::from_str::<HttpOracleConfig>("bogus_key = 1\n").is_err());
    }
}
