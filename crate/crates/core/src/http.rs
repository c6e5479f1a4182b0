use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Blocking JSON-over-HTTP client shared by the remote providers.
#[derive(Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl JsonClient {
    pub fn new(api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        JsonClient { agent, api_key }
    }

    pub fn post(&self, url: &str, body: &Value) -> Result<Value, TransportError> {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| TransportError(format!("POST {url}: {e}")))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(format!("reading response from {url}: {e}")))?;
        serde_json::from_str(&text)
            .map_err(|e| TransportError(format!("response from {url} is not JSON: {e}")))
    }
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!(
        "{}/{}",
        base.trim_end_matches('/'),
        path.trim_start_matches('/')
    )
}
