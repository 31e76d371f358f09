use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointRole {
    Chat,
    Embed,
    Rerank,
    Classify,
}

impl EndpointRole {
    pub fn path(self) -> &'static str {
        match self {
            EndpointRole::Chat => "/v1/chat/completions",
            EndpointRole::Embed => "/v1/embeddings",
            EndpointRole::Rerank => "/v1/rerank",
            EndpointRole::Classify => "/v1/classify",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EndpointRole::Chat => "chat",
            EndpointRole::Embed => "embed",
            EndpointRole::Rerank => "rerank",
            EndpointRole::Classify => "classify",
        }
    }
}

impl std::fmt::Display for EndpointRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    2
}
fn default_backoff_base_ms() -> u64 {
    250
}
fn default_backoff_max_ms() -> u64 {
    4_000
}

/// Connection settings for one remote model role.
///
/// `base_url` is the server root; the role's route (e.g. `/v1/embeddings`) is
/// appended. The API key is never stored, only the name of the environment
/// variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub role: EndpointRole,
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max_ms")]
    pub backoff_max_ms: u64,
}

impl EndpointConfig {
    pub fn new(role: EndpointRole, base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            role,
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            backoff_max_ms: default_backoff_max_ms(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout_secs = timeout.as_secs_f64();
        self
    }

    pub fn with_retries(mut self, max_retries: u32, backoff_base: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff_base_ms = backoff_base.as_millis() as u64;
        self
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn url(&self) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), self.role.path())
    }

    /// Delay before retry number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(16);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }

    /// Upper bound on the wall time of one gateway call including retries.
    pub fn worst_case_wall_time(&self) -> Duration {
        let backoff: Duration = (1..=self.max_retries).map(|a| self.backoff(a)).sum();
        self.timeout() * (self.max_retries + 1) + backoff
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(GatewayError::Config(format!("{} endpoint timeout must be positive", self.role)));
        }
        if self.base_url.trim().is_empty() {
            return Err(GatewayError::Config(format!("{} endpoint has no base_url", self.role)));
        }
        Ok(())
    }
}

/// One endpoint per role. Roles may be left unset when a deployment does not need them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GatewayProfile {
    #[serde(default)]
    pub chat: Option<EndpointConfig>,
    /// Small model used for intent recognition; falls back to `chat` when unset.
    #[serde(default)]
    pub intent: Option<EndpointConfig>,
    #[serde(default)]
    pub embed: Option<EndpointConfig>,
    #[serde(default)]
    pub rerank: Option<EndpointConfig>,
    #[serde(default)]
    pub classify: Option<EndpointConfig>,
}

impl GatewayProfile {
    /// Every role pointed at the same server, as with the scripted mock.
    pub fn single_server(base_url: &str) -> Self {
        Self {
            chat: Some(EndpointConfig::new(EndpointRole::Chat, base_url, "orchestrator")),
            intent: Some(EndpointConfig::new(EndpointRole::Chat, base_url, "intent")),
            embed: Some(EndpointConfig::new(EndpointRole::Embed, base_url, "embedder")),
            rerank: Some(EndpointConfig::new(EndpointRole::Rerank, base_url, "reranker")),
            classify: Some(EndpointConfig::new(EndpointRole::Classify, base_url, "modality")),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let slots = [
            (&self.chat, EndpointRole::Chat),
            (&self.intent, EndpointRole::Chat),
            (&self.embed, EndpointRole::Embed),
            (&self.rerank, EndpointRole::Rerank),
            (&self.classify, EndpointRole::Classify),
        ];
        for (cfg, role) in slots {
            if let Some(cfg) = cfg {
                if cfg.role != role {
                    return Err(GatewayError::Config(format!(
                        "endpoint configured for role {} placed in the {} slot",
                        cfg.role, role
                    )));
                }
                cfg.validate()?;
            }
        }
        Ok(())
    }
}
