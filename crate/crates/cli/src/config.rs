use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use dentagent_core::agent::SessionConfig;
use dentagent_core::gateway::{EndpointConfig, GatewayClient, GatewayProfile};
use dentagent_core::rag::{knowledge_search_descriptor, KnowledgeSearchTool, LanguageRouting};
use dentagent_core::registry::DEFAULT_TOOL_BASE;
use dentagent_core::{KnowledgeBase, ToolRegistry, VectorIndex};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Environment variable holding the bearer token.
    pub auth_token_env: Option<String>,
    /// Permit a non-loopback bind without a token.
    pub allow_open: bool,
    pub max_image_bytes: usize,
    /// Session checkpoints; sessions are kept in memory only when unset.
    pub memory_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            auth_token_env: None,
            allow_open: false,
            max_image_bytes: dentagent_core::api::DEFAULT_MAX_IMAGE_BYTES,
            memory_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnowledgeConfig {
    /// Index directories written by `build-index`; all are queried together.
    pub indexes: Vec<PathBuf>,
    pub routing: LanguageRouting,
    /// Converts .doc/.pdf files to parsed-document JSON for private knowledge bases.
    pub parser_command: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolsConfig {
    /// Catalog file; the shipped catalog when unset.
    pub catalog: Option<PathBuf>,
    /// Root URL of the tool servers.
    pub base_url: String,
}

impl Default for ToolsConfig {
    fn default() -> Self {
        Self { catalog: None, base_url: DEFAULT_TOOL_BASE.to_string() }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub gateway: GatewayProfile,
    pub session: SessionConfig,
    pub service: ServiceConfig,
    pub knowledge: KnowledgeConfig,
    pub tools: ToolsConfig,
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: AppConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.gateway.validate()?;
        config.session.validate().map_err(|e| anyhow!("[session] {e}"))?;
        Ok(config)
    }

    pub fn client(&self, slot: &str) -> Result<Arc<GatewayClient>> {
        let cfg: Option<&EndpointConfig> = match slot {
            "chat" => self.gateway.chat.as_ref(),
            "intent" => self.gateway.intent.as_ref().or(self.gateway.chat.as_ref()),
            "embed" => self.gateway.embed.as_ref(),
            "rerank" => self.gateway.rerank.as_ref(),
            "classify" => self.gateway.classify.as_ref(),
            other => return Err(anyhow!("unknown gateway slot {other}")),
        };
        let cfg = cfg.ok_or_else(|| anyhow!("no [gateway.{slot}] endpoint configured"))?;
        Ok(Arc::new(GatewayClient::new(cfg.clone())?))
    }

    /// An empty knowledge base over the configured embedder and reranker.
    pub fn empty_knowledge_base(&self) -> Result<KnowledgeBase> {
        Ok(KnowledgeBase::new(self.client("embed")?, self.client("rerank")?).with_routing(self.knowledge.routing))
    }

    /// The configured indexes, or `None` when there are none.
    pub fn knowledge_base(&self, extra: &[PathBuf]) -> Result<Option<Arc<KnowledgeBase>>> {
        let dirs: Vec<&PathBuf> = self.knowledge.indexes.iter().chain(extra).collect();
        if dirs.is_empty() {
            return Ok(None);
        }
        let kb = self.empty_knowledge_base()?;
        for dir in dirs {
            let index = VectorIndex::load(dir).with_context(|| format!("loading index {}", dir.display()))?;
            kb.install(index).with_context(|| format!("installing index {}", dir.display()))?;
        }
        Ok(Some(Arc::new(kb)))
    }

    pub fn registry(&self, kb: Option<&Arc<KnowledgeBase>>) -> Result<ToolRegistry> {
        let registry = ToolRegistry::new();
        let text = match &self.tools.catalog {
            Some(path) => std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
            None => dentagent_core::registry::SHIPPED_CATALOG.to_string(),
        };
        registry.load_catalog_str(&text, &self.tools.base_url)?;
        if let Some(kb) = kb {
            let k = self.session.k_default;
            registry.register_local(
                knowledge_search_descriptor(k),
                Arc::new(KnowledgeSearchTool::new(kb.clone(), k)),
                false,
            )?;
        }
        Ok(registry)
    }
}
