use std::path::PathBuf;
use std::sync::Arc;

use memorb_core::embed::{Embedder, HashingEmbedder, RemoteEmbedder, DEFAULT_DIM};
use memorb_core::llm::{LlmAdapter, OfflineLlm, RemoteLlm};
use memorb_core::prompts::Prompts;
use memorb_core::retriever::DEFAULT_TOP_K;
use memorb_core::{Adapters, EngineConfig, MemoryEngine, RetrievalConfig};

pub const DEFAULT_LISTEN_ADDR: &str = "127.0.0.1:8080";

/// Every setting the service reads, keyed by its environment variable.
pub const KEYS: &[&str] = &[
    "LISTEN_ADDR",
    "DATA_DIR",
    "EMBED_DIM",
    "TOPK_DEFAULT",
    "CROSS_USER",
    "LLM_ENDPOINT",
    "LLM_TOKEN",
    "EMBED_ENDPOINT",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen_addr: String,
    /// `None` serves from memory only.
    pub data_dir: Option<PathBuf>,
    pub embed_dim: usize,
    pub topk_default: usize,
    pub cross_user: bool,
    pub llm_endpoint: Option<String>,
    pub llm_token: Option<String>,
    pub embed_endpoint: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen_addr: DEFAULT_LISTEN_ADDR.to_owned(),
            data_dir: None,
            embed_dim: DEFAULT_DIM,
            topk_default: DEFAULT_TOP_K,
            cross_user: true,
            llm_endpoint: None,
            llm_token: None,
            embed_endpoint: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_env() -> Result<Self, String> {
        let mut config = ServiceConfig::default();
        config.apply_lookup(|key| std::env::var(key).ok())?;
        Ok(config)
    }

    /// Applies every key `lookup` knows about. Empty values are ignored.
    pub fn apply_lookup(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), String> {
        for key in KEYS {
            if let Some(value) = lookup(key).filter(|v| !v.is_empty()) {
                self.set(key, &value)?;
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let positive = |v: &str| match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!("{key} must be a positive integer, got {v:?}")),
        };
        match key {
            "LISTEN_ADDR" => self.listen_addr = value.to_owned(),
            "DATA_DIR" => self.data_dir = Some(PathBuf::from(value)),
            "EMBED_DIM" => self.embed_dim = positive(value)?,
            "TOPK_DEFAULT" => self.topk_default = positive(value)?,
            "CROSS_USER" => {
                self.cross_user = match value.to_ascii_lowercase().as_str() {
                    "1" | "true" | "yes" | "on" => true,
                    "0" | "false" | "no" | "off" => false,
                    _ => return Err(format!("CROSS_USER must be a boolean, got {value:?}")),
                }
            }
            "LLM_ENDPOINT" => self.llm_endpoint = Some(value.to_owned()),
            "LLM_TOKEN" => self.llm_token = Some(value.to_owned()),
            "EMBED_ENDPOINT" => self.embed_endpoint = Some(value.to_owned()),
            _ => return Err(format!("unknown setting {key}")),
        }
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            dim: self.embed_dim,
            retrieval: RetrievalConfig {
                k_default: self.topk_default,
                cross_user: self.cross_user,
            },
            data_dir: self.data_dir.clone(),
            ..EngineConfig::default()
        }
    }

    /// Remote adapters where endpoints are configured, offline ones elsewhere.
    pub fn adapters(&self) -> memorb_core::Result<Adapters> {
        let embedder: Arc<dyn Embedder> = match &self.embed_endpoint {
            Some(url) => Arc::new(RemoteEmbedder::new(url.clone(), self.llm_token.clone(), self.embed_dim)?),
            None => Arc::new(HashingEmbedder::new(self.embed_dim)),
        };
        let llm: Arc<dyn LlmAdapter> = match &self.llm_endpoint {
            Some(url) => Arc::new(RemoteLlm::new(url.clone(), self.llm_token.clone())?),
            None => Arc::new(OfflineLlm),
        };
        Ok(Adapters {
            embedder,
            rewriter: llm.clone(),
            reflector: llm,
            prompts: Arc::new(Prompts::default()),
        })
    }

    pub fn open_engine(&self) -> memorb_core::Result<MemoryEngine> {
        MemoryEngine::open(self.engine_config(), self.adapters()?)
    }
}
