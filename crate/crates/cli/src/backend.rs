use anyhow::Result;
use tracing::info;

use gift_core::lm::{
    CacheLoad, CachedBackend, ChatBackend, Embedder, HttpBackend, HttpConfig, OracleBackend,
    OracleScript, ReplayBackend,
};
use gift_core::world::load_task;

use crate::config::{config_err, BackendKind, PipelineConfig};

/// Model used when `backend.http` is absent and the connection comes from
/// the environment.
const MODEL_ENV: &str = "GIFT_LM_MODEL";
const DEFAULT_MODEL: &str = "gpt-4o-2024-08-06";

/// The chat backend behind a response cache, plus an embedder when the
/// backend offers one.
pub struct Backend {
    chat: CachedBackend<Box<dyn ChatBackend>>,
    embedder: Option<HttpBackend>,
    cache_path: Option<std::path::PathBuf>,
}

impl Backend {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let b = &cfg.backend;
        let mut embedder = None;
        let inner: Box<dyn ChatBackend> = match b.kind {
            BackendKind::Oracle => {
                let task = load_task(&cfg.task)?;
                let script = OracleScript::for_task(&task, b.noise_rate, b.oracle_seed)?;
                let mut oracle = OracleBackend::new(script)?;
                if let Some(dir) = &cfg.prompts_dir {
                    oracle = oracle.with_prompts(
                        gift_core::intent::PromptSet::load(dir)
                            .map_err(|e| config_err(e.to_string()))?,
                    );
                }
                Box::new(oracle)
            }
            BackendKind::Replay => {
                let path = b
                    .replay
                    .as_ref()
                    .ok_or_else(|| config_err("backend `replay` needs `backend.replay`"))?;
                Box::new(ReplayBackend::load(path)?)
            }
            BackendKind::Http => {
                let http = match &b.http {
                    Some(h) => h.clone(),
                    None => HttpConfig::from_env(
                        std::env::var(MODEL_ENV).unwrap_or_else(|_| DEFAULT_MODEL.to_owned()),
                    )?,
                };
                embedder = Some(HttpBackend::new(http.clone())?);
                Box::new(HttpBackend::new(http)?)
            }
        };
        let mut chat = CachedBackend::new(inner);
        if let Some(rec) = &b.record {
            chat = chat.recording_to(rec.clone());
        }
        if let Some(path) = &b.cache {
            match chat.load(path)? {
                CacheLoad::Missing => info!(path = %path.display(), "no cache yet"),
                other => info!(path = %path.display(), ?other, "cache loaded"),
            }
        }
        Ok(Backend {
            chat,
            embedder,
            cache_path: b.cache.clone(),
        })
    }

    pub fn chat(&self) -> &dyn ChatBackend {
        &self.chat
    }

    pub fn embedder(&self) -> Option<Box<dyn Embedder + '_>> {
        self.embedder
            .as_ref()
            .map(|e| Box::new(e) as Box<dyn Embedder + '_>)
    }

    /// Persists the cache, if one is configured.
    pub fn finish(&self) -> Result<()> {
        if let Some(path) = &self.cache_path {
            self.chat.save(path)?;
        }
        info!(upstream_calls = self.chat.upstream_calls(), "backend done");
        Ok(())
    }
}
