//! HTTP service: configuration, shared context and the axum router.
//!
//! Network providers use blocking clients, so [`AppContext::from_config`]
//! must run before the async runtime starts. Pipeline work runs on the
//! blocking pool.

pub mod html;
pub mod openapi;
mod routes;

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{Pipeline, PipelineConfig};
use crate::provider::http::{ElevenLabs, OpenAiGenerator};
use crate::provider::mock::{MockVoiceLab, ScriptedAsr, ScriptedLlm, INTERLOCUTOR_VOICE, PROXY_VOICE};
use crate::provider::{Gateway, GatewayError, RetryPolicy, DEFAULT_MIN_SAMPLE_SECONDS};
use crate::scenario::ScenarioRegistry;
use crate::script::{Script, ScriptError};
use crate::session::{SessionId, DEFAULT_MAX_TURNS};
use crate::store::{BlobStore, Clock, EventStore, StoreError};
use crate::study::DEFAULT_REVERSE_SET;

pub use routes::router;

/// Preset voices used with the real synthesis backend unless configured.
pub const DEFAULT_PROXY_VOICE: &str = "21m00Tcm4TlvDq8ikWAM";
pub const DEFAULT_INTERLOCUTOR_VOICE: &str = "ErXwobaYiN019PkySvjV";
/// Transcript the mock recognizer returns for audio it was not scripted for.
pub const MOCK_FALLBACK_TRANSCRIPT: &str = "Could you help me with that, please?";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment variable {0} is not set")]
    MissingCredential(String),
    #[error("reverse_set item {0} is outside 1..=25")]
    BadReverseItem(u8),
    #[error(transparent)]
    Provider(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Script(#[from] ScriptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    #[default]
    Mock,
    Real,
}

/// Service configuration, read from TOML. Secrets are never stored here,
/// only the names of the environment variables that hold them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiConfig {
    pub bind: String,
    pub provider: ProviderMode,
    pub openai_key_env: String,
    pub elevenlabs_key_env: String,
    pub openai_base_url: Option<String>,
    pub elevenlabs_base_url: Option<String>,
    pub chat_model: Option<String>,
    pub proxy_voice_id: Option<String>,
    pub interlocutor_voice_id: Option<String>,
    pub reverse_set: Vec<u8>,
    pub max_turns: u32,
    pub min_sample_seconds: f64,
    /// JSON Lines event log; in memory when absent.
    pub log_path: Option<PathBuf>,
    /// Audio blob directory; in memory when absent.
    pub blob_dir: Option<PathBuf>,
    /// Environment variable holding the admin bearer token.
    pub admin_token_env: Option<String>,
    /// Mock mode only: script whose rephrasings and replies the mock model uses.
    pub mock_script: Option<PathBuf>,
    pub retry: RetryPolicy,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            provider: ProviderMode::Mock,
            openai_key_env: "OPENAI_API_KEY".into(),
            elevenlabs_key_env: "ELEVENLABS_API_KEY".into(),
            openai_base_url: None,
            elevenlabs_base_url: None,
            chat_model: None,
            proxy_voice_id: None,
            interlocutor_voice_id: None,
            reverse_set: DEFAULT_REVERSE_SET.to_vec(),
            max_turns: DEFAULT_MAX_TURNS,
            min_sample_seconds: DEFAULT_MIN_SAMPLE_SECONDS,
            log_path: None,
            blob_dir: None,
            admin_token_env: None,
            mock_script: None,
            retry: RetryPolicy::default(),
        }
    }
}

impl ApiConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ApiConfig = toml::from_str(text)?;
        if let Some(&bad) = cfg.reverse_set.iter().find(|&&i| i == 0 || i > 25) {
            return Err(ConfigError::BadReverseItem(bad));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn reverse_set(&self) -> BTreeSet<u8> {
        self.reverse_set.iter().copied().collect()
    }

    fn voices(&self) -> (String, String) {
        let (proxy, interlocutor) = match self.provider {
            ProviderMode::Mock => (PROXY_VOICE, INTERLOCUTOR_VOICE),
            ProviderMode::Real => (DEFAULT_PROXY_VOICE, DEFAULT_INTERLOCUTOR_VOICE),
        };
        (
            self.proxy_voice_id.clone().unwrap_or_else(|| proxy.into()),
            self.interlocutor_voice_id
                .clone()
                .unwrap_or_else(|| interlocutor.into()),
        )
    }
}

fn credential(var: &str) -> Result<String, ConfigError> {
    std::env::var(var)
        .ok()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| ConfigError::MissingCredential(var.to_string()))
}

pub type IdGen = Arc<dyn Fn(&str) -> String + Send + Sync>;

/// Random ids such as `P-3f2a...`.
pub fn uuid_ids() -> IdGen {
    Arc::new(|prefix| format!("{prefix}-{}", uuid::Uuid::new_v4().simple()))
}

/// Sequential ids such as `P-1`, `S-2` for reproducible runs.
pub fn counter_ids() -> IdGen {
    let n = Arc::new(AtomicU64::new(0));
    Arc::new(move |prefix| format!("{prefix}-{}", n.fetch_add(1, Ordering::SeqCst) + 1))
}

/// State shared by all handlers.
pub struct AppContext {
    pub pipeline: Pipeline,
    pub store: Mutex<EventStore>,
    pub blobs: BlobStore,
    pub reverse_set: BTreeSet<u8>,
    pub max_turns: u32,
    pub admin_token: Option<String>,
    ids: IdGen,
    clock: Clock,
    in_flight: Mutex<HashSet<SessionId>>,
}

impl std::fmt::Debug for AppContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppContext")
            .field("pipeline", &self.pipeline)
            .finish_non_exhaustive()
    }
}

impl AppContext {
    pub fn new(pipeline: Pipeline, store: EventStore, blobs: BlobStore) -> Self {
        Self {
            pipeline,
            store: Mutex::new(store),
            blobs,
            reverse_set: DEFAULT_REVERSE_SET.into_iter().collect(),
            max_turns: DEFAULT_MAX_TURNS,
            admin_token: None,
            ids: uuid_ids(),
            clock: Arc::new(Utc::now),
            in_flight: Mutex::new(HashSet::new()),
        }
    }

    pub fn with_ids(mut self, ids: IdGen) -> Self {
        self.ids = ids;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        let store = self.store.into_inner().expect("store lock").with_clock(clock.clone());
        self.store = Mutex::new(store);
        self.clock = clock;
        self
    }

    pub fn with_admin_token(mut self, token: impl Into<String>) -> Self {
        self.admin_token = Some(token.into());
        self
    }

    pub fn with_reverse_set(mut self, set: BTreeSet<u8>) -> Self {
        self.reverse_set = set;
        self
    }

    pub fn with_max_turns(mut self, max_turns: u32) -> Self {
        self.max_turns = max_turns;
        self
    }

    pub(crate) fn next_id(&self, prefix: &str) -> String {
        (self.ids)(prefix)
    }

    pub(crate) fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    /// Claims the single turn slot of a session. `None` if already taken.
    pub(crate) fn claim_turn(self: &Arc<Self>, id: &SessionId) -> Option<TurnSlot> {
        let mut set = self.in_flight.lock().expect("in-flight lock");
        set.insert(id.clone()).then(|| TurnSlot {
            ctx: Arc::clone(self),
            id: id.clone(),
        })
    }

    /// Builds providers, opens the log and blob store. Call outside any
    /// async runtime.
    pub fn from_config(cfg: &ApiConfig) -> Result<Self, ConfigError> {
        let store = match &cfg.log_path {
            Some(p) => EventStore::open(p)?,
            None => EventStore::in_memory(),
        };
        let blobs = match &cfg.blob_dir {
            Some(d) => BlobStore::on_disk(d)?,
            None => BlobStore::in_memory(),
        };
        let timeout = cfg.retry.call_timeout;
        let gateway = match cfg.provider {
            ProviderMode::Mock => {
                let (asr, llm) = match &cfg.mock_script {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                            path: path.clone(),
                            source,
                        })?;
                        let script = Script::from_yaml(&text)?;
                        (script.scripted_asr(), script.scripted_llm())
                    }
                    None => (ScriptedAsr::new(), ScriptedLlm::new()),
                };
                let (proxy, interlocutor) = cfg.voices();
                let lab = Arc::new(MockVoiceLab::with_presets([proxy, interlocutor]));
                // Clones registered before a restart must stay usable.
                for p in store.state().participants.values() {
                    if let Some(v) = &p.voice_profile {
                        lab.adopt_clone(v.provider_voice_id.clone());
                    }
                }
                Gateway::new(
                    Arc::new(asr.with_fallback(MOCK_FALLBACK_TRANSCRIPT)),
                    Arc::new(llm),
                    lab.clone(),
                    lab,
                )
                .with_retry_policy(RetryPolicy::immediate(cfg.retry.max_attempts))
            }
            ProviderMode::Real => {
                let mut llm = OpenAiGenerator::new(credential(&cfg.openai_key_env)?, timeout)?;
                if let Some(url) = &cfg.openai_base_url {
                    llm = llm.with_base_url(url);
                }
                if let Some(model) = &cfg.chat_model {
                    llm = llm.with_model(model);
                }
                let mut voice = ElevenLabs::new(credential(&cfg.elevenlabs_key_env)?, timeout)?;
                if let Some(url) = &cfg.elevenlabs_base_url {
                    voice = voice.with_base_url(url);
                }
                let voice = Arc::new(voice);
                Gateway::new(voice.clone(), Arc::new(llm), voice.clone(), voice).with_retry_policy(cfg.retry.clone())
            }
        }
        .with_min_sample_seconds(cfg.min_sample_seconds);

        let (proxy_voice_id, interlocutor_voice_id) = cfg.voices();
        let pipeline = Pipeline::new(
            gateway,
            PipelineConfig {
                proxy_voice_id,
                interlocutor_voice_id,
                ..PipelineConfig::default()
            },
            ScenarioRegistry::builtin(),
        );
        let mut ctx = AppContext::new(pipeline, store, blobs)
            .with_reverse_set(cfg.reverse_set())
            .with_max_turns(cfg.max_turns);
        if let Some(var) = &cfg.admin_token_env {
            ctx = ctx.with_admin_token(credential(var)?);
        }
        Ok(ctx)
    }
}

/// Releases a session's turn slot when dropped.
pub(crate) struct TurnSlot {
    ctx: Arc<AppContext>,
    id: SessionId,
}

impl Drop for TurnSlot {
    fn drop(&mut self) {
        if let Ok(mut set) = self.ctx.in_flight.lock() {
            set.remove(&self.id);
        }
    }
}

/// Serves until Ctrl-C.
pub async fn serve(ctx: Arc<AppContext>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(ctx))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = ApiConfig::from_toml("").unwrap();
        assert_eq!(cfg, ApiConfig::default());
        assert_eq!(cfg.reverse_set(), crate::study::default_reverse_set());

        let cfg = ApiConfig::from_toml(
            r#"
            bind = "0.0.0.0:9000"
            provider = "real"
            reverse_set = [5, 7]
            max_turns = 12
            proxy_voice_id = "voice-x"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.provider, ProviderMode::Real);
        assert_eq!(
            cfg.voices(),
            ("voice-x".to_string(), DEFAULT_INTERLOCUTOR_VOICE.to_string())
        );
        assert!(matches!(
            ApiConfig::from_toml("reverse_set = [30]"),
            Err(ConfigError::BadReverseItem(30))
        ));
        assert!(ApiConfig::from_toml("no_such_key = 1").is_err());
    }

    #[test]
    fn mock_mode_needs_no_credentials() {
        let ctx = AppContext::from_config(&ApiConfig::default()).unwrap();
        assert_eq!(ctx.max_turns, DEFAULT_MAX_TURNS);
    }

    #[test]
    fn real_mode_reports_missing_credentials() {
        let cfg = ApiConfig {
            provider: ProviderMode::Real,
            openai_key_env: "AITWIN_TEST_UNSET_KEY".into(),
            ..ApiConfig::default()
        };
        assert!(matches!(
            AppContext::from_config(&cfg),
            Err(ConfigError::MissingCredential(v)) if v == "AITWIN_TEST_UNSET_KEY"
        ));
    }
}
