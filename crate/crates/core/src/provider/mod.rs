//! Uniform access to the external AI services a turn needs.
//!
//! Four traits cover speech recognition, text generation, speech synthesis
//! and voice cloning. [`Gateway`] bundles one implementation of each with the
//! contract checks and retry policy that apply regardless of backend. Nothing
//! in this module knows about feedback conditions.

pub mod audio;
pub mod http;
pub mod mock;
mod retry;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audio::{AudioClip, AudioFormat};
pub use retry::{with_retry, RetryPolicy};

use crate::prompt::{DialogueTranscript, TemplateName};

pub const DEFAULT_MIN_SAMPLE_SECONDS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrResult {
    /// Empty when no speech was detected.
    pub transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub template: TemplateName,
    /// Fully rendered prompt, dialogue included.
    pub system_prompt: String,
    /// The dialogue that was rendered into the prompt.
    pub dialogue: DialogueTranscript,
    pub temperature: f64,
    pub max_output: u32,
}

impl GenerationRequest {
    pub fn new(template: TemplateName, system_prompt: String, dialogue: DialogueTranscript) -> Self {
        let (temperature, max_output) = match template {
            TemplateName::Chat => (0.7, 200),
            TemplateName::TaskTracking => (0.0, 300),
            TemplateName::RephraseTwinProxy => (0.2, 200),
            TemplateName::ExplicitFeedback => (0.3, 500),
        };
        Self {
            template,
            system_prompt,
            dialogue,
            temperature,
            max_output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRequest {
    pub text: String,
    pub voice_id: String,
    /// `None` leaves the provider default in place.
    pub speed: Option<f64>,
    pub stability: Option<f64>,
    pub output_format: AudioFormat,
}

impl SynthesisRequest {
    pub fn new(text: impl Into<String>, voice_id: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            voice_id: voice_id.into(),
            speed: None,
            stability: None,
            output_format: AudioFormat::Wav,
        }
    }

    pub fn tuned(mut self, speed: f64, stability: f64) -> Self {
        self.speed = Some(speed);
        self.stability = Some(stability);
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("synthesis text is empty".into()));
        }
        if let Some(speed) = self.speed {
            if !(speed > 0.0 && speed.is_finite()) {
                return Err(GatewayError::InvalidRequest(format!(
                    "speed must be positive, got {speed}"
                )));
            }
        }
        if let Some(stability) = self.stability {
            if !(0.0..=1.0).contains(&stability) {
                return Err(GatewayError::InvalidRequest(format!(
                    "stability must be in [0, 1], got {stability}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderErrorKind {
    Timeout,
    RateLimited,
    MalformedResponse,
    AuthFailure,
    Unavailable,
}

impl ProviderErrorKind {
    pub fn is_retryable(self) -> bool {
        matches!(
            self,
            ProviderErrorKind::Timeout | ProviderErrorKind::RateLimited | ProviderErrorKind::Unavailable
        )
    }
}

impl fmt::Display for ProviderErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProviderErrorKind::Timeout => "timeout",
            ProviderErrorKind::RateLimited => "rate_limited",
            ProviderErrorKind::MalformedResponse => "malformed_response",
            ProviderErrorKind::AuthFailure => "auth_failure",
            ProviderErrorKind::Unavailable => "unavailable",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[error("provider {kind}: {detail}")]
pub struct ProviderError {
    pub kind: ProviderErrorKind,
    pub retryable: bool,
    pub detail: String,
}

impl ProviderError {
    pub fn new(kind: ProviderErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            retryable: kind.is_retryable(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("unsupported audio format: {0}")]
    UnsupportedAudioFormat(String),
    #[error("unknown voice `{0}`")]
    UnknownVoice(String),
    #[error("voice sample is {actual:.1} s, at least {min:.1} s required")]
    SampleTooShort { actual: f64, min: f64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Provider(e) if e.retryable)
    }
}

pub trait SpeechRecognizer: Send + Sync {
    fn transcribe(&self, audio: &AudioClip, language_hint: Option<&str>) -> Result<AsrResult, GatewayError>;
}

pub trait TextGenerator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError>;
}

pub trait SpeechSynthesizer: Send + Sync {
    fn synthesize(&self, request: &SynthesisRequest) -> Result<AudioClip, GatewayError>;
}

pub trait VoiceCloner: Send + Sync {
    fn clone_voice(&self, sample: &AudioClip, sample_language: &str) -> Result<String, GatewayError>;
}

/// One backend per capability plus the shared contract checks.
#[derive(Clone)]
pub struct Gateway {
    pub asr: Arc<dyn SpeechRecognizer>,
    pub llm: Arc<dyn TextGenerator>,
    pub tts: Arc<dyn SpeechSynthesizer>,
    pub cloner: Arc<dyn VoiceCloner>,
    pub retry: RetryPolicy,
    pub min_sample_seconds: f64,
}

impl Gateway {
    pub fn new(
        asr: Arc<dyn SpeechRecognizer>,
        llm: Arc<dyn TextGenerator>,
        tts: Arc<dyn SpeechSynthesizer>,
        cloner: Arc<dyn VoiceCloner>,
    ) -> Self {
        Self {
            asr,
            llm,
            tts,
            cloner,
            retry: RetryPolicy::default(),
            min_sample_seconds: DEFAULT_MIN_SAMPLE_SECONDS,
        }
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_min_sample_seconds(mut self, secs: f64) -> Self {
        self.min_sample_seconds = secs;
        self
    }

    pub fn transcribe(&self, audio: &AudioClip, language_hint: Option<&str>) -> Result<AsrResult, GatewayError> {
        if audio.bytes().is_empty() {
            return Err(GatewayError::UnsupportedAudioFormat("empty audio".into()));
        }
        with_retry(&self.retry, || self.asr.transcribe(audio, language_hint))
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        if request.system_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("system prompt is empty".into()));
        }
        with_retry(&self.retry, || self.llm.generate(request))
    }

    pub fn synthesize(&self, request: &SynthesisRequest) -> Result<AudioClip, GatewayError> {
        request.validate()?;
        with_retry(&self.retry, || self.tts.synthesize(request))
    }

    /// Clones a voice from a sample of at least `min_sample_seconds`.
    /// Only WAV samples can be measured; other formats need a declared duration.
    pub fn clone_voice(&self, sample: &AudioClip, sample_language: &str) -> Result<(String, f64), GatewayError> {
        let duration = sample.duration_secs().ok_or_else(|| {
            GatewayError::UnsupportedAudioFormat(format!("cannot measure {} sample", sample.format()))
        })?;
        self.clone_voice_declared(sample, sample_language, duration)
    }

    pub fn clone_voice_declared(
        &self,
        sample: &AudioClip,
        sample_language: &str,
        duration_secs: f64,
    ) -> Result<(String, f64), GatewayError> {
        if duration_secs < self.min_sample_seconds {
            return Err(GatewayError::SampleTooShort {
                actual: duration_secs,
                min: self.min_sample_seconds,
            });
        }
        let id = with_retry(&self.retry, || self.cloner.clone_voice(sample, sample_language))?;
        Ok((id, duration_secs))
    }
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("retry", &self.retry)
            .field("min_sample_seconds", &self.min_sample_seconds)
            .finish_non_exhaustive()
    }
}
