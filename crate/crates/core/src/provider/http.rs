//! Network backends: an OpenAI-compatible chat endpoint for text generation
//! and ElevenLabs for recognition, synthesis and instant voice cloning.
//!
//! These use the blocking HTTP client. Build them outside any async runtime
//! and call them from blocking threads.

use std::time::Duration;

use reqwest::blocking::{multipart, Client, Response};
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{
    AsrResult, AudioClip, AudioFormat, GatewayError, GenerationRequest, ProviderError, ProviderErrorKind,
    SpeechRecognizer, SpeechSynthesizer, SynthesisRequest, TextGenerator, VoiceCloner,
};

pub const OPENAI_BASE_URL: &str = "https://api.openai.com";
pub const ELEVENLABS_BASE_URL: &str = "https://api.elevenlabs.io";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-4.1-mini";
pub const DEFAULT_STT_MODEL: &str = "scribe_v1";
pub const DEFAULT_TTS_MODEL: &str = "eleven_multilingual_v2";

fn client(timeout: Duration) -> Result<Client, GatewayError> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ProviderError::new(ProviderErrorKind::Unavailable, e.to_string()).into())
}

fn transport_error(e: reqwest::Error) -> GatewayError {
    let kind = if e.is_timeout() {
        ProviderErrorKind::Timeout
    } else if e.is_decode() {
        ProviderErrorKind::MalformedResponse
    } else {
        ProviderErrorKind::Unavailable
    };
    ProviderError::new(kind, e.to_string()).into()
}

fn status_error(status: StatusCode, body: &str) -> GatewayError {
    let kind = match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => ProviderErrorKind::AuthFailure,
        StatusCode::TOO_MANY_REQUESTS => ProviderErrorKind::RateLimited,
        StatusCode::REQUEST_TIMEOUT | StatusCode::GATEWAY_TIMEOUT => ProviderErrorKind::Timeout,
        s if s.is_server_error() => ProviderErrorKind::Unavailable,
        _ => ProviderErrorKind::MalformedResponse,
    };
    let snippet: String = body.chars().take(200).collect();
    ProviderError::new(kind, format!("HTTP {status}: {snippet}")).into()
}

fn checked(resp: Result<Response, reqwest::Error>) -> Result<Response, GatewayError> {
    let resp = resp.map_err(transport_error)?;
    let status = resp.status();
    if status.is_success() {
        Ok(resp)
    } else {
        let body = resp.text().unwrap_or_default();
        Err(status_error(status, &body))
    }
}

fn malformed(detail: impl Into<String>) -> GatewayError {
    ProviderError::new(ProviderErrorKind::MalformedResponse, detail).into()
}

/// Chat-completions text generation. The rendered prompt is sent as the
/// system message.
#[derive(Debug, Clone)]
pub struct OpenAiGenerator {
    client: Client,
    api_key: String,
    base_url: String,
    model: String,
}

impl OpenAiGenerator {
    pub fn new(api_key: impl Into<String>, timeout: Duration) -> Result<Self, GatewayError> {
        Ok(Self {
            client: client(timeout)?,
            api_key: api_key.into(),
            base_url: OPENAI_BASE_URL.to_string(),
            model: DEFAULT_CHAT_MODEL.to_string(),
        })
    }

    pub fn with_base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = url.into();
        self
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }
}

impl TextGenerator for OpenAiGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.model,
            "messages": [{ "role": "system", "content": request.system_prompt }],
            "temperature": request.temperature,
            "max_tokens": request.max_output,
        });
        let resp = checked(
            self.client
                .post(format!("{}/v1/chat/completions", self.base_url))
                .bearer_auth(&self.api_key)
                .json(&body)
                .send(),
        )?;
        let value: Value = resp.json().map_err(transport_error)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(|s| s.trim().to_string())
            .ok_or_else(|| malformed("no choices[0].message.content"))
    }
}

#[derive(Debug, Clone)]
pub struct ElevenLabs {
    client: Client,
    api_key: String,
    base_url: String,
    stt_model: String,
    tts_model: String,
}

impl ElevenLabs {
    pub fn new(api_key: impl Into<String>, timeout: Duration) -> Result<Self, GatewayError> {
        Ok(Self {
            client: client(timeout)?,
            api_key: api_key.into(),
            base_url: ELEVENLABS_BASE_URL.to_string(),
            stt_model: DEFAULT_STT_MODEL.to_string(),
            tts_model: DEFAULT_TTS_MODEL.to_string(),
        })
    }

    pub fn with_base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = url.into();
        self
    }

    fn file_part(clip: &AudioClip) -> Result<multipart::Part, GatewayError> {
        multipart::Part::bytes(clip.bytes().to_vec())
            .file_name(format!("audio.{}", clip.format().extension()))
            .mime_str(clip.format().mime())
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))
    }
}

impl SpeechRecognizer for ElevenLabs {
    fn transcribe(&self, audio: &AudioClip, language_hint: Option<&str>) -> Result<AsrResult, GatewayError> {
        let mut form = multipart::Form::new()
            .text("model_id", self.stt_model.clone())
            .part("file", Self::file_part(audio)?);
        if let Some(lang) = language_hint {
            form = form.text("language_code", lang.to_string());
        }
        let resp = checked(
            self.client
                .post(format!("{}/v1/speech-to-text", self.base_url))
                .header("xi-api-key", &self.api_key)
                .multipart(form)
                .send(),
        )?;
        let value: Value = resp.json().map_err(transport_error)?;
        let transcript = value
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("speech-to-text response without `text`"))?;
        Ok(AsrResult {
            transcript: transcript.trim().to_string(),
            confidence: value.get("language_probability").and_then(Value::as_f64),
        })
    }
}

impl SpeechSynthesizer for ElevenLabs {
    fn synthesize(&self, request: &SynthesisRequest) -> Result<AudioClip, GatewayError> {
        let mut settings = serde_json::Map::new();
        if let Some(s) = request.stability {
            settings.insert("stability".into(), json!(s));
        }
        if let Some(s) = request.speed {
            settings.insert("speed".into(), json!(s));
        }
        let mut body = json!({ "text": request.text, "model_id": self.tts_model });
        if !settings.is_empty() {
            body["voice_settings"] = Value::Object(settings);
        }
        // Raw 16 kHz PCM is wrapped into WAV locally.
        let output_format = match request.output_format {
            AudioFormat::Wav => "pcm_16000",
            _ => "mp3_44100_128",
        };
        let resp = self
            .client
            .post(format!(
                "{}/v1/text-to-speech/{}?output_format={output_format}",
                self.base_url, request.voice_id
            ))
            .header("xi-api-key", &self.api_key)
            .json(&body)
            .send()
            .map_err(transport_error)?;
        if resp.status() == StatusCode::NOT_FOUND {
            return Err(GatewayError::UnknownVoice(request.voice_id.clone()));
        }
        let bytes = checked(Ok(resp))?.bytes().map_err(transport_error)?.to_vec();
        match request.output_format {
            AudioFormat::Wav => {
                let samples: Vec<i16> = bytes
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect();
                Ok(AudioClip::wav_pcm16(&samples, 16_000))
            }
            _ => AudioClip::from_bytes(bytes).map_err(|e| malformed(e.to_string())),
        }
    }
}

impl VoiceCloner for ElevenLabs {
    fn clone_voice(&self, sample: &AudioClip, sample_language: &str) -> Result<String, GatewayError> {
        let name = format!("learner-{}", &sample.content_hash()[..12]);
        let form = multipart::Form::new()
            .text("name", name)
            .text("labels", json!({ "language": sample_language }).to_string())
            .part("files", Self::file_part(sample)?);
        let resp = checked(
            self.client
                .post(format!("{}/v1/voices/add", self.base_url))
                .header("xi-api-key", &self.api_key)
                .multipart(form)
                .send(),
        )?;
        let value: Value = resp.json().map_err(transport_error)?;
        value
            .get("voice_id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| malformed("voice clone response without `voice_id`"))
    }
}
