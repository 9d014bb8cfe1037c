//! Deterministic offline providers.
//!
//! Every mock is a pure function of its inputs and its script: the same
//! request always yields the same bytes. [`Recorded`] and [`Flaky`] wrap any
//! backend to capture calls or inject faults.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::audio::CAPTURE_SAMPLE_RATE;
use super::{
    AsrResult, AudioClip, GatewayError, GenerationRequest, ProviderError, ProviderErrorKind, SpeechRecognizer,
    SpeechSynthesizer, SynthesisRequest, TextGenerator, VoiceCloner,
};
use crate::prompt::{task_results_json, Speaker, TemplateName};
use crate::session::GoalState;

pub const INTERLOCUTOR_VOICE: &str = "mock-interlocutor";
pub const PROXY_VOICE: &str = "mock-proxy-female-us";

const SILENCE_THRESHOLD: i32 = 64;

fn tone_samples(key: &[u8], seconds: f64) -> Vec<i16> {
    let digest = Sha256::digest(key);
    let total = (seconds * CAPTURE_SAMPLE_RATE as f64).round() as usize;
    let segment = (total / digest.len()).max(1);
    (0..total)
        .map(|i| {
            let byte = digest[(i / segment).min(digest.len() - 1)];
            let freq = 180.0 + byte as f64 * 6.0;
            let t = i as f64 / CAPTURE_SAMPLE_RATE as f64;
            (8000.0 * (2.0 * std::f64::consts::PI * freq * t).sin()) as i16
        })
        .collect()
}

/// Simulated learner recording for `text`. [`ScriptedAsr`] maps it back.
pub fn learner_audio(text: &str) -> AudioClip {
    let mut key = b"learner:".to_vec();
    key.extend_from_slice(text.as_bytes());
    AudioClip::wav_pcm16(&tone_samples(&key, 0.5), CAPTURE_SAMPLE_RATE)
}

pub fn silence(seconds: f64) -> AudioClip {
    let n = (seconds * CAPTURE_SAMPLE_RATE as f64).round() as usize;
    AudioClip::wav_pcm16(&vec![0; n], CAPTURE_SAMPLE_RATE)
}

/// Voice registration sample of the given length.
pub fn voice_sample(seconds: f64, seed: u64) -> AudioClip {
    let mut key = b"sample:".to_vec();
    key.extend_from_slice(&seed.to_le_bytes());
    AudioClip::wav_pcm16(&tone_samples(&key, seconds), CAPTURE_SAMPLE_RATE)
}

/// Transcribes audio by content hash.
#[derive(Debug, Default, Clone)]
pub struct ScriptedAsr {
    transcripts: HashMap<String, String>,
    fallback: Option<String>,
}

impl ScriptedAsr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, audio: &AudioClip, transcript: impl Into<String>) {
        self.transcripts.insert(audio.content_hash(), transcript.into());
    }

    /// Transcript returned for unscripted, non-silent audio. Without one,
    /// such audio is a provider error.
    pub fn with_fallback(mut self, transcript: impl Into<String>) -> Self {
        self.fallback = Some(transcript.into());
        self
    }

    /// Generates learner audio for `text` and scripts its transcript.
    pub fn register(&mut self, text: &str) -> AudioClip {
        let clip = learner_audio(text);
        self.insert(&clip, text);
        clip
    }
}

impl SpeechRecognizer for ScriptedAsr {
    fn transcribe(&self, audio: &AudioClip, _language_hint: Option<&str>) -> Result<AsrResult, GatewayError> {
        if let Some(t) = self.transcripts.get(&audio.content_hash()) {
            return Ok(AsrResult {
                transcript: t.clone(),
                confidence: Some(0.95),
            });
        }
        if audio.is_silent(SILENCE_THRESHOLD) == Some(true) {
            return Ok(AsrResult {
                transcript: String::new(),
                confidence: Some(0.05),
            });
        }
        if let Some(t) = &self.fallback {
            return Ok(AsrResult {
                transcript: t.clone(),
                confidence: Some(0.5),
            });
        }
        Err(ProviderError::new(
            ProviderErrorKind::MalformedResponse,
            format!("no scripted transcript for audio {}", &audio.content_hash()[..12]),
        )
        .into())
    }
}

/// A goal counts as met once a single learner entry contains every keyword.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalRule {
    pub goal_number: u8,
    pub keywords: Vec<String>,
}

/// Text generation that answers each template from a script.
#[derive(Debug, Clone, Default)]
pub struct ScriptedLlm {
    /// Learner utterance → rephrased utterance. Unlisted input is repeated as-is.
    pub rephrasings: HashMap<String, String>,
    /// Learner utterance → explicit feedback. Unlisted input gets generated feedback.
    pub feedback: HashMap<String, String>,
    /// Interlocutor reply after the n-th learner entry (1-based, index n-1).
    pub interlocutor: Vec<String>,
    pub goal_rules: Vec<GoalRule>,
    /// Wrap goal-tracking JSON in a markdown fence.
    pub fence_task_results: bool,
}

impl ScriptedLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rephrase(&self, utterance: &str) -> String {
        self.rephrasings
            .get(utterance)
            .cloned()
            .unwrap_or_else(|| utterance.to_string())
    }

    fn feedback_for(&self, utterance: &str) -> String {
        if let Some(f) = self.feedback.get(utterance) {
            return f.clone();
        }
        let fixed = self.rephrase(utterance);
        if fixed == utterance {
            "자연스러운 문장이에요. 잘했어요!".to_string()
        } else {
            format!(
                "<strong>\"{utterance}\"</strong> 대신에 <strong>\"{fixed}\"</strong>라고 말하는 게 더 자연스러워요."
            )
        }
    }

    fn goals_for(&self, learner_lines: &[&str]) -> Vec<GoalState> {
        let lowered: Vec<String> = learner_lines.iter().map(|l| l.to_lowercase()).collect();
        let mut met: BTreeMap<u8, bool> = (1..=4).map(|n| (n, false)).collect();
        for rule in &self.goal_rules {
            let hit = lowered
                .iter()
                .any(|line| rule.keywords.iter().all(|k| line.contains(&k.to_lowercase())));
            if hit {
                met.insert(rule.goal_number, true);
            }
        }
        met.into_iter().map(|(n, c)| GoalState::new(n, c)).collect()
    }
}

impl TextGenerator for ScriptedLlm {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let dialogue = &request.dialogue;
        let last_user = || {
            dialogue.last_user().map(|e| e.text.clone()).ok_or_else(|| {
                GatewayError::from(ProviderError::new(
                    ProviderErrorKind::MalformedResponse,
                    "prompt has no USER entry",
                ))
            })
        };
        match request.template {
            TemplateName::RephraseTwinProxy => Ok(self.rephrase(&last_user()?)),
            TemplateName::ExplicitFeedback => Ok(self.feedback_for(&last_user()?)),
            TemplateName::Chat => {
                let n = dialogue.entries().iter().filter(|e| e.speaker == Speaker::User).count();
                Ok(n.checked_sub(1)
                    .and_then(|i| self.interlocutor.get(i))
                    .cloned()
                    .unwrap_or_else(|| "I see. Could you tell me a little more about what you need?".to_string()))
            }
            TemplateName::TaskTracking => {
                let lines: Vec<&str> = dialogue
                    .entries()
                    .iter()
                    .filter(|e| e.speaker == Speaker::User)
                    .map(|e| e.text.as_str())
                    .collect();
                let json = task_results_json(&self.goals_for(&lines));
                Ok(if self.fence_task_results {
                    format!("```json\n{json}\n```")
                } else {
                    json
                })
            }
        }
    }
}

/// Synthesis and cloning against an in-memory voice registry.
#[derive(Debug)]
pub struct MockVoiceLab {
    presets: BTreeSet<String>,
    clones: Mutex<BTreeSet<String>>,
}

impl Default for MockVoiceLab {
    fn default() -> Self {
        Self::with_presets([INTERLOCUTOR_VOICE, PROXY_VOICE])
    }
}

impl MockVoiceLab {
    pub fn with_presets<I, S>(presets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            presets: presets.into_iter().map(Into::into).collect(),
            clones: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn knows(&self, voice_id: &str) -> bool {
        self.presets.contains(voice_id) || self.clones.lock().unwrap().contains(voice_id)
    }

    /// Registers a clone id directly, e.g. when restoring from a log.
    pub fn adopt_clone(&self, voice_id: impl Into<String>) {
        self.clones.lock().unwrap().insert(voice_id.into());
    }

    /// The id [`VoiceCloner::clone_voice`] returns for `sample`.
    pub fn clone_id_for(sample: &AudioClip) -> String {
        format!("clone-{}", &sample.content_hash()[..16])
    }
}

impl SpeechSynthesizer for MockVoiceLab {
    fn synthesize(&self, request: &SynthesisRequest) -> Result<AudioClip, GatewayError> {
        if !self.knows(&request.voice_id) {
            return Err(GatewayError::UnknownVoice(request.voice_id.clone()));
        }
        let mut key = request.voice_id.as_bytes().to_vec();
        key.push(0);
        key.extend_from_slice(request.text.as_bytes());
        let seconds = (0.2 + 0.02 * request.text.chars().count() as f64).min(4.0);
        Ok(AudioClip::wav_pcm16(&tone_samples(&key, seconds), CAPTURE_SAMPLE_RATE))
    }
}

impl VoiceCloner for MockVoiceLab {
    fn clone_voice(&self, sample: &AudioClip, _sample_language: &str) -> Result<String, GatewayError> {
        let id = Self::clone_id_for(sample);
        self.clones.lock().unwrap().insert(id.clone());
        Ok(id)
    }
}

/// One observed provider call.
#[derive(Debug, Clone, PartialEq)]
pub enum Call {
    Transcribe { audio_hash: String },
    Generate(GenerationRequest),
    Synthesize(SynthesisRequest),
    CloneVoice { sample_hash: String, language: String },
}

impl Call {
    /// Short stage label used in ordering assertions.
    pub fn label(&self) -> &'static str {
        match self {
            Call::Transcribe { .. } => "transcribe",
            Call::Generate(r) => match r.template {
                TemplateName::Chat => "chat",
                TemplateName::TaskTracking => "task_tracking",
                TemplateName::RephraseTwinProxy => "rephrase",
                TemplateName::ExplicitFeedback => "feedback",
            },
            Call::Synthesize(_) => "synthesize",
            Call::CloneVoice { .. } => "clone_voice",
        }
    }
}

/// Shared, ordered log of provider calls.
#[derive(Debug, Clone, Default)]
pub struct CallLog(Arc<Mutex<Vec<Call>>>);

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, call: Call) {
        self.0.lock().unwrap().push(call);
    }

    pub fn calls(&self) -> Vec<Call> {
        self.0.lock().unwrap().clone()
    }

    pub fn take(&self) -> Vec<Call> {
        std::mem::take(&mut *self.0.lock().unwrap())
    }

    pub fn clear(&self) {
        self.0.lock().unwrap().clear();
    }
}

/// Records every call before delegating.
#[derive(Debug)]
pub struct Recorded<P> {
    pub inner: P,
    pub log: CallLog,
}

impl<P> Recorded<P> {
    pub fn new(inner: P, log: CallLog) -> Self {
        Self { inner, log }
    }
}

impl<P: SpeechRecognizer> SpeechRecognizer for Recorded<P> {
    fn transcribe(&self, audio: &AudioClip, hint: Option<&str>) -> Result<AsrResult, GatewayError> {
        self.log.push(Call::Transcribe {
            audio_hash: audio.content_hash(),
        });
        self.inner.transcribe(audio, hint)
    }
}

impl<P: TextGenerator> TextGenerator for Recorded<P> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        self.log.push(Call::Generate(request.clone()));
        self.inner.generate(request)
    }
}

impl<P: SpeechSynthesizer> SpeechSynthesizer for Recorded<P> {
    fn synthesize(&self, request: &SynthesisRequest) -> Result<AudioClip, GatewayError> {
        self.log.push(Call::Synthesize(request.clone()));
        self.inner.synthesize(request)
    }
}

impl<P: VoiceCloner> VoiceCloner for Recorded<P> {
    fn clone_voice(&self, sample: &AudioClip, language: &str) -> Result<String, GatewayError> {
        self.log.push(Call::CloneVoice {
            sample_hash: sample.content_hash(),
            language: language.to_string(),
        });
        self.inner.clone_voice(sample, language)
    }
}

/// Fails the next queued calls with the given kinds, then delegates.
#[derive(Debug)]
pub struct Flaky<P> {
    pub inner: P,
    failures: Mutex<VecDeque<ProviderErrorKind>>,
}

impl<P> Flaky<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            failures: Mutex::new(VecDeque::new()),
        }
    }

    pub fn fail_next(&self, kind: ProviderErrorKind, times: usize) {
        let mut q = self.failures.lock().unwrap();
        q.extend(std::iter::repeat_n(kind, times));
    }

    fn injected(&self) -> Result<(), GatewayError> {
        match self.failures.lock().unwrap().pop_front() {
            Some(kind) => Err(ProviderError::new(kind, "injected fault").into()),
            None => Ok(()),
        }
    }
}

impl<P: SpeechRecognizer> SpeechRecognizer for Flaky<P> {
    fn transcribe(&self, audio: &AudioClip, hint: Option<&str>) -> Result<AsrResult, GatewayError> {
        self.injected()?;
        self.inner.transcribe(audio, hint)
    }
}

impl<P: TextGenerator> TextGenerator for Flaky<P> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        self.injected()?;
        self.inner.generate(request)
    }
}

impl<P: SpeechSynthesizer> SpeechSynthesizer for Flaky<P> {
    fn synthesize(&self, request: &SynthesisRequest) -> Result<AudioClip, GatewayError> {
        self.injected()?;
        self.inner.synthesize(request)
    }
}

impl<P: VoiceCloner> VoiceCloner for Flaky<P> {
    fn clone_voice(&self, sample: &AudioClip, language: &str) -> Result<String, GatewayError> {
        self.injected()?;
        self.inner.clone_voice(sample, language)
    }
}

impl<T: SpeechRecognizer + ?Sized> SpeechRecognizer for Arc<T> {
    fn transcribe(&self, audio: &AudioClip, hint: Option<&str>) -> Result<AsrResult, GatewayError> {
        (**self).transcribe(audio, hint)
    }
}

impl<T: TextGenerator + ?Sized> TextGenerator for Arc<T> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        (**self).generate(request)
    }
}

impl<T: SpeechSynthesizer + ?Sized> SpeechSynthesizer for Arc<T> {
    fn synthesize(&self, request: &SynthesisRequest) -> Result<AudioClip, GatewayError> {
        (**self).synthesize(request)
    }
}

impl<T: VoiceCloner + ?Sized> VoiceCloner for Arc<T> {
    fn clone_voice(&self, sample: &AudioClip, language: &str) -> Result<String, GatewayError> {
        (**self).clone_voice(sample, language)
    }
}
