//! One learner turn, end to end.
//!
//! Stages run strictly in order:
//!
//! 1. transcribe the learner audio;
//! 2. rephrase and re-voice it (AI Twin / AI Proxy) or write explicit
//!    feedback (Explicit Feedback);
//! 3. generate and voice the interlocutor reply, grounded on the rephrased
//!    text or the raw transcript;
//! 4. re-evaluate goal completion over the updated dialogue.
//!
//! The pipeline never mutates a session. It returns a [`TurnOutcome`] that
//! the caller persists and applies, so a failure at any stage leaves session
//! state untouched.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{
    parse_task_results_with, render_chat_prompt, render_explicit_feedback_prompt, render_rephrase_prompt,
    render_task_tracking_prompt, PromptError, Speaker, Strictness, TemplateName,
};
use crate::provider::mock::{INTERLOCUTOR_VOICE, PROXY_VOICE};
use crate::provider::{AudioClip, Gateway, GatewayError, GenerationRequest, SynthesisRequest};
use crate::scenario::ScenarioRegistry;
use crate::session::{
    AudioRef, FeedbackMode, GoalState, Participant, Phase, Session, SessionError, SessionMeta, Turn, VoiceProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Opening,
    VoiceClone,
    Transcribe,
    Rephrase,
    Feedback,
    SynthesizeDelivered,
    Interlocutor,
    SynthesizeInterlocutor,
    TaskTracking,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("unknown"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Delivered,
    Interlocutor,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("no speech detected")]
    EmptyTranscript,
    #[error("{stage} failed: {source}")]
    Provider { stage: Stage, source: GatewayError },
    #[error("voice sample is {actual:.1} s, at least {min:.1} s required")]
    SampleTooShort { actual: f64, min: f64 },
    #[error("session is complete")]
    SessionComplete,
    #[error("turn {0} does not exist")]
    UnknownTurn(u32),
    #[error("turn {turn} has no {channel:?} audio")]
    NoAudio { turn: u32, channel: Channel },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub proxy_voice_id: String,
    pub interlocutor_voice_id: String,
    /// Language hint passed to speech recognition.
    pub language_hint: Option<String>,
    pub goal_parse: Strictness,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            proxy_voice_id: PROXY_VOICE.to_string(),
            interlocutor_voice_id: INTERLOCUTOR_VOICE.to_string(),
            language_hint: Some("en".to_string()),
            goal_parse: Strictness::Lenient,
        }
    }
}

/// Wall-clock milliseconds spent per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings(pub Vec<(Stage, u64)>);

impl StageTimings {
    fn record<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push((stage, start.elapsed().as_millis() as u64));
        out
    }

    pub fn total_ms(&self) -> u64 {
        self.0.iter().map(|(_, ms)| ms).sum()
    }
}

/// A stored audio reference together with the bytes it names.
#[derive(Debug, Clone, PartialEq)]
pub struct ProducedAudio {
    pub reference: AudioRef,
    pub clip: AudioClip,
}

impl ProducedAudio {
    fn new(clip: AudioClip) -> Self {
        Self {
            reference: AudioRef::new(clip.content_hash()),
            clip,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TurnOutcome {
    pub turn: Turn,
    pub goal_updates: Vec<GoalState>,
    pub timing: StageTimings,
    /// Audio the turn references; persist before committing the turn.
    pub audio: Vec<ProducedAudio>,
    /// Set when goal tracking output could not be parsed.
    pub goal_warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    gateway: Gateway,
    config: PipelineConfig,
    scenarios: ScenarioRegistry,
}

impl Pipeline {
    pub fn new(gateway: Gateway, config: PipelineConfig, scenarios: ScenarioRegistry) -> Self {
        Self {
            gateway,
            config,
            scenarios,
        }
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn scenarios(&self) -> &ScenarioRegistry {
        &self.scenarios
    }

    fn generate(
        &self,
        stage: Stage,
        template: TemplateName,
        prompt: String,
        dialogue: crate::prompt::DialogueTranscript,
    ) -> Result<String, PipelineError> {
        let request = GenerationRequest::new(template, prompt, dialogue);
        let text = self
            .gateway
            .generate(&request)
            .map_err(|source| PipelineError::Provider { stage, source })?;
        Ok(text.trim().to_string())
    }

    fn synthesize(&self, stage: Stage, request: SynthesisRequest) -> Result<ProducedAudio, PipelineError> {
        self.gateway
            .synthesize(&request)
            .map(ProducedAudio::new)
            .map_err(|source| PipelineError::Provider { stage, source })
    }

    /// Clones the learner's voice and returns the updated participant.
    ///
    /// `declared_duration` is required for compressed samples whose length
    /// cannot be measured locally.
    pub fn register_voice(
        &self,
        participant: &Participant,
        sample: &AudioClip,
        declared_duration: Option<f64>,
    ) -> Result<(Participant, VoiceProfile), PipelineError> {
        let language = participant.first_language.as_str();
        let result = match (sample.duration_secs(), declared_duration) {
            (Some(_), _) => self.gateway.clone_voice(sample, language),
            (None, Some(d)) => self.gateway.clone_voice_declared(sample, language, d),
            (None, None) => self.gateway.clone_voice(sample, language),
        };
        let (voice_id, duration) = result.map_err(|e| match e {
            GatewayError::SampleTooShort { actual, min } => PipelineError::SampleTooShort { actual, min },
            source => PipelineError::Provider {
                stage: Stage::VoiceClone,
                source,
            },
        })?;
        let profile = VoiceProfile::new(voice_id, duration, language);
        Ok((participant.with_voice_profile(profile.clone()), profile))
    }

    /// Creates a session and voices its opening question.
    pub fn open_session(
        &self,
        participant: &Participant,
        mode: FeedbackMode,
        scenario_id: &str,
        meta: SessionMeta,
    ) -> Result<(Session, ProducedAudio), PipelineError> {
        let session = Session::create(participant, mode, scenario_id, &self.scenarios, meta)?;
        let opening = &session.turns[0].interlocutor_text;
        let audio = self.synthesize(
            Stage::Opening,
            SynthesisRequest::new(opening.clone(), self.config.interlocutor_voice_id.clone()),
        )?;
        Ok((session.with_opening_audio(audio.reference.clone()), audio))
    }

    pub fn run_turn(
        &self,
        session: &Session,
        participant: &Participant,
        learner_audio: &AudioClip,
    ) -> Result<TurnOutcome, PipelineError> {
        if session.phase != Phase::Conversing {
            return Err(SessionError::PhaseViolation {
                from: session.phase,
                to: Phase::Conversing,
            }
            .into());
        }
        if session.is_complete() {
            return Err(PipelineError::SessionComplete);
        }
        let scenario = self
            .scenarios
            .get(&session.scenario_id)
            .map_err(|_| SessionError::UnknownScenario(session.scenario_id.clone()))?;
        let mission = scenario.mission();
        let mut timing = StageTimings::default();
        let mut audio = Vec::new();

        let asr = timing
            .record(Stage::Transcribe, || {
                self.gateway
                    .transcribe(learner_audio, self.config.language_hint.as_deref())
            })
            .map_err(|source| PipelineError::Provider {
                stage: Stage::Transcribe,
                source,
            })?;
        let transcript = asr.transcript.trim().to_string();
        if transcript.is_empty() {
            return Err(PipelineError::EmptyTranscript);
        }

        let history = session.dialogue();
        let with_learner = history.clone().with(Speaker::User, transcript.clone());

        let (delivered_text, delivered_audio, grounding_text) = if session.mode.is_rephrasing() {
            let prompt = render_rephrase_prompt(&with_learner)?;
            let rephrased = timing.record(Stage::Rephrase, || {
                self.generate(
                    Stage::Rephrase,
                    TemplateName::RephraseTwinProxy,
                    prompt,
                    with_learner.clone(),
                )
            })?;
            if rephrased.is_empty() {
                return Err(PipelineError::Provider {
                    stage: Stage::Rephrase,
                    source: GatewayError::InvalidRequest("rephraser returned empty text".into()),
                });
            }
            let request = match session.mode {
                FeedbackMode::AiTwin => {
                    let profile = participant
                        .voice_profile
                        .as_ref()
                        .ok_or_else(|| SessionError::MissingVoiceProfile(participant.id.clone()))?;
                    SynthesisRequest::new(rephrased.clone(), profile.provider_voice_id.clone())
                        .tuned(profile.speed, profile.stability)
                }
                _ => SynthesisRequest::new(rephrased.clone(), self.config.proxy_voice_id.clone()),
            };
            let voiced = timing.record(Stage::SynthesizeDelivered, || {
                self.synthesize(Stage::SynthesizeDelivered, request)
            })?;
            let reference = voiced.reference.clone();
            audio.push(voiced);
            (rephrased.clone(), Some(reference), rephrased)
        } else {
            let prompt = render_explicit_feedback_prompt(&with_learner)?;
            let feedback = timing.record(Stage::Feedback, || {
                self.generate(
                    Stage::Feedback,
                    TemplateName::ExplicitFeedback,
                    prompt,
                    with_learner.clone(),
                )
            })?;
            (feedback, None, transcript.clone())
        };

        let grounded = history.with(Speaker::User, grounding_text.clone());
        let chat_prompt = render_chat_prompt(&mission, &grounded)?;
        let interlocutor_text = timing.record(Stage::Interlocutor, || {
            self.generate(Stage::Interlocutor, TemplateName::Chat, chat_prompt, grounded.clone())
        })?;
        let reply_audio = timing.record(Stage::SynthesizeInterlocutor, || {
            self.synthesize(
                Stage::SynthesizeInterlocutor,
                SynthesisRequest::new(interlocutor_text.clone(), self.config.interlocutor_voice_id.clone()),
            )
        })?;
        let interlocutor_audio = reply_audio.reference.clone();
        audio.push(reply_audio);

        let updated = grounded.with(Speaker::Assistant, interlocutor_text.clone());
        let tracking_prompt = render_task_tracking_prompt(&mission, &updated);
        let raw = timing.record(Stage::TaskTracking, || {
            self.generate(
                Stage::TaskTracking,
                TemplateName::TaskTracking,
                tracking_prompt,
                updated.clone(),
            )
        })?;
        let (goal_updates, goal_warning) = match parse_task_results_with(&raw, self.config.goal_parse) {
            Ok(goals) => (goals, None),
            Err(e) => {
                tracing::warn!(session = %session.id, error = %e, "ignoring unparseable goal tracking output");
                (Vec::new(), Some(e.to_string()))
            }
        };

        let turn = Turn {
            index: session.turns.len() as u32,
            learner_transcript: Some(transcript),
            delivered_text: Some(delivered_text),
            delivered_audio,
            interlocutor_text,
            interlocutor_audio: Some(interlocutor_audio),
            grounding_text: Some(grounding_text),
        };
        turn.validate(session.mode)?;
        Ok(TurnOutcome {
            turn,
            goal_updates,
            timing,
            audio,
            goal_warning,
        })
    }
}

/// Stored audio for a turn's channel. Replay is a pure read.
pub fn replay(session: &Session, turn_index: u32, channel: Channel) -> Result<AudioRef, PipelineError> {
    let turn = session.turn(turn_index).ok_or(PipelineError::UnknownTurn(turn_index))?;
    let reference = match channel {
        Channel::Delivered => turn.delivered_audio.as_ref(),
        Channel::Interlocutor => turn.interlocutor_audio.as_ref(),
    };
    reference.cloned().ok_or(PipelineError::NoAudio {
        turn: turn_index,
        channel,
    })
}
