//! Headless scripted sessions against the mock providers.
//!
//! A script is a YAML file naming a participant, the learner's utterances in
//! order, and what the mock language model should answer. Running it drives
//! the real pipeline and event store exactly as the HTTP service would.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{Pipeline, PipelineConfig, PipelineError};
use crate::provider::mock::{self, GoalRule, MockVoiceLab, ScriptedAsr, ScriptedLlm};
use crate::provider::{Gateway, RetryPolicy};
use crate::scenario::ScenarioRegistry;
use crate::session::{
    CefrLevel, FeedbackMode, GoalState, Participant, ParticipantId, Phase, Session, SessionId, SessionMeta,
    DEFAULT_MAX_TURNS,
};
use crate::store::{self, BlobStore, EventKind, EventStore, StoreError};
use crate::study::{score_survey, EngagementScores, StudyError, SurveyResponse};

/// Utterance that stands for a silent recording.
pub const SILENCE: &str = "(silence)";

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("invalid script: {0}")]
    Yaml(#[from] serde_yaml::Error),
    #[error("script names no scenario and none was given")]
    NoScenario,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error("replayed log state differs from live state")]
    ReplayMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptParticipant {
    pub id: String,
    #[serde(default = "default_language")]
    pub first_language: String,
    #[serde(default)]
    pub cefr_level: Option<CefrLevel>,
    #[serde(default = "default_sample_seconds")]
    pub voice_sample_seconds: f64,
}

fn default_language() -> String {
    "ko".into()
}

fn default_sample_seconds() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub participant: ScriptParticipant,
    #[serde(default)]
    pub scenario: Option<String>,
    pub turns: Vec<String>,
    #[serde(default)]
    pub rephrasings: BTreeMap<String, String>,
    #[serde(default)]
    pub feedback: BTreeMap<String, String>,
    #[serde(default)]
    pub interlocutor: Vec<String>,
    #[serde(default)]
    pub goal_rules: Vec<GoalRule>,
    #[serde(default)]
    pub survey: Option<Vec<i64>>,
}

impl Script {
    pub fn from_yaml(text: &str) -> Result<Self, ScriptError> {
        Ok(serde_yaml::from_str(text)?)
    }

    /// Recognizer that knows every scripted utterance.
    pub fn scripted_asr(&self) -> ScriptedAsr {
        let mut asr = ScriptedAsr::new();
        for t in self.turns.iter().filter(|t| t.as_str() != SILENCE) {
            asr.register(t);
        }
        asr
    }

    pub fn scripted_llm(&self) -> ScriptedLlm {
        ScriptedLlm {
            rephrasings: self.rephrasings.clone().into_iter().collect(),
            feedback: self.feedback.clone().into_iter().collect(),
            interlocutor: self.interlocutor.clone(),
            goal_rules: self.goal_rules.clone(),
            fence_task_results: false,
        }
    }

    /// Mock providers answering from this script.
    pub fn gateway(&self) -> Gateway {
        self.gateway_knowing(std::iter::empty())
    }

    /// Like [`Script::gateway`], with voice clones made in earlier runs.
    pub fn gateway_knowing(&self, clones: impl IntoIterator<Item = String>) -> Gateway {
        let lab = Arc::new(MockVoiceLab::default());
        for id in clones {
            lab.adopt_clone(id);
        }
        Gateway::new(
            Arc::new(self.scripted_asr()),
            Arc::new(self.scripted_llm()),
            lab.clone(),
            lab,
        )
        .with_retry_policy(RetryPolicy::immediate(3))
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: FeedbackMode,
    /// Overrides the script's scenario.
    pub scenario: Option<String>,
    pub max_turns: u32,
    pub reverse_set: std::collections::BTreeSet<u8>,
    pub now: Option<DateTime<Utc>>,
}

impl RunOptions {
    pub fn new(mode: FeedbackMode) -> Self {
        Self {
            mode,
            scenario: None,
            max_turns: DEFAULT_MAX_TURNS,
            reverse_set: crate::study::default_reverse_set(),
            now: None,
        }
    }
}

/// One row of the printed transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptRow {
    pub index: u32,
    pub transcript: Option<String>,
    pub delivered: Option<String>,
    pub interlocutor: String,
    pub goals: Vec<GoalState>,
}

#[derive(Debug, Clone)]
pub struct ScriptRun {
    pub participant: Participant,
    pub session: Session,
    pub rows: Vec<TranscriptRow>,
    /// Utterances rejected as silence and retried.
    pub retries: usize,
    pub scores: Option<EngagementScores>,
}

impl ScriptRun {
    pub fn goals_completed(&self) -> usize {
        self.session.goals_completed()
    }

    pub fn learner_turns(&self) -> u32 {
        self.session.learner_turns()
    }
}

/// Runs `script` to the end of its survey, appending every event to `log`.
/// Fails with [`ScriptError::ReplayMismatch`] if replaying the log does not
/// reproduce the live state.
pub fn run_script(
    script: &Script,
    opts: &RunOptions,
    log: &mut EventStore,
    blobs: &BlobStore,
) -> Result<ScriptRun, ScriptError> {
    let scenario_id = opts
        .scenario
        .clone()
        .or_else(|| script.scenario.clone())
        .ok_or(ScriptError::NoScenario)?;
    let pid = ParticipantId::new(script.participant.id.clone());
    let known = log
        .state()
        .participant(&pid)
        .and_then(|p| p.voice_profile.as_ref())
        .map(|v| v.provider_voice_id.clone());
    let pipeline = Pipeline::new(
        script.gateway_knowing(known),
        PipelineConfig::default(),
        ScenarioRegistry::builtin(),
    );
    let now = opts.now.unwrap_or_else(Utc::now);

    let mut participant = log.state().participant(&pid).cloned().unwrap_or_else(|| Participant {
        cefr_level: script.participant.cefr_level,
        ..Participant::new(pid.clone(), script.participant.first_language.clone())
    });
    if log.state().participant(&pid).is_none() {
        log.append(EventKind::ParticipantCreated {
            participant: participant.clone(),
        })?;
    }
    if participant.voice_profile.is_none() {
        let sample = mock::voice_sample(script.participant.voice_sample_seconds, 0);
        let (updated, profile) = pipeline.register_voice(&participant, &sample, None)?;
        log.append(EventKind::VoiceRegistered {
            participant_id: pid.clone(),
            profile,
        })?;
        participant = updated;
    }

    let meta = SessionMeta {
        id: SessionId::new(format!("{}-{}-{}", pid, opts.mode.slug(), scenario_id)),
        created_at: now,
        max_turns: opts.max_turns,
    };
    let (mut session, opening) = pipeline.open_session(&participant, opts.mode, &scenario_id, meta)?;
    blobs.put(&opening.clip)?;
    log.append(EventKind::SessionCreated {
        session: session.clone(),
    })?;

    let mut rows = vec![TranscriptRow {
        index: 0,
        transcript: None,
        delivered: None,
        interlocutor: session.turns[0].interlocutor_text.clone(),
        goals: session.goal_states.clone(),
    }];
    let mut retries = 0;
    for utterance in &script.turns {
        if session.is_complete() {
            break;
        }
        let audio = if utterance == SILENCE {
            mock::silence(1.0)
        } else {
            mock::learner_audio(utterance)
        };
        let outcome = match pipeline.run_turn(&session, &participant, &audio) {
            Err(PipelineError::EmptyTranscript) => {
                retries += 1;
                continue;
            }
            other => other?,
        };
        for a in &outcome.audio {
            blobs.put(&a.clip)?;
        }
        log.append(EventKind::TurnCompleted {
            session_id: session.id.clone(),
            turn: outcome.turn.clone(),
            goal_updates: outcome.goal_updates.clone(),
        })?;
        session = log.state().session(&session.id).expect("session just updated").clone();
        rows.push(TranscriptRow {
            index: outcome.turn.index,
            transcript: outcome.turn.learner_transcript.clone(),
            delivered: outcome.turn.delivered_text.clone(),
            interlocutor: outcome.turn.interlocutor_text.clone(),
            goals: session.goal_states.clone(),
        });
    }

    log.append(EventKind::PhaseAdvanced {
        session_id: session.id.clone(),
        to: Phase::Survey,
    })?;
    let mut scores = None;
    if let Some(answers) = &script.survey {
        let response = SurveyResponse::from_slice(session.id.clone(), answers)?;
        scores = Some(score_survey(&response, &opts.reverse_set)?);
        log.append_all(vec![
            EventKind::SurveySubmitted { response },
            EventKind::PhaseAdvanced {
                session_id: session.id.clone(),
                to: Phase::Done,
            },
        ])?;
    }
    session = log.state().session(&session.id).expect("session exists").clone();

    let (_, replayed) = store::replay(&log.to_jsonl())?;
    if &replayed != log.state() {
        return Err(ScriptError::ReplayMismatch);
    }
    Ok(ScriptRun {
        participant: log.state().participant(&pid).expect("participant exists").clone(),
        session,
        rows,
        retries,
        scores,
    })
}

fn goal_marks(goals: &[GoalState]) -> String {
    goals
        .iter()
        .map(|g| format!("[{}] {}", if g.completed { "x" } else { " " }, g.goal_number))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Plain-text transcript: one block per turn with what the learner said,
/// what was played back, the interlocutor's reply and the goal checklist.
pub fn render_transcript(run: &ScriptRun) -> String {
    let mode = run.session.mode;
    let delivered_label = match mode {
        FeedbackMode::ExplicitFeedback => "Feedback",
        FeedbackMode::AiProxy => "AI Proxy",
        FeedbackMode::AiTwin => "AI Twin",
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Session {} ({}, {})",
        run.session.id,
        mode.label(),
        run.session.scenario_id
    );
    let _ = writeln!(out, "{:<5} {:<13} Text", "Turn", "Speaker");
    for row in &run.rows {
        let mut first = true;
        let mut line = |speaker: &str, text: &str| {
            let idx = if first { row.index.to_string() } else { String::new() };
            first = false;
            let _ = writeln!(out, "{idx:<5} {speaker:<13} {text}");
        };
        if let Some(t) = &row.transcript {
            line("Learner", t);
        }
        if let Some(d) = &row.delivered {
            line(delivered_label, d);
        }
        line("Interlocutor", &row.interlocutor);
        line("Goals", &goal_marks(&row.goals));
    }
    let _ = writeln!(
        out,
        "Completed {}/{} goals in {} learner turns (silent retries: {}); phase {}",
        run.goals_completed(),
        run.session.goal_states.len(),
        run.learner_turns(),
        run.retries,
        run.session.phase
    );
    if let Some(s) = &run.scores {
        let _ = writeln!(
            out,
            "Engagement: emotional {:.2}, cognitive {:.2}, behavioral {:.2}",
            s.emotional, s.cognitive, s.behavioral
        );
    }
    out
}
