//! Session domain types and the turn-based state machine.
//!
//! Every transition here is a pure function from one [`Session`] value to the
//! next. Persistence and provider calls live elsewhere; the event store folds
//! these same transitions when it replays a log.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{DialogueTranscript, Speaker};
use crate::scenario::ScenarioRegistry;

/// Learner turns allowed before a session counts as complete regardless of goals.
pub const DEFAULT_MAX_TURNS: u32 = 20;
/// Goals per scenario.
pub const GOAL_COUNT: usize = 4;
/// Clone playback speed used for the learner's own voice.
pub const DEFAULT_SPEED: f64 = 0.9;
/// Clone stability used for the learner's own voice.
pub const DEFAULT_STABILITY: f64 = 0.85;

/// The three study conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    /// Written correction in Korean, no re-voicing.
    ExplicitFeedback,
    /// Rephrased utterance in a neutral preset voice.
    AiProxy,
    /// Rephrased utterance in the learner's cloned voice.
    AiTwin,
}

impl FeedbackMode {
    /// Canonical column order used by every report and export.
    pub const ALL: [FeedbackMode; 3] = [
        FeedbackMode::ExplicitFeedback,
        FeedbackMode::AiProxy,
        FeedbackMode::AiTwin,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            FeedbackMode::ExplicitFeedback => "explicit-feedback",
            FeedbackMode::AiProxy => "ai-proxy",
            FeedbackMode::AiTwin => "ai-twin",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FeedbackMode::ExplicitFeedback => "Explicit Feedback",
            FeedbackMode::AiProxy => "AI Proxy",
            FeedbackMode::AiTwin => "AI Twin",
        }
    }

    /// True for the two conditions that re-voice a rephrased utterance.
    pub fn is_rephrasing(self) -> bool {
        !matches!(self, FeedbackMode::ExplicitFeedback)
    }

    pub fn column(self) -> usize {
        match self {
            FeedbackMode::ExplicitFeedback => 0,
            FeedbackMode::AiProxy => 1,
            FeedbackMode::AiTwin => 2,
        }
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for FeedbackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "explicit-feedback" | "explicit" => Ok(FeedbackMode::ExplicitFeedback),
            "ai-proxy" | "proxy" => Ok(FeedbackMode::AiProxy),
            "ai-twin" | "twin" => Ok(FeedbackMode::AiTwin),
            other => Err(format!("unknown feedback mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CefrLevel {
    A1,
    A2,
    B1,
    B2,
    C1,
    C2,
}

impl FromStr for CefrLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A1" => Ok(CefrLevel::A1),
            "A2" => Ok(CefrLevel::A2),
            "B1" => Ok(CefrLevel::B1),
            "B2" => Ok(CefrLevel::B2),
            "C1" => Ok(CefrLevel::C1),
            "C2" => Ok(CefrLevel::C2),
            other => Err(format!("unknown CEFR level `{other}`")),
        }
    }
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(ParticipantId);
string_id!(SessionId);
string_id!(
    /// Content hash of a stored audio blob.
    AudioRef
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceProfile {
    pub provider_voice_id: String,
    pub sample_duration_secs: f64,
    pub sample_language: String,
    pub speed: f64,
    pub stability: f64,
}

impl VoiceProfile {
    /// Profile with the default clone tuning.
    pub fn new(
        provider_voice_id: impl Into<String>,
        sample_duration_secs: f64,
        sample_language: impl Into<String>,
    ) -> Self {
        Self {
            provider_voice_id: provider_voice_id.into(),
            sample_duration_secs,
            sample_language: sample_language.into(),
            speed: DEFAULT_SPEED,
            stability: DEFAULT_STABILITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: ParticipantId,
    /// BCP-47 style tag, e.g. `ko`.
    pub first_language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cefr_level: Option<CefrLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voice_profile: Option<VoiceProfile>,
}

impl Participant {
    pub fn new(id: ParticipantId, first_language: impl Into<String>) -> Self {
        Self {
            id,
            first_language: first_language.into(),
            cefr_level: None,
            voice_profile: None,
        }
    }

    pub fn with_voice_profile(&self, profile: VoiceProfile) -> Self {
        Self {
            voice_profile: Some(profile),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Registration,
    Conversing,
    Survey,
    Done,
}

impl Phase {
    pub fn successor(self) -> Option<Phase> {
        match self {
            Phase::Registration => Some(Phase::Conversing),
            Phase::Conversing => Some(Phase::Survey),
            Phase::Survey => Some(Phase::Done),
            Phase::Done => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Registration => "registration",
            Phase::Conversing => "conversing",
            Phase::Survey => "survey",
            Phase::Done => "done",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoalState {
    pub goal_number: u8,
    pub completed: bool,
}

impl GoalState {
    pub fn new(goal_number: u8, completed: bool) -> Self {
        Self { goal_number, completed }
    }
}

/// One conversational exchange.
///
/// Turn 0 is the interlocutor's opening question and carries no learner
/// content. For every later turn `grounding_text` is what the interlocutor
/// prompt used as the learner's latest message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner_transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivered_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivered_audio: Option<AudioRef>,
    pub interlocutor_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interlocutor_audio: Option<AudioRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding_text: Option<String>,
}

impl Turn {
    pub fn opening(question: impl Into<String>) -> Self {
        Self {
            index: 0,
            learner_transcript: None,
            delivered_text: None,
            delivered_audio: None,
            interlocutor_text: question.into(),
            interlocutor_audio: None,
            grounding_text: None,
        }
    }

    /// Checks the per-mode turn invariants.
    pub fn validate(&self, mode: FeedbackMode) -> Result<(), SessionError> {
        let bad = |why: &str| {
            Err(SessionError::InvalidTurn {
                index: self.index,
                reason: why.to_string(),
            })
        };
        if self.index == 0 {
            if self.learner_transcript.is_some()
                || self.delivered_text.is_some()
                || self.delivered_audio.is_some()
                || self.grounding_text.is_some()
            {
                return bad("opening turn carries learner content");
            }
            return Ok(());
        }
        let (Some(transcript), Some(delivered), Some(grounding)) =
            (&self.learner_transcript, &self.delivered_text, &self.grounding_text)
        else {
            return bad("learner turn missing transcript, delivered or grounding text");
        };
        if transcript.trim().is_empty() {
            return bad("empty learner transcript");
        }
        if self.interlocutor_audio.is_none() {
            return bad("learner turn without interlocutor audio");
        }
        if mode.is_rephrasing() {
            if grounding != delivered {
                return bad("grounding text differs from the rephrased text");
            }
            if self.delivered_audio.is_none() {
                return bad("rephrased turn without delivered audio");
            }
        } else {
            if grounding != transcript {
                return bad("grounding text differs from the raw transcript");
            }
            if self.delivered_audio.is_some() {
                return bad("explicit feedback turn carries delivered audio");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("participant {0} has no registered voice profile")]
    MissingVoiceProfile(ParticipantId),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("phase violation: {from} -> {to}")]
    PhaseViolation { from: Phase, to: Phase },
    #[error("turn index gap: expected {expected}, got {got}")]
    IndexGap { expected: u32, got: u32 },
    #[error("invalid turn {index}: {reason}")]
    InvalidTurn { index: u32, reason: String },
    #[error("goal number {0} outside 1..=4")]
    UnknownGoal(u8),
}

/// Identity and timing injected at creation so that creation stays pure.
#[derive(Debug, Clone)]
pub struct SessionMeta {
    pub id: SessionId,
    pub created_at: DateTime<Utc>,
    pub max_turns: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub participant_id: ParticipantId,
    pub mode: FeedbackMode,
    pub scenario_id: String,
    pub phase: Phase,
    pub turns: Vec<Turn>,
    pub goal_states: Vec<GoalState>,
    pub max_turns: u32,
    pub created_at: DateTime<Utc>,
}

impl Session {
    /// Opens a session in the `Conversing` phase with the scenario's opening
    /// question as turn 0.
    pub fn create(
        participant: &Participant,
        mode: FeedbackMode,
        scenario_id: &str,
        scenarios: &ScenarioRegistry,
        meta: SessionMeta,
    ) -> Result<Session, SessionError> {
        let scenario = scenarios
            .get(scenario_id)
            .map_err(|_| SessionError::UnknownScenario(scenario_id.to_string()))?;
        if mode == FeedbackMode::AiTwin && participant.voice_profile.is_none() {
            return Err(SessionError::MissingVoiceProfile(participant.id.clone()));
        }
        Ok(Session {
            id: meta.id,
            participant_id: participant.id.clone(),
            mode,
            scenario_id: scenario.id.clone(),
            phase: Phase::Conversing,
            turns: vec![Turn::opening(scenario.initial_question.clone())],
            goal_states: (1..=GOAL_COUNT as u8).map(|n| GoalState::new(n, false)).collect(),
            max_turns: meta.max_turns,
            created_at: meta.created_at,
        })
    }

    /// Attaches synthesized audio to the opening question.
    pub fn with_opening_audio(&self, audio: AudioRef) -> Session {
        let mut next = self.clone();
        if let Some(first) = next.turns.first_mut() {
            first.interlocutor_audio = Some(audio);
        }
        next
    }

    /// Appends a turn and latches goal updates.
    pub fn apply_turn(&self, turn: Turn, goal_updates: &[GoalState]) -> Result<Session, SessionError> {
        if self.phase != Phase::Conversing {
            return Err(SessionError::PhaseViolation {
                from: self.phase,
                to: Phase::Conversing,
            });
        }
        let expected = self.turns.len() as u32;
        if turn.index != expected {
            return Err(SessionError::IndexGap {
                expected,
                got: turn.index,
            });
        }
        turn.validate(self.mode)?;
        if let Some(bad) = goal_updates
            .iter()
            .find(|g| !(1..=GOAL_COUNT as u8).contains(&g.goal_number))
        {
            return Err(SessionError::UnknownGoal(bad.goal_number));
        }

        let mut next = self.clone();
        next.turns.push(turn);
        for update in goal_updates.iter().filter(|g| g.completed) {
            if let Some(state) = next
                .goal_states
                .iter_mut()
                .find(|s| s.goal_number == update.goal_number)
            {
                state.completed = true;
            }
        }
        Ok(next)
    }

    /// Number of turns authored by the learner (turn 0 excluded).
    pub fn learner_turns(&self) -> u32 {
        self.turns.len().saturating_sub(1) as u32
    }

    pub fn goals_completed(&self) -> usize {
        self.goal_states.iter().filter(|g| g.completed).count()
    }

    pub fn is_complete(&self) -> bool {
        self.goal_states.iter().all(|g| g.completed) || self.learner_turns() >= self.max_turns
    }

    pub fn advance_phase(&self, target: Phase) -> Result<Session, SessionError> {
        if self.phase.successor() != Some(target) {
            return Err(SessionError::PhaseViolation {
                from: self.phase,
                to: target,
            });
        }
        Ok(Session {
            phase: target,
            ..self.clone()
        })
    }

    /// Ends the conversation early and moves on to the survey.
    pub fn abandon(&self) -> Result<Session, SessionError> {
        self.advance_phase(Phase::Survey)
    }

    /// Dialogue history as the prompts see it: the interlocutor's lines and
    /// the grounding text of each learner turn.
    pub fn dialogue(&self) -> DialogueTranscript {
        let mut transcript = DialogueTranscript::default();
        for turn in &self.turns {
            if let Some(grounding) = &turn.grounding_text {
                transcript.push(Speaker::User, grounding.clone());
            }
            transcript.push(Speaker::Assistant, turn.interlocutor_text.clone());
        }
        transcript
    }

    pub fn turn(&self, index: u32) -> Option<&Turn> {
        self.turns.get(index as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> SessionMeta {
        SessionMeta {
            id: SessionId::new("s-1"),
            created_at: DateTime::parse_from_rfc3339("2026-01-01T00:00:00Z")
                .unwrap()
                .with_timezone(&Utc),
            max_turns: DEFAULT_MAX_TURNS,
        }
    }

    fn registered() -> Participant {
        Participant::new(ParticipantId::new("p-1"), "ko").with_voice_profile(VoiceProfile::new("voice-abc", 30.0, "ko"))
    }

    fn learner_turn(index: u32, mode: FeedbackMode) -> Turn {
        let delivered = if mode.is_rephrasing() {
            "I'd like a table"
        } else {
            "<strong>a</strong> 를 붙이세요"
        };
        Turn {
            index,
            learner_transcript: Some("I want table".into()),
            delivered_text: Some(delivered.into()),
            delivered_audio: mode.is_rephrasing().then(|| AudioRef::new("d")),
            interlocutor_text: "Sure, for how many?".into(),
            interlocutor_audio: Some(AudioRef::new("i")),
            grounding_text: Some(if mode.is_rephrasing() {
                delivered.into()
            } else {
                "I want table".into()
            }),
        }
    }

    fn goals(flags: [bool; 4]) -> Vec<GoalState> {
        flags
            .iter()
            .enumerate()
            .map(|(i, &c)| GoalState::new(i as u8 + 1, c))
            .collect()
    }

    #[test]
    fn twin_session_opens_with_initial_question() {
        let s = Session::create(
            &registered(),
            FeedbackMode::AiTwin,
            "task-1",
            &ScenarioRegistry::builtin(),
            meta(),
        )
        .unwrap();
        assert_eq!(s.phase, Phase::Conversing);
        assert_eq!(s.turns.len(), 1);
        assert_eq!(
            s.turns[0].interlocutor_text,
            "Hello! Thank you for calling Siam Orchid. How can I help you today?"
        );
        assert!(s.turns[0].learner_transcript.is_none());
    }

    #[test]
    fn fresh_session_has_no_goals_met() {
        let p = Participant::new(ParticipantId::new("p-2"), "ko");
        let s = Session::create(
            &p,
            FeedbackMode::ExplicitFeedback,
            "task-3",
            &ScenarioRegistry::builtin(),
            meta(),
        )
        .unwrap();
        assert_eq!(s.goal_states, goals([false; 4]));
    }

    #[test]
    fn twin_without_profile_is_rejected() {
        let p = Participant::new(ParticipantId::new("p-2"), "ko");
        let err =
            Session::create(&p, FeedbackMode::AiTwin, "task-1", &ScenarioRegistry::builtin(), meta()).unwrap_err();
        assert_eq!(err, SessionError::MissingVoiceProfile(ParticipantId::new("p-2")));
        let err = Session::create(
            &p,
            FeedbackMode::AiProxy,
            "task-9",
            &ScenarioRegistry::builtin(),
            meta(),
        )
        .unwrap_err();
        assert_eq!(err, SessionError::UnknownScenario("task-9".into()));
    }

    fn with_goals(flags: [bool; 4]) -> Session {
        let mut s = Session::create(
            &registered(),
            FeedbackMode::AiTwin,
            "task-1",
            &ScenarioRegistry::builtin(),
            meta(),
        )
        .unwrap();
        s.goal_states = goals(flags);
        s
    }

    #[test]
    fn goal_updates_are_or_latched() {
        let s = with_goals([true, false, false, false]);
        let next = s
            .apply_turn(
                learner_turn(1, FeedbackMode::AiTwin),
                &goals([false, true, false, false]),
            )
            .unwrap();
        assert_eq!(next.goal_states, goals([true, true, false, false]));
        let next = s
            .apply_turn(learner_turn(1, FeedbackMode::AiTwin), &goals([false; 4]))
            .unwrap();
        assert_eq!(next.goal_states, goals([true, false, false, false]));
    }

    #[test]
    fn index_gap_is_rejected() {
        let mut s = with_goals([false; 4]);
        for i in 1..3 {
            s = s.apply_turn(learner_turn(i, FeedbackMode::AiTwin), &[]).unwrap();
        }
        assert_eq!(s.turns.len(), 3);
        let err = s.apply_turn(learner_turn(5, FeedbackMode::AiTwin), &[]).unwrap_err();
        assert_eq!(err, SessionError::IndexGap { expected: 3, got: 5 });
    }

    #[test]
    fn turn_invariants_are_enforced() {
        let s = with_goals([false; 4]);
        let mut bad = learner_turn(1, FeedbackMode::AiTwin);
        bad.grounding_text = bad.learner_transcript.clone();
        assert!(matches!(s.apply_turn(bad, &[]), Err(SessionError::InvalidTurn { .. })));

        let explicit = learner_turn(1, FeedbackMode::ExplicitFeedback);
        assert!(explicit.validate(FeedbackMode::ExplicitFeedback).is_ok());
        assert!(explicit.validate(FeedbackMode::AiProxy).is_err());
        let mut voiced = explicit.clone();
        voiced.delivered_audio = Some(AudioRef::new("x"));
        assert!(voiced.validate(FeedbackMode::ExplicitFeedback).is_err());
    }

    #[test]
    fn completion_by_goals_or_cap() {
        assert!(with_goals([true; 4]).is_complete());

        let mut s = with_goals([true, true, true, false]);
        for i in 1..=5 {
            s = s.apply_turn(learner_turn(i, FeedbackMode::AiTwin), &[]).unwrap();
        }
        assert!(!s.is_complete());
        for i in 6..=20 {
            s = s.apply_turn(learner_turn(i, FeedbackMode::AiTwin), &[]).unwrap();
        }
        assert_eq!(s.learner_turns(), 20);
        assert!(s.is_complete());
    }

    #[test]
    fn phases_only_move_forward_one_step() {
        let s = with_goals([false; 4]);
        let survey = s.advance_phase(Phase::Survey).unwrap();
        assert_eq!(survey.phase, Phase::Survey);

        let mut reg = s.clone();
        reg.phase = Phase::Registration;
        assert_eq!(
            reg.advance_phase(Phase::Survey).unwrap_err(),
            SessionError::PhaseViolation {
                from: Phase::Registration,
                to: Phase::Survey
            }
        );

        let done = survey.advance_phase(Phase::Done).unwrap();
        assert!(done.advance_phase(Phase::Conversing).is_err());
        assert!(matches!(
            done.apply_turn(learner_turn(1, FeedbackMode::AiTwin), &[]),
            Err(SessionError::PhaseViolation { .. })
        ));
    }

    #[test]
    fn dialogue_uses_grounding_text() {
        let s = with_goals([false; 4])
            .apply_turn(learner_turn(1, FeedbackMode::AiTwin), &[])
            .unwrap();
        let d = s.dialogue();
        let texts: Vec<_> = d.entries().iter().map(|e| (e.speaker, e.text.as_str())).collect();
        assert_eq!(
            texts,
            vec![
                (
                    Speaker::Assistant,
                    "Hello! Thank you for calling Siam Orchid. How can I help you today?"
                ),
                (Speaker::User, "I'd like a table"),
                (Speaker::Assistant, "Sure, for how many?"),
            ]
        );
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("ai-twin".parse::<FeedbackMode>().unwrap(), FeedbackMode::AiTwin);
        assert_eq!(
            "Explicit_Feedback".parse::<FeedbackMode>().unwrap(),
            FeedbackMode::ExplicitFeedback
        );
        assert!("voice".parse::<FeedbackMode>().is_err());
    }
}
