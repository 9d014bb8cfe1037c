//! Prompt templates, dialogue serialization and goal-tracking output parsing.
//!
//! The four template bodies are stored as text assets under `templates/` and
//! compiled in. Their SHA-256 digests are pinned in [`PINNED_DIGESTS`]; a
//! mismatch means a template drifted.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::session::{GoalState, GOAL_COUNT};

const CHAT: &str = include_str!("../templates/chat.txt");
const TASK_TRACKING: &str = include_str!("../templates/task_tracking.txt");
const REPHRASE: &str = include_str!("../templates/rephrase.txt");
const EXPLICIT_FEEDBACK: &str = include_str!("../templates/explicit_feedback.txt");

const MISSION_SLOT: &str = "{{mission_context}}";
const DIALOGUE_SLOT: &str = "{{dialogue}}";

/// SHA-256 of each template body, hex encoded.
pub const PINNED_DIGESTS: [(TemplateName, &str); 4] = [
    (
        TemplateName::Chat,
        "6c82db737e1967350f729897a8eb6e498185384baa024ed451c998ccc53cf32c",
    ),
    (
        TemplateName::TaskTracking,
        "076b216c0c18730e1342ae97bf4db826f3791e6c30e42c298d3588637dc10a00",
    ),
    (
        TemplateName::RephraseTwinProxy,
        "773e3eb30f603a1ba494abca6f6ea34eebf34371f6e16a5e9c889ab01a3cc7eb",
    ),
    (
        TemplateName::ExplicitFeedback,
        "4a47ce4693ff45a5ef2fd8db080880dd48454a0a0775477f850e27a5c586c126",
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Chat,
    TaskTracking,
    RephraseTwinProxy,
    ExplicitFeedback,
}

impl TemplateName {
    pub const ALL: [TemplateName; 4] = [
        TemplateName::Chat,
        TemplateName::TaskTracking,
        TemplateName::RephraseTwinProxy,
        TemplateName::ExplicitFeedback,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: &'static str,
}

impl PromptTemplate {
    pub fn get(name: TemplateName) -> Self {
        let body = match name {
            TemplateName::Chat => CHAT,
            TemplateName::TaskTracking => TASK_TRACKING,
            TemplateName::RephraseTwinProxy => REPHRASE,
            TemplateName::ExplicitFeedback => EXPLICIT_FEEDBACK,
        };
        Self { name, body }
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.body.as_bytes()))
    }

    pub fn pinned_digest(&self) -> &'static str {
        PINNED_DIGESTS
            .iter()
            .find(|(n, _)| *n == self.name)
            .map(|(_, d)| *d)
            .expect("every template has a pinned digest")
    }

    /// Substitutes every slot in one pass over the body. Inserted values are
    /// not rescanned, and any `{{` inside them is broken up, so the output
    /// never contains a residual placeholder opener.
    fn render(&self, mission: Option<&str>, dialogue: &str) -> String {
        let mut out = String::with_capacity(self.body.len() + dialogue.len() + 256);
        let mut rest = self.body;
        while let Some(pos) = rest.find("{{") {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if let Some(after) = tail.strip_prefix(MISSION_SLOT) {
                out.push_str(&defuse(mission.unwrap_or("")));
                rest = after;
            } else if let Some(after) = tail.strip_prefix(DIALOGUE_SLOT) {
                out.push_str(&defuse(dialogue));
                rest = after;
            } else {
                out.push('{');
                rest = &tail[1..];
            }
        }
        out.push_str(rest);
        out
    }
}

fn defuse(value: &str) -> String {
    let mut s = value.to_string();
    while s.contains("{{") {
        s = s.replace("{{", "{ {");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "USER")]
    User,
    #[serde(rename = "ASSISTANT")]
    Assistant,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::User => "USER",
            Speaker::Assistant => "ASSISTANT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueEntry {
    pub speaker: Speaker,
    pub text: String,
}

/// Ordered dialogue history. Consecutive entries from the same speaker are allowed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTranscript {
    entries: Vec<DialogueEntry>,
}

impl DialogueTranscript {
    pub fn new(entries: Vec<DialogueEntry>) -> Self {
        Self { entries }
    }

    pub fn push(&mut self, speaker: Speaker, text: impl Into<String>) {
        self.entries.push(DialogueEntry {
            speaker,
            text: text.into(),
        });
    }

    pub fn with(mut self, speaker: Speaker, text: impl Into<String>) -> Self {
        self.push(speaker, text);
        self
    }

    pub fn entries(&self) -> &[DialogueEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&DialogueEntry> {
        self.entries.last()
    }

    /// Most recent learner entry, if any.
    pub fn last_user(&self) -> Option<&DialogueEntry> {
        self.entries.iter().rev().find(|e| e.speaker == Speaker::User)
    }

    fn ends_with_user(&self) -> bool {
        matches!(self.last(), Some(e) if e.speaker == Speaker::User)
    }
}

/// One line per entry, `USER: ...` or `ASSISTANT: ...`, newline separated,
/// no trailing newline. Line breaks inside an entry collapse to spaces.
pub fn serialize_dialogue(transcript: &DialogueTranscript) -> String {
    transcript
        .entries
        .iter()
        .map(|e| {
            let flat: String = e
                .text
                .split(['\r', '\n'])
                .filter(|part| !part.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            format!("{}: {}", e.speaker, flat)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissionContext {
    pub context_description: String,
    pub goals: Vec<String>,
}

impl MissionContext {
    /// Text placed into the `{{mission_context}}` slot.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.context_description);
        out.push_str("\nGoals:");
        for (i, goal) in self.goals.iter().enumerate() {
            out.push_str(&format!("\n{}. {}", i + 1, goal));
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("mission must list exactly {GOAL_COUNT} goals, found {0}")]
    MissingGoals(usize),
    #[error("dialogue does not end with a learner utterance")]
    NoUserUtterance,
}

pub fn render_chat_prompt(mission: &MissionContext, transcript: &DialogueTranscript) -> Result<String, PromptError> {
    if mission.goals.len() != GOAL_COUNT {
        return Err(PromptError::MissingGoals(mission.goals.len()));
    }
    Ok(PromptTemplate::get(TemplateName::Chat).render(Some(&mission.render()), &serialize_dialogue(transcript)))
}

pub fn render_task_tracking_prompt(mission: &MissionContext, transcript: &DialogueTranscript) -> String {
    PromptTemplate::get(TemplateName::TaskTracking).render(Some(&mission.render()), &serialize_dialogue(transcript))
}

pub fn render_rephrase_prompt(transcript: &DialogueTranscript) -> Result<String, PromptError> {
    if !transcript.ends_with_user() {
        return Err(PromptError::NoUserUtterance);
    }
    Ok(PromptTemplate::get(TemplateName::RephraseTwinProxy).render(None, &serialize_dialogue(transcript)))
}

pub fn render_explicit_feedback_prompt(transcript: &DialogueTranscript) -> Result<String, PromptError> {
    if !transcript.ends_with_user() {
        return Err(PromptError::NoUserUtterance);
    }
    Ok(PromptTemplate::get(TemplateName::ExplicitFeedback).render(None, &serialize_dialogue(transcript)))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskParseError {
    #[error("goal tracking output is not a task_results JSON object: {0}")]
    ParseError(String),
    #[error("goal tracking output violates the schema: {0}")]
    SchemaError(String),
}

/// How much wrapping around the JSON object is tolerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// Surrounding whitespace and a markdown code fence are stripped.
    #[default]
    Lenient,
    /// Only surrounding whitespace is stripped.
    Strict,
}

pub fn parse_task_results(raw: &str) -> Result<Vec<GoalState>, TaskParseError> {
    parse_task_results_with(raw, Strictness::Lenient)
}

pub fn parse_task_results_with(raw: &str, strictness: Strictness) -> Result<Vec<GoalState>, TaskParseError> {
    let mut body = raw.trim();
    if strictness == Strictness::Lenient {
        body = strip_code_fence(body);
    }
    let value: Value = serde_json::from_str(body).map_err(|e| TaskParseError::ParseError(e.to_string()))?;
    let results = value
        .as_object()
        .and_then(|o| o.get("task_results"))
        .ok_or_else(|| TaskParseError::ParseError("missing `task_results`".into()))?
        .as_array()
        .ok_or_else(|| TaskParseError::SchemaError("`task_results` is not an array".into()))?;

    let mut goals = Vec::with_capacity(results.len());
    for item in results {
        let obj = item
            .as_object()
            .ok_or_else(|| TaskParseError::SchemaError("task result is not an object".into()))?;
        let number = obj
            .get("goal_number")
            .and_then(Value::as_u64)
            .ok_or_else(|| TaskParseError::SchemaError("`goal_number` missing or not a positive integer".into()))?;
        if !(1..=GOAL_COUNT as u64).contains(&number) {
            return Err(TaskParseError::SchemaError(format!(
                "goal_number {number} outside 1..=4"
            )));
        }
        let completed = obj
            .get("completed")
            .and_then(Value::as_bool)
            .ok_or_else(|| TaskParseError::SchemaError(format!("goal {number}: `completed` missing or not boolean")))?;
        if goals.iter().any(|g: &GoalState| g.goal_number as u64 == number) {
            return Err(TaskParseError::SchemaError(format!("goal_number {number} repeated")));
        }
        goals.push(GoalState::new(number as u8, completed));
    }
    goals.sort_by_key(|g| g.goal_number);
    Ok(goals)
}

fn strip_code_fence(body: &str) -> &str {
    let Some(rest) = body.strip_prefix("```") else {
        return body;
    };
    let Some(rest) = rest.strip_suffix("```") else {
        return body;
    };
    // Drop an info string such as `json` on the opening line.
    match rest.find('\n') {
        Some(nl) if rest[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => rest[nl + 1..].trim(),
        _ => rest.trim(),
    }
}

/// Goal states in the task-tracking output shape.
pub fn task_results_json(goals: &[GoalState]) -> String {
    let results: Vec<Value> = goals
        .iter()
        .map(|g| serde_json::json!({ "goal_number": g.goal_number, "completed": g.completed }))
        .collect();
    serde_json::json!({ "task_results": results }).to_string()
}
