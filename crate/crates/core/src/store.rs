//! Append-only JSON Lines event log and a content-addressed audio store.
//!
//! Application state is never written directly. Every change is an [`Event`]
//! and the current state is the fold of [`AppState::apply`] over the log, so
//! reopening a log reproduces exactly the state that wrote it. Appends are
//! validated against the live state first; an event the fold would reject is
//! never written.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::AudioClip;
use crate::session::{
    AudioRef, GoalState, Participant, ParticipantId, Phase, Session, SessionError, SessionId, Turn, VoiceProfile,
    GOAL_COUNT,
};
use crate::study::{LongTable, StudyError, SurveyRecord, SurveyResponse};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("event rejected: {0}")]
    SchemaError(String),
    #[error("storage failure: {0}")]
    StorageError(#[from] io::Error),
    #[error("corrupt log at seq {seq} (line {line}): {reason}")]
    CorruptLog { seq: u64, line: usize, reason: String },
}

impl From<SessionError> for StoreError {
    fn from(e: SessionError) -> Self {
        StoreError::SchemaError(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    ParticipantCreated {
        participant: Participant,
    },
    VoiceRegistered {
        participant_id: ParticipantId,
        profile: VoiceProfile,
    },
    SessionCreated {
        session: Session,
    },
    TurnCompleted {
        session_id: SessionId,
        turn: Turn,
        goal_updates: Vec<GoalState>,
    },
    SurveySubmitted {
        response: SurveyResponse,
    },
    PhaseAdvanced {
        session_id: SessionId,
        to: Phase,
    },
    /// Drops the participant and everything recorded for them from state.
    ParticipantDeleted {
        participant_id: ParticipantId,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Everything the study has produced, as reconstructed from the log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AppState {
    pub participants: BTreeMap<ParticipantId, Participant>,
    pub sessions: BTreeMap<SessionId, Session>,
    pub surveys: BTreeMap<SessionId, SurveyResponse>,
    pub deleted: BTreeSet<ParticipantId>,
}

fn reject(msg: impl Into<String>) -> StoreError {
    StoreError::SchemaError(msg.into())
}

impl AppState {
    pub fn participant(&self, id: &ParticipantId) -> Option<&Participant> {
        self.participants.get(id)
    }

    pub fn session(&self, id: &SessionId) -> Option<&Session> {
        self.sessions.get(id)
    }

    fn live_session(&self, id: &SessionId) -> Result<&Session, StoreError> {
        self.sessions
            .get(id)
            .ok_or_else(|| reject(format!("unknown session {id}")))
    }

    /// Pure transition. On error `self` is unchanged.
    pub fn apply(&mut self, kind: &EventKind) -> Result<(), StoreError> {
        match kind {
            EventKind::ParticipantCreated { participant } => {
                if self.participants.contains_key(&participant.id) || self.deleted.contains(&participant.id) {
                    return Err(reject(format!("participant {} already exists", participant.id)));
                }
                if participant.voice_profile.is_some() {
                    return Err(reject("new participants carry no voice profile"));
                }
                self.participants.insert(participant.id.clone(), participant.clone());
            }
            EventKind::VoiceRegistered {
                participant_id,
                profile,
            } => {
                let p = self
                    .participants
                    .get(participant_id)
                    .ok_or_else(|| reject(format!("unknown participant {participant_id}")))?;
                if profile.provider_voice_id.is_empty() {
                    return Err(reject("empty voice id"));
                }
                let updated = p.with_voice_profile(profile.clone());
                self.participants.insert(participant_id.clone(), updated);
            }
            EventKind::SessionCreated { session } => {
                let p = self
                    .participants
                    .get(&session.participant_id)
                    .ok_or_else(|| reject(format!("unknown participant {}", session.participant_id)))?;
                if self.sessions.contains_key(&session.id) {
                    return Err(reject(format!("session {} already exists", session.id)));
                }
                if session.mode == crate::session::FeedbackMode::AiTwin && p.voice_profile.is_none() {
                    return Err(SessionError::MissingVoiceProfile(p.id.clone()).into());
                }
                if session.phase != Phase::Conversing || session.turns.len() != 1 || session.turns[0].index != 0 {
                    return Err(reject("a new session holds only its opening turn"));
                }
                session.turns[0].validate(session.mode)?;
                let goals: Vec<u8> = session.goal_states.iter().map(|g| g.goal_number).collect();
                if goals != (1..=GOAL_COUNT as u8).collect::<Vec<_>>()
                    || session.goal_states.iter().any(|g| g.completed)
                {
                    return Err(reject("a new session starts with four open goals"));
                }
                self.sessions.insert(session.id.clone(), session.clone());
            }
            EventKind::TurnCompleted {
                session_id,
                turn,
                goal_updates,
            } => {
                let s = self.live_session(session_id)?;
                if s.is_complete() {
                    return Err(reject(format!("session {session_id} is already complete")));
                }
                let next = s.apply_turn(turn.clone(), goal_updates)?;
                self.sessions.insert(session_id.clone(), next);
            }
            EventKind::SurveySubmitted { response } => {
                let s = self.live_session(&response.session_id)?;
                if s.phase != Phase::Survey {
                    return Err(SessionError::PhaseViolation {
                        from: s.phase,
                        to: Phase::Survey,
                    }
                    .into());
                }
                if self.surveys.contains_key(&response.session_id) {
                    return Err(reject(format!("session {} already has a survey", response.session_id)));
                }
                self.surveys.insert(response.session_id.clone(), response.clone());
            }
            EventKind::PhaseAdvanced { session_id, to } => {
                let s = self.live_session(session_id)?;
                if *to == Phase::Done && !self.surveys.contains_key(session_id) {
                    return Err(reject(format!("session {session_id} cannot finish without a survey")));
                }
                let next = s.advance_phase(*to)?;
                self.sessions.insert(session_id.clone(), next);
            }
            EventKind::ParticipantDeleted { participant_id } => {
                if self.participants.remove(participant_id).is_none() {
                    return Err(reject(format!("unknown participant {participant_id}")));
                }
                let gone: Vec<SessionId> = self
                    .sessions
                    .values()
                    .filter(|s| &s.participant_id == participant_id)
                    .map(|s| s.id.clone())
                    .collect();
                for id in gone {
                    self.sessions.remove(&id);
                    self.surveys.remove(&id);
                }
                self.deleted.insert(participant_id.clone());
            }
        }
        Ok(())
    }

    /// Every submitted survey with its participant and condition.
    pub fn survey_records(&self) -> Vec<SurveyRecord> {
        self.surveys
            .values()
            .filter_map(|r| {
                let s = self.sessions.get(&r.session_id)?;
                Some(SurveyRecord {
                    participant: s.participant_id.to_string(),
                    condition: s.mode,
                    response: r.clone(),
                })
            })
            .collect()
    }

    /// Audio referenced by a participant's sessions.
    pub fn audio_of(&self, participant_id: &ParticipantId) -> BTreeSet<AudioRef> {
        self.sessions
            .values()
            .filter(|s| &s.participant_id == participant_id)
            .flat_map(|s| s.turns.iter())
            .flat_map(|t| [t.delivered_audio.clone(), t.interlocutor_audio.clone()])
            .flatten()
            .collect()
    }

    fn all_audio(&self) -> BTreeSet<AudioRef> {
        self.sessions
            .values()
            .flat_map(|s| s.turns.iter())
            .flat_map(|t| [t.delivered_audio.clone(), t.interlocutor_audio.clone()])
            .flatten()
            .collect()
    }
}

/// Long-format CSV of every submitted survey; header only when there are none.
pub fn export_study_csv(state: &AppState, reverse_set: &BTreeSet<u8>) -> Result<String, StudyError> {
    Ok(LongTable::from_records(&state.survey_records(), reverse_set)?.to_csv())
}

/// Parses and folds a whole log.
pub fn replay(text: &str) -> Result<(Vec<Event>, AppState), StoreError> {
    let mut events = Vec::new();
    let mut state = AppState::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let expected = events.len() as u64 + 1;
        let corrupt = |seq: u64, reason: String| StoreError::CorruptLog {
            seq,
            line: i + 1,
            reason,
        };
        let event: Event = serde_json::from_str(line).map_err(|e| corrupt(expected, e.to_string()))?;
        if event.seq != expected {
            return Err(corrupt(event.seq, format!("expected seq {expected}")));
        }
        state
            .apply(&event.kind)
            .map_err(|e| corrupt(event.seq, e.to_string()))?;
        events.push(event);
    }
    Ok((events, state))
}

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// Single-writer event log, optionally backed by a file.
pub struct EventStore {
    file: Option<File>,
    path: Option<PathBuf>,
    events: Vec<Event>,
    state: AppState,
    clock: Clock,
}

impl std::fmt::Debug for EventStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventStore")
            .field("path", &self.path)
            .field("events", &self.events.len())
            .finish()
    }
}

impl EventStore {
    pub fn in_memory() -> Self {
        Self {
            file: None,
            path: None,
            events: Vec::new(),
            state: AppState::default(),
            clock: Arc::new(Utc::now),
        }
    }

    /// Opens or creates a log file and replays it.
    ///
    /// A final line without a trailing newline that does not parse is a torn
    /// write from a crash; it is dropped and the file truncated.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        if !text.is_empty() && !text.ends_with('\n') {
            let cut = text.rfind('\n').map_or(0, |i| i + 1);
            if serde_json::from_str::<Event>(&text[cut..]).is_err() {
                tracing::warn!(path = %path.display(), "dropping torn final log line");
                text.truncate(cut);
                let f = OpenOptions::new().write(true).open(&path)?;
                f.set_len(cut as u64)?;
            } else {
                text.push('\n');
                OpenOptions::new().append(true).open(&path)?.write_all(b"\n")?;
            }
        }
        let (events, state) = replay(&text)?;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            file: Some(file),
            path: Some(path),
            events,
            state,
            clock: Arc::new(Utc::now),
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn last_seq(&self) -> u64 {
        self.events.len() as u64
    }

    /// Validates, persists and applies one event. Returns its seq.
    pub fn append(&mut self, kind: EventKind) -> Result<u64, StoreError> {
        let mut next = self.state.clone();
        next.apply(&kind)?;
        let event = Event {
            seq: self.last_seq() + 1,
            timestamp: (self.clock)(),
            kind,
        };
        if let Some(file) = self.file.as_mut() {
            let mut line = serde_json::to_string(&event).map_err(|e| reject(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
        }
        self.state = next;
        self.events.push(event);
        Ok(self.last_seq())
    }

    /// Appends several events atomically with respect to validation: all
    /// are checked against the evolving state before any is written.
    pub fn append_all(&mut self, kinds: Vec<EventKind>) -> Result<u64, StoreError> {
        let mut probe = self.state.clone();
        for k in &kinds {
            probe.apply(k)?;
        }
        for k in kinds {
            self.append(k)?;
        }
        Ok(self.last_seq())
    }

    /// The log as JSON Lines text.
    pub fn to_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("events serialize") + "\n")
            .collect()
    }

    /// Records the deletion and removes the participant's audio from
    /// `blobs`, keeping any blob still referenced by another participant.
    pub fn delete_participant(&mut self, id: &ParticipantId, blobs: &BlobStore) -> Result<usize, StoreError> {
        let theirs = self.state.audio_of(id);
        self.append(EventKind::ParticipantDeleted {
            participant_id: id.clone(),
        })?;
        let still_used = self.state.all_audio();
        let mut removed = 0;
        for r in theirs.difference(&still_used) {
            if blobs.delete(r)? {
                removed += 1;
            }
        }
        Ok(removed)
    }
}

/// Content-addressed audio, keyed by the SHA-256 of the bytes.
#[derive(Debug, Clone)]
pub struct BlobStore {
    dir: Option<PathBuf>,
    mem: Arc<Mutex<HashMap<String, AudioClip>>>,
}

impl BlobStore {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            mem: Arc::default(),
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            mem: Arc::default(),
        })
    }

    fn file_for(dir: &Path, id: &str) -> Result<PathBuf, StoreError> {
        if id.len() != 64 || !id.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(reject(format!("`{id}` is not a content hash")));
        }
        Ok(dir.join(id))
    }

    /// Stores the clip, returning its reference. Idempotent.
    pub fn put(&self, clip: &AudioClip) -> Result<AudioRef, StoreError> {
        let id = clip.content_hash();
        match &self.dir {
            Some(dir) => {
                let target = Self::file_for(dir, &id)?;
                if !target.exists() {
                    let tmp = dir.join(format!(".{id}.tmp"));
                    fs::write(&tmp, clip.bytes())?;
                    fs::rename(&tmp, &target)?;
                }
            }
            None => {
                self.mem
                    .lock()
                    .expect("blob lock")
                    .entry(id.clone())
                    .or_insert_with(|| clip.clone());
            }
        }
        Ok(AudioRef::new(id))
    }

    pub fn get(&self, r: &AudioRef) -> Result<Option<AudioClip>, StoreError> {
        match &self.dir {
            Some(dir) => {
                let path = Self::file_for(dir, r.as_str())?;
                match fs::read(&path) {
                    Ok(bytes) => AudioClip::from_bytes(bytes)
                        .map(Some)
                        .map_err(|e| reject(format!("stored blob {r}: {e}"))),
                    Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
                    Err(e) => Err(e.into()),
                }
            }
            None => Ok(self.mem.lock().expect("blob lock").get(r.as_str()).cloned()),
        }
    }

    pub fn delete(&self, r: &AudioRef) -> Result<bool, StoreError> {
        match &self.dir {
            Some(dir) => match fs::remove_file(Self::file_for(dir, r.as_str())?) {
                Ok(()) => Ok(true),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
                Err(e) => Err(e.into()),
            },
            None => Ok(self.mem.lock().expect("blob lock").remove(r.as_str()).is_some()),
        }
    }

    pub fn len(&self) -> Result<usize, StoreError> {
        match &self.dir {
            Some(dir) => Ok(fs::read_dir(dir)?
                .filter_map(Result::ok)
                .filter(|e| !e.file_name().to_string_lossy().starts_with('.'))
                .count()),
            None => Ok(self.mem.lock().expect("blob lock").len()),
        }
    }

    pub fn is_empty(&self) -> Result<bool, StoreError> {
        self.len().map(|n| n == 0)
    }
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;

    use super::*;
    use crate::provider::mock;
    use crate::scenario::ScenarioRegistry;
    use crate::session::{FeedbackMode, SessionMeta};

    fn fixed_clock() -> Clock {
        Arc::new(|| Utc.with_ymd_and_hms(2025, 3, 1, 9, 0, 0).unwrap())
    }

    fn participant(id: &str) -> Participant {
        Participant::new(ParticipantId::new(id), "ko")
    }

    fn session(p: &Participant, id: &str) -> Session {
        let meta = SessionMeta {
            id: SessionId::new(id),
            created_at: Utc.with_ymd_and_hms(2025, 3, 1, 9, 0, 0).unwrap(),
            max_turns: 20,
        };
        Session::create(p, FeedbackMode::AiProxy, "task-1", &ScenarioRegistry::builtin(), meta).unwrap()
    }

    #[test]
    fn seqs_start_at_one_and_increase() {
        let mut store = EventStore::in_memory().with_clock(fixed_clock());
        let p = participant("p1");
        assert_eq!(
            store
                .append(EventKind::ParticipantCreated { participant: p.clone() })
                .unwrap(),
            1
        );
        assert_eq!(
            store
                .append(EventKind::SessionCreated {
                    session: session(&p, "s1")
                })
                .unwrap(),
            2
        );
    }

    #[test]
    fn invalid_event_leaves_log_unchanged() {
        let mut store = EventStore::in_memory();
        let err = store.append(EventKind::PhaseAdvanced {
            session_id: SessionId::new("nope"),
            to: Phase::Survey,
        });
        assert!(matches!(err, Err(StoreError::SchemaError(_))));
        assert!(store.events().is_empty());
        assert_eq!(store.state(), &AppState::default());
    }

    #[test]
    fn file_round_trip_and_seq_gap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let p = participant("p1");
        {
            let mut store = EventStore::open(&path).unwrap().with_clock(fixed_clock());
            store
                .append(EventKind::ParticipantCreated { participant: p.clone() })
                .unwrap();
            store
                .append(EventKind::SessionCreated {
                    session: session(&p, "s1"),
                })
                .unwrap();
        }
        let reopened = EventStore::open(&path).unwrap();
        assert_eq!(reopened.events().len(), 2);
        assert!(reopened.state().sessions.contains_key(&SessionId::new("s1")));

        let text = fs::read_to_string(&path).unwrap();
        let gapped = text.replace("\"seq\":2", "\"seq\":3");
        assert!(matches!(
            replay(&gapped),
            Err(StoreError::CorruptLog { seq: 3, line: 2, .. })
        ));
        assert_eq!(replay("").unwrap().1, AppState::default());
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let mut store = EventStore::open(&path).unwrap();
            store
                .append(EventKind::ParticipantCreated {
                    participant: participant("p1"),
                })
                .unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":2,\"timest").unwrap();
        drop(f);
        let store = EventStore::open(&path).unwrap();
        assert_eq!(store.events().len(), 1);
        assert!(fs::read_to_string(&path).unwrap().ends_with("}\n"));
    }

    #[test]
    fn blobs_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        for blobs in [
            BlobStore::in_memory(),
            BlobStore::on_disk(dir.path().join("blobs")).unwrap(),
        ] {
            let clip = mock::learner_audio("hello there");
            let a = blobs.put(&clip).unwrap();
            let b = blobs.put(&clip).unwrap();
            assert_eq!(a, b);
            assert_eq!(blobs.len().unwrap(), 1);
            assert_eq!(blobs.get(&a).unwrap().unwrap(), clip);
            assert!(blobs.delete(&a).unwrap());
            assert!(blobs.get(&a).unwrap().is_none());
        }
    }

    #[test]
    fn header_only_export() {
        let csv = export_study_csv(&AppState::default(), &crate::study::default_reverse_set()).unwrap();
        assert_eq!(csv, "participant,condition,dim_or_item,value\n");
    }

    #[test]
    fn deletion_removes_state_and_audio() {
        let blobs = BlobStore::in_memory();
        let mut store = EventStore::in_memory();
        let p = participant("p1");
        store
            .append(EventKind::ParticipantCreated { participant: p.clone() })
            .unwrap();
        let clip = mock::learner_audio("opening");
        let r = blobs.put(&clip).unwrap();
        let s = session(&p, "s1").with_opening_audio(r.clone());
        store.append(EventKind::SessionCreated { session: s }).unwrap();
        assert_eq!(store.delete_participant(&p.id, &blobs).unwrap(), 1);
        assert!(store.state().sessions.is_empty());
        assert!(blobs.get(&r).unwrap().is_none());
        assert!(store.append(EventKind::ParticipantCreated { participant: p }).is_err());
    }
}
