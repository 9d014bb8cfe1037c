use std::collections::BTreeMap;
use std::sync::{Arc, MutexGuard};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::html::sanitize_feedback;
use super::AppContext;
use crate::pipeline::{replay, Channel, PipelineError, Stage};
use crate::provider::{AudioClip, GatewayError};
use crate::session::{
    CefrLevel, FeedbackMode, Participant, ParticipantId, Phase, Session, SessionError, SessionId, SessionMeta, Turn,
};
use crate::store::{export_study_csv, EventKind, EventStore, StoreError};
use crate::study::{make_plan_with, score_survey, EngagementScores, StudyError, SurveyResponse, ITEMS};

/// Large enough for a few minutes of 16 kHz PCM.
pub const MAX_BODY_BYTES: usize = 20 * 1024 * 1024;

pub fn router(ctx: Arc<AppContext>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/scenarios", get(scenarios))
        .route("/participants", post(create_participant))
        .route("/participants/{id}", get(get_participant).delete(delete_participant))
        .route("/participants/{id}/voice", post(register_voice))
        .route("/participants/{id}/plan", post(make_plan))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/turns", post(submit_turn))
        .route("/sessions/{id}/turns/{n}/audio", get(turn_audio))
        .route("/sessions/{id}/abandon", post(abandon_session))
        .route("/sessions/{id}/survey", post(submit_survey))
        .route("/survey/items", get(survey_items))
        .route("/export/study.csv", get(export_csv))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(ctx)
}

// ---------------------------------------------------------------------------
// Errors

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    stage: Option<Stage>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            stage: None,
        }
    }

    fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, message = %self.message, "request failed");
        }
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(stage) = self.stage {
            body["stage"] = json!(stage);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::SchemaError(m) => ApiError::conflict("conflict", m),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        ApiError::bad_request("invalid_survey", e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::UnknownScenario(_) => ApiError::bad_request("unknown_scenario", e.to_string()),
            SessionError::MissingVoiceProfile(_) => ApiError::conflict("missing_voice_profile", e.to_string()),
            SessionError::PhaseViolation { .. } => ApiError::conflict("phase_violation", e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

fn gateway_kind(e: &GatewayError) -> String {
    match e {
        GatewayError::Provider(p) => p.kind.to_string(),
        GatewayError::UnsupportedAudioFormat(_) => "unsupported_audio_format".into(),
        GatewayError::UnknownVoice(_) => "unknown_voice".into(),
        GatewayError::SampleTooShort { .. } => "sample_too_short".into(),
        GatewayError::InvalidRequest(_) => "invalid_request".into(),
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::EmptyTranscript => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "empty_transcript",
                "no speech detected, please try again",
            ),
            PipelineError::Provider {
                source: GatewayError::UnsupportedAudioFormat(m),
                ..
            } => ApiError::bad_request("invalid_audio", m),
            // Provider details can echo request content; only stage and kind leave the service.
            PipelineError::Provider { stage, source } => {
                tracing::warn!(%stage, error = %source, "provider failure");
                let kind = gateway_kind(&source);
                ApiError {
                    status: StatusCode::BAD_GATEWAY,
                    code: "provider_error",
                    message: format!("{stage} failed ({kind})"),
                    stage: Some(stage),
                }
            }
            PipelineError::SampleTooShort { .. } => ApiError::bad_request("sample_too_short", e.to_string()),
            PipelineError::SessionComplete => ApiError::conflict("session_complete", e.to_string()),
            PipelineError::UnknownTurn(_) | PipelineError::NoAudio { .. } => ApiError::not_found(e.to_string()),
            PipelineError::Session(s) => s.into(),
            PipelineError::Prompt(p) => ApiError::internal(p.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_json<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_body", e.to_string()))
}

fn parse_audio(body: Bytes) -> ApiResult<AudioClip> {
    AudioClip::from_bytes(body.to_vec()).map_err(|e| ApiError::bad_request("invalid_audio", e.to_string()))
}

fn lock(ctx: &AppContext) -> ApiResult<MutexGuard<'_, EventStore>> {
    ctx.store
        .lock()
        .map_err(|_| ApiError::internal("event store lock poisoned"))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

fn participant_of(store: &EventStore, id: &ParticipantId) -> ApiResult<Participant> {
    store
        .state()
        .participant(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("participant {id}")))
}

fn session_of(store: &EventStore, id: &SessionId) -> ApiResult<Session> {
    store
        .state()
        .session(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("session {id}")))
}

// ---------------------------------------------------------------------------
// Views

#[derive(Debug, Serialize)]
pub struct GoalView {
    pub number: u8,
    pub description: String,
    pub completed: bool,
}

#[derive(Debug, Serialize)]
pub struct TurnView {
    pub index: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    /// Rephrased utterance (AI Twin / AI Proxy).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delivered_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delivered_audio_url: Option<String>,
    /// Sanitized explicit feedback (Explicit Feedback).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback_html: Option<String>,
    pub interlocutor_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interlocutor_audio_url: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SessionView {
    pub id: SessionId,
    pub participant_id: ParticipantId,
    pub mode: FeedbackMode,
    pub scenario_id: String,
    pub scenario_title: String,
    pub context: String,
    pub phase: Phase,
    pub learner_turns: u32,
    pub max_turns: u32,
    pub complete: bool,
    pub goals: Vec<GoalView>,
    pub turns: Vec<TurnView>,
}

fn audio_url(session: &SessionId, turn: u32, channel: &str) -> String {
    format!("/sessions/{session}/turns/{turn}/audio?channel={channel}")
}

fn turn_view(session: &Session, turn: &Turn) -> TurnView {
    let learner = turn.index > 0;
    let (delivered_text, feedback_html) = match (learner, session.mode.is_rephrasing()) {
        (false, _) => (None, None),
        (true, true) => (turn.delivered_text.clone(), None),
        (true, false) => (None, turn.delivered_text.as_deref().map(sanitize_feedback)),
    };
    TurnView {
        index: turn.index,
        transcript: turn.learner_transcript.clone(),
        delivered_text,
        delivered_audio_url: turn
            .delivered_audio
            .as_ref()
            .map(|_| audio_url(&session.id, turn.index, "delivered")),
        feedback_html,
        interlocutor_text: turn.interlocutor_text.clone(),
        interlocutor_audio_url: turn
            .interlocutor_audio
            .as_ref()
            .map(|_| audio_url(&session.id, turn.index, "interlocutor")),
    }
}

fn goal_views(ctx: &AppContext, session: &Session) -> Vec<GoalView> {
    let scenario = ctx.pipeline.scenarios().get(&session.scenario_id).ok();
    session
        .goal_states
        .iter()
        .map(|g| GoalView {
            number: g.goal_number,
            description: scenario
                .and_then(|s| s.display_goals().get(g.goal_number as usize - 1))
                .cloned()
                .unwrap_or_default(),
            completed: g.completed,
        })
        .collect()
}

fn session_view(ctx: &AppContext, session: &Session) -> SessionView {
    let scenario = ctx.pipeline.scenarios().get(&session.scenario_id).ok();
    SessionView {
        id: session.id.clone(),
        participant_id: session.participant_id.clone(),
        mode: session.mode,
        scenario_id: session.scenario_id.clone(),
        scenario_title: scenario.map(|s| s.title.clone()).unwrap_or_default(),
        context: scenario.map(|s| s.display_context().to_string()).unwrap_or_default(),
        phase: session.phase,
        learner_turns: session.learner_turns(),
        max_turns: session.max_turns,
        complete: session.is_complete(),
        goals: goal_views(ctx, session),
        turns: session.turns.iter().map(|t| turn_view(session, t)).collect(),
    }
}

// ---------------------------------------------------------------------------
// Handlers

async fn healthz(State(ctx): State<Arc<AppContext>>) -> ApiResult<Json<serde_json::Value>> {
    let seq = lock(&ctx)?.last_seq();
    Ok(Json(json!({ "status": "ok", "last_seq": seq })))
}

async fn scenarios(State(ctx): State<Arc<AppContext>>) -> Json<serde_json::Value> {
    Json(json!(ctx.pipeline.scenarios().all()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewParticipant {
    #[serde(default)]
    id: Option<String>,
    #[serde(default = "default_language")]
    first_language: String,
    #[serde(default)]
    cefr_level: Option<CefrLevel>,
}

fn default_language() -> String {
    "ko".into()
}

async fn create_participant(State(ctx): State<Arc<AppContext>>, body: Bytes) -> ApiResult<Response> {
    let req: NewParticipant = if body.is_empty() {
        parse_json(&Bytes::from_static(b"{}"))?
    } else {
        parse_json(&body)?
    };
    let id = match req.id {
        Some(id) if id.trim().is_empty() => return Err(ApiError::bad_request("invalid_body", "empty participant id")),
        Some(id) => ParticipantId::new(id),
        None => ParticipantId::new(ctx.next_id("P")),
    };
    let mut participant = Participant::new(id, req.first_language);
    participant.cefr_level = req.cefr_level;
    let mut store = lock(&ctx)?;
    if store.state().participant(&participant.id).is_some() || store.state().deleted.contains(&participant.id) {
        return Err(ApiError::conflict(
            "already_exists",
            format!("participant {} already exists", participant.id),
        ));
    }
    store.append(EventKind::ParticipantCreated {
        participant: participant.clone(),
    })?;
    Ok((StatusCode::CREATED, Json(participant)).into_response())
}

async fn get_participant(
    State(ctx): State<Arc<AppContext>>,
    Path(id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let store = lock(&ctx)?;
    let id = ParticipantId::new(id);
    let participant = participant_of(&store, &id)?;
    let sessions: Vec<_> = store
        .state()
        .sessions
        .values()
        .filter(|s| s.participant_id == id)
        .map(|s| {
            json!({
                "id": s.id,
                "mode": s.mode,
                "scenario_id": s.scenario_id,
                "phase": s.phase,
                "survey_submitted": store.state().surveys.contains_key(&s.id),
            })
        })
        .collect();
    Ok(Json(json!({ "participant": participant, "sessions": sessions })))
}

#[derive(Debug, Deserialize)]
struct VoiceQuery {
    duration_secs: Option<f64>,
}

async fn register_voice(
    State(ctx): State<Arc<AppContext>>,
    Path(id): Path<String>,
    Query(q): Query<VoiceQuery>,
    body: Bytes,
) -> ApiResult<Response> {
    let clip = parse_audio(body)?;
    let id = ParticipantId::new(id);
    let participant = participant_of(&*lock(&ctx)?, &id)?;
    let worker = Arc::clone(&ctx);
    let (_, profile) = blocking(move || worker.pipeline.register_voice(&participant, &clip, q.duration_secs)).await??;
    lock(&ctx)?.append(EventKind::VoiceRegistered {
        participant_id: id,
        profile: profile.clone(),
    })?;
    Ok((StatusCode::CREATED, Json(profile)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanRequest {
    seed: u64,
}

async fn make_plan(
    State(ctx): State<Arc<AppContext>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let req: PlanRequest = parse_json(&body)?;
    let id = ParticipantId::new(id);
    participant_of(&*lock(&ctx)?, &id)?;
    let plan = make_plan_with(id, req.seed, ctx.pipeline.scenarios());
    let mut value = json!(plan);
    value["order_label"] = json!(plan.order_label());
    Ok(Json(value))
}

async fn delete_participant(
    State(ctx): State<Arc<AppContext>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<serde_json::Value>> {
    let Some(expected) = &ctx.admin_token else {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            "participant deletion is disabled",
        ));
    };
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented != Some(expected.as_str()) {
        return Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "admin token required",
        ));
    }
    let id = ParticipantId::new(id);
    let mut store = lock(&ctx)?;
    participant_of(&store, &id)?;
    let removed = store.delete_participant(&id, &ctx.blobs)?;
    tracing::info!(participant = %id, removed, "participant deleted");
    Ok(Json(json!({ "deleted": id, "removed_audio": removed })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSession {
    participant_id: String,
    mode: FeedbackMode,
    scenario_id: String,
}

async fn create_session(State(ctx): State<Arc<AppContext>>, body: Bytes) -> ApiResult<Response> {
    let req: NewSession = parse_json(&body)?;
    let pid = ParticipantId::new(req.participant_id);
    let participant = participant_of(&*lock(&ctx)?, &pid)?;
    let meta = SessionMeta {
        id: SessionId::new(ctx.next_id("S")),
        created_at: ctx.now(),
        max_turns: ctx.max_turns,
    };
    let worker = Arc::clone(&ctx);
    let (session, opening) = blocking(move || {
        worker
            .pipeline
            .open_session(&participant, req.mode, &req.scenario_id, meta)
    })
    .await??;
    ctx.blobs.put(&opening.clip)?;
    lock(&ctx)?.append(EventKind::SessionCreated {
        session: session.clone(),
    })?;
    tracing::info!(session = %session.id, mode = %session.mode, scenario = %session.scenario_id, "session opened");
    Ok((StatusCode::CREATED, Json(session_view(&ctx, &session))).into_response())
}

async fn get_session(State(ctx): State<Arc<AppContext>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let session = session_of(&*lock(&ctx)?, &SessionId::new(id))?;
    Ok(Json(session_view(&ctx, &session)))
}

#[derive(Debug, Serialize)]
struct TurnResponse {
    turn: TurnView,
    goals: Vec<GoalView>,
    phase: Phase,
    complete: bool,
    learner_turns: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    goal_warning: Option<String>,
    timing_ms: BTreeMap<String, u64>,
}

async fn submit_turn(
    State(ctx): State<Arc<AppContext>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<TurnResponse>> {
    let clip = parse_audio(body)?;
    let id = SessionId::new(id);
    let _slot = ctx.claim_turn(&id).ok_or_else(|| {
        ApiError::conflict(
            "turn_in_flight",
            format!("a turn is already being processed for session {id}"),
        )
    })?;
    let (session, participant) = {
        let store = lock(&ctx)?;
        let session = session_of(&store, &id)?;
        let participant = participant_of(&store, &session.participant_id)?;
        (session, participant)
    };
    if session.phase != Phase::Conversing {
        return Err(ApiError::conflict(
            "phase_violation",
            format!("session {id} is in phase {}", session.phase),
        ));
    }

    let worker = Arc::clone(&ctx);
    let current = session.clone();
    let outcome = blocking(move || worker.pipeline.run_turn(&current, &participant, &clip)).await??;
    for audio in &outcome.audio {
        ctx.blobs.put(&audio.clip)?;
    }

    let updated = {
        let mut store = lock(&ctx)?;
        store.append(EventKind::TurnCompleted {
            session_id: id.clone(),
            turn: outcome.turn.clone(),
            goal_updates: outcome.goal_updates.clone(),
        })?;
        let after = session_of(&store, &id)?;
        if after.is_complete() && after.phase == Phase::Conversing {
            store.append(EventKind::PhaseAdvanced {
                session_id: id.clone(),
                to: Phase::Survey,
            })?;
        }
        session_of(&store, &id)?
    };
    tracing::info!(
        session = %id,
        turn = outcome.turn.index,
        goals = updated.goals_completed(),
        total_ms = outcome.timing.total_ms(),
        "turn completed"
    );

    let turn = updated
        .turn(outcome.turn.index)
        .map(|t| turn_view(&updated, t))
        .ok_or_else(|| ApiError::internal("committed turn missing"))?;
    Ok(Json(TurnResponse {
        turn,
        goals: goal_views(&ctx, &updated),
        phase: updated.phase,
        complete: updated.is_complete(),
        learner_turns: updated.learner_turns(),
        goal_warning: outcome.goal_warning,
        timing_ms: outcome.timing.0.iter().map(|(s, ms)| (s.to_string(), *ms)).collect(),
    }))
}

#[derive(Debug, Deserialize)]
struct AudioQuery {
    #[serde(default)]
    channel: Option<Channel>,
}

async fn turn_audio(
    State(ctx): State<Arc<AppContext>>,
    Path((id, n)): Path<(String, u32)>,
    Query(q): Query<AudioQuery>,
) -> ApiResult<Response> {
    let session = session_of(&*lock(&ctx)?, &SessionId::new(id))?;
    let reference = replay(&session, n, q.channel.unwrap_or(Channel::Interlocutor))?;
    let clip = ctx
        .blobs
        .get(&reference)?
        .ok_or_else(|| ApiError::not_found(format!("audio {reference}")))?;
    let mime = clip.format().mime();
    Ok(([(header::CONTENT_TYPE, mime)], clip.into_bytes()).into_response())
}

async fn abandon_session(State(ctx): State<Arc<AppContext>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let id = SessionId::new(id);
    let _slot = ctx
        .claim_turn(&id)
        .ok_or_else(|| ApiError::conflict("turn_in_flight", format!("a turn is being processed for session {id}")))?;
    let mut store = lock(&ctx)?;
    let session = session_of(&store, &id)?;
    session.abandon()?;
    store.append(EventKind::PhaseAdvanced {
        session_id: id.clone(),
        to: Phase::Survey,
    })?;
    let session = session_of(&store, &id)?;
    Ok(Json(session_view(&ctx, &session)))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Answers {
    List(Vec<i64>),
    Map(BTreeMap<String, i64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurveyBody {
    answers: Answers,
}

#[derive(Debug, Serialize)]
struct SurveyResult {
    session_id: SessionId,
    phase: Phase,
    scores: EngagementScores,
}

async fn submit_survey(
    State(ctx): State<Arc<AppContext>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SurveyResult>> {
    let req: SurveyBody = parse_json(&body)?;
    let id = SessionId::new(id);
    let response = match &req.answers {
        Answers::List(v) => SurveyResponse::from_slice(id.clone(), v)?,
        Answers::Map(m) => {
            let mut numbered = BTreeMap::new();
            for (k, v) in m {
                let n: u8 = k
                    .trim()
                    .parse()
                    .map_err(|_| ApiError::bad_request("invalid_survey", format!("item key {k:?} is not a number")))?;
                numbered.insert(n, *v);
            }
            SurveyResponse::from_map(id.clone(), &numbered)?
        }
    };
    let scores = score_survey(&response, &ctx.reverse_set)?;
    let mut store = lock(&ctx)?;
    let session = session_of(&store, &id)?;
    if session.phase != Phase::Survey {
        return Err(ApiError::conflict(
            "phase_violation",
            format!("session {id} is in phase {}, not survey", session.phase),
        ));
    }
    store.append_all(vec![
        EventKind::SurveySubmitted { response },
        EventKind::PhaseAdvanced {
            session_id: id.clone(),
            to: Phase::Done,
        },
    ])?;
    Ok(Json(SurveyResult {
        session_id: id,
        phase: Phase::Done,
        scores,
    }))
}

#[derive(Debug, Deserialize)]
struct ItemsQuery {
    session_id: Option<String>,
}

async fn survey_items(
    State(ctx): State<Arc<AppContext>>,
    Query(q): Query<ItemsQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let topic = match q.session_id {
        Some(id) => {
            let session = session_of(&*lock(&ctx)?, &SessionId::new(id))?;
            let scenario = ctx
                .pipeline
                .scenarios()
                .get(&session.scenario_id)
                .map_err(|e| ApiError::internal(e.to_string()))?;
            Some(scenario.title.clone())
        }
        None => None,
    };
    let items: Vec<_> = ITEMS
        .iter()
        .map(|item| {
            json!({
                "number": item.number,
                "dimension": item.dimension,
                "text": topic.as_deref().map_or_else(|| item.text.to_string(), |t| item.render(t)),
            })
        })
        .collect();
    Ok(Json(json!({ "scale": { "min": 1, "max": 6 }, "items": items })))
}

async fn export_csv(State(ctx): State<Arc<AppContext>>) -> ApiResult<Response> {
    let csv = export_study_csv(lock(&ctx)?.state(), &ctx.reverse_set)
        .map_err(|e| ApiError::conflict("export_failed", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{ProviderError, ProviderErrorKind};

    #[test]
    fn provider_errors_hide_detail() {
        let e: ApiError = PipelineError::Provider {
            stage: Stage::Rephrase,
            source: ProviderError::new(ProviderErrorKind::AuthFailure, "bad key sk-secret").into(),
        }
        .into();
        assert_eq!(e.status, StatusCode::BAD_GATEWAY);
        assert_eq!(e.stage, Some(Stage::Rephrase));
        assert!(!e.message.contains("sk-secret"));
        assert!(e.message.contains("auth_failure"));
    }

    #[test]
    fn status_mapping() {
        let status = |e: PipelineError| ApiError::from(e).status;
        assert_eq!(status(PipelineError::EmptyTranscript), StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(status(PipelineError::SessionComplete), StatusCode::CONFLICT);
        assert_eq!(status(PipelineError::UnknownTurn(3)), StatusCode::NOT_FOUND);
        assert_eq!(
            ApiError::from(StudyError::IncompleteResponse { missing: vec![4] }).status,
            StatusCode::BAD_REQUEST
        );
    }
}
