//! C ABI over `aitwin-core`.
//!
//! Every fallible function returns an [`AitwinStatus`] and writes its result
//! through an out-pointer. On failure [`aitwin_last_error`] describes what
//! went wrong on the calling thread. Strings handed out by this library are
//! owned by the caller and must be released with [`aitwin_string_free`].

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use aitwin_core::prompt::{
    parse_task_results_with, render_chat_prompt, render_explicit_feedback_prompt, render_rephrase_prompt,
    render_task_tracking_prompt, serialize_dialogue, task_results_json, DialogueTranscript, PromptError,
    PromptTemplate, Speaker, Strictness, TaskParseError, TemplateName,
};
use aitwin_core::session::ParticipantId;
use aitwin_core::stats::{self, Distribution, StatsError};
use aitwin_core::study::{self, LongTable, StudyError, SurveyResponse};
use aitwin_core::ScenarioRegistry;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AitwinStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    /// Zero error variance with a non-zero effect.
    DegenerateData = 4,
    ParseError = 5,
    SchemaError = 6,
    NotFound = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AitwinSpeaker {
    User = 0,
    Assistant = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AitwinTemplate {
    Chat = 0,
    TaskTracking = 1,
    Rephrase = 2,
    ExplicitFeedback = 3,
}

impl From<AitwinTemplate> for TemplateName {
    fn from(t: AitwinTemplate) -> Self {
        match t {
            AitwinTemplate::Chat => TemplateName::Chat,
            AitwinTemplate::TaskTracking => TemplateName::TaskTracking,
            AitwinTemplate::Rephrase => TemplateName::RephraseTwinProxy,
            AitwinTemplate::ExplicitFeedback => TemplateName::ExplicitFeedback,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AitwinRmAnova {
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
    pub partial_eta_sq: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AitwinPairedT {
    pub t: f64,
    pub df: f64,
    /// Two-tailed.
    pub p: f64,
    pub d_z: f64,
    pub mean_diff: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AitwinMixedAnova {
    pub interaction_f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AitwinScores {
    pub emotional: f64,
    pub cognitive: f64,
    pub behavioral: f64,
}

/// Opaque dialogue under construction.
pub struct AitwinDialogue {
    inner: DialogueTranscript,
}

struct Failure {
    status: AitwinStatus,
    message: String,
}

impl Failure {
    fn new(status: AitwinStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Self::new(AitwinStatus::NullPointer, format!("{what} is NULL"))
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        let status = match e {
            StatsError::DegenerateData => AitwinStatus::DegenerateData,
            _ => AitwinStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        let status = match e {
            StudyError::Csv { .. } => AitwinStatus::ParseError,
            _ => AitwinStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<TaskParseError> for Failure {
    fn from(e: TaskParseError) -> Self {
        let status = match e {
            TaskParseError::ParseError(_) => AitwinStatus::ParseError,
            TaskParseError::SchemaError(_) => AitwinStatus::SchemaError,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<PromptError> for Failure {
    fn from(e: PromptError) -> Self {
        Failure::new(AitwinStatus::InvalidArgument, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Runs `f`, records any failure and converts panics into [`AitwinStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AitwinStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AitwinStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            AitwinStatus::Panic
        }
    }
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(AitwinStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(AitwinStatus::InvalidArgument, "output contains a NUL byte"))
}

unsafe fn matrix_arg(values: *const f64, n_subjects: usize, n_conditions: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let len = n_subjects
        .checked_mul(n_conditions)
        .ok_or_else(|| Failure::new(AitwinStatus::InvalidArgument, "matrix size overflows"))?;
    let flat = slice_arg(values, len, "values")?;
    if n_conditions == 0 {
        return Ok(vec![Vec::new(); n_subjects]);
    }
    Ok(flat.chunks(n_conditions).map(<[f64]>::to_vec).collect())
}

/// Message for the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn aitwin_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn aitwin_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn aitwin_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// Statistics.

/// One-way repeated-measures ANOVA over a row-major
/// `n_subjects x n_conditions` matrix.
///
/// # Safety
/// `values` must point to `n_subjects * n_conditions` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_rm_anova(
    values: *const f64,
    n_subjects: usize,
    n_conditions: usize,
    out: *mut AitwinRmAnova,
) -> AitwinStatus {
    guard(|| {
        let m = matrix_arg(values, n_subjects, n_conditions)?;
        let r = stats::rm_anova(&m)?;
        write_out(
            out,
            AitwinRmAnova {
                f: r.f,
                df1: r.df1,
                df2: r.df2,
                p: r.p,
                partial_eta_sq: r.partial_eta_sq,
            },
            "out",
        )
    })
}

/// Paired t-test of `a` against `b`, both of length `n`.
///
/// # Safety
/// `a` and `b` must each point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_paired_t(
    a: *const f64,
    b: *const f64,
    n: usize,
    out: *mut AitwinPairedT,
) -> AitwinStatus {
    guard(|| {
        let a = slice_arg(a, n, "a")?;
        let b = slice_arg(b, n, "b")?;
        let r = stats::paired_t(a, b)?;
        write_out(
            out,
            AitwinPairedT {
                t: r.t,
                df: r.df,
                p: r.p,
                d_z: r.d_z,
                mean_diff: r.mean_diff,
            },
            "out",
        )
    })
}

/// Condition x group interaction of a mixed ANOVA. `groups[i]` is the
/// between-subjects group of row `i`, numbered from 0.
///
/// # Safety
/// `values` must point to `n_subjects * n_conditions` doubles, `groups` to
/// `n_subjects` integers; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_mixed_anova(
    values: *const f64,
    groups: *const u32,
    n_subjects: usize,
    n_conditions: usize,
    out: *mut AitwinMixedAnova,
) -> AitwinStatus {
    guard(|| {
        let m = matrix_arg(values, n_subjects, n_conditions)?;
        let groups: Vec<usize> = slice_arg(groups, n_subjects, "groups")?
            .iter()
            .map(|&g| g as usize)
            .collect();
        let r = stats::mixed_anova(&m, &groups)?;
        write_out(
            out,
            AitwinMixedAnova {
                interaction_f: r.interaction_f,
                df1: r.df1,
                df2: r.df2,
                p: r.p,
            },
            "out",
        )
    })
}

fn check_df(df: f64, what: &str) -> Result<(), Failure> {
    if df.is_finite() && df > 0.0 {
        Ok(())
    } else {
        Err(Failure::new(
            AitwinStatus::InvalidArgument,
            format!("{what} must be positive and finite"),
        ))
    }
}

/// Two-tailed p for a t statistic.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_tail_prob_t(t: f64, df: f64, out: *mut f64) -> AitwinStatus {
    guard(|| {
        check_df(df, "df")?;
        write_out(out, stats::tail_prob(t, Distribution::T { df }), "out")
    })
}

/// Upper-tail p for an F statistic.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_tail_prob_f(f: f64, df1: f64, df2: f64, out: *mut f64) -> AitwinStatus {
    guard(|| {
        check_df(df1, "df1")?;
        check_df(df2, "df2")?;
        write_out(out, stats::tail_prob(f, Distribution::F { df1, df2 }), "out")
    })
}

/// Partial eta squared from an F ratio and its degrees of freedom.
#[no_mangle]
pub extern "C" fn aitwin_eta_sq_from_f(f: f64, df1: f64, df2: f64) -> f64 {
    stats::eta_sq_from_f(f, df1, df2)
}

/// Full analysis report for a long-format study CSV, as text.
///
/// # Safety
/// `csv` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_analyze_csv(csv: *const c_char, out: *mut *mut c_char) -> AitwinStatus {
    guard(|| {
        let text = str_arg(csv, "csv")?;
        let matrices = LongTable::from_csv(text)?.to_matrices()?;
        let report = stats::analysis_report(&matrices, None)?;
        write_out(out, into_c_string(report.to_string())?, "out")
    })
}

// Survey.

/// Scores a 25-item response. `reverse_items` lists the 1-based items to
/// reverse-code; pass NULL to use the default set, or a non-NULL pointer
/// with `n_reverse == 0` for none.
///
/// # Safety
/// `answers` must point to `n_answers` integers, `reverse_items` (if not
/// NULL) to `n_reverse` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_score_survey(
    answers: *const i32,
    n_answers: usize,
    reverse_items: *const u8,
    n_reverse: usize,
    out: *mut AitwinScores,
) -> AitwinStatus {
    guard(|| {
        let answers: Vec<i64> = slice_arg(answers, n_answers, "answers")?
            .iter()
            .map(|&a| a as i64)
            .collect();
        let reverse: BTreeSet<u8> = if reverse_items.is_null() {
            study::default_reverse_set()
        } else {
            std::slice::from_raw_parts(reverse_items, n_reverse)
                .iter()
                .copied()
                .collect()
        };
        if let Some(bad) = reverse.iter().find(|&&i| i == 0 || i > study::ITEM_COUNT) {
            return Err(Failure::new(
                AitwinStatus::InvalidArgument,
                format!("reverse item {bad} is not a questionnaire item"),
            ));
        }
        let response = SurveyResponse::from_slice(aitwin_core::session::SessionId::new("ffi"), &answers)?;
        let s = study::score_survey(&response, &reverse)?;
        write_out(
            out,
            AitwinScores {
                emotional: s.emotional,
                cognitive: s.cognitive,
                behavioral: s.behavioral,
            },
            "out",
        )
    })
}

/// Maps a 1..6 Likert value `x` to `7 - x`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_reverse_code(value: i32, out: *mut u8) -> AitwinStatus {
    guard(|| write_out(out, study::reverse_code(value as i64)?, "out"))
}

// Study planning.

/// Counterbalanced plan for one participant, as JSON.
///
/// # Safety
/// `participant_id` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_make_plan_json(
    participant_id: *const c_char,
    seed: u64,
    out: *mut *mut c_char,
) -> AitwinStatus {
    guard(|| {
        let id = str_arg(participant_id, "participant_id")?;
        if id.trim().is_empty() {
            return Err(Failure::new(AitwinStatus::InvalidArgument, "participant_id is empty"));
        }
        let plan = study::make_plan(ParticipantId::new(id), seed);
        let json =
            serde_json::to_string(&plan).map_err(|e| Failure::new(AitwinStatus::InvalidArgument, e.to_string()))?;
        write_out(out, into_c_string(json)?, "out")
    })
}

// Prompts.

/// New empty dialogue. Release with [`aitwin_dialogue_free`].
#[no_mangle]
pub extern "C" fn aitwin_dialogue_new() -> *mut AitwinDialogue {
    Box::into_raw(Box::new(AitwinDialogue {
        inner: DialogueTranscript::default(),
    }))
}

/// # Safety
/// `dialogue` must come from [`aitwin_dialogue_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn aitwin_dialogue_free(dialogue: *mut AitwinDialogue) {
    if !dialogue.is_null() {
        drop(Box::from_raw(dialogue));
    }
}

/// Appends an entry.
///
/// # Safety
/// `dialogue` must be a live handle and `text` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn aitwin_dialogue_push(
    dialogue: *mut AitwinDialogue,
    speaker: AitwinSpeaker,
    text: *const c_char,
) -> AitwinStatus {
    guard(|| {
        let d = dialogue.as_mut().ok_or_else(|| Failure::null("dialogue"))?;
        let text = str_arg(text, "text")?;
        let speaker = match speaker {
            AitwinSpeaker::User => Speaker::User,
            AitwinSpeaker::Assistant => Speaker::Assistant,
        };
        d.inner.push(speaker, text);
        Ok(())
    })
}

/// Number of entries, or 0 for NULL.
///
/// # Safety
/// `dialogue` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aitwin_dialogue_len(dialogue: *const AitwinDialogue) -> usize {
    dialogue.as_ref().map_or(0, |d| d.inner.len())
}

/// The dialogue in prompt form, one `SPEAKER: text` line per entry.
///
/// # Safety
/// `dialogue` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_dialogue_serialize(
    dialogue: *const AitwinDialogue,
    out: *mut *mut c_char,
) -> AitwinStatus {
    guard(|| {
        let d = dialogue.as_ref().ok_or_else(|| Failure::null("dialogue"))?;
        write_out(out, into_c_string(serialize_dialogue(&d.inner))?, "out")
    })
}

/// Renders a template over `dialogue`. Chat and task tracking need
/// `scenario_id` (for example `"task-1"`); the other two ignore it.
///
/// # Safety
/// `dialogue` must be a live handle, `scenario_id` NULL or a NUL-terminated
/// string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_render_prompt(
    template: AitwinTemplate,
    scenario_id: *const c_char,
    dialogue: *const AitwinDialogue,
    out: *mut *mut c_char,
) -> AitwinStatus {
    guard(|| {
        let d = &dialogue.as_ref().ok_or_else(|| Failure::null("dialogue"))?.inner;
        let mission = || -> Result<_, Failure> {
            let id = str_arg(scenario_id, "scenario_id")?;
            let registry = ScenarioRegistry::builtin();
            let scenario = registry
                .get(id)
                .map_err(|e| Failure::new(AitwinStatus::NotFound, e.to_string()))?;
            Ok(scenario.mission())
        };
        let text = match template {
            AitwinTemplate::Chat => render_chat_prompt(&mission()?, d)?,
            AitwinTemplate::TaskTracking => render_task_tracking_prompt(&mission()?, d),
            AitwinTemplate::Rephrase => render_rephrase_prompt(d)?,
            AitwinTemplate::ExplicitFeedback => render_explicit_feedback_prompt(d)?,
        };
        write_out(out, into_c_string(text)?, "out")
    })
}

/// Hex SHA-256 of a template body.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_template_digest(template: AitwinTemplate, out: *mut *mut c_char) -> AitwinStatus {
    guard(|| {
        write_out(
            out,
            into_c_string(PromptTemplate::get(template.into()).digest())?,
            "out",
        )
    })
}

/// Validates goal-tracking output and returns it normalized as
/// `{"task_results": [...]}`, sorted by goal number. `strict` rejects
/// markdown code fences around the object.
///
/// # Safety
/// `raw` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aitwin_parse_task_results(
    raw: *const c_char,
    strict: bool,
    out: *mut *mut c_char,
) -> AitwinStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        let strictness = if strict {
            Strictness::Strict
        } else {
            Strictness::Lenient
        };
        let goals = parse_task_results_with(raw, strictness)?;
        write_out(out, into_c_string(task_results_json(&goals))?, "out")
    })
}
