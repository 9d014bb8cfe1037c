//! Independent oracles and generators shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aitwin_core::pipeline::{Pipeline, PipelineConfig};
use aitwin_core::prompt::{Speaker, TemplateName};
use aitwin_core::provider::mock::{self, Call, CallLog, MockVoiceLab, Recorded, ScriptedAsr, ScriptedLlm, PROXY_VOICE};
use aitwin_core::provider::{Gateway, RetryPolicy};
use aitwin_core::scenario::ScenarioRegistry;
use aitwin_core::session::{
    AudioRef, FeedbackMode, GoalState, Participant, ParticipantId, Phase, Session, SessionId, SessionMeta, Turn,
    VoiceProfile,
};
use aitwin_core::store::{AppState, EventKind};
use aitwin_core::study::SurveyResponse;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixed_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 14, 9, 0, 0).unwrap()
}

// ---------------------------------------------------------------------------
// Statistics oracles. Sums of squares by subtraction from the total, not by
// residuals, so they share no arithmetic path with the library.

fn avg(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// (F, df1, df2) for a one-way repeated-measures design.
pub fn oracle_rm_f(m: &[Vec<f64>]) -> (f64, f64, f64) {
    let n = m.len();
    let k = m[0].len();
    let grand = avg(m.iter().flatten().copied());
    let ss_total: f64 = m.iter().flatten().map(|x| (x - grand).powi(2)).sum();
    let ss_subjects: f64 = m
        .iter()
        .map(|r| k as f64 * (avg(r.iter().copied()) - grand).powi(2))
        .sum();
    let ss_cond: f64 = (0..k)
        .map(|j| n as f64 * (avg(m.iter().map(|r| r[j])) - grand).powi(2))
        .sum();
    let ss_err = ss_total - ss_subjects - ss_cond;
    let df1 = (k - 1) as f64;
    let df2 = ((k - 1) * (n - 1)) as f64;
    ((ss_cond / df1) / (ss_err / df2), df1, df2)
}

/// Paired t by the computational (sum of squares) formula.
pub fn oracle_paired_t(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s: f64 = d.iter().sum();
    let s2: f64 = d.iter().map(|x| x * x).sum();
    let var = (s2 - s * s / n) / (n - 1.0);
    (s / n) / (var / n).sqrt()
}

/// (F, df1, df2) of the condition x group interaction, from the cell-means
/// decomposition of a split-plot design.
#[allow(clippy::needless_range_loop)]
pub fn oracle_mixed_f(m: &[Vec<f64>], groups: &[usize]) -> (f64, f64, f64) {
    let n = m.len();
    let k = m[0].len();
    let g = groups.iter().max().unwrap() + 1;
    let grand = avg(m.iter().flatten().copied());
    let rows_of = |label: usize| (0..n).filter(move |&i| groups[i] == label);

    let ss_within: f64 = m
        .iter()
        .map(|r| {
            let mr = avg(r.iter().copied());
            r.iter().map(|x| (x - mr).powi(2)).sum::<f64>()
        })
        .sum();
    let ss_cond: f64 = (0..k)
        .map(|j| n as f64 * (avg(m.iter().map(|r| r[j])) - grand).powi(2))
        .sum();
    let mut ss_cells = 0.0;
    let mut ss_group = 0.0;
    for label in 0..g {
        let ng = rows_of(label).count() as f64;
        let mg = avg(rows_of(label).flat_map(|i| m[i].iter().copied()));
        ss_group += k as f64 * ng * (mg - grand).powi(2);
        for j in 0..k {
            let mgj = avg(rows_of(label).map(|i| m[i][j]));
            ss_cells += ng * (mgj - grand).powi(2);
        }
    }
    let ss_int = ss_cells - ss_group - ss_cond;
    let ss_err = ss_within - ss_cond - ss_int;
    let df1 = ((k - 1) * (g - 1)) as f64;
    let df2 = ((k - 1) * (n - g)) as f64;
    ((ss_int / df1) / (ss_err / df2), df1, df2)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let subject = rng.random_range(-1.5..1.5);
            (0..k).map(|_| 3.5 + subject + rng.random_range(-2.0..2.0)).collect()
        })
        .collect()
}

/// Two non-empty groups.
pub fn random_groups(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut g: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    g[0] = 0;
    g[n - 1] = 1;
    g
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

// ---------------------------------------------------------------------------
// Numeric integration oracle for tail probabilities.

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive(f, a, b, fa, fm, fb, whole, 1e-15, 60)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

/// Two-tailed t probability for integer df. With x = sqrt(df) tan(theta) the
/// t density becomes cos^(df-1)(theta) on (-pi/2, pi/2).
pub fn quad_t_two_tailed(t: f64, df: u32) -> f64 {
    let power = df as i32 - 1;
    let f = move |th: f64| th.cos().powi(power);
    let theta0 = (t.abs() / (df as f64).sqrt()).atan();
    let half = std::f64::consts::FRAC_PI_2;
    simpson(&f, theta0, half) / simpson(&f, 0.0, half)
}

/// Upper-tail F probability for integer dfs, as a regularized incomplete
/// beta integral. Both halves of [0, 1] are mapped through u = s^2 (or
/// 1 - u = s^2) so the endpoint singularities become integer powers.
pub fn quad_f_upper(f_stat: f64, df1: u32, df2: u32) -> f64 {
    let a = df2 as f64 / 2.0;
    let b = df1 as f64 / 2.0;
    let x = df2 as f64 / (df2 as f64 + df1 as f64 * f_stat);
    let lower = move |s: f64| 2.0 * s.powi(df2 as i32 - 1) * (1.0 - s * s).powf(b - 1.0);
    let upper = move |s: f64| 2.0 * s.powi(df1 as i32 - 1) * (1.0 - s * s).powf(a - 1.0);
    let r = 0.5f64.sqrt();
    let total = simpson(&lower, 0.0, r) + simpson(&upper, 0.0, r);
    let part = if x <= 0.5 {
        simpson(&lower, 0.0, x.sqrt())
    } else {
        simpson(&lower, 0.0, r) + simpson(&upper, (1.0 - x).sqrt(), r)
    };
    part / total
}

/// (statistic, df) for t and (statistic, df1, df2) for F: 50 points each.
pub type TailGrid = (Vec<(f64, u32)>, Vec<(f64, u32, u32)>);

pub fn tail_grid() -> TailGrid {
    let t_dfs = [1, 2, 3, 5, 8, 10, 19, 20, 38, 60];
    let t_stats = [0.3, 1.0, 2.086, 3.5, 6.0];
    let f_dfs = [
        (1, 1),
        (1, 5),
        (2, 10),
        (2, 36),
        (2, 38),
        (3, 30),
        (4, 60),
        (5, 5),
        (1, 19),
        (2, 48),
    ];
    let f_stats = [0.2, 1.0, 2.5, 4.0, 10.0];
    let t = t_dfs
        .iter()
        .flat_map(|&df| t_stats.iter().map(move |&s| (s, df)))
        .collect();
    let f = f_dfs
        .iter()
        .flat_map(|&(d1, d2)| f_stats.iter().map(move |&s| (s, d1, d2)))
        .collect();
    (t, f)
}

/// Published two-tailed t critical values: (t, df, alpha).
pub const T_CRITICAL: [(f64, f64, f64); 9] = [
    (12.706, 1.0, 0.05),
    (4.303, 2.0, 0.05),
    (2.571, 5.0, 0.05),
    (2.228, 10.0, 0.05),
    (2.086, 20.0, 0.05),
    (2.042, 30.0, 0.05),
    (2.000, 60.0, 0.05),
    (3.169, 10.0, 0.01),
    (2.845, 20.0, 0.01),
];

/// Published upper-tail F critical values: (F, df1, df2, alpha).
pub const F_CRITICAL: [(f64, f64, f64, f64); 8] = [
    (161.448, 1.0, 1.0, 0.05),
    (4.965, 1.0, 10.0, 0.05),
    (3.493, 2.0, 20.0, 0.05),
    (2.922, 3.0, 30.0, 0.05),
    (3.245, 2.0, 38.0, 0.05),
    (2.525, 4.0, 60.0, 0.05),
    (10.044, 1.0, 10.0, 0.01),
    (5.849, 2.0, 20.0, 0.01),
];

// ---------------------------------------------------------------------------
// Survey oracle: item-by-item, the way a spreadsheet would do it.

pub fn spreadsheet_scores(answers: &[u8; 25], reverse: &[u8]) -> (f64, f64, f64) {
    let mut coded = [0u32; 25];
    for (i, &a) in answers.iter().enumerate() {
        let item = i as u8 + 1;
        coded[i] = if reverse.contains(&item) {
            7 - a as u32
        } else {
            a as u32
        };
    }
    let col = |from: usize, to: usize| {
        let cells = &coded[from - 1..to];
        cells.iter().sum::<u32>() as f64 / cells.len() as f64
    };
    (col(1, 13), col(14, 20), col(21, 25))
}

// ---------------------------------------------------------------------------
// Random valid event sequences.

const WORDS: [&str; 16] = [
    "table",
    "saturday",
    "please",
    "friend",
    "parking",
    "room",
    "cake",
    "seven",
    "menu",
    "price",
    "sofa",
    "movie",
    "hotel",
    "window",
    "tonight",
    "vegetarian",
];

fn sentence(rng: &mut ChaCha8Rng, tag: usize) -> String {
    let n = rng.random_range(2..7);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    format!("{} {tag}", words.join(" "))
}

fn random_turn(rng: &mut ChaCha8Rng, session: &Session, tag: usize) -> Turn {
    let transcript = sentence(rng, tag);
    let audio = |rng: &mut ChaCha8Rng| AudioRef::new(format!("{:064x}", rng.random::<u128>()));
    let (delivered, delivered_audio, grounding) = if session.mode.is_rephrasing() {
        let rephrased = format!("{transcript}, please");
        (rephrased.clone(), Some(audio(rng)), rephrased)
    } else {
        (
            format!("<strong>{transcript}</strong> is fine"),
            None,
            transcript.clone(),
        )
    };
    Turn {
        index: session.turns.len() as u32,
        learner_transcript: Some(transcript),
        delivered_text: Some(delivered),
        delivered_audio,
        interlocutor_text: sentence(rng, tag + 1),
        interlocutor_audio: Some(audio(rng)),
        grounding_text: Some(grounding),
    }
}

/// A sequence of events that the store accepts in order. Every candidate is
/// checked against a scratch state, so the sequence is valid by construction.
pub fn random_valid_events(seed: u64, target: usize) -> Vec<EventKind> {
    let mut rng = rng(seed);
    let registry = ScenarioRegistry::builtin();
    let mut state = AppState::default();
    let mut events = Vec::new();
    let mut counter = 0usize;
    let mut attempts = 0;
    while events.len() < target && attempts < target * 20 {
        attempts += 1;
        counter += 1;
        let participants: Vec<Participant> = state.participants.values().cloned().collect();
        let sessions: Vec<Session> = state.sessions.values().cloned().collect();
        let candidate = match rng.random_range(0..100) {
            0..12 => Some(EventKind::ParticipantCreated {
                participant: Participant::new(ParticipantId::new(format!("P{counter:03}")), "ko"),
            }),
            12..22 => participants.choose(&mut rng).map(|p| EventKind::VoiceRegistered {
                participant_id: p.id.clone(),
                profile: VoiceProfile::new(format!("clone-{counter:016x}"), rng.random_range(10.0..60.0), "ko"),
            }),
            22..36 => participants.choose(&mut rng).and_then(|p| {
                let mode = *FeedbackMode::ALL.choose(&mut rng).unwrap();
                let scenario = registry.all().choose(&mut rng).unwrap();
                let meta = SessionMeta {
                    id: SessionId::new(format!("S{counter:04}")),
                    created_at: fixed_time() + Duration::minutes(counter as i64),
                    max_turns: rng.random_range(3..8),
                };
                let session = Session::create(p, mode, &scenario.id, &registry, meta).ok()?;
                Some(EventKind::SessionCreated {
                    session: session.with_opening_audio(AudioRef::new(format!("{counter:064x}"))),
                })
            }),
            36..70 => {
                let open: Vec<&Session> = sessions
                    .iter()
                    .filter(|s| s.phase == Phase::Conversing && !s.is_complete())
                    .collect();
                open.choose(&mut rng).map(|s| {
                    let mut goal_updates = Vec::new();
                    for n in 1..=4u8 {
                        if rng.random_bool(0.3) {
                            goal_updates.push(GoalState::new(n, rng.random_bool(0.6)));
                        }
                    }
                    EventKind::TurnCompleted {
                        session_id: s.id.clone(),
                        turn: random_turn(&mut rng, s, counter),
                        goal_updates,
                    }
                })
            }
            70..80 => sessions
                .iter()
                .filter(|s| s.phase == Phase::Conversing)
                .collect::<Vec<_>>()
                .choose(&mut rng)
                .map(|s| EventKind::PhaseAdvanced {
                    session_id: s.id.clone(),
                    to: Phase::Survey,
                }),
            80..90 => sessions
                .iter()
                .filter(|s| s.phase == Phase::Survey && !state.surveys.contains_key(&s.id))
                .collect::<Vec<_>>()
                .choose(&mut rng)
                .map(|s| {
                    let answers: Vec<i64> = (0..25).map(|_| rng.random_range(1..=6)).collect();
                    EventKind::SurveySubmitted {
                        response: SurveyResponse::from_slice(s.id.clone(), &answers).unwrap(),
                    }
                }),
            90..97 => sessions
                .iter()
                .filter(|s| s.phase == Phase::Survey && state.surveys.contains_key(&s.id))
                .collect::<Vec<_>>()
                .choose(&mut rng)
                .map(|s| EventKind::PhaseAdvanced {
                    session_id: s.id.clone(),
                    to: Phase::Done,
                }),
            _ => participants.choose(&mut rng).map(|p| EventKind::ParticipantDeleted {
                participant_id: p.id.clone(),
            }),
        };
        if let Some(kind) = candidate {
            let mut next = state.clone();
            if next.apply(&kind).is_ok() {
                state = next;
                events.push(kind);
            }
        }
    }
    events
}

// ---------------------------------------------------------------------------
// Grounding harness: randomized mock turns with every provider call captured.

#[derive(Debug, Default)]
pub struct GroundingReport {
    pub turns: usize,
    pub violations: Vec<String>,
}

pub fn grounding_run(mode: FeedbackMode, turns: usize, seed: u64) -> GroundingReport {
    let mut rng = rng(seed);
    let mut asr = ScriptedAsr::new();
    let mut llm = ScriptedLlm::new();
    let mut clips = Vec::new();
    for i in 0..turns {
        let utterance = sentence(&mut rng, i);
        // Roughly a third of utterances come back unchanged from the rephraser.
        if rng.random_bool(0.66) {
            llm.rephrasings
                .insert(utterance.clone(), format!("Could I ask about the {utterance}?"));
        }
        clips.push((utterance.clone(), asr.register(&utterance)));
    }
    let log = CallLog::new();
    let lab = Arc::new(MockVoiceLab::default());
    let gateway = Gateway::new(
        Arc::new(asr),
        Arc::new(Recorded::new(llm.clone(), log.clone())),
        Arc::new(Recorded::new(lab.clone(), log.clone())),
        lab,
    )
    .with_retry_policy(RetryPolicy::immediate(1));
    let registry = ScenarioRegistry::builtin();
    let pipeline = Pipeline::new(gateway, PipelineConfig::default(), registry.clone());

    let participant = Participant::new(ParticipantId::new("G01"), "ko");
    let sample = mock::voice_sample(30.0, seed);
    let (participant, profile) = pipeline.register_voice(&participant, &sample, None).unwrap();

    let mut report = GroundingReport::default();
    let mut session: Option<Session> = None;
    let mut n_session = 0;
    for (utterance, clip) in clips {
        if session.as_ref().is_none_or(|s| s.is_complete()) {
            n_session += 1;
            let scenario = registry.all().choose(&mut rng).unwrap().id.clone();
            let meta = SessionMeta {
                id: SessionId::new(format!("G-{n_session}")),
                created_at: fixed_time(),
                max_turns: 20,
            };
            session = Some(pipeline.open_session(&participant, mode, &scenario, meta).unwrap().0);
        }
        let current = session.take().unwrap();
        log.clear();
        let outcome = pipeline.run_turn(&current, &participant, &clip).unwrap();
        let calls = log.take();
        report.turns += 1;
        let mut fail = |why: String| report.violations.push(format!("turn {}: {why}", report.turns));

        let expected = if mode.is_rephrasing() {
            llm.rephrase(&utterance)
        } else {
            utterance.clone()
        };
        let chats: Vec<_> = calls
            .iter()
            .filter_map(|c| match c {
                Call::Generate(r) if r.template == TemplateName::Chat => Some(r),
                _ => None,
            })
            .collect();
        if chats.len() != 1 {
            fail(format!("{} chat prompts", chats.len()));
        }
        for chat in &chats {
            let last = chat.dialogue.entries().last();
            if last.map(|e| (e.speaker, e.text.as_str())) != Some((Speaker::User, expected.as_str())) {
                fail(format!("chat dialogue ends with {last:?}, expected {expected:?}"));
            }
            let last_user_line = chat.system_prompt.lines().rev().find(|l| l.starts_with("USER: "));
            if last_user_line != Some(format!("USER: {expected}").as_str()) {
                fail(format!("rendered chat prompt's last USER line is {last_user_line:?}"));
            }
        }
        if outcome.turn.grounding_text.as_deref() != Some(expected.as_str()) {
            fail("stored grounding text differs".into());
        }
        if outcome.turn.delivered_audio.is_some() != mode.is_rephrasing() {
            fail(format!(
                "delivered audio present = {}",
                outcome.turn.delivered_audio.is_some()
            ));
        }

        let synths: Vec<_> = calls
            .iter()
            .filter_map(|c| match c {
                Call::Synthesize(r) => Some(r),
                _ => None,
            })
            .collect();
        match mode {
            FeedbackMode::AiTwin => match synths.first() {
                Some(r)
                    if r.voice_id == profile.provider_voice_id
                        && r.speed == Some(0.9)
                        && r.stability == Some(0.85)
                        && r.text == expected => {}
                other => fail(format!("AI Twin delivery synthesized as {other:?}")),
            },
            FeedbackMode::AiProxy => match synths.first() {
                Some(r)
                    if r.voice_id == PROXY_VOICE
                        && r.speed.is_none()
                        && r.stability.is_none()
                        && r.text == expected => {}
                other => fail(format!("AI Proxy delivery synthesized as {other:?}")),
            },
            FeedbackMode::ExplicitFeedback => {
                if synths.len() != 1 {
                    fail(format!("{} synthesis calls in explicit feedback", synths.len()));
                }
            }
        }

        let next = current.apply_turn(outcome.turn, &outcome.goal_updates).unwrap();
        session = Some(next);
    }
    report
}

pub fn distinct<T: Ord + Clone>(xs: &[T]) -> BTreeSet<T> {
    xs.iter().cloned().collect()
}
