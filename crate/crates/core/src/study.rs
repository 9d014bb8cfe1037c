//! Within-subject study harness: condition plans, the engagement
//! questionnaire, scoring and CSV interchange.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::ScenarioRegistry;
use crate::session::{FeedbackMode, ParticipantId, SessionId};

pub const ITEM_COUNT: u8 = 25;
pub const LIKERT_MIN: u8 = 1;
pub const LIKERT_MAX: u8 = 6;
/// Negatively worded items, reverse coded before scoring.
pub const DEFAULT_REVERSE_SET: [u8; 7] = [5, 7, 9, 11, 13, 24, 25];
pub const CSV_HEADER: &str = "participant,condition,dim_or_item,value";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StudyError {
    #[error("value {value} is outside {LIKERT_MIN}..={LIKERT_MAX}")]
    OutOfRange { item: Option<u8>, value: i64 },
    #[error("survey is missing items {missing:?}")]
    IncompleteResponse { missing: Vec<u8> },
    #[error("unknown questionnaire item {0}")]
    UnknownItem(u8),
    #[error("no `{key}` value for participant {participant} in {condition}")]
    MissingCell {
        participant: String,
        condition: FeedbackMode,
        key: String,
    },
    #[error("duplicate `{key}` value for participant {participant} in {condition}")]
    DuplicateCell {
        participant: String,
        condition: FeedbackMode,
        key: String,
    },
    #[error("CSV line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

// ---------------------------------------------------------------------------
// Plans

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub participant_id: ParticipantId,
    pub condition_order: [FeedbackMode; 3],
    pub scenario_assignment: BTreeMap<FeedbackMode, String>,
    pub seed: u64,
}

impl StudyPlan {
    pub fn scenario_for(&self, mode: FeedbackMode) -> &str {
        &self.scenario_assignment[&mode]
    }

    /// Position of `mode` in this participant's order, 0-based.
    pub fn position(&self, mode: FeedbackMode) -> usize {
        self.condition_order
            .iter()
            .position(|&m| m == mode)
            .expect("condition order is a permutation")
    }

    /// Between-subjects order group used by the Condition × Order check:
    /// 0 when AI Twin came before AI Proxy, 1 otherwise.
    pub fn order_group(&self) -> usize {
        usize::from(self.position(FeedbackMode::AiTwin) > self.position(FeedbackMode::AiProxy))
    }

    /// Condition order as a short label such as `EF>AP>AT`.
    pub fn order_label(&self) -> String {
        self.condition_order
            .iter()
            .map(|m| match m {
                FeedbackMode::ExplicitFeedback => "EF",
                FeedbackMode::AiProxy => "AP",
                FeedbackMode::AiTwin => "AT",
            })
            .collect::<Vec<_>>()
            .join(">")
    }
}

/// Seeded plan over the builtin scenarios.
pub fn make_plan(participant_id: ParticipantId, seed: u64) -> StudyPlan {
    make_plan_with(participant_id, seed, &ScenarioRegistry::builtin())
}

/// Uniform condition order and three distinct scenarios, both drawn from
/// one ChaCha8 stream seeded with `seed`.
pub fn make_plan_with(participant_id: ParticipantId, seed: u64, registry: &ScenarioRegistry) -> StudyPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = FeedbackMode::ALL;
    order.shuffle(&mut rng);
    let scenarios = registry.assign_with(order.len(), &mut rng);
    StudyPlan {
        participant_id,
        condition_order: order,
        scenario_assignment: order.iter().copied().zip(scenarios).collect(),
        seed,
    }
}

/// `n` plans for participants `P01..`, each with a seed drawn from a master
/// stream so the whole cohort is reproducible from one seed.
pub fn make_cohort(n: usize, seed: u64) -> Vec<StudyPlan> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len().max(2);
    (1..=n)
        .map(|i| make_plan(ParticipantId::new(format!("P{i:0width$}")), master.next_u64()))
        .collect()
}

// ---------------------------------------------------------------------------
// Questionnaire

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Emotional,
    Cognitive,
    Behavioral,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Emotional, Dimension::Cognitive, Dimension::Behavioral];

    pub fn items(self) -> std::ops::RangeInclusive<u8> {
        match self {
            Dimension::Emotional => 1..=13,
            Dimension::Cognitive => 14..=20,
            Dimension::Behavioral => 21..=25,
        }
    }

    pub fn of_item(item: u8) -> Option<Dimension> {
        Dimension::ALL.into_iter().find(|d| d.items().contains(&item))
    }

    pub fn slug(self) -> &'static str {
        match self {
            Dimension::Emotional => "emotional",
            Dimension::Cognitive => "cognitive",
            Dimension::Behavioral => "behavioral",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Dimension::Emotional => "Emotional Engagement",
            Dimension::Cognitive => "Cognitive Engagement",
            Dimension::Behavioral => "Behavioral Engagement",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Item {
    pub number: u8,
    pub dimension: Dimension,
    pub text: &'static str,
    /// Instrument the item was adapted from.
    pub source: &'static str,
}

impl Item {
    /// Item wording with `[topic]` replaced by the session's scenario title.
    pub fn render(&self, topic: &str) -> String {
        self.text.replace("[topic]", topic)
    }
}

const fn item(number: u8, dimension: Dimension, text: &'static str, source: &'static str) -> Item {
    Item {
        number,
        dimension,
        text,
        source,
    }
}

use Dimension::{Behavioral as B, Cognitive as C, Emotional as E};

pub static ITEMS: [Item; ITEM_COUNT as usize] = [
    item(
        1,
        E,
        "Completing the exercises in this lesson gave me a satisfying feeling of accomplishment.",
        "IMMS 05S01",
    ),
    item(
        2,
        E,
        "I enjoyed this lesson so much that I would like to know more about this topic.",
        "IMMS 14S02",
    ),
    item(3, E, "I really enjoyed studying this lesson.", "IMMS 21S03"),
    item(
        4,
        E,
        "The way the feedback is presented in the sessions helped keep my attention.",
        "IMMS 17A06",
    ),
    item(5, E, "The session was not engaging and unappealing.", "IMMS 15A05"),
    item(
        6,
        E,
        "I didn't worry about making mistakes while using this learning system.",
        "FLCAS 2",
    ),
    item(
        7,
        E,
        "I felt nervous when I had to speak during this session.",
        "FLCAS 3",
    ),
    item(8, E, "It wouldn't bother me at all to do more.", "FLCAS 5"),
    item(9, E, "I got so nervous I forgot things I know.", "FLCAS 12"),
    item(10, E, "I felt confident using English during this session.", "FLCAS 18"),
    item(
        11,
        E,
        "I was afraid that the system is ready to correct every mistake I made.",
        "FLCAS 19",
    ),
    item(
        12,
        E,
        "I don't feel pressure to prepare very well when I responded.",
        "FLCAS 22",
    ),
    item(
        13,
        E,
        "I got nervous when the AI asked questions which I haven't prepared in advance.",
        "FLCAS 33",
    ),
    item(
        14,
        C,
        "I am confident I can talk about [topic] in a short English conversation.",
        "MSLQ 12",
    ),
    item(
        15,
        C,
        "I am certain I can use simple English phrases and sentences to describe [topic].",
        "MSLQ 29",
    ),
    item(
        16,
        C,
        "If I had to use this system or complete a similar task again, I expect to do well.",
        "MSLQ 21",
    ),
    item(
        17,
        C,
        "While learning new concepts, I tried to think of implications and practical applications.",
        "OCE 21",
    ),
    item(
        18,
        C,
        "I tried to organize the feedbacks in a way that made sense to me.",
        "OCE 22",
    ),
    item(
        19,
        C,
        "Within the session I made sure I understood the lesson content.",
        "OCE 26",
    ),
    item(
        20,
        C,
        "I tried to check what my errors were during the session.",
        "OCE 28",
    ),
    item(21, B, "I tried hard to do well.", "EvsD BE 1"),
    item(22, B, "I paid attention.", "EvsD BE 4"),
    item(23, B, "I participated very carefully.", "EvsD BE 1"),
    item(24, B, "I thought about other things during the session.", "EvsD BD 4"),
    item(25, B, "I did just enough to complete the given tasks.", "EvsD BD 3"),
];

pub fn default_reverse_set() -> BTreeSet<u8> {
    DEFAULT_REVERSE_SET.into_iter().collect()
}

fn check_likert(item: Option<u8>, value: i64) -> Result<u8, StudyError> {
    if (LIKERT_MIN as i64..=LIKERT_MAX as i64).contains(&value) {
        Ok(value as u8)
    } else {
        Err(StudyError::OutOfRange { item, value })
    }
}

/// `7 - x` on the 6-point scale.
pub fn reverse_code(value: i64) -> Result<u8, StudyError> {
    let v = check_likert(None, value)?;
    Ok(LIKERT_MIN + LIKERT_MAX - v)
}

/// A complete questionnaire for one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSurvey", into = "RawSurvey")]
pub struct SurveyResponse {
    pub session_id: SessionId,
    answers: [u8; ITEM_COUNT as usize],
}

#[derive(Serialize, Deserialize)]
struct RawSurvey {
    session_id: SessionId,
    answers: Vec<i64>,
}

impl TryFrom<RawSurvey> for SurveyResponse {
    type Error = StudyError;

    fn try_from(raw: RawSurvey) -> Result<Self, StudyError> {
        SurveyResponse::from_slice(raw.session_id, &raw.answers)
    }
}

impl From<SurveyResponse> for RawSurvey {
    fn from(r: SurveyResponse) -> Self {
        RawSurvey {
            session_id: r.session_id,
            answers: r.answers.iter().map(|&v| v as i64).collect(),
        }
    }
}

impl SurveyResponse {
    /// `answers[i]` is the answer to item `i + 1`.
    pub fn from_slice(session_id: SessionId, answers: &[i64]) -> Result<Self, StudyError> {
        if answers.len() < ITEM_COUNT as usize {
            return Err(StudyError::IncompleteResponse {
                missing: ((answers.len() as u8 + 1)..=ITEM_COUNT).collect(),
            });
        }
        if answers.len() > ITEM_COUNT as usize {
            return Err(StudyError::UnknownItem(answers.len() as u8));
        }
        let mut out = [0u8; ITEM_COUNT as usize];
        for (i, &v) in answers.iter().enumerate() {
            out[i] = check_likert(Some(i as u8 + 1), v)?;
        }
        Ok(Self {
            session_id,
            answers: out,
        })
    }

    /// Builds a response from item-number keyed answers.
    pub fn from_map(session_id: SessionId, answers: &BTreeMap<u8, i64>) -> Result<Self, StudyError> {
        if let Some(&bad) = answers.keys().find(|&&k| k == 0 || k > ITEM_COUNT) {
            return Err(StudyError::UnknownItem(bad));
        }
        let missing: Vec<u8> = (1..=ITEM_COUNT).filter(|k| !answers.contains_key(k)).collect();
        if !missing.is_empty() {
            return Err(StudyError::IncompleteResponse { missing });
        }
        let values: Vec<i64> = answers.values().copied().collect();
        Self::from_slice(session_id, &values)
    }

    pub fn answer(&self, item: u8) -> Option<u8> {
        item.checked_sub(1).and_then(|i| self.answers.get(i as usize)).copied()
    }

    pub fn answers(&self) -> &[u8; ITEM_COUNT as usize] {
        &self.answers
    }

    /// Answers after reverse coding the items in `reverse_set`.
    pub fn coded(&self, reverse_set: &BTreeSet<u8>) -> [u8; ITEM_COUNT as usize] {
        let mut out = self.answers;
        for (i, v) in out.iter_mut().enumerate() {
            if reverse_set.contains(&(i as u8 + 1)) {
                *v = LIKERT_MIN + LIKERT_MAX - *v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngagementScores {
    pub emotional: f64,
    pub cognitive: f64,
    pub behavioral: f64,
}

impl EngagementScores {
    pub fn get(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::Emotional => self.emotional,
            Dimension::Cognitive => self.cognitive,
            Dimension::Behavioral => self.behavioral,
        }
    }
}

/// Reverse codes, then averages each dimension's item block.
pub fn score_survey(response: &SurveyResponse, reverse_set: &BTreeSet<u8>) -> Result<EngagementScores, StudyError> {
    if let Some(&bad) = reverse_set.iter().find(|&&k| k == 0 || k > ITEM_COUNT) {
        return Err(StudyError::UnknownItem(bad));
    }
    let coded = response.coded(reverse_set);
    let mean = |d: Dimension| {
        let items = d.items();
        let n = items.clone().count() as f64;
        items.map(|i| f64::from(coded[i as usize - 1])).sum::<f64>() / n
    };
    Ok(EngagementScores {
        emotional: mean(Dimension::Emotional),
        cognitive: mean(Dimension::Cognitive),
        behavioral: mean(Dimension::Behavioral),
    })
}

// ---------------------------------------------------------------------------
// Export

/// One submitted survey with the context needed to place it in a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyRecord {
    pub participant: String,
    pub condition: FeedbackMode,
    pub response: SurveyResponse,
}

/// Column key in the long CSV: a dimension slug or `item01`..`item25`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SeriesKey {
    Dimension(Dimension),
    Item(u8),
}

impl SeriesKey {
    /// Dimensions first, then items in order.
    pub fn all() -> Vec<SeriesKey> {
        Dimension::ALL
            .into_iter()
            .map(SeriesKey::Dimension)
            .chain((1..=ITEM_COUNT).map(SeriesKey::Item))
            .collect()
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeriesKey::Dimension(d) => f.write_str(d.slug()),
            SeriesKey::Item(i) => write!(f, "item{i:02}"),
        }
    }
}

impl FromStr for SeriesKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(d) = Dimension::ALL.into_iter().find(|d| d.slug() == s) {
            return Ok(SeriesKey::Dimension(d));
        }
        s.strip_prefix("item")
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|n| (1..=ITEM_COUNT).contains(n))
            .map(SeriesKey::Item)
            .ok_or_else(|| format!("unknown dim_or_item `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongRow {
    pub participant: String,
    pub condition: FeedbackMode,
    pub key: SeriesKey,
    pub value: f64,
}

/// Long-format study data in canonical order: participant, then condition
/// column, then dimensions before items.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LongTable {
    pub rows: Vec<LongRow>,
}

impl LongTable {
    /// Subscale means and reverse-coded item values for every record.
    pub fn from_records(records: &[SurveyRecord], reverse_set: &BTreeSet<u8>) -> Result<Self, StudyError> {
        let mut rows = Vec::with_capacity(records.len() * 28);
        for r in records {
            let scores = score_survey(&r.response, reverse_set)?;
            let coded = r.response.coded(reverse_set);
            for key in SeriesKey::all() {
                let value = match key {
                    SeriesKey::Dimension(d) => scores.get(d),
                    SeriesKey::Item(i) => f64::from(coded[i as usize - 1]),
                };
                rows.push(LongRow {
                    participant: r.participant.clone(),
                    condition: r.condition,
                    key,
                    value,
                });
            }
        }
        let mut table = LongTable { rows };
        table.sort();
        Ok(table)
    }

    fn sort(&mut self) {
        self.rows
            .sort_by(|a, b| (&a.participant, a.condition, a.key).cmp(&(&b.participant, b.condition, b.key)));
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(CSV_HEADER.split(',')).expect("in-memory CSV");
        for r in &self.rows {
            w.write_record([
                r.participant.as_str(),
                r.condition.slug(),
                &r.key.to_string(),
                &r.value.to_string(),
            ])
            .expect("in-memory CSV");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, StudyError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| StudyError::Csv {
            line: 1,
            reason: e.to_string(),
        })?;
        if header.iter().collect::<Vec<_>>() != CSV_HEADER.split(',').collect::<Vec<_>>() {
            return Err(StudyError::Csv {
                line: 1,
                reason: format!("expected header `{CSV_HEADER}`"),
            });
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let bad = |reason: String| StudyError::Csv { line, reason };
            let record = record.map_err(|e| bad(e.to_string()))?;
            if record.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", record.len())));
            }
            rows.push(LongRow {
                participant: record[0].to_string(),
                condition: record[1].parse().map_err(bad)?,
                key: record[2].parse().map_err(bad)?,
                value: record[3]
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("bad value `{}`", &record[3])))?,
            });
        }
        let mut table = LongTable { rows };
        table.sort();
        Ok(table)
    }

    pub fn to_matrices(&self) -> Result<StudyMatrices, StudyError> {
        let participants: BTreeSet<&str> = self.rows.iter().map(|r| r.participant.as_str()).collect();
        let participants: Vec<String> = participants.into_iter().map(str::to_string).collect();
        let keys: BTreeSet<SeriesKey> = self.rows.iter().map(|r| r.key).collect();
        let row_of: BTreeMap<&str, usize> = participants.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();

        let mut series: BTreeMap<SeriesKey, Vec<Vec<Option<f64>>>> = keys
            .iter()
            .map(|&k| (k, vec![vec![None; FeedbackMode::ALL.len()]; participants.len()]))
            .collect();
        for r in &self.rows {
            let cell = &mut series.get_mut(&r.key).expect("key collected")[row_of[r.participant.as_str()]]
                [r.condition.column()];
            if cell.is_some() {
                return Err(StudyError::DuplicateCell {
                    participant: r.participant.clone(),
                    condition: r.condition,
                    key: r.key.to_string(),
                });
            }
            *cell = Some(r.value);
        }
        let mut out = BTreeMap::new();
        for (key, rows) in series {
            let mut matrix = Vec::with_capacity(rows.len());
            for (p, row) in rows.into_iter().enumerate() {
                let mut values = Vec::with_capacity(row.len());
                for (c, v) in row.into_iter().enumerate() {
                    values.push(v.ok_or_else(|| StudyError::MissingCell {
                        participant: participants[p].clone(),
                        condition: FeedbackMode::ALL[c],
                        key: key.to_string(),
                    })?);
                }
                matrix.push(values);
            }
            out.insert(key, matrix);
        }
        Ok(StudyMatrices {
            participants,
            series: out,
        })
    }
}

/// Participant × condition matrices, rows sorted by participant id and
/// columns in [`FeedbackMode::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyMatrices {
    pub participants: Vec<String>,
    pub series: BTreeMap<SeriesKey, Vec<Vec<f64>>>,
}

impl StudyMatrices {
    pub fn get(&self, key: SeriesKey) -> Option<&[Vec<f64>]> {
        self.series.get(&key).map(Vec::as_slice)
    }

    pub fn dimension(&self, dim: Dimension) -> Option<&[Vec<f64>]> {
        self.get(SeriesKey::Dimension(dim))
    }

    /// Back to long format; inverse of [`LongTable::to_matrices`].
    pub fn to_long(&self) -> LongTable {
        let mut rows = Vec::new();
        for (&key, matrix) in &self.series {
            for (p, values) in self.participants.iter().zip(matrix) {
                for (&condition, &value) in FeedbackMode::ALL.iter().zip(values) {
                    rows.push(LongRow {
                        participant: p.clone(),
                        condition,
                        key,
                        value,
                    });
                }
            }
        }
        let mut table = LongTable { rows };
        table.sort();
        table
    }

    /// Wide CSV for one series: `participant,explicit-feedback,ai-proxy,ai-twin`.
    pub fn to_wide_csv(&self, key: SeriesKey) -> Option<String> {
        let matrix = self.series.get(&key)?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["participant".to_string()];
        header.extend(FeedbackMode::ALL.iter().map(|m| m.slug().to_string()));
        w.write_record(&header).expect("in-memory CSV");
        for (p, values) in self.participants.iter().zip(matrix) {
            let mut rec = vec![p.clone()];
            rec.extend(values.iter().map(f64::to_string));
            w.write_record(&rec).expect("in-memory CSV");
        }
        Some(String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8"))
    }
}

/// Wide matrices for every dimension and item. Each participant must have
/// exactly one survey per condition.
pub fn export_matrix(records: &[SurveyRecord], reverse_set: &BTreeSet<u8>) -> Result<StudyMatrices, StudyError> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert((r.participant.as_str(), r.condition)) {
            return Err(StudyError::DuplicateCell {
                participant: r.participant.clone(),
                condition: r.condition,
                key: "survey".into(),
            });
        }
    }
    let participants: BTreeSet<&str> = records.iter().map(|r| r.participant.as_str()).collect();
    for p in participants {
        for mode in FeedbackMode::ALL {
            if !seen.contains(&(p, mode)) {
                return Err(StudyError::MissingCell {
                    participant: p.to_string(),
                    condition: mode,
                    key: "survey".into(),
                });
            }
        }
    }
    let mut m = LongTable::from_records(records, reverse_set)?.to_matrices()?;
    if records.is_empty() {
        m.series = SeriesKey::all().into_iter().map(|k| (k, Vec::new())).collect();
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn response(values: &[i64]) -> SurveyResponse {
        SurveyResponse::from_slice(SessionId::new("s"), values).unwrap()
    }

    #[test]
    fn reverse_code_examples() {
        assert_eq!(reverse_code(1), Ok(6));
        assert_eq!(reverse_code(6), Ok(1));
        assert_eq!(reverse_code(4), Ok(3));
        assert!(matches!(reverse_code(0), Err(StudyError::OutOfRange { .. })));
        assert!(matches!(reverse_code(7), Err(StudyError::OutOfRange { .. })));
    }

    #[test]
    fn constant_responses() {
        let none = BTreeSet::new();
        let s = score_survey(&response(&[4; 25]), &none).unwrap();
        assert_eq!((s.emotional, s.cognitive, s.behavioral), (4.0, 4.0, 4.0));
        let all: BTreeSet<u8> = (1..=25).collect();
        let s = score_survey(&response(&[2; 25]), &all).unwrap();
        assert_eq!((s.emotional, s.cognitive, s.behavioral), (5.0, 5.0, 5.0));
    }

    #[test]
    fn fixed_vector_against_hand_totals() {
        // Emotional after coding items 5,7,9,11,13: 5+4+6+3+5+5+6+4+5+6+4+5+6 = 64.
        let v = [
            5, 4, 6, 3, 2, 5, 1, 4, 2, 6, 3, 5, 1, 4, 5, 3, 6, 2, 4, 5, 6, 3, 4, 2, 1,
        ];
        let s = score_survey(&response(&v), &default_reverse_set()).unwrap();
        assert_eq!(s.emotional, 64.0 / 13.0);
        assert_eq!(s.cognitive, 29.0 / 7.0);
        assert_eq!(s.behavioral, 24.0 / 5.0);
    }

    #[test]
    fn incomplete_and_out_of_range() {
        let err = SurveyResponse::from_slice(SessionId::new("s"), &[3; 24]).unwrap_err();
        assert_eq!(err, StudyError::IncompleteResponse { missing: vec![25] });
        let mut v = [3i64; 25];
        v[9] = 7;
        assert_eq!(
            SurveyResponse::from_slice(SessionId::new("s"), &v).unwrap_err(),
            StudyError::OutOfRange {
                item: Some(10),
                value: 7
            }
        );
        let mut map: BTreeMap<u8, i64> = (1..=25).map(|k| (k, 3)).collect();
        map.remove(&17);
        assert_eq!(
            SurveyResponse::from_map(SessionId::new("s"), &map).unwrap_err(),
            StudyError::IncompleteResponse { missing: vec![17] }
        );
    }

    #[test]
    fn survey_json_validates() {
        let ok: SurveyResponse =
            serde_json::from_str(&format!(r#"{{"session_id":"s","answers":{:?}}}"#, [2; 25])).unwrap();
        assert_eq!(ok.answer(25), Some(2));
        assert!(serde_json::from_str::<SurveyResponse>(r#"{"session_id":"s","answers":[1,2]}"#).is_err());
    }

    #[test]
    fn dimension_blocks() {
        let sizes: Vec<usize> = Dimension::ALL.iter().map(|d| d.items().count()).collect();
        assert_eq!(sizes, [13, 7, 5]);
        for it in &ITEMS {
            assert_eq!(Dimension::of_item(it.number), Some(it.dimension));
        }
        assert_eq!(
            ITEMS[13].render("Hotel Check-In"),
            "I am confident I can talk about Hotel Check-In in a short English conversation."
        );
    }

    #[test]
    fn plans_are_deterministic_permutations() {
        let a = make_plan(ParticipantId::new("P01"), 42);
        assert_eq!(a, make_plan(ParticipantId::new("P01"), 42));
        let modes: BTreeSet<_> = a.condition_order.iter().collect();
        assert_eq!(modes.len(), 3);
        let scenarios: BTreeSet<_> = a.scenario_assignment.values().collect();
        assert_eq!(scenarios.len(), 3);
        let cohort = make_cohort(20, 7);
        assert_eq!(cohort.len(), 20);
        assert_eq!(cohort[0].participant_id.as_str(), "P01");
        assert_eq!(cohort, make_cohort(20, 7));
    }

    fn records(n: usize) -> Vec<SurveyRecord> {
        let mut out = Vec::new();
        for p in 0..n {
            for (c, mode) in FeedbackMode::ALL.into_iter().enumerate() {
                let v: Vec<i64> = (0..25).map(|i| ((p + c + i) % 6 + 1) as i64).collect();
                out.push(SurveyRecord {
                    participant: format!("P{p:02}"),
                    condition: mode,
                    response: response(&v),
                });
            }
        }
        out
    }

    #[test]
    fn export_shape_and_round_trip() {
        let recs = records(20);
        let m = export_matrix(&recs, &default_reverse_set()).unwrap();
        let emo = m.dimension(Dimension::Emotional).unwrap();
        assert_eq!((emo.len(), emo[0].len()), (20, 3));

        let table = LongTable::from_records(&recs, &default_reverse_set()).unwrap();
        assert_eq!(table.rows.len(), 20 * 3 * 28);
        let csv = table.to_csv();
        assert!(csv.starts_with("participant,condition,dim_or_item,value\n"));
        let back = LongTable::from_csv(&csv).unwrap();
        assert_eq!(back.to_csv(), csv);
        assert_eq!(back.to_matrices().unwrap(), m);
        assert_eq!(m.to_long().to_csv(), csv);
    }

    #[test]
    fn missing_cell() {
        let mut recs = records(2);
        recs.retain(|r| !(r.participant == "P01" && r.condition == FeedbackMode::AiProxy));
        assert!(matches!(
            export_matrix(&recs, &default_reverse_set()),
            Err(StudyError::MissingCell {
                condition: FeedbackMode::AiProxy,
                ..
            })
        ));
    }

    #[test]
    fn empty_export() {
        let t = LongTable::from_records(&[], &default_reverse_set()).unwrap();
        assert_eq!(t.to_csv(), format!("{CSV_HEADER}\n"));
        assert!(LongTable::from_csv("a,b\n").is_err());
    }
}
