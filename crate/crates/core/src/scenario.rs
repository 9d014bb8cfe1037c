//! The six goal-oriented role-play scenarios.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::MissionContext;
use crate::session::GOAL_COUNT;

const BUILTIN: &str = include_str!("../data/scenarios.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid scenario file: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub title: String,
    pub context: String,
    pub goals: Vec<String>,
    pub initial_question: String,
    /// Learner-facing rendering of the context. Falls back to `context`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localized_context: Option<String>,
    /// Learner-facing rendering of the goals. Falls back to `goals`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localized_goals: Option<Vec<String>>,
}

impl Scenario {
    pub fn mission(&self) -> MissionContext {
        MissionContext {
            context_description: format!("{}: {}", self.title, self.context),
            goals: self.goals.clone(),
        }
    }

    pub fn display_context(&self) -> &str {
        self.localized_context.as_deref().unwrap_or(&self.context)
    }

    pub fn display_goals(&self) -> &[String] {
        self.localized_goals.as_deref().unwrap_or(&self.goals)
    }
}

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    #[allow(dead_code)]
    version: u32,
    scenarios: Vec<Scenario>,
}

/// Immutable scenario lookup, ordered by id.
#[derive(Debug, Clone)]
pub struct ScenarioRegistry {
    scenarios: Vec<Scenario>,
}

impl ScenarioRegistry {
    /// The bundled registry.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("bundled scenarios.json is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(json).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        for s in &file.scenarios {
            if s.goals.len() != GOAL_COUNT {
                return Err(ScenarioError::Invalid(format!("{} has {} goals", s.id, s.goals.len())));
            }
            if s.initial_question.trim().is_empty() {
                return Err(ScenarioError::Invalid(format!("{} has no initial question", s.id)));
            }
        }
        let mut scenarios = file.scenarios;
        scenarios.sort_by(|a, b| a.id.cmp(&b.id));
        if scenarios.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(ScenarioError::Invalid("duplicate scenario id".into()));
        }
        Ok(Self { scenarios })
    }

    pub fn get(&self, id: &str) -> Result<&Scenario, ScenarioError> {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| ScenarioError::UnknownScenario(id.to_string()))
    }

    pub fn all(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Draws `n` distinct scenario ids uniformly without replacement.
    ///
    /// Panics if the registry holds fewer than `n` scenarios.
    pub fn assign(&self, n: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.assign_with(n, &mut rng)
    }

    pub(crate) fn assign_with(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        assert!(
            self.len() >= n,
            "registry has {} scenarios, {} requested",
            self.len(),
            n
        );
        let mut ids: Vec<String> = self.scenarios.iter().map(|s| s.id.clone()).collect();
        ids.shuffle(rng);
        ids.truncate(n);
        ids
    }
}

/// Three distinct scenarios for one participant's three sessions.
pub fn assign_scenarios(n_conditions: usize, seed: u64) -> Vec<String> {
    ScenarioRegistry::builtin().assign(n_conditions, seed)
}
