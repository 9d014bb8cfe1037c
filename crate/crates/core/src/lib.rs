//! Conversation-practice engine for ESL speaking sessions.
//!
//! A learner talks to a role-playing interlocutor. Each utterance is
//! transcribed, then either rephrased into more fluent English and re-voiced
//! (in the learner's cloned voice or a neutral proxy voice) or answered with
//! explicit written correction. The interlocutor always replies to the
//! *grounding text* of the turn: the rephrased utterance in the two
//! rephrasing conditions, the raw transcript otherwise.
//!
//! Around that pipeline sit the pieces a within-subject study needs:
//! randomized condition plans, the 25-item engagement questionnaire, an
//! append-only event log, and the repeated-measures statistics used to
//! analyse the results.
//!
//! Module map:
//!
//! * [`session`]: domain types and the pure turn-based state machine.
//! * [`prompt`]: the four prompt templates, dialogue serialization and the
//!   goal-tracking output parser.
//! * [`scenario`]: the six goal-oriented role-play scenarios.
//! * [`provider`]: speech recognition, text generation, synthesis and voice
//!   cloning behind traits, with deterministic mocks.
//! * [`pipeline`]: one learner turn end to end.
//! * [`study`]: condition plans, questionnaire scoring and CSV export.
//! * [`stats`]: RM-ANOVA, paired t, mixed ANOVA and tail probabilities.
//! * [`store`]: JSON Lines event log and content-addressed audio blobs.
//! * [`api`]: HTTP service and configuration.
//! * [`script`]: scripted mock sessions used by the CLI and tests.

pub mod api;
pub mod pipeline;
pub mod prompt;
pub mod provider;
pub mod scenario;
pub mod script;
pub mod session;
pub mod stats;
pub mod store;
pub mod study;

pub use pipeline::{Pipeline, PipelineConfig, PipelineError, TurnOutcome};
pub use scenario::{Scenario, ScenarioRegistry};
pub use session::{FeedbackMode, GoalState, Participant, Phase, Session, Turn, VoiceProfile};
