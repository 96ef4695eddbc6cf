//! Online decision making with epsilon-greedy exploration and averaged
//! IPW-weighted stochastic gradient descent, with online inference for the
//! model parameters and for the value of the learned rule.

pub mod engine;
pub mod env;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod model;
pub mod normal;
pub mod policy;
pub mod report;
pub mod rng;
pub mod types;
pub mod value;

pub use engine::{
    ipw_gradient, ipw_weight, run_stream, run_stream_lagged, sgd_step, Learner, LearnerConfig,
    Snapshot, StepRecord, StreamOutcome,
};
pub use env::{Environment, LagSchedule, ReplayLog, SyntheticConfig, SyntheticEnv};
pub use error::{Error, Result};
pub use experiment::{ConfigLayer, ExperimentConfig, MonteCarloSummary, TuneResult};
pub use inference::{PluginAccumulators, Sandwich};
pub use model::{Family, HessianVariant, LinearModel, LogisticModel, ModelFamily, RewardModel};
pub use report::OutputFormat;
pub use rng::RngStream;
pub use types::{
    Action, ExplorationKind, ExplorationSchedule, InferenceReport, LearningSchedule, Observation,
    ParameterState, ReportRow,
};
pub use value::ValueAccumulator;
