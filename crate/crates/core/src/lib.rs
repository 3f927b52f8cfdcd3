//! Active-diagnosis trajectory distillation: simulated clinical
//! environments, tree-sampled teacher rollouts, knowledge-graph trajectory
//! filtering, training-record emission and evaluation.

pub mod config;
pub mod dataset;
pub mod environment;
pub mod eval;
pub mod filter;
pub mod gateway;
pub mod graph;
pub mod prompts;
pub mod rollout;
pub mod text;
pub mod turn;

pub use config::RunConfig;
pub use environment::{ClinicalEnvironment, OracleAnswer, OracleStatus, TestEntry};
pub use filter::{Decision, FilterConfig, FilterMode, FilterOutcome};
pub use graph::{Hops, KnowledgeGraph, LinkResult, Linker};
pub use rollout::{RolloutConfig, Trajectory, TrajectoryNode, TrajectoryTree};
pub use turn::{DiagnosticStatus, TurnMode, TurnRecord};
