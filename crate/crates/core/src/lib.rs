//! Workflow optimization as a Markov decision process.
//!
//! A workflow (states, allowed transitions, per-state rewards) is solved two
//! ways: locally with tabular Q-learning checked against value iteration,
//! and by iteratively prompting a chat model and verifying its answer
//! against the local oracle.

pub mod cli;
pub mod error;
pub mod llm;
pub mod mdp;
pub mod orchestrator;
pub mod parse;
pub mod prompt;
pub mod qlearn;

pub use error::SpecError;
pub use llm::{ChatClient, ChatMessage, HttpChatClient, LlmConfig, LlmError, ScriptedClient};
pub use mdp::{
    discounted_return, validate_workflow, Episode, RewardModel, StateDef, StateId, Termination,
    TrainingConfig, Transition, ValidationReport, WorkflowSpec,
};
pub use orchestrator::{aggregate_stats, orchestrate, orchestrate_with, RunRecord, RunStats};
pub use parse::{check_requirements, parse_response, verify_against_oracle, ParsedResult};
pub use prompt::{render_initial_prompt, render_iteration_prompt, GammaMode, PromptBundle};
pub use qlearn::{greedy_episode, train, value_iteration_oracle, QTable};
