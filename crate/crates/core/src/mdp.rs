//! Workflow MDP data model.
//!
//! A workflow is a deterministic MDP: every action is identified with the
//! state it leads to, so taking action `a` in state `s` always lands in `a`.
//! Rewards are attached to the state being entered. Pairs that are absent
//! from the action map are invalid transitions; they are never simulated.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SpecError;

/// Short uppercase token naming a workflow state, e.g. `ST` or `IR`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(String);

impl StateId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StateId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl PartialEq<str> for StateId {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for StateId {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// A state together with its human-readable label, e.g. `Start (ST)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDef {
    pub id: StateId,
    pub label: String,
}

impl StateDef {
    pub fn new(id: &str, label: &str) -> Self {
        Self {
            id: StateId::new(id),
            label: label.to_owned(),
        }
    }

    /// The label without a trailing parenthesized abbreviation:
    /// `Start (ST)` becomes `Start`.
    pub fn name(&self) -> &str {
        let label = self.label.trim();
        match label.rfind('(') {
            Some(open) if label.ends_with(')') && open > 0 => label[..open].trim_end(),
            _ => label,
        }
    }
}

/// Reward received on entering a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardModel {
    pub default: f64,
    #[serde(default)]
    pub overrides: BTreeMap<StateId, f64>,
}

impl RewardModel {
    /// Total evaluation rule: the override if present, otherwise the default.
    pub fn reward(&self, state: &StateId) -> f64 {
        self.overrides.get(state).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub episodes: u64,
    pub max_steps: u64,
    pub alpha: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            max_steps: 100,
            alpha: 0.1,
            epsilon: 0.1,
            seed: 42,
        }
    }
}

/// A workflow MDP plus the training configuration used to solve it locally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub name: String,
    pub task: String,
    pub states: Vec<StateDef>,
    pub start: StateId,
    pub terminal: StateId,
    pub actions: BTreeMap<StateId, Vec<StateId>>,
    pub rewards: RewardModel,
    pub gamma: f64,
    pub training: TrainingConfig,
}

impl WorkflowSpec {
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        serde_json::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Reads a spec file and rejects it unless it validates cleanly.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SpecError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SpecError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let spec = Self::from_json(&text)?;
        let report = validate_workflow(&spec);
        if report.is_valid() {
            Ok(spec)
        } else {
            Err(SpecError::Invalid(report))
        }
    }

    pub fn state(&self, id: &StateId) -> Option<&StateDef> {
        self.states.iter().find(|s| &s.id == id)
    }

    pub fn contains(&self, id: &StateId) -> bool {
        self.state(id).is_some()
    }

    /// Position of a state in the declared state order.
    pub fn state_index(&self, id: &StateId) -> Option<usize> {
        self.states.iter().position(|s| &s.id == id)
    }

    /// Valid actions at `state`, in declared order. Empty for unknown states.
    pub fn actions_at(&self, state: &StateId) -> &[StateId] {
        self.actions.get(state).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_valid_pair(&self, state: &StateId, action: &StateId) -> bool {
        self.actions_at(state).contains(action)
    }

    /// Every valid (state, action) pair, ordered by state order then action order.
    pub fn valid_pairs(&self) -> Vec<(StateId, StateId)> {
        self.states
            .iter()
            .flat_map(|s| {
                self.actions_at(&s.id)
                    .iter()
                    .map(move |a| (s.id.clone(), a.clone()))
            })
            .collect()
    }

    pub fn reward_of(&self, state: &StateId) -> Result<f64, SpecError> {
        if self.contains(state) {
            Ok(self.rewards.reward(state))
        } else {
            Err(SpecError::UnknownState(state.clone()))
        }
    }

    /// Builds the episode that walks `path` hop by hop. Every hop must be a
    /// valid action.
    pub fn episode_from_path(&self, path: &[StateId]) -> Result<Episode, SpecError> {
        let mut transitions = Vec::with_capacity(path.len().saturating_sub(1));
        for hop in path.windows(2) {
            let (from, to) = (&hop[0], &hop[1]);
            if !self.is_valid_pair(from, to) {
                return Err(SpecError::InvalidTransition {
                    state: from.clone(),
                    action: to.clone(),
                });
            }
            transitions.push(Transition {
                state: from.clone(),
                action: to.clone(),
                reward: self.reward_of(to)?,
                next_state: to.clone(),
            });
        }
        let terminated_by = if path.last() == Some(&self.terminal) {
            Termination::ReachedTerminal
        } else {
            Termination::StepCapHit
        };
        Ok(Episode {
            transitions,
            terminated_by,
        })
    }

    /// Copy of this spec with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self {
            gamma,
            ..self.clone()
        }
    }

    /// Copy of this spec with a different training seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut spec = self.clone();
        spec.training.seed = seed;
        spec
    }
}

/// One step of an episode. `next_state` always equals `action`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: StateId,
    pub action: StateId,
    pub reward: f64,
    pub next_state: StateId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    ReachedTerminal,
    StepCapHit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub terminated_by: Termination,
}

impl Episode {
    /// Visited states, starting state first.
    pub fn path(&self) -> Vec<StateId> {
        let mut path: Vec<StateId> = self
            .transitions
            .first()
            .map(|t| vec![t.state.clone()])
            .unwrap_or_default();
        path.extend(self.transitions.iter().map(|t| t.next_state.clone()));
        path
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.reward)
    }
}

/// `Σ_k γ^k · r_k` over the episode's transitions in order.
pub fn discounted_return(episode: &Episode, gamma: f64) -> f64 {
    discounted_sum(episode.rewards(), gamma)
}

pub fn discounted_sum(rewards: impl IntoIterator<Item = f64>, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyStateId { index: usize },
    EmptyLabel { id: StateId },
    DuplicateState { id: StateId },
    UnknownStart { id: StateId },
    UnknownTerminal { id: StateId },
    UnknownActionSource { id: StateId },
    UnknownActionTarget { state: StateId, target: StateId },
    UnknownRewardState { id: StateId },
    TerminalMustSelfLoop { terminal: StateId },
    NoActions { state: StateId },
    TerminalUnreachable { start: StateId, terminal: StateId },
    GammaOutOfRange { gamma: f64 },
    ZeroEpisodes,
    ZeroMaxSteps,
    AlphaOutOfRange { alpha: f64 },
    EpsilonOutOfRange { epsilon: f64 },
    NonFiniteReward { id: Option<StateId> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyStateId { index } => write!(f, "state #{index} has an empty id"),
            Violation::EmptyLabel { id } => write!(f, "state {id} has an empty label"),
            Violation::DuplicateState { id } => write!(f, "state id {id} is declared twice"),
            Violation::UnknownStart { id } => write!(f, "start state {id} is not declared"),
            Violation::UnknownTerminal { id } => write!(f, "terminal state {id} is not declared"),
            Violation::UnknownActionSource { id } => {
                write!(f, "actions list an undeclared state {id}")
            }
            Violation::UnknownActionTarget { state, target } => {
                write!(f, "action {state} -> {target} targets an undeclared state")
            }
            Violation::UnknownRewardState { id } => {
                write!(f, "reward override for undeclared state {id}")
            }
            Violation::TerminalMustSelfLoop { terminal } => {
                write!(f, "terminal must self-loop: actions[{terminal}] must be [{terminal}]")
            }
            Violation::NoActions { state } => {
                write!(f, "state {state} is reachable from start but has no actions")
            }
            Violation::TerminalUnreachable { start, terminal } => {
                write!(f, "terminal unreachable from start ({start} cannot reach {terminal})")
            }
            Violation::GammaOutOfRange { gamma } => write!(f, "gamma {gamma} is outside [0, 1]"),
            Violation::ZeroEpisodes => write!(f, "training.episodes must be at least 1"),
            Violation::ZeroMaxSteps => write!(f, "training.max_steps must be at least 1"),
            Violation::AlphaOutOfRange { alpha } => write!(f, "alpha {alpha} is outside (0, 1]"),
            Violation::EpsilonOutOfRange { epsilon } => {
                write!(f, "epsilon {epsilon} is outside [0, 1]")
            }
            Violation::NonFiniteReward { id: Some(id) } => {
                write!(f, "reward override for {id} is not finite")
            }
            Violation::NonFiniteReward { id: None } => write!(f, "default reward is not finite"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Collects every structural violation in `spec`. An empty report means valid.
pub fn validate_workflow(spec: &WorkflowSpec) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for (index, state) in spec.states.iter().enumerate() {
        if state.id.as_str().trim().is_empty() {
            violations.push(Violation::EmptyStateId { index });
        }
        if state.label.trim().is_empty() {
            violations.push(Violation::EmptyLabel {
                id: state.id.clone(),
            });
        }
        if !seen.insert(&state.id) {
            violations.push(Violation::DuplicateState {
                id: state.id.clone(),
            });
        }
    }

    if !spec.contains(&spec.start) {
        violations.push(Violation::UnknownStart {
            id: spec.start.clone(),
        });
    }
    if !spec.contains(&spec.terminal) {
        violations.push(Violation::UnknownTerminal {
            id: spec.terminal.clone(),
        });
    }

    for (source, targets) in &spec.actions {
        if !spec.contains(source) {
            violations.push(Violation::UnknownActionSource { id: source.clone() });
        }
        for target in targets {
            if !spec.contains(target) {
                violations.push(Violation::UnknownActionTarget {
                    state: source.clone(),
                    target: target.clone(),
                });
            }
        }
    }

    if !spec.rewards.default.is_finite() {
        violations.push(Violation::NonFiniteReward { id: None });
    }
    for (id, value) in &spec.rewards.overrides {
        if !spec.contains(id) {
            violations.push(Violation::UnknownRewardState { id: id.clone() });
        }
        if !value.is_finite() {
            violations.push(Violation::NonFiniteReward {
                id: Some(id.clone()),
            });
        }
    }

    if spec.actions_at(&spec.terminal) != std::slice::from_ref(&spec.terminal) {
        violations.push(Violation::TerminalMustSelfLoop {
            terminal: spec.terminal.clone(),
        });
    }

    let reachable = reachable_from(spec, &spec.start);
    for state in &spec.states {
        if state.id != spec.terminal
            && reachable.contains(&state.id)
            && spec.actions_at(&state.id).is_empty()
        {
            violations.push(Violation::NoActions {
                state: state.id.clone(),
            });
        }
    }
    if !reachable.contains(&spec.terminal) {
        violations.push(Violation::TerminalUnreachable {
            start: spec.start.clone(),
            terminal: spec.terminal.clone(),
        });
    }

    if !(0.0..=1.0).contains(&spec.gamma) {
        violations.push(Violation::GammaOutOfRange { gamma: spec.gamma });
    }
    let training = &spec.training;
    if training.episodes == 0 {
        violations.push(Violation::ZeroEpisodes);
    }
    if training.max_steps == 0 {
        violations.push(Violation::ZeroMaxSteps);
    }
    if !(training.alpha > 0.0 && training.alpha <= 1.0) {
        violations.push(Violation::AlphaOutOfRange {
            alpha: training.alpha,
        });
    }
    if !(0.0..=1.0).contains(&training.epsilon) {
        violations.push(Violation::EpsilonOutOfRange {
            epsilon: training.epsilon,
        });
    }

    ValidationReport { violations }
}

fn reachable_from<'a>(spec: &'a WorkflowSpec, start: &'a StateId) -> HashSet<&'a StateId> {
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(start);
    queue.push_back(start);
    while let Some(state) = queue.pop_front() {
        for next in spec.actions_at(state) {
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    seen
}

/// The two workflows shipped with the crate.
pub mod bundled {
    use super::WorkflowSpec;

    pub const RESEARCH_SCIENTIST_JSON: &str = include_str!("../specs/research_scientist.json");
    pub const LEGAL_MATTER_INTAKE_JSON: &str = include_str!("../specs/legal_matter_intake.json");

    pub fn research_scientist() -> WorkflowSpec {
        WorkflowSpec::from_json(RESEARCH_SCIENTIST_JSON).expect("bundled spec parses")
    }

    pub fn legal_matter_intake() -> WorkflowSpec {
        WorkflowSpec::from_json(LEGAL_MATTER_INTAKE_JSON).expect("bundled spec parses")
    }
}
