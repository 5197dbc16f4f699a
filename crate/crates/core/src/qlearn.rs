//! Tabular Q-learning with ε-greedy exploration, and a value-iteration
//! oracle that computes the exact optimal Q-values of the same MDP.
//!
//! All randomness flows through [`RandomSource`], a ChaCha8 stream cipher
//! generator seeded from a `u64` (`rand_chacha::ChaCha8Rng::seed_from_u64`).
//! The same spec and seed always produce the same table, bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::SpecError;
use crate::mdp::{Episode, StateId, Termination, Transition, WorkflowSpec};

/// Seedable generator used for every simulation in this crate.
pub type RandomSource = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> RandomSource {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Q(s, a) for exactly the valid (state, action) pairs of one spec.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    states: Vec<StateId>,
    actions: Vec<Vec<StateId>>,
    values: Vec<Vec<f64>>,
    index: HashMap<StateId, usize>,
}

impl QTable {
    pub fn zeros(spec: &WorkflowSpec) -> Self {
        let states: Vec<StateId> = spec.states.iter().map(|s| s.id.clone()).collect();
        let actions: Vec<Vec<StateId>> = states
            .iter()
            .map(|s| spec.actions_at(s).to_vec())
            .collect();
        let values = actions.iter().map(|a| vec![0.0; a.len()]).collect();
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Self {
            states,
            actions,
            values,
            index,
        }
    }

    fn slot(&self, state: &StateId, action: &StateId) -> Option<(usize, usize)> {
        let si = *self.index.get(state)?;
        let ai = self.actions[si].iter().position(|a| a == action)?;
        Some((si, ai))
    }

    pub fn get(&self, state: &StateId, action: &StateId) -> Option<f64> {
        self.slot(state, action).map(|(s, a)| self.values[s][a])
    }

    pub fn set(&mut self, state: &StateId, action: &StateId, value: f64) -> Result<(), SpecError> {
        let (s, a) = self
            .slot(state, action)
            .ok_or_else(|| SpecError::InvalidTransition {
                state: state.clone(),
                action: action.clone(),
            })?;
        self.values[s][a] = value;
        Ok(())
    }

    /// Action values at `state` in action-list order.
    pub fn row(&self, state: &StateId) -> Option<(&[StateId], &[f64])> {
        let si = *self.index.get(state)?;
        Some((&self.actions[si], &self.values[si]))
    }

    /// max_a Q(state, a); zero when the state has no actions.
    pub fn max_value(&self, state: &StateId) -> f64 {
        match self.row(state) {
            Some((_, values)) if !values.is_empty() => {
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
            _ => 0.0,
        }
    }

    /// argmax_a Q(state, a), ties going to the first listed action.
    pub fn best_action(&self, state: &StateId) -> Option<&StateId> {
        let (actions, values) = self.row(state)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in values.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| &actions[i])
    }

    pub fn len(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (state, action, value) in spec state order, then action order.
    pub fn iter(&self) -> impl Iterator<Item = (&StateId, &StateId, f64)> + '_ {
        self.states.iter().enumerate().flat_map(move |(si, s)| {
            self.actions[si]
                .iter()
                .zip(&self.values[si])
                .map(move |(a, &v)| (s, a, v))
        })
    }

    /// Largest absolute difference over shared pairs.
    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.iter()
            .filter_map(|(s, a, v)| other.get(s, a).map(|w| (v - w).abs()))
            .fold(0.0, f64::max)
    }

    /// CSV export: `state,action,q_value` with six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,action,q_value\n");
        for (s, a, v) in self.iter() {
            // adding 0.0 turns -0.0 into 0.0
            let _ = writeln!(out, "{s},{a},{:.6}", v + 0.0);
        }
        out
    }
}

/// One Q-learning update of the entry `(t.state, t.action)`:
/// `Q ← Q + α·(r + γ·max_a Q(s′, a) − Q)`.
pub fn q_update(q: &mut QTable, t: &Transition, alpha: f64, gamma: f64) -> Result<(), SpecError> {
    let current = q
        .get(&t.state, &t.action)
        .ok_or_else(|| SpecError::InvalidTransition {
            state: t.state.clone(),
            action: t.action.clone(),
        })?;
    let target = t.reward + gamma * q.max_value(&t.next_state);
    q.set(&t.state, &t.action, current + alpha * (target - current))
}

/// ε-greedy choice among the valid actions at `state`.
pub fn select_action<R: Rng + ?Sized>(
    q: &QTable,
    state: &StateId,
    epsilon: f64,
    rng: &mut R,
) -> Result<StateId, SpecError> {
    let (actions, _) = q
        .row(state)
        .filter(|(a, _)| !a.is_empty())
        .ok_or_else(|| SpecError::NoActions(state.clone()))?;
    if rng.random::<f64>() < epsilon {
        let pick = rng.random_range(0..actions.len());
        Ok(actions[pick].clone())
    } else {
        Ok(q.best_action(state).expect("row is nonempty").clone())
    }
}

/// Runs one episode from `spec.start`. Stops on entering the terminal state
/// or after `spec.training.max_steps` transitions. With `learn`, every step
/// is followed by a [`q_update`].
pub fn simulate_episode<R: Rng + ?Sized>(
    spec: &WorkflowSpec,
    q: &mut QTable,
    rng: &mut R,
    epsilon: f64,
    learn: bool,
) -> Result<Episode, SpecError> {
    let mut transitions = Vec::new();
    let mut state = spec.start.clone();
    let mut terminated_by = Termination::ReachedTerminal;
    while state != spec.terminal {
        if transitions.len() as u64 >= spec.training.max_steps {
            terminated_by = Termination::StepCapHit;
            break;
        }
        let action = select_action(q, &state, epsilon, rng)?;
        let t = Transition {
            reward: spec.reward_of(&action)?,
            state,
            next_state: action.clone(),
            action,
        };
        if learn {
            q_update(q, &t, spec.training.alpha, spec.gamma)?;
        }
        state = t.next_state.clone();
        transitions.push(t);
    }
    Ok(Episode {
        transitions,
        terminated_by,
    })
}

/// Trains a zero-initialized table for `spec.training.episodes` episodes.
pub fn train(spec: &WorkflowSpec) -> Result<QTable, SpecError> {
    train_observed(spec, |_| {})
}

/// [`train`], handing each finished episode to `observe`.
pub fn train_observed(
    spec: &WorkflowSpec,
    mut observe: impl FnMut(&Episode),
) -> Result<QTable, SpecError> {
    let mut q = QTable::zeros(spec);
    let mut rng = seeded_rng(spec.training.seed);
    for _ in 0..spec.training.episodes {
        let episode = simulate_episode(spec, &mut q, &mut rng, spec.training.epsilon, true)?;
        observe(&episode);
    }
    Ok(q)
}

/// Greedy rollout (ε = 0, no learning). A capped rollout comes back with
/// `Termination::StepCapHit`, never silently truncated.
pub fn greedy_episode(spec: &WorkflowSpec, q: &QTable) -> Result<Episode, SpecError> {
    let mut frozen = q.clone();
    // ε = 0 never consumes randomness; any seed works.
    let mut rng = seeded_rng(0);
    simulate_episode(spec, &mut frozen, &mut rng, 0.0, false)
}

const ORACLE_MAX_SWEEPS: usize = 1_000_000;

/// Fixed point of `Q*(s, a) = r(a) + γ·max_a′ Q*(a, a′)` with the terminal
/// self-loop pinned at zero, iterated until the sup-norm change drops
/// below `tol`.
pub fn value_iteration_oracle(spec: &WorkflowSpec, tol: f64) -> Result<QTable, SpecError> {
    let mut q = QTable::zeros(spec);
    let pairs: Vec<(StateId, StateId, f64)> = spec
        .valid_pairs()
        .into_iter()
        .filter(|(s, _)| s != &spec.terminal)
        .map(|(s, a)| {
            let r = spec.reward_of(&a)?;
            Ok((s, a, r))
        })
        .collect::<Result<_, SpecError>>()?;

    for _ in 0..ORACLE_MAX_SWEEPS {
        let mut next = q.clone();
        let mut delta: f64 = 0.0;
        for (s, a, r) in &pairs {
            let value = r + spec.gamma * q.max_value(a);
            delta = delta.max((value - q.get(s, a).unwrap_or(0.0)).abs());
            next.set(s, a, value)?;
        }
        q = next;
        if delta < tol {
            break;
        }
    }
    Ok(q)
}
