#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use workflow_ql::mdp::{RewardModel, StateDef, StateId, TrainingConfig, WorkflowSpec};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).expect("fixture exists")
}

pub fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(path).expect("golden file exists")
}

pub fn spec_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("specs")
        .join(format!("{name}.json"))
}

pub fn sid(s: &str) -> StateId {
    StateId::from(s)
}

pub fn path(ids: &[&str]) -> Vec<StateId> {
    ids.iter().map(|s| sid(s)).collect()
}

/// Research-scientist greedy path under gamma 0.9.
pub const RESEARCH_PATH: [&str; 8] = ["ST", "IR", "LR", "MD", "SV", "PR", "RP", "ED"];
pub const LEGAL_PATH: [&str; 9] = ["ST", "MI", "IA", "CC", "PP", "PR", "CM", "BI", "ED"];

/// `-(1 + 0.9 + ... + 0.9^5)`
pub const RESEARCH_RETURN: f64 = -4.68559;
/// `-(1 + 0.9 + ... + 0.9^6)`
pub const LEGAL_RETURN: f64 = -5.217031;

// Names without digits or common English words, so prose never collides.
const NAMES: [(&str, &str); 10] = [
    ("Alpha", "QA"),
    ("Bravo", "QB"),
    ("Cobalt", "QC"),
    ("Dunmore", "QD"),
    ("Ember", "QE"),
    ("Fjord", "QF"),
    ("Garnet", "QG"),
    ("Harrow", "QH"),
    ("Indigo", "QI"),
    ("Juniper", "QJ"),
];

/// Builds a valid workflow from a chain `Start → n1 → … → End` plus extra
/// edges. Every non-terminal step costs -1, entering the terminal pays 0.
pub fn chain_spec(inner: usize, extra: &[(usize, usize)], gamma: f64) -> WorkflowSpec {
    let mut states = vec![StateDef::new("ST", "Start (ST)")];
    for (name, id) in NAMES.iter().take(inner) {
        states.push(StateDef::new(id, &format!("{name} ({id})")));
    }
    states.push(StateDef::new("ED", "End (ED)"));
    let n = states.len();
    let mut actions: BTreeMap<StateId, Vec<StateId>> = BTreeMap::new();
    for i in 0..n - 1 {
        let mut targets = vec![states[i + 1].id.clone()];
        for &(from, to) in extra {
            let (from, to) = (from % (n - 1), to % n);
            if from == i && !targets.contains(&states[to].id) {
                targets.push(states[to].id.clone());
            }
        }
        actions.insert(states[i].id.clone(), targets);
    }
    actions.insert(sid("ED"), vec![sid("ED")]);
    WorkflowSpec {
        name: "Generated".into(),
        task: "Workflow of a generated process.".into(),
        states,
        start: sid("ST"),
        terminal: sid("ED"),
        actions,
        rewards: RewardModel {
            default: -1.0,
            overrides: BTreeMap::from([(sid("ED"), 0.0)]),
        },
        gamma,
        training: TrainingConfig::default(),
    }
}

pub fn arb_spec() -> impl Strategy<Value = WorkflowSpec> {
    (
        1usize..=NAMES.len(),
        prop::collection::vec((0usize..12, 0usize..12), 0..20),
        0.5f64..0.99,
    )
        .prop_map(|(inner, extra, gamma)| chain_spec(inner, &extra, gamma))
}
