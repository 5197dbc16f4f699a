mod common;

use common::*;
use proptest::prelude::*;
use workflow_ql::mdp::{
    bundled, discounted_return, validate_workflow, Termination, Transition, Violation,
};
use workflow_ql::qlearn::{
    q_update, seeded_rng, simulate_episode, train_observed, QTable,
};
use workflow_ql::{greedy_episode, train, value_iteration_oracle, WorkflowSpec};

fn oracle(spec: &WorkflowSpec) -> QTable {
    value_iteration_oracle(spec, 1e-12).unwrap()
}

#[test]
fn oracle_values_match_hand_computed_table() {
    // Shortest distances to the terminal, in closed form.
    let q = oracle(&bundled::research_scientist());
    let v = |k: i32| -(1.0 - 0.9f64.powi(k)) / 0.1;
    for (s, a, expected) in [
        ("ST", "IR", v(6)),
        ("IR", "LR", v(5)),
        ("IR", "EP", -1.0 + 0.9 * v(6)),
        ("LR", "MD", v(4)),
        ("DA", "MD", v(4)),
        ("MD", "SV", v(3)),
        ("SV", "PR", v(2)),
        ("PR", "RP", -1.0),
        ("RP", "ED", 0.0),
        ("ED", "ED", 0.0),
    ] {
        let got = q.get(&sid(s), &sid(a)).unwrap();
        assert!((got - expected).abs() < 1e-9, "{s}->{a}: {got} vs {expected}");
    }
}

#[test]
fn greedy_oracle_paths_and_returns() {
    for (spec, expected, ret) in [
        (bundled::research_scientist(), path(&RESEARCH_PATH), RESEARCH_RETURN),
        (bundled::legal_matter_intake(), path(&LEGAL_PATH), LEGAL_RETURN),
    ] {
        let q = oracle(&spec);
        let ep = greedy_episode(&spec, &q).unwrap();
        assert_eq!(ep.path(), expected);
        assert!((discounted_return(&ep, spec.gamma) - ret).abs() < 1e-9);
        let first = q.get(&spec.start, &expected[1]).unwrap();
        assert!((discounted_return(&ep, spec.gamma) - first).abs() < 1e-9);
    }
}

#[test]
fn trained_values_converge_on_the_greedy_path() {
    for spec in [bundled::research_scientist(), bundled::legal_matter_intake()] {
        let truth = oracle(&spec);
        let best = greedy_episode(&spec, &truth).unwrap();
        for seed in [1, 7, 42, 99, 1234] {
            let q = train(&spec.with_seed(seed)).unwrap();
            for t in &best.transitions {
                let got = q.get(&t.state, &t.action).unwrap();
                let want = truth.get(&t.state, &t.action).unwrap();
                assert!(
                    (got - want).abs() < 0.05,
                    "{} seed {seed} {}->{}: {got} vs {want}",
                    spec.name,
                    t.state,
                    t.action
                );
            }
        }
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let spec = bundled::legal_matter_intake();
    let a = train(&spec).unwrap();
    let b = train(&spec).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    let c = train(&spec.with_seed(43)).unwrap();
    assert_ne!(a.to_csv(), c.to_csv());
}

#[test]
fn completed_training_episodes_start_and_end_correctly() {
    let spec = bundled::research_scientist();
    let mut episodes = 0;
    train_observed(&spec, |ep| {
        episodes += 1;
        let p = ep.path();
        assert_eq!(p.first(), Some(&spec.start));
        match ep.terminated_by {
            Termination::ReachedTerminal => assert_eq!(p.last(), Some(&spec.terminal)),
            Termination::StepCapHit => assert_eq!(ep.len() as u64, spec.training.max_steps),
        }
        for t in &ep.transitions {
            assert!(spec.is_valid_pair(&t.state, &t.action));
        }
    })
    .unwrap();
    assert_eq!(episodes, spec.training.episodes);
}

#[test]
fn step_cap_keeps_updates_from_a_capped_episode() {
    let mut spec = bundled::research_scientist();
    spec.training.max_steps = 3;
    let mut q = QTable::zeros(&spec);
    let mut rng = seeded_rng(5);
    let ep = simulate_episode(&spec, &mut q, &mut rng, 0.0, true).unwrap();
    assert_eq!(ep.terminated_by, Termination::StepCapHit);
    assert_eq!(ep.len(), 3);
    assert_eq!(q.iter().filter(|(_, _, v)| *v != 0.0).count(), 3);
}

#[test]
fn reward_shift_keeps_the_greedy_policy() {
    // A uniform extra step cost still favours the shortest route.
    let spec = bundled::research_scientist();
    let mut shifted = spec.clone();
    shifted.rewards.default -= 1.0;
    let a = greedy_episode(&spec, &oracle(&spec)).unwrap();
    let b = greedy_episode(&shifted, &oracle(&shifted)).unwrap();
    assert_eq!(a.path(), b.path());
}

#[test]
fn single_update_contracts_towards_the_target() {
    let spec = bundled::research_scientist();
    let mut q = QTable::zeros(&spec);
    let (s, a) = (sid("PR"), sid("RP"));
    q.set(&s, &a, 5.0).unwrap();
    let t = Transition {
        state: s.clone(),
        action: a.clone(),
        reward: -1.0,
        next_state: a.clone(),
    };
    // Target is -1 + 0.9 * max Q(RP, ·) = -1.
    let mut gap = 6.0;
    for _ in 0..20 {
        q_update(&mut q, &t, 0.1, 0.9).unwrap();
        let next_gap = (q.get(&s, &a).unwrap() + 1.0).abs();
        assert!((next_gap - 0.9 * gap).abs() < 1e-12);
        gap = next_gap;
    }
}

#[test]
fn update_rejects_invalid_pairs() {
    let spec = bundled::research_scientist();
    let mut q = QTable::zeros(&spec);
    let t = Transition {
        state: sid("ST"),
        action: sid("ED"),
        reward: 0.0,
        next_state: sid("ED"),
    };
    assert!(q_update(&mut q, &t, 0.1, 0.9).is_err());
}

#[test]
fn bundled_specs_are_valid() {
    assert!(validate_workflow(&bundled::research_scientist()).is_valid());
    assert!(validate_workflow(&bundled::legal_matter_intake()).is_valid());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_specs_validate(spec in arb_spec()) {
        prop_assert!(validate_workflow(&spec).is_valid());
    }

    #[test]
    fn removing_the_terminal_loop_is_reported(spec in arb_spec()) {
        let mut broken = spec.clone();
        broken.actions.insert(sid("ED"), vec![sid("ST")]);
        let report = validate_workflow(&broken);
        let found = report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::TerminalMustSelfLoop { .. }));
        prop_assert!(found);
    }

    #[test]
    fn cutting_every_edge_into_the_terminal_is_reported(spec in arb_spec()) {
        let mut broken = spec.clone();
        for (s, targets) in broken.actions.iter_mut() {
            if s.as_str() != "ED" {
                targets.retain(|t| t.as_str() != "ED");
                if targets.is_empty() {
                    targets.push(sid("ST"));
                }
            }
        }
        let report = validate_workflow(&broken);
        let found = report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::TerminalUnreachable { .. }));
        prop_assert!(found);
    }

    #[test]
    fn unknown_targets_are_reported(spec in arb_spec()) {
        let mut broken = spec.clone();
        broken.actions.get_mut(&sid("ST")).unwrap().push(sid("ZZ"));
        prop_assert!(!validate_workflow(&broken).is_valid());
    }

    #[test]
    fn oracle_greedy_return_equals_first_q(spec in arb_spec()) {
        let q = oracle(&spec);
        let ep = greedy_episode(&spec, &q).unwrap();
        prop_assert_eq!(ep.terminated_by, Termination::ReachedTerminal);
        let first = q.get(&ep.transitions[0].state, &ep.transitions[0].action).unwrap();
        prop_assert!((discounted_return(&ep, spec.gamma) - first).abs() < 1e-9);
    }

    #[test]
    fn random_episodes_only_use_valid_actions(spec in arb_spec(), seed in any::<u64>()) {
        let mut q = QTable::zeros(&spec);
        let mut rng = seeded_rng(seed);
        let ep = simulate_episode(&spec, &mut q, &mut rng, 1.0, true).unwrap();
        prop_assert!(ep.len() as u64 <= spec.training.max_steps);
        for t in &ep.transitions {
            prop_assert!(spec.is_valid_pair(&t.state, &t.action));
            prop_assert_eq!(&t.action, &t.next_state);
        }
    }
}
