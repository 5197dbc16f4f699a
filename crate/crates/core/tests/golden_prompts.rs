mod common;

use common::golden;
use workflow_ql::mdp::bundled;
use workflow_ql::prompt::{render_initial_prompt_with, render_iteration_prompt, GammaMode};
use workflow_ql::{render_initial_prompt, WorkflowSpec};

fn cases() -> [(&'static str, WorkflowSpec); 2] {
    [
        ("research_scientist", bundled::research_scientist()),
        ("legal_matter_intake", bundled::legal_matter_intake()),
    ]
}

#[test]
fn initial_prompts_match_golden_files() {
    for (name, spec) in cases() {
        let rendered = render_initial_prompt(&spec).unwrap().rendered;
        assert_eq!(rendered, golden(&format!("{name}_initial.txt")), "{name}");
    }
}

#[test]
fn iterative_prompts_match_golden_files() {
    for (name, spec) in cases() {
        let rendered = render_iteration_prompt(&spec).unwrap().rendered;
        assert_eq!(rendered, golden(&format!("{name}_iterative.txt")), "{name}");
    }
}

#[test]
fn unspecified_gamma_prompt_matches_golden_file() {
    let spec = bundled::research_scientist();
    let rendered = render_initial_prompt_with(&spec, GammaMode::Unspecified)
        .unwrap()
        .rendered;
    assert_eq!(rendered, golden("research_scientist_initial_uns.txt"));
}

#[test]
fn gamma_and_training_parameters_flow_into_the_text() {
    let mut spec = bundled::legal_matter_intake().with_gamma(0.75);
    spec.training.episodes = 250;
    spec.training.max_steps = 40;
    let text = render_initial_prompt(&spec).unwrap().rendered;
    assert!(text.contains("gamma=0.75"));
    assert!(text.contains("for 250 episodes"));
    assert!(text.contains("more than 40 steps"));
}

#[test]
fn invalid_spec_is_not_rendered() {
    let mut spec = bundled::research_scientist();
    spec.actions.remove(&"ED".into());
    assert!(render_initial_prompt(&spec).is_err());
}
