//! Prompt rendering for the initial problem statement and the iterative
//! self-check that follows an unsatisfying answer.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{validate_workflow, ValidationReport, WorkflowSpec};

pub const PROBLEM_CONTEXT: [&str; 2] = [
    "You are an RL agent tasked with maximizing cumulative reward for a given task.",
    "You will be provided with the task, states, possible actions at each state, and rewards.",
];

pub const ITERATIVE_CHALLENGE: &str = "Did your output satisfy all of the following requirements? If not, you MUST take a fresh approach and execute it if necessary.";

/// Whether the discount factor is stated in the prompt or left to the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaMode {
    Unspecified,
    Fixed(f64),
}

impl GammaMode {
    pub fn gamma(self) -> Option<f64> {
        match self {
            GammaMode::Unspecified => None,
            GammaMode::Fixed(g) => Some(g),
        }
    }

    /// Short tag used in file names and reports: `uns` or the gamma value.
    pub fn tag(self) -> String {
        match self {
            GammaMode::Unspecified => "uns".to_owned(),
            GammaMode::Fixed(g) => format!("g{g}"),
        }
    }
}

impl fmt::Display for GammaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaMode::Unspecified => f.write_str("UNS"),
            GammaMode::Fixed(g) => write!(f, "{g}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptKind {
    Initial,
    IterativeCheck,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSection {
    pub heading: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub sections: Vec<PromptSection>,
    pub rendered: String,
}

impl PromptBundle {
    pub fn headings(&self) -> Vec<&str> {
        self.sections.iter().map(|s| s.heading.as_str()).collect()
    }

    pub fn section(&self, heading: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|s| s.heading == heading)
            .map(|s| s.body.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("workflow task description is empty")]
    EmptyTask,
    #[error("cannot render an invalid workflow:\n{0}")]
    InvalidSpec(ValidationReport),
}

/// Renders the full problem statement with the workflow's own gamma.
pub fn render_initial_prompt(spec: &WorkflowSpec) -> Result<PromptBundle, PromptError> {
    render_initial_prompt_with(spec, GammaMode::Fixed(spec.gamma))
}

pub fn render_initial_prompt_with(
    spec: &WorkflowSpec,
    mode: GammaMode,
) -> Result<PromptBundle, PromptError> {
    check_renderable(spec)?;
    let sections = vec![
        section("Problem Context", PROBLEM_CONTEXT.join("\n\n")),
        section("Task", spec.task.trim().to_owned()),
        section("States", states_list(spec)),
        section("Actions", actions_map(spec)),
        section("Rewards", rewards_map(spec)),
        section("Requirements", numbered(&requirements(spec, mode, false))),
        section(
            "Output",
            format!(
                "Print the Q-table, and list the state/action pairs and their \"Q-values\" for the optimal episode from \"{}\" to \"{}\".",
                start_name(spec),
                end_name(spec)
            ),
        ),
    ];
    let rendered = sections
        .iter()
        .map(|s| match s.heading.as_str() {
            "Problem Context" | "Task" => format!("{}: {}", s.heading, s.body),
            "States" | "Actions" | "Rewards" => format!("{} = {}", s.heading, s.body),
            _ => format!("{}:\n{}", s.heading, s.body),
        })
        .collect::<Vec<_>>()
        .join("\n\n")
        + "\n";
    Ok(PromptBundle {
        kind: PromptKind::Initial,
        sections,
        rendered,
    })
}

/// Renders the re-prompt: the challenge sentence, the problem inputs again,
/// and the requirement list extended with the print instruction.
pub fn render_iteration_prompt(spec: &WorkflowSpec) -> Result<PromptBundle, PromptError> {
    render_iteration_prompt_with(spec, GammaMode::Fixed(spec.gamma))
}

pub fn render_iteration_prompt_with(
    spec: &WorkflowSpec,
    mode: GammaMode,
) -> Result<PromptBundle, PromptError> {
    check_renderable(spec)?;
    let sections = vec![
        section("Iterative Check", ITERATIVE_CHALLENGE.to_owned()),
        section("Task", spec.task.trim().to_owned()),
        section("States", states_list(spec)),
        section("Actions", actions_map(spec)),
        section("Rewards", rewards_map(spec)),
        section("Requirements", numbered(&requirements(spec, mode, true))),
    ];
    let mut rendered = String::new();
    let _ = writeln!(rendered, "{}\n", sections[0].body);
    for s in &sections[1..5] {
        let _ = writeln!(rendered, "{}: {}", s.heading, s.body);
    }
    let _ = writeln!(rendered, "\n{}", sections[5].body);
    Ok(PromptBundle {
        kind: PromptKind::IterativeCheck,
        sections,
        rendered,
    })
}

fn check_renderable(spec: &WorkflowSpec) -> Result<(), PromptError> {
    if spec.task.trim().is_empty() {
        return Err(PromptError::EmptyTask);
    }
    let report = validate_workflow(spec);
    if !report.is_valid() {
        return Err(PromptError::InvalidSpec(report));
    }
    Ok(())
}

fn section(heading: &str, body: String) -> PromptSection {
    PromptSection {
        heading: heading.to_owned(),
        body,
    }
}

fn start_name(spec: &WorkflowSpec) -> &str {
    spec.state(&spec.start).map(|s| s.name()).unwrap_or("Start")
}

fn end_name(spec: &WorkflowSpec) -> &str {
    spec.state(&spec.terminal).map(|s| s.name()).unwrap_or("End")
}

fn requirements(spec: &WorkflowSpec, mode: GammaMode, iterative: bool) -> Vec<String> {
    // The re-prompt capitalizes "Q-Learning" and doubles the transition rule.
    let solve = if iterative {
        "Solve it with Q-Learning."
    } else {
        "Solve it with Q-learning."
    };
    let solve = match mode.gamma() {
        Some(g) => format!("{solve} gamma={g}"),
        None => solve.to_owned(),
    };
    let transitions = if iterative {
        "Transitions from one state to another are only allowed based on provided 'Actions'. Transitions from one state to another are only allowed based on possible actions."
    } else {
        "Transitions from one state to another are only allowed based on provided 'Actions'. Other actions are not possible."
    };
    let mut items = vec![
        solve,
        transitions.to_owned(),
        format!(
            "First, simulate the environment for {} episodes and fill in the Q-table for states. If an episode goes more than {} steps terminate that episode.",
            spec.training.episodes, spec.training.max_steps
        ),
        format!(
            "Episodes MUST begin at \"{}\" and finish at \"{}\".",
            start_name(spec),
            end_name(spec)
        ),
    ];
    if iterative {
        items.push(format!(
            "Print the state/action pairs and their \"Q-values\" for the optimal episode from \"{}\" to \"{}\".",
            start_name(spec),
            end_name(spec)
        ));
    }
    items
}

fn numbered(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, item)| format!("{}. {item}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn states_list(spec: &WorkflowSpec) -> String {
    let labels: Vec<String> = spec
        .states
        .iter()
        .map(|s| format!("'{}'", s.label))
        .collect();
    format!("{{{}}}", labels.join(", "))
}

fn actions_map(spec: &WorkflowSpec) -> String {
    let mut entries: Vec<String> = spec
        .states
        .iter()
        .filter(|s| spec.actions.contains_key(&s.id))
        .map(|s| {
            let targets: Vec<String> = spec
                .actions_at(&s.id)
                .iter()
                .map(|t| format!("'{t}'"))
                .collect();
            format!("'{}': [{}]", s.id, targets.join(", "))
        })
        .collect();
    entries.push("'ELSE': -inf".to_owned());
    format!("{{{}}}", entries.join(", "))
}

fn rewards_map(spec: &WorkflowSpec) -> String {
    let mut entries: Vec<String> = spec
        .states
        .iter()
        .filter_map(|s| {
            spec.rewards
                .overrides
                .get(&s.id)
                .map(|r| format!("'{}': {}", s.id, number(*r)))
        })
        .collect();
    entries.push(format!("else: {}", number(spec.rewards.default)));
    format!("{{{}}}", entries.join(", "))
}

fn number(x: f64) -> String {
    format!("{}", x + 0.0)
}
