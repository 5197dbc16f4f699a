//! The iterative prompting loop: ask, parse, check, and re-prompt with the
//! self-check until the requirements hold or the iteration budget runs out.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatClient, ChatMessage, LlmError};
use crate::mdp::{TrainingConfig, WorkflowSpec};
use crate::parse::{
    check_requirements_in_mode, parse_response, path_return, ParsedResult, RequirementReport,
};
use crate::prompt::{
    render_initial_prompt_with, render_iteration_prompt_with, GammaMode, PromptError, PromptKind,
};
use crate::qlearn::{value_iteration_oracle, QTable};

pub const DEFAULT_MAX_ITER: usize = 5;
pub const ORACLE_TOLERANCE: f64 = 1e-12;
/// Opens every conversation unless the caller supplies its own or none.
pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a helpful assistant.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortKind {
    ScriptExhausted,
    Transport,
    Status,
    Malformed,
    Other,
}

impl From<&LlmError> for AbortKind {
    fn from(e: &LlmError) -> Self {
        match e {
            LlmError::ScriptExhausted { .. } => AbortKind::ScriptExhausted,
            LlmError::Transport { .. } => AbortKind::Transport,
            LlmError::Status { .. } => AbortKind::Status,
            LlmError::Malformed(_) => AbortKind::Malformed,
            _ => AbortKind::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAbort {
    pub kind: AbortKind,
    pub message: String,
    /// Iteration whose completion call failed.
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub prompt_kind: PromptKind,
    pub prompt: String,
    pub response: String,
    pub parsed: ParsedResult,
    pub report: RequirementReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec_name: String,
    pub gamma_mode: GammaMode,
    pub max_iter: usize,
    pub iterations_used: usize,
    pub satisfied: bool,
    pub iterations: Vec<IterationRecord>,
    /// Last model output, returned whether or not it satisfied the checks.
    pub final_output: Option<String>,
    pub final_return: Option<f64>,
    pub aborted: Option<RunAbort>,
    pub model: Option<String>,
    #[serde(default)]
    pub system_prompt: Option<String>,
    pub seed: u64,
    pub training: TrainingConfig,
    pub started_at: String,
    pub finished_at: String,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn responses(&self) -> Vec<String> {
        self.iterations.iter().map(|i| i.response.clone()).collect()
    }

    /// `<spec>_<gammamode>_<timestamp>_<seed>.json`
    pub fn file_name(&self) -> String {
        let spec: String = self
            .spec_name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
            .collect();
        let stamp: String = self
            .started_at
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        format!("{spec}_{}_{stamp}_{}.json", self.gamma_mode.tag(), self.seed)
    }

    /// Writes the record into `dir` via a temporary file and rename.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        let tmp = dir.join(format!(".{}.tmp", self.file_name()));
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }
}

#[derive(Debug, Error)]
pub enum OrchestrateError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("max_iter must be at least 1")]
    ZeroIterations,
    #[error(transparent)]
    Spec(#[from] crate::error::SpecError),
    #[error("cannot aggregate an empty set of runs")]
    NoRecords,
    #[error("runs mix specs or gamma modes: {0}")]
    MixedRecords(String),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: GammaMode,
    pub max_iter: usize,
    pub model: Option<String>,
    pub system_prompt: Option<String>,
}

impl RunOptions {
    pub fn fixed(spec: &WorkflowSpec) -> Self {
        Self {
            mode: GammaMode::Fixed(spec.gamma),
            max_iter: DEFAULT_MAX_ITER,
            model: None,
            system_prompt: Some(DEFAULT_SYSTEM_PROMPT.to_owned()),
        }
    }
}

/// The workflow as the checker sees it: in fixed mode its gamma is the prompt's.
fn effective_spec(spec: &WorkflowSpec, mode: GammaMode) -> WorkflowSpec {
    match mode {
        GammaMode::Fixed(g) => spec.with_gamma(g),
        GammaMode::Unspecified => spec.clone(),
    }
}

pub fn oracle_for(spec: &WorkflowSpec, mode: GammaMode) -> Result<QTable, OrchestrateError> {
    Ok(value_iteration_oracle(
        &effective_spec(spec, mode),
        ORACLE_TOLERANCE,
    )?)
}

/// Parses one response and checks it.
pub fn judge(
    response: &str,
    spec: &WorkflowSpec,
    oracle: &QTable,
    mode: GammaMode,
) -> (ParsedResult, RequirementReport) {
    let checked = effective_spec(spec, mode);
    let parsed = parse_response(response, &checked);
    let report = check_requirements_in_mode(&parsed, &checked, oracle, mode);
    (parsed, report)
}

/// Runs the prompting loop with the default options for `spec`.
pub fn orchestrate(
    spec: &WorkflowSpec,
    client: &dyn ChatClient,
    max_iter: usize,
) -> Result<RunRecord, OrchestrateError> {
    let options = RunOptions {
        max_iter,
        ..RunOptions::fixed(spec)
    };
    orchestrate_with(spec, client, &options)
}

/// Runs the prompting loop. Client failures end the run early; the partial
/// record is returned with `aborted` set.
pub fn orchestrate_with(
    spec: &WorkflowSpec,
    client: &dyn ChatClient,
    options: &RunOptions,
) -> Result<RunRecord, OrchestrateError> {
    if options.max_iter == 0 {
        return Err(OrchestrateError::ZeroIterations);
    }
    let mode = options.mode;
    let initial = render_initial_prompt_with(spec, mode)?;
    let recheck = render_iteration_prompt_with(spec, mode)?;
    let oracle = oracle_for(spec, mode)?;
    let checked = effective_spec(spec, mode);

    let mut record = RunRecord {
        spec_name: spec.name.clone(),
        gamma_mode: mode,
        max_iter: options.max_iter,
        iterations_used: 0,
        satisfied: false,
        iterations: Vec::new(),
        final_output: None,
        final_return: None,
        aborted: None,
        model: options.model.clone(),
        system_prompt: options.system_prompt.clone(),
        seed: spec.training.seed,
        training: spec.training.clone(),
        started_at: now(),
        finished_at: String::new(),
    };

    // Iteration i sends 2i - 1 earlier messages (system prompt, then each
    // prompt/answer pair) ahead of its own prompt.
    let mut conversation: Vec<ChatMessage> = options
        .system_prompt
        .iter()
        .map(|s| ChatMessage::system(s.clone()))
        .collect();
    conversation.push(ChatMessage::user(initial.rendered.clone()));
    for iteration in 1..=options.max_iter {
        let (kind, prompt) = if iteration == 1 {
            (PromptKind::Initial, &initial.rendered)
        } else {
            conversation.push(ChatMessage::user(recheck.rendered.clone()));
            (PromptKind::IterativeCheck, &recheck.rendered)
        };
        record.iterations_used = iteration;
        let response = match client.complete(&conversation) {
            Ok(text) => text,
            Err(e) => {
                record.aborted = Some(RunAbort {
                    kind: AbortKind::from(&e),
                    message: e.to_string(),
                    iteration,
                });
                break;
            }
        };
        conversation.push(ChatMessage::assistant(response.clone()));
        let (parsed, report) = judge(&response, spec, &oracle, mode);
        record.satisfied = report.satisfied;
        record.final_output = Some(response.clone());
        record.final_return = reported_return(&parsed, &checked, mode);
        record.iterations.push(IterationRecord {
            iteration,
            prompt_kind: kind,
            prompt: prompt.clone(),
            response,
            parsed,
            report,
        });
        if record.satisfied {
            break;
        }
    }
    if record.aborted.is_some() {
        record.satisfied = false;
    }
    record.finished_at = now();
    Ok(record)
}

/// Return of the chosen path. With a fixed gamma this is recomputed from
/// the path; with an unspecified gamma the model's own first-step Q-value
/// is preferred since it reflects whatever discount the model picked.
fn reported_return(parsed: &ParsedResult, spec: &WorkflowSpec, mode: GammaMode) -> Option<f64> {
    let computed = path_return(parsed, spec);
    match mode {
        GammaMode::Fixed(_) => computed,
        GammaMode::Unspecified => parsed
            .path_q_values
            .as_ref()
            .and_then(|v| v.first().copied())
            .or_else(|| match parsed.optimal_path.as_slice() {
                [first, second, ..] => parsed.reported(first, second),
                _ => None,
            })
            .or(computed),
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Runs `runs` independent loops, at most `parallelism` at a time. Each run
/// gets a fresh conversation and the client produced by `make_client`.
/// Records come back in run order; run `i` uses seed `spec seed + i`.
pub fn orchestrate_many<F>(
    spec: &WorkflowSpec,
    options: &RunOptions,
    runs: usize,
    parallelism: usize,
    make_client: F,
) -> Result<Vec<RunRecord>, OrchestrateError>
where
    F: Fn(usize) -> Result<Box<dyn ChatClient>, LlmError> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunRecord, OrchestrateError>>>> =
        Mutex::new((0..runs).map(|_| None).collect());
    let workers = parallelism.clamp(1, runs.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= runs {
                    break;
                }
                let run_spec = spec.with_seed(spec.training.seed.wrapping_add(i as u64));
                let outcome = match make_client(i) {
                    Ok(client) => orchestrate_with(&run_spec, client.as_ref(), options),
                    Err(e) => aborted_before_start(&run_spec, options, &e),
                };
                slots.lock().expect("lock")[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .expect("lock")
        .into_iter()
        .map(|slot| slot.expect("every run finished"))
        .collect()
}

fn aborted_before_start(
    spec: &WorkflowSpec,
    options: &RunOptions,
    error: &LlmError,
) -> Result<RunRecord, OrchestrateError> {
    let stamp = now();
    Ok(RunRecord {
        spec_name: spec.name.clone(),
        gamma_mode: options.mode,
        max_iter: options.max_iter,
        iterations_used: 0,
        satisfied: false,
        iterations: Vec::new(),
        final_output: None,
        final_return: None,
        aborted: Some(RunAbort {
            kind: AbortKind::from(error),
            message: error.to_string(),
            iteration: 0,
        }),
        model: options.model.clone(),
        system_prompt: options.system_prompt.clone(),
        seed: spec.training.seed,
        training: spec.training.clone(),
        started_at: stamp.clone(),
        finished_at: stamp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population mean and standard deviation. Values are shifted by the
    /// first sample, so identical samples give exactly that mean and 0.0.
    pub fn of(values: &[f64]) -> Option<Self> {
        let &pivot = values.first()?;
        let n = values.len() as f64;
        let shifted_mean = values.iter().map(|v| v - pivot).sum::<f64>() / n;
        let var = values
            .iter()
            .map(|v| (v - pivot - shifted_mean).powi(2))
            .sum::<f64>()
            / n;
        Some(Self {
            mean: pivot + shifted_mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub spec_name: String,
    pub gamma_mode: GammaMode,
    pub n_runs: usize,
    pub iterations: MeanStd,
    /// Over satisfied runs only; `None` when no run was satisfied.
    pub optimal_reward: Option<MeanStd>,
    pub success_rate: f64,
}

pub fn aggregate_stats(records: &[RunRecord]) -> Result<RunStats, OrchestrateError> {
    let first = records.first().ok_or(OrchestrateError::NoRecords)?;
    if let Some(other) = records
        .iter()
        .find(|r| r.spec_name != first.spec_name || r.gamma_mode != first.gamma_mode)
    {
        return Err(OrchestrateError::MixedRecords(format!(
            "{} ({}) vs {} ({})",
            first.spec_name, first.gamma_mode, other.spec_name, other.gamma_mode
        )));
    }
    let iterations: Vec<f64> = records.iter().map(|r| r.iterations_used as f64).collect();
    let rewards: Vec<f64> = records
        .iter()
        .filter(|r| r.satisfied)
        .filter_map(|r| r.final_return)
        .collect();
    let satisfied = records.iter().filter(|r| r.satisfied).count();
    Ok(RunStats {
        spec_name: first.spec_name.clone(),
        gamma_mode: first.gamma_mode,
        n_runs: records.len(),
        iterations: MeanStd::of(&iterations).expect("nonempty"),
        optimal_reward: MeanStd::of(&rewards),
        success_rate: satisfied as f64 / records.len() as f64,
    })
}

/// Plain-text table with one row per configuration.
pub fn format_report(stats: &[RunStats]) -> String {
    let header = [
        "Task".to_owned(),
        "γ".to_owned(),
        "Iterations N(μ, σ)".to_owned(),
        "Optimal Reward N(μ, σ)".to_owned(),
        "Success".to_owned(),
    ];
    let rows: Vec<[String; 5]> = stats
        .iter()
        .map(|s| {
            [
                s.spec_name.clone(),
                s.gamma_mode.to_string(),
                format!("({:.1}, {:.1})", s.iterations.mean, s.iterations.std),
                s.optimal_reward.map_or("-".to_owned(), |r| {
                    format!("({:.5}, {:.1})", r.mean + 0.0, r.std)
                }),
                format!("{}/{}", (s.success_rate * s.n_runs as f64).round(), s.n_runs),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].chars().count())
                .chain(std::iter::once(header[i].chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_owned()
    };
    let mut out = line(&header) + "\n";
    out.push_str(
        &widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-+-"),
    );
    out.push('\n');
    for row in &rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}
