//! Command-line front end.
//!
//! Exit codes: 0 ok, 1 other failure (I/O, verification mismatch),
//! 2 spec or usage error, 3 missing API key, 4 mock script exhausted,
//! 5 run aborted by a client error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::SpecError;
use crate::llm::{
    ChatClient, HttpChatClient, LlmConfig, LlmError, ScriptedClient, API_KEY_ENV, BASE_URL_ENV,
    DEFAULT_BASE_URL,
};
use crate::mdp::{discounted_return, Termination, WorkflowSpec};
use crate::orchestrator::{
    aggregate_stats, format_report, judge, oracle_for, orchestrate_many, orchestrate_with,
    AbortKind, RunOptions, RunRecord, DEFAULT_MAX_ITER, DEFAULT_SYSTEM_PROMPT,
};
use crate::parse::{verify_against_oracle, RETURN_TOLERANCE};
use crate::prompt::{render_initial_prompt_with, render_iteration_prompt_with, GammaMode};
use crate::qlearn::{greedy_episode, train, QTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_SPEC: i32 = 2;
pub const EXIT_AUTH: i32 = 3;
pub const EXIT_MOCK_EXHAUSTED: i32 = 4;
pub const EXIT_ABORTED: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "workflow-ql", version, about = "Optimize workflow MDPs with Q-learning and iterative LLM prompting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train locally and print the Q-table and the greedy episode.
    Solve(SolveArgs),
    /// Render the initial or iterative-check prompt.
    Prompt(PromptArgs),
    /// Run the prompting loop once against a live endpoint or a mock script.
    Run(RunArgs),
    /// Re-check a saved run record against the workflow's oracle.
    Verify(VerifyArgs),
    /// Run the prompting loop several times and print summary statistics.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SpecArg {
    /// Workflow spec file.
    #[arg(value_name = "SPEC", conflicts_with = "spec")]
    pub spec_path: Option<PathBuf>,
    /// Workflow spec file, as an alternative to the positional argument.
    #[arg(long = "spec", value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Override the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub spec: SpecArg,
    /// Also write the Q-table CSV to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Emit {
    Initial,
    Iterative,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[command(flatten)]
    pub spec: SpecArg,
    #[arg(long, value_enum, default_value = "initial")]
    pub emit: Emit,
    /// `unset` to leave gamma to the model, or a value in [0, 1].
    #[arg(long, value_parser = parse_gamma)]
    pub gamma: Option<GammaChoice>,
    /// Write the prompt here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    /// Mock script: responses separated by lines holding only `---`.
    #[arg(long, conflicts_with = "base_url")]
    pub mock: Option<PathBuf>,
    /// OpenAI-compatible API base; falls back to WORKFLOW_QL_BASE_URL, then api.openai.com.
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long, default_value = "gpt-4")]
    pub model: String,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    pub timeout: u64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    /// System message opening each conversation; an empty string sends none.
    #[arg(long)]
    pub system_prompt: Option<String>,
}

impl ClientArgs {
    fn system_prompt(&self) -> Option<String> {
        match self.system_prompt.as_deref() {
            None => Some(DEFAULT_SYSTEM_PROMPT.to_owned()),
            Some("") => None,
            Some(text) => Some(text.to_owned()),
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub spec: SpecArg,
    #[command(flatten)]
    pub client: ClientArgs,
    /// `unset` to leave gamma to the model, or a value in [0, 1].
    #[arg(long, value_parser = parse_gamma)]
    pub gamma: Option<GammaChoice>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Directory for the run record; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also train locally and compare the model's answer with it.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub spec: SpecArg,
    /// Saved run record.
    #[arg(long)]
    pub record: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub spec: SpecArg,
    #[command(flatten)]
    pub client: ClientArgs,
    /// `unset` to leave gamma to the model, or a value in [0, 1].
    #[arg(long, value_parser = parse_gamma)]
    pub gamma: Option<GammaChoice>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Runs executed at the same time.
    #[arg(long, default_value_t = 4)]
    pub parallel: usize,
    /// Directory for the per-run records.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaChoice {
    Unset,
    Value(f64),
}

fn parse_gamma(s: &str) -> Result<GammaChoice, String> {
    if s.eq_ignore_ascii_case("unset") || s.eq_ignore_ascii_case("uns") {
        return Ok(GammaChoice::Unset);
    }
    let g: f64 = s
        .parse()
        .map_err(|_| format!("expected `unset` or a number, got `{s}`"))?;
    if (0.0..=1.0).contains(&g) {
        Ok(GammaChoice::Value(g))
    } else {
        Err(format!("gamma {g} is outside [0, 1]"))
    }
}

fn gamma_mode(choice: Option<GammaChoice>, spec: &WorkflowSpec) -> GammaMode {
    match choice {
        Some(GammaChoice::Unset) => GammaMode::Unspecified,
        Some(GammaChoice::Value(g)) => GammaMode::Fixed(g),
        None => GammaMode::Fixed(spec.gamma),
    }
}

/// Environment values the CLI consults, captured up front.
#[derive(Debug, Clone, Default)]
pub struct Env {
    pub api_key: Option<String>,
    pub base_url: Option<String>,
}

impl Env {
    pub fn from_process() -> Self {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        Self {
            api_key: get(API_KEY_ENV),
            base_url: get(BASE_URL_ENV),
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<SpecError> for Failure {
    fn from(e: SpecError) -> Self {
        let code = match e {
            SpecError::Io { .. } | SpecError::Parse(_) | SpecError::Invalid(_) => EXIT_SPEC,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display()))
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, env: &Env, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_SPEC,
            };
        }
    };
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(&args, out),
        Command::Prompt(args) => cmd_prompt(&args, out),
        Command::Run(args) => cmd_run(&args, env, out),
        Command::Verify(args) => cmd_verify(&args, out),
        Command::Report(args) => cmd_report(&args, env, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn load_spec(arg: &SpecArg) -> Result<WorkflowSpec, Failure> {
    let path = arg
        .spec_path
        .as_ref()
        .or(arg.spec.as_ref())
        .ok_or_else(|| Failure::new(EXIT_SPEC, "no workflow spec given"))?;
    let spec = WorkflowSpec::load(path)?;
    Ok(match arg.seed {
        Some(seed) => spec.with_seed(seed),
        None => spec,
    })
}

/// Text printed by `solve`: the Q-table CSV followed by the greedy episode.
pub fn solve_output(spec: &WorkflowSpec) -> Result<(QTable, String), SpecError> {
    let q = train(spec)?;
    let episode = greedy_episode(spec, &q)?;
    let mut text = q.to_csv();
    text.push('\n');
    text.push_str("optimal episode:\n");
    for (k, t) in episode.transitions.iter().enumerate() {
        let value = q.get(&t.state, &t.action).unwrap_or(f64::NAN);
        text.push_str(&format!(
            "{:>3}. {} -> {}  reward={}  q={:.6}\n",
            k + 1,
            t.state,
            t.action,
            t.reward + 0.0,
            value + 0.0
        ));
    }
    let path: Vec<String> = episode.path().iter().map(ToString::to_string).collect();
    text.push_str(&format!("path: {}\n", path.join(" → ")));
    if episode.terminated_by == Termination::StepCapHit {
        text.push_str(&format!(
            "warning: greedy episode hit the {}-step cap before reaching {}\n",
            spec.training.max_steps, spec.terminal
        ));
    }
    text.push_str(&format!(
        "discounted return (gamma={}): {:.6}\n",
        spec.gamma,
        discounted_return(&episode, spec.gamma) + 0.0
    ));
    Ok((q, text))
}

fn cmd_solve(args: &SolveArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let spec = load_spec(&args.spec)?;
    let (q, text) = solve_output(&spec)?;
    if let Some(path) = &args.out {
        std::fs::write(path, q.to_csv()).map_err(|e| io_failure(path, e))?;
    }
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    Ok(EXIT_OK)
}

fn cmd_prompt(args: &PromptArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let spec = load_spec(&args.spec)?;
    let mode = gamma_mode(args.gamma, &spec);
    let bundle = match args.emit {
        Emit::Initial => render_initial_prompt_with(&spec, mode),
        Emit::Iterative => render_iteration_prompt_with(&spec, mode),
    }
    .map_err(|e| Failure::new(EXIT_SPEC, e.to_string()))?;
    match &args.out {
        Some(path) => std::fs::write(path, &bundle.rendered).map_err(|e| io_failure(path, e))?,
        None => out
            .write_all(bundle.rendered.as_bytes())
            .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?,
    }
    Ok(EXIT_OK)
}

fn llm_config(args: &ClientArgs, env: &Env) -> LlmConfig {
    LlmConfig {
        base_url: args
            .base_url
            .clone()
            .or_else(|| env.base_url.clone())
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_owned()),
        model: args.model.clone(),
        temperature: args.temperature,
        timeout: Duration::from_secs(args.timeout.max(1)),
        max_retries: args.max_retries,
        ..LlmConfig::default()
    }
}

enum ClientSource {
    Mock(String),
    Live(Arc<HttpChatClient>),
}

impl ClientSource {
    fn new(args: &ClientArgs, env: &Env) -> Result<Self, Failure> {
        match &args.mock {
            Some(path) => {
                let script = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
                Ok(ClientSource::Mock(script))
            }
            None => {
                let key = env.api_key.clone().ok_or_else(|| {
                    Failure::new(EXIT_AUTH, LlmError::MissingApiKey.to_string())
                })?;
                let client = HttpChatClient::new(llm_config(args, env), Some(key))
                    .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
                Ok(ClientSource::Live(Arc::new(client)))
            }
        }
    }

    fn client(&self) -> Box<dyn ChatClient> {
        match self {
            ClientSource::Mock(script) => Box::new(ScriptedClient::from_script(script)),
            ClientSource::Live(client) => Box::new(Arc::clone(client)),
        }
    }

    fn model(&self, args: &ClientArgs) -> Option<String> {
        match self {
            ClientSource::Mock(_) => Some("mock".to_owned()),
            ClientSource::Live(_) => Some(args.model.clone()),
        }
    }
}

fn abort_code(record: &RunRecord) -> i32 {
    match record.aborted.as_ref().map(|a| a.kind) {
        None => EXIT_OK,
        Some(AbortKind::ScriptExhausted) => EXIT_MOCK_EXHAUSTED,
        Some(_) => EXIT_ABORTED,
    }
}

fn summarize(record: &RunRecord) -> String {
    let mut text = format!(
        "{} [{}]: {} after {} of {} iteration(s)",
        record.spec_name,
        record.gamma_mode,
        if record.satisfied { "satisfied" } else { "not satisfied" },
        record.iterations_used,
        record.max_iter
    );
    if let Some(r) = record.final_return {
        text.push_str(&format!(", return {:.5}", r + 0.0));
    }
    if let Some(a) = &record.aborted {
        text.push_str(&format!(", aborted: {}", a.message));
    }
    if let Some(last) = record.iterations.last() {
        let failed = last.report.failed();
        if !failed.is_empty() {
            text.push_str(&format!(", failing {}", failed.join(",")));
        }
    }
    text.push('\n');
    text
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))
}

fn cmd_run(args: &RunArgs, env: &Env, out: &mut dyn Write) -> Result<i32, Failure> {
    let spec = load_spec(&args.spec)?;
    let source = ClientSource::new(&args.client, env)?;
    let options = RunOptions {
        mode: gamma_mode(args.gamma, &spec),
        max_iter: args.max_iter,
        model: source.model(&args.client),
        system_prompt: args.client.system_prompt(),
    };
    let client = source.client();
    let record = orchestrate_with(&spec, client.as_ref(), &options)
        .map_err(|e| Failure::new(EXIT_SPEC, e.to_string()))?;
    match &args.out {
        Some(dir) => {
            let path = record.write_to_dir(dir).map_err(|e| io_failure(dir, e))?;
            write_out(out, &format!("record: {}\n", path.display()))?;
        }
        None => write_out(out, &(record.to_json() + "\n"))?,
    }
    write_out(out, &summarize(&record))?;

    if args.verify {
        let checked = match options.mode {
            GammaMode::Fixed(g) => spec.with_gamma(g),
            GammaMode::Unspecified => spec.clone(),
        };
        let oracle = oracle_for(&spec, options.mode)
            .map_err(|e| Failure::new(EXIT_SPEC, e.to_string()))?;
        let local = train(&checked)?;
        let local_path = greedy_episode(&checked, &local)?.path();
        let mut text = format!(
            "local Q-learning path: {}\n",
            local_path.iter().map(ToString::to_string).collect::<Vec<_>>().join(" → ")
        );
        if let Some(last) = record.iterations.last() {
            text.push_str(&format!(
                "model path matches local: {}\n",
                last.parsed.optimal_path == local_path
            ));
            for d in verify_against_oracle(&last.parsed, &oracle, RETURN_TOLERANCE) {
                text.push_str(&format!(
                    "{} -> {}: reported {} oracle {:.6} delta {:.6}{}\n",
                    d.state,
                    d.action,
                    d.reported,
                    d.oracle,
                    d.delta,
                    if d.flagged { "  FLAGGED" } else { "" }
                ));
            }
        }
        write_out(out, &text)?;
    }
    Ok(abort_code(&record))
}

fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let spec = load_spec(&args.spec)?;
    let text = std::fs::read_to_string(&args.record).map_err(|e| io_failure(&args.record, e))?;
    let record = RunRecord::from_json(&text)
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", args.record.display())))?;
    let oracle = oracle_for(&spec, record.gamma_mode)
        .map_err(|e| Failure::new(EXIT_SPEC, e.to_string()))?;
    let mut consistent = true;
    let mut report = String::new();
    for it in &record.iterations {
        let (parsed, fresh) = judge(&it.response, &spec, &oracle, record.gamma_mode);
        let same = fresh == it.report && parsed == it.parsed;
        consistent &= same;
        report.push_str(&format!(
            "iteration {}: {} (failed: {}){}\n",
            it.iteration,
            if fresh.satisfied { "satisfied" } else { "not satisfied" },
            if fresh.failed().is_empty() { "none".to_owned() } else { fresh.failed().join(",") },
            if same { "" } else { "  MISMATCH with recorded verdict" }
        ));
    }
    let last_satisfied = record
        .iterations
        .last()
        .map(|it| judge(&it.response, &spec, &oracle, record.gamma_mode).1.satisfied)
        .unwrap_or(false);
    if last_satisfied != record.satisfied {
        consistent = false;
    }
    report.push_str(&format!(
        "record {}: satisfied={} iterations_used={}\n",
        if consistent { "consistent" } else { "INCONSISTENT" },
        record.satisfied,
        record.iterations_used
    ));
    write_out(out, &report)?;
    Ok(if consistent { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_report(args: &ReportArgs, env: &Env, out: &mut dyn Write) -> Result<i32, Failure> {
    let spec = load_spec(&args.spec)?;
    let source = ClientSource::new(&args.client, env)?;
    let options = RunOptions {
        mode: gamma_mode(args.gamma, &spec),
        max_iter: args.max_iter,
        model: source.model(&args.client),
        system_prompt: args.client.system_prompt(),
    };
    let records = orchestrate_many(&spec, &options, args.runs, args.parallel, |_| {
        Ok(source.client())
    })
    .map_err(|e| Failure::new(EXIT_SPEC, e.to_string()))?;
    if let Some(dir) = &args.out {
        for record in &records {
            record.write_to_dir(dir).map_err(|e| io_failure(dir, e))?;
        }
    }
    let stats = aggregate_stats(&records).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    write_out(out, &format_report(&[stats]))?;
    Ok(records
        .iter()
        .map(abort_code)
        .find(|&c| c != EXIT_OK)
        .unwrap_or(EXIT_OK))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_flag_values() {
        assert_eq!(parse_gamma("unset"), Ok(GammaChoice::Unset));
        assert_eq!(parse_gamma("0.9"), Ok(GammaChoice::Value(0.9)));
        assert!(parse_gamma("1.5").is_err());
        assert!(parse_gamma("abc").is_err());
    }

    #[test]
    fn mock_and_live_flags_conflict() {
        let parsed = Cli::try_parse_from([
            "workflow-ql",
            "run",
            "spec.json",
            "--mock",
            "a.mock",
            "--base-url",
            "http://x",
        ]);
        assert!(parsed.is_err());
    }

    #[test]
    fn missing_spec_is_a_spec_error() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(["workflow-ql", "solve"], &Env::default(), &mut out, &mut err);
        assert_eq!(code, EXIT_SPEC);
    }
}
