//! The `acpo` command line.
//!
//! Exit status: 0 on success, 2 on unreadable or invalid input, 3 when the
//! scorer receives no records, 1 for any other failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::env::{generate_tasks, read_tasks, write_tasks, OutcomeModel, DIFFICULTY_LEVELS};
use crate::policy::PolicyParams;
use crate::reward::RewardWeights;
use crate::seeding::{stream, Purpose};
use crate::trainer::{evaluate, run_pipeline, EvalConfig, EvalReport, RunFiles, TrainConfig, TrainError};
use crate::wire::{read_rollouts, score_records, sig9, WireError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_EMPTY: i32 = 3;

pub const SEED_ENV: &str = "ACPO_SEED";

#[derive(Debug, Parser)]
#[command(name = "acpo", version, about = "Adaptive fast/slow reasoning policy optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score rollout JSONL with the composite reward and group advantages.
    Score(ScoreArgs),
    /// Run cold start and RL, writing a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a task set.
    Eval(EvalArgs),
    /// Per-difficulty curves from one or more run directories.
    Report(ReportArgs),
    /// Generate a task set as JSONL.
    Tasks(TasksArgs),
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Rollout JSONL; `-` or nothing reads standard input.
    input: Option<PathBuf>,
    /// w_acc,w_len,w_think
    #[arg(long, value_parser = parse_triple)]
    weights: Option<[f64; 3]>,
    #[arg(long)]
    p_thresh: Option<f64>,
    /// pos,neg
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    clip: Option<[f64; 2]>,
    #[arg(long, default_value_t = 1e-8)]
    eps_std: f64,
    /// Output path; standard output by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides both the config file and ACPO_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Held-out tasks to evaluate on instead of generating them.
    #[arg(long)]
    eval_tasks: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 0.6)]
    temperature: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 64)]
    max_tokens: usize,
    #[arg(long, default_value_t = OutcomeModel::default().q0)]
    q0: f64,
    #[arg(long, default_value_t = OutcomeModel::default().q1)]
    q1: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directory containing eval_report.json; repeat to compare runs.
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    /// Read eval_sft.json instead of the final report.
    #[arg(long)]
    sft: bool,
    /// Curve CSV path; standard output by default. The summary table goes
    /// next to it as `<stem>_summary.csv`, or to standard error.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TasksArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    first_id: u64,
    /// Probabilities of levels 1..=5, comma separated.
    #[arg(long, value_parser = parse_list)]
    mix: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Empty(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Empty(_) => EXIT_EMPTY,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    parse_list(s)?.try_into().map_err(|_| "expected three comma-separated numbers".to_owned())
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    parse_list(s)?.try_into().map_err(|_| "expected two comma-separated numbers".to_owned())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Score(a) => cmd_score(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
        Command::Tasks(a) => cmd_tasks(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("acpo: {e}");
            e.code()
        }
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::Failure(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Failure(format!("stdout: {e}")))
        }
    }
}

fn cmd_score(a: ScoreArgs) -> Result<(), CliError> {
    let mut weights = RewardWeights::default();
    if let Some([acc, len, think]) = a.weights {
        weights.w_acc = acc;
        weights.w_len = len;
        weights.w_think = think;
    }
    if let Some(p) = a.p_thresh {
        weights.p_thresh = p;
    }
    if let Some([pos, neg]) = a.clip {
        weights.clip_pos = pos;
        weights.clip_neg = neg;
    }
    weights.validate().map_err(CliError::Input)?;

    let records = match a.input.as_deref() {
        None => read_rollouts(io::stdin().lock()),
        Some(p) if p == Path::new("-") => read_rollouts(io::stdin().lock()),
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            read_rollouts(BufReader::new(f))
        }
    }
    .map_err(|e| match e {
        WireError::Empty => CliError::Empty(e.to_string()),
        other => CliError::Input(other.to_string()),
    })?;

    let scored = score_records(&records, &weights, a.eps_std).map_err(|e| CliError::Input(e.to_string()))?;
    let mut body = String::new();
    for s in &scored {
        body.push_str(&s.to_json_line());
        body.push('\n');
    }
    write_output(a.out.as_deref(), body.as_bytes())
}

/// Loads a TOML run config. Errors name the offending field path.
pub fn load_config(path: &Path) -> Result<TrainConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn parse_config(text: &str) -> Result<TrainConfig, String> {
    let de = toml::Deserializer::parse(text).map_err(|e| e.to_string())?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().message().trim().to_owned();
        if path == "." {
            inner
        } else {
            format!("field `{path}`: {inner}")
        }
    })
}

/// Seed precedence: explicit flag, then `ACPO_SEED`, then the config file.
fn resolve_seed(flag: Option<u64>, env: Option<&str>, file: u64) -> Result<u64, String> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|e| format!("{SEED_ENV}={v:?}: {e}")),
        _ => Ok(file),
    }
}

fn load_tasks(path: &Path) -> Result<Vec<crate::env::Task>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let tasks = read_tasks(BufReader::new(f)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if tasks.is_empty() {
        return Err(CliError::Input(format!("{}: no tasks", path.display())));
    }
    Ok(tasks)
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) => CliError::Input(e.to_string()),
        other => CliError::Failure(other.to_string()),
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut config = match &a.config {
        Some(p) => load_config(p).map_err(CliError::Input)?,
        None => TrainConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    config.seed = resolve_seed(a.seed, env.as_deref(), config.seed).map_err(CliError::Input)?;
    config.validate().map_err(train_error)?;
    let eval_tasks = a.eval_tasks.as_deref().map(load_tasks).transpose()?;
    let summary = run_pipeline(&config, &a.out, eval_tasks, |line| eprintln!("{line}")).map_err(train_error)?;
    eprintln!("wrote {}", summary.files.dir.display());
    Ok(())
}

// `!(x > 0.0)` also rejects NaN
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.checkpoint).map_err(|e| CliError::Input(format!("{}: {e}", a.checkpoint.display())))?;
    let params = PolicyParams::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", a.checkpoint.display())))?;
    let tasks = load_tasks(&a.tasks)?;
    if a.samples == 0 || a.max_tokens == 0 || !(a.temperature > 0.0) {
        return Err(CliError::Input("samples and max-tokens must be at least 1, temperature positive".into()));
    }
    let outcome = OutcomeModel { q0: a.q0, q1: a.q1 };
    if !(0.0 <= outcome.q0 && outcome.q0 <= outcome.q1 && outcome.q1 <= 1.0) {
        return Err(CliError::Input("need 0 <= q0 <= q1 <= 1".into()));
    }
    let env = std::env::var(SEED_ENV).ok();
    let cfg = EvalConfig {
        samples_per_task: a.samples,
        temperature: a.temperature,
        max_tokens: a.max_tokens,
        outcome,
        seed: resolve_seed(a.seed, env.as_deref(), 0).map_err(CliError::Input)?,
    };
    let report = evaluate(&params, &tasks, &cfg).map_err(|e| match e {
        TrainError::Policy(_) => CliError::Input(e.to_string()),
        other => CliError::Failure(other.to_string()),
    })?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Failure(e.to_string()))? + "\n";
    write_output(a.out.as_deref(), json.as_bytes())
}

fn read_report(path: &Path) -> Result<EvalReport, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

const CURVE_COLUMNS: [&str; 5] = ["pass1", "avg_tokens", "rho_fast", "rho_slow", "slow_segments"];

/// Per-difficulty CSV. With several reports the columns are prefixed
/// `run1_`, `run2_`, ... in argument order.
pub fn curves_csv(reports: &[EvalReport]) -> String {
    let prefix = |i: usize| {
        if reports.len() == 1 {
            String::new()
        } else {
            format!("run{}_", i + 1)
        }
    };
    let mut out = String::from("difficulty");
    for i in 0..reports.len() {
        for c in CURVE_COLUMNS {
            out.push_str(&format!(",{}{c}", prefix(i)));
        }
    }
    out.push('\n');
    for level in 1..=DIFFICULTY_LEVELS as u8 {
        if reports.iter().all(|r| r.row(level).is_none()) {
            continue;
        }
        out.push_str(&level.to_string());
        for r in reports {
            match r.row(level) {
                Some(row) => {
                    for v in [row.pass1, row.avg_tokens, row.rho_fast, row.rho_slow, row.slow_segments] {
                        out.push(',');
                        out.push_str(&sig9(v));
                    }
                }
                None => out.push_str(&",".repeat(CURVE_COLUMNS.len())),
            }
        }
        out.push('\n');
    }
    out
}

pub fn summary_csv(reports: &[EvalReport], labels: &[String]) -> String {
    let mut out = String::from("run,pass1,avg_tokens,acu,samples_per_task,temperature\n");
    for (r, label) in reports.iter().zip(labels) {
        out.push_str(&format!(
            "{label},{},{},{},{},{}\n",
            sig9(r.pass1),
            sig9(r.avg_tokens),
            sig9(r.acu),
            r.samples_per_task,
            sig9(r.temperature)
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for dir in &a.runs {
        let files = RunFiles::new(dir);
        reports.push(read_report(&if a.sft { files.sft_eval() } else { files.report() })?);
    }
    let labels: Vec<String> = a.runs.iter().map(|d| csv_field(&d.display().to_string())).collect();
    let curves = curves_csv(&reports);
    let summary = summary_csv(&reports, &labels);
    match &a.out {
        Some(p) => {
            write_output(Some(p), curves.as_bytes())?;
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
            let sp = p.with_file_name(format!("{stem}_summary.csv"));
            write_output(Some(&sp), summary.as_bytes())
        }
        None => {
            write_output(None, curves.as_bytes())?;
            eprint!("{summary}");
            Ok(())
        }
    }
}

fn cmd_tasks(a: TasksArgs) -> Result<(), CliError> {
    let mix = a.mix.unwrap_or_else(|| vec![1.0 / DIFFICULTY_LEVELS as f64; DIFFICULTY_LEVELS]);
    let mut rng = stream(a.seed, Purpose::Tasks, &[a.first_id]);
    let tasks = generate_tasks(a.count, &mix, a.first_id, &mut rng).map_err(|e| CliError::Input(e.to_string()))?;
    let mut buf = Vec::new();
    write_tasks(&tasks, &mut buf).map_err(|e| CliError::Failure(e.to_string()))?;
    write_output(a.out.as_deref(), &buf)
}
