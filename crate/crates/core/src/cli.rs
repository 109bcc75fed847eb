//! The `tabrl` experiment runner.
//!
//! Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error
//! (bad flag, unknown environment or policy), 3 when `--strict` is given
//! and an iterative method did not converge.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dp;
use crate::environments::{make_env, named_policy, EnvSpec, Overrides};
use crate::error::Error;
use crate::mc::{self, VisitMode};
use crate::mdp::{StartDistribution, TabularPolicy, Trajectory};
use crate::pg::{self, AcMode, ClipMode, CriticTable, PgConfig, ThetaPolicy};
use crate::quantum::{self, GaussianActor, QubitState};
use crate::seeded_rng;
use crate::td::{self, LearningConfig, StepSize};

#[derive(Debug, Parser)]
#[command(name = "tabrl", version, about = "Seeded tabular RL experiments on small grid worlds")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// grid1d9, grid1d9_stochastic, grid2x2, grid3x3 or grid1d8_two_terminal
    #[arg(long, global = true)]
    pub env: Option<String>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the result here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Environment override, e.g. `--set terminal_reward=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Exit with status 3 if an iterative method stops before converging.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Run N times with seeds seed, seed+1, ... and add summary statistics.
    #[arg(long, global = true, default_value_t = 1)]
    pub repeat: u64,
    /// Start every episode here instead of a uniformly chosen state.
    #[arg(long, global = true)]
    pub start: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Model-based evaluation and control.
    #[command(subcommand)]
    Dp(DpCommand),
    /// Monte Carlo policy evaluation.
    Mc(McArgs),
    /// Temporal-difference evaluation and control.
    #[command(subcommand)]
    Td(TdCommand),
    /// Policy-gradient methods on left/right worlds.
    #[command(subcommand)]
    Pg(PgCommand),
    /// Single-qubit rotation control.
    #[command(subcommand)]
    Quantum(QuantumCommand),
}

#[derive(Debug, Clone, Args)]
pub struct PolicyArgs {
    /// uniform, table1, improved, or a path to a policy JSON file
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub policy_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMethod {
    Analytic,
    Iterative,
}

#[derive(Debug, Subcommand)]
pub enum DpCommand {
    /// Evaluate a fixed policy.
    Eval {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, value_enum, default_value_t = EvalMethod::Analytic)]
        method: EvalMethod,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_sweeps: usize,
    },
    /// Policy iteration.
    Pi {
        /// Starting policy (default uniform).
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Value iteration.
    Vi {
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_sweeps: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Visit {
    First,
    Every,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum, default_value_t = Visit::First)]
    pub mode: Visit,
    #[arg(long, default_value_t = 10_000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_steps: usize,
    /// Replay the episodes in this JSON file instead of sampling.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ControlArgs {
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Per-episode multiplier for epsilon; 1 disables decay.
    #[arg(long, default_value_t = 0.995)]
    pub epsilon_decay: f64,
    #[arg(long, default_value_t = 2000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 100)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 0.0)]
    pub q_init: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Schedule {
    Constant,
    InverseCount,
    Polynomial,
}

#[derive(Debug, Subcommand)]
pub enum TdCommand {
    /// TD(0) policy evaluation.
    Eval {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, value_enum, default_value_t = Schedule::Constant)]
        step_size: Schedule,
        /// Exponent for `--step-size polynomial`: α = n^(−omega).
        #[arg(long, default_value_t = 0.8)]
        omega: f64,
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        #[arg(long, default_value_t = 1000)]
        max_steps: usize,
        /// Learn from the episodes in this JSON file instead of sampling.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// On-policy TD control.
    Sarsa(ControlArgs),
    /// Off-policy TD control.
    Qlearn(ControlArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AcModeArg {
    Online,
    PaperTrace,
}

#[derive(Debug, Subcommand)]
pub enum PgCommand {
    /// Monte Carlo policy gradient.
    Reinforce {
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 5000)]
        episodes: usize,
        #[arg(long, default_value_t = 100)]
        max_steps: usize,
        /// Apply one update from the episode in this JSON file.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Tabular actor-critic.
    Ac {
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 5000)]
        episodes: usize,
        #[arg(long, default_value_t = 100)]
        max_steps: usize,
        #[arg(long, value_enum, default_value_t = AcModeArg::Online)]
        mode: AcModeArg,
        /// Learn from the episodes in this JSON file instead of sampling.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Include the per-step trace for sampled runs.
        #[arg(long)]
        trace: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum QuantumCommand {
    /// Learn the X rotation taking |0> to |1>.
    Train {
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma0: f64,
        #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
        mu0: f64,
    },
}

/// Everything one run produced, plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub command: String,
    pub config: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    /// Per-episode returns for sampling methods, per-sweep changes for
    /// value iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<f64>,
    /// Method-specific outputs: values, q, policy, theta, ...
    #[serde(flatten)]
    pub outputs: Map<String, Value>,
    pub wall_time: f64,
}

impl RunResult {
    pub fn from_json(text: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub runs: Vec<RunResult>,
    pub summary: Map<String, Value>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownEnvironment { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `args` (program name first), runs the experiment, and writes the
/// result to `--out` or `out`. Diagnostics go to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    2
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(strict_failure) => {
            if strict_failure {
                let _ = writeln!(err, "error: did not converge");
                3
            } else {
                0
            }
        }
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}

/// Returns whether `--strict` should fail the run.
fn execute(cli: &Cli, out: &mut dyn Write) -> Outcome<bool> {
    let g = &cli.global;
    if g.repeat == 0 {
        return Err(usage("--repeat must be at least 1"));
    }
    let (text, not_converged) = if g.repeat == 1 {
        let r = run_once(cli, g.seed)?;
        let nc = r.converged == Some(false);
        let text = match g.format {
            Format::Json => pretty(&r)?,
            Format::Csv => to_csv(&[(g.seed, &r)], false)?,
        };
        (text, nc)
    } else {
        let runs: Vec<RunResult> = (g.seed..g.seed + g.repeat)
            .into_par_iter()
            .map(|seed| run_once(cli, seed))
            .collect::<Outcome<_>>()?;
        let nc = runs.iter().any(|r| r.converged == Some(false));
        let text = match g.format {
            Format::Json => pretty(&RepeatResult {
                summary: summarize(&runs),
                runs,
            })?,
            Format::Csv => {
                let tagged: Vec<(u64, &RunResult)> = (g.seed..).zip(runs.iter()).collect();
                to_csv(&tagged, true)?
            }
        };
        (text, nc)
    };
    match &g.out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?,
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Runtime(e.to_string()))?,
    }
    Ok(g.strict && not_converged)
}

fn pretty<T: Serialize>(v: &T) -> Outcome<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::Runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn to_csv(runs: &[(u64, &RunResult)], with_seed: bool) -> Outcome<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Failure::Runtime(e.to_string());
    let use_history = runs.iter().all(|(_, r)| !r.history.is_empty());
    let mut header = Vec::new();
    if with_seed {
        header.push("seed");
    }
    if use_history {
        header.extend(["episode", "value"]);
    } else {
        header.extend(["state", "value"]);
    }
    w.write_record(&header).map_err(err)?;
    for (seed, r) in runs {
        let rows: Vec<(String, String)> = if use_history {
            r.history
                .iter()
                .enumerate()
                .map(|(i, v)| ((i + 1).to_string(), v.to_string()))
                .collect()
        } else {
            let values = r
                .outputs
                .get("values")
                .and_then(Value::as_object)
                .ok_or_else(|| usage("this command has no history or values to export as csv"))?;
            values.iter().map(|(k, v)| (k.clone(), v.to_string())).collect()
        };
        for (a, b) in rows {
            let mut rec = Vec::new();
            if with_seed {
                rec.push(seed.to_string());
            }
            rec.push(a);
            rec.push(b);
            w.write_record(&rec).map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Failure::Runtime(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Failure::Runtime(e.to_string()))
}

fn mean_std(xs: &[f64]) -> Value {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    json!({ "mean": mean, "std": var.sqrt() })
}

/// Mean and standard deviation of every numeric output shared by all runs,
/// per state for `values`.
fn summarize(runs: &[RunResult]) -> Map<String, Value> {
    let mut summary = Map::new();
    summary.insert("runs".into(), json!(runs.len()));
    if runs.iter().any(|r| r.converged.is_some()) {
        let n = runs.iter().filter(|r| r.converged == Some(true)).count();
        summary.insert("converged_runs".into(), json!(n));
    }
    if let Some(first) = runs.first() {
        for (key, v) in &first.outputs {
            if v.is_number() {
                let xs: Option<Vec<f64>> = runs.iter().map(|r| r.outputs.get(key).and_then(Value::as_f64)).collect();
                if let Some(xs) = xs {
                    summary.insert(key.clone(), mean_std(&xs));
                }
            }
        }
        if let Some(values) = first.outputs.get("values").and_then(Value::as_object) {
            let mut per_state = Map::new();
            for state in values.keys() {
                let xs: Option<Vec<f64>> = runs
                    .iter()
                    .map(|r| r.outputs.get("values")?.get(state)?.as_f64())
                    .collect();
                if let Some(xs) = xs {
                    per_state.insert(state.clone(), mean_std(&xs));
                }
            }
            summary.insert("values".into(), Value::Object(per_state));
        }
    }
    let finals: Vec<f64> = runs.iter().filter_map(|r| r.history.last().copied()).collect();
    if finals.len() == runs.len() && !finals.is_empty() {
        summary.insert("final_history_entry".into(), mean_std(&finals));
    }
    summary
}

fn overrides(g: &GlobalArgs) -> Outcome<Overrides> {
    let mut o = Overrides::new();
    for item in &g.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| usage(format!("--set {k}: `{v}` is not a number")))?;
        o.insert(k.trim().to_string(), v);
    }
    Ok(o)
}

fn load_env(g: &GlobalArgs, default: &str) -> Outcome<(EnvSpec, Overrides)> {
    let o = overrides(g)?;
    let name = g.env.as_deref().unwrap_or(default);
    let env = make_env(name, &o).map_err(|e| match e {
        Error::InvalidParameter(m) => usage(m),
        other => other.into(),
    })?;
    Ok((env, o))
}

fn read_json(path: &Path) -> Outcome<Value> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_policy(env: &EnvSpec, args: &PolicyArgs) -> Outcome<(TabularPolicy, String)> {
    if let Some(path) = &args.policy_file {
        let p = TabularPolicy::from_json(&env.model, &read_json(path)?).map_err(|e| usage(e.to_string()))?;
        return Ok((p, path.display().to_string()));
    }
    let name = args.policy.as_deref().unwrap_or("uniform");
    match named_policy(env, name) {
        Ok(p) => Ok((p, name.to_string())),
        Err(e) => {
            let path = Path::new(name);
            if path.is_file() {
                let p = TabularPolicy::from_json(&env.model, &read_json(path)?).map_err(|e| usage(e.to_string()))?;
                Ok((p, name.to_string()))
            } else {
                Err(usage(e.to_string()))
            }
        }
    }
}

fn load_trajectories(env: &EnvSpec, path: &Path) -> Outcome<Vec<Trajectory>> {
    let v = read_json(path)?;
    let parse = |x: &Value| Trajectory::from_json(&env.model, x).map_err(|e| usage(format!("{}: {e}", path.display())));
    let many = match &v {
        Value::Object(o) => o.get("trajectories").and_then(Value::as_array).cloned(),
        Value::Array(items) if items.first().is_some_and(Value::is_object) => Some(items.clone()),
        _ => None,
    };
    match many {
        Some(items) => items.iter().map(parse).collect(),
        None => Ok(vec![parse(&v)?]),
    }
}

fn starts(env: &EnvSpec, g: &GlobalArgs) -> Outcome<StartDistribution> {
    match &g.start {
        None => Ok(StartDistribution::weighted(&env.model, &env.start_states, &vec![1.0; env.start_states.len()])?),
        Some(label) => {
            let s = env.model.state(label).map_err(|e| usage(e.to_string()))?;
            StartDistribution::single(&env.model, s).map_err(|e| usage(e.to_string()))
        }
    }
}

struct Recorder {
    command: String,
    config: BTreeMap<String, Value>,
    outputs: Map<String, Value>,
    converged: Option<bool>,
    history: Vec<f64>,
}

impl Recorder {
    fn new(command: &str, g: &GlobalArgs, seed: u64, env: Option<(&EnvSpec, &Overrides)>) -> Self {
        let mut config = BTreeMap::new();
        config.insert("seed".into(), json!(seed));
        if let Some((env, o)) = env {
            config.insert("env".into(), json!(env.name.as_str()));
            if !o.is_empty() {
                config.insert("overrides".into(), json!(o));
            }
        }
        if let Some(s) = &g.start {
            config.insert("start".into(), json!(s));
        }
        Self {
            command: command.into(),
            config,
            outputs: Map::new(),
            converged: None,
            history: Vec::new(),
        }
    }

    fn param(&mut self, key: &str, v: impl Serialize) -> &mut Self {
        self.config.insert(key.into(), json!(v));
        self
    }

    fn output(&mut self, key: &str, v: Value) -> &mut Self {
        self.outputs.insert(key.into(), v);
        self
    }

    fn finish(self, started: Instant) -> RunResult {
        RunResult {
            command: self.command,
            config: self.config,
            converged: self.converged,
            history: self.history,
            outputs: self.outputs,
            wall_time: started.elapsed().as_secs_f64(),
        }
    }
}

fn resolve_gamma(explicit: Option<f64>, o: &Overrides, default: f64) -> f64 {
    explicit.or_else(|| o.get("gamma").copied()).unwrap_or(default)
}

fn run_once(cli: &Cli, seed: u64) -> Outcome<RunResult> {
    let started = Instant::now();
    let g = &cli.global;
    match &cli.command {
        Command::Dp(cmd) => {
            let (env, o) = load_env(g, "grid1d9")?;
            let m = &env.model;
            match cmd {
                DpCommand::Eval {
                    policy,
                    gamma,
                    method,
                    tol,
                    max_sweeps,
                } => {
                    let gamma = resolve_gamma(*gamma, &o, m.gamma_default());
                    let (p, pname) = load_policy(&env, policy)?;
                    let mut rec = Recorder::new("dp eval", g, seed, Some((&env, &o)));
                    rec.param("gamma", gamma).param("policy", pname);
                    match method {
                        EvalMethod::Analytic => {
                            let v = dp::analytic_policy_evaluation(m, &p, gamma)?;
                            rec.param("method", "analytic");
                            rec.output("values", v.to_json(m));
                            rec.output("bellman_residual", json!(dp::bellman_residual(m, &p, gamma, &v)));
                            rec.converged = Some(true);
                        }
                        EvalMethod::Iterative => {
                            let r = dp::iterative_policy_evaluation(m, &p, gamma, *tol, *max_sweeps, None)?;
                            rec.param("method", "iterative").param("tol", tol).param("max_sweeps", max_sweeps);
                            rec.output("values", r.values.to_json(m));
                            rec.output("sweeps", json!(r.sweeps));
                            rec.converged = Some(r.converged);
                        }
                    }
                    Ok(rec.finish(started))
                }
                DpCommand::Pi { policy, gamma, tol } => {
                    let gamma = resolve_gamma(*gamma, &o, m.gamma_default());
                    let initial = if policy.policy.is_some() || policy.policy_file.is_some() {
                        Some(load_policy(&env, policy)?)
                    } else {
                        None
                    };
                    let r = dp::policy_iteration(m, gamma, *tol, initial.as_ref().map(|(p, _)| p))?;
                    let mut rec = Recorder::new("dp pi", g, seed, Some((&env, &o)));
                    rec.param("gamma", gamma).param("tol", tol);
                    rec.param("initial_policy", initial.map_or("uniform".to_string(), |(_, n)| n));
                    rec.output("values", r.values.to_json(m))
                        .output("policy", r.policy.to_json(m))
                        .output("iterations", json!(r.iterations));
                    rec.converged = Some(r.converged);
                    Ok(rec.finish(started))
                }
                DpCommand::Vi { gamma, tol, max_sweeps } => {
                    let gamma = resolve_gamma(*gamma, &o, m.gamma_default());
                    let r = dp::value_iteration(m, gamma, *tol, *max_sweeps)?;
                    let mut rec = Recorder::new("dp vi", g, seed, Some((&env, &o)));
                    rec.param("gamma", gamma).param("tol", tol).param("max_sweeps", max_sweeps);
                    rec.output("values", r.values.to_json(m))
                        .output("policy", r.policy.to_json(m))
                        .output("sweeps", json!(r.sweeps));
                    rec.converged = Some(r.converged);
                    rec.history = r.deltas;
                    Ok(rec.finish(started))
                }
            }
        }
        Command::Mc(a) => {
            let (env, o) = load_env(g, "grid2x2")?;
            let m = &env.model;
            let gamma = resolve_gamma(a.gamma, &o, m.gamma_default());
            let mode = match a.mode {
                Visit::First => VisitMode::First,
                Visit::Every => VisitMode::Every,
            };
            let mut rec = Recorder::new("mc", g, seed, Some((&env, &o)));
            rec.param("gamma", gamma).param("mode", mode.as_str());
            let est = match &a.trajectory {
                Some(path) => {
                    let eps = load_trajectories(&env, path)?;
                    rec.param("trajectory", path.display().to_string());
                    mc::mc_replay(m, &eps, gamma, mode)?
                }
                None => {
                    let (p, pname) = load_policy(&env, &a.policy)?;
                    rec.param("policy", pname)
                        .param("episodes", a.episodes)
                        .param("max_steps", a.max_steps);
                    let st = starts(&env, g)?;
                    mc::mc_evaluate(m, &p, gamma, a.episodes, mode, &st, a.max_steps, &mut seeded_rng(seed))?
                }
            };
            let body = est.to_json(m);
            rec.output("values", body["values"].clone())
                .output("counts", body["counts"].clone())
                .output("truncated_episodes", json!(est.truncated));
            Ok(rec.finish(started))
        }
        Command::Td(cmd) => {
            let (env, o) = load_env(g, "grid1d9")?;
            let m = &env.model;
            match cmd {
                TdCommand::Eval {
                    policy,
                    alpha,
                    gamma,
                    step_size,
                    omega,
                    episodes,
                    max_steps,
                    trajectory,
                } => {
                    let gamma = resolve_gamma(*gamma, &o, m.gamma_default());
                    let mut rec = Recorder::new("td eval", g, seed, Some((&env, &o)));
                    rec.param("alpha", alpha).param("gamma", gamma);
                    let v = match trajectory {
                        Some(path) => {
                            let eps = load_trajectories(&env, path)?;
                            rec.param("trajectory", path.display().to_string());
                            td::td0_replay(m, &eps, *alpha, gamma, None)?
                        }
                        None => {
                            let (p, pname) = load_policy(&env, policy)?;
                            let step_size = match step_size {
                                Schedule::Constant => StepSize::Constant,
                                Schedule::InverseCount => StepSize::InverseCount,
                                Schedule::Polynomial => StepSize::Polynomial(*omega),
                            };
                            let cfg = LearningConfig {
                                alpha: *alpha,
                                gamma,
                                epsilon: 0.0,
                                episodes: *episodes,
                                max_steps: *max_steps,
                                seed,
                                epsilon_decay: None,
                                step_size,
                                q_init: 0.0,
                            };
                            cfg.validate().map_err(|e| usage(e.to_string()))?;
                            rec.param("policy", pname)
                                .param("step_size", step_size)
                                .param("episodes", episodes)
                                .param("max_steps", max_steps);
                            td::td0_evaluate(m, &p, &starts(&env, g)?, &cfg)?
                        }
                    };
                    rec.output("values", v.to_json(m));
                    Ok(rec.finish(started))
                }
                TdCommand::Sarsa(a) | TdCommand::Qlearn(a) => {
                    let (name, method) = match cmd {
                        TdCommand::Sarsa(_) => ("td sarsa", td::ControlMethod::Sarsa),
                        _ => ("td qlearn", td::ControlMethod::QLearning),
                    };
                    let cfg = LearningConfig {
                        alpha: a.alpha,
                        gamma: resolve_gamma(a.gamma, &o, 0.9),
                        epsilon: a.epsilon,
                        episodes: a.episodes,
                        max_steps: a.max_steps,
                        seed,
                        epsilon_decay: (a.epsilon_decay != 1.0).then_some(a.epsilon_decay),
                        step_size: StepSize::Constant,
                        q_init: a.q_init,
                    };
                    cfg.validate().map_err(|e| usage(e.to_string()))?;
                    let r = td::learn_control(m, &starts(&env, g)?, &cfg, method)?;
                    let mut rec = Recorder::new(name, g, seed, Some((&env, &o)));
                    rec.param("alpha", cfg.alpha)
                        .param("gamma", cfg.gamma)
                        .param("epsilon", cfg.epsilon)
                        .param("epsilon_decay", a.epsilon_decay)
                        .param("episodes", cfg.episodes)
                        .param("max_steps", cfg.max_steps)
                        .param("q_init", cfg.q_init);
                    rec.output("q", r.q.to_json(m))
                        .output("greedy_policy", r.greedy_policy.to_json(m));
                    rec.history = r.episode_returns;
                    Ok(rec.finish(started))
                }
            }
        }
        Command::Pg(cmd) => {
            let (env, o) = load_env(g, "grid1d8_two_terminal")?;
            let m = &env.model;
            match cmd {
                PgCommand::Reinforce {
                    alpha,
                    gamma,
                    episodes,
                    max_steps,
                    trajectory,
                } => {
                    let gamma = resolve_gamma(*gamma, &o, 0.9);
                    let mut policy = ThetaPolicy::new(m, ClipMode::Training)?;
                    let mut rec = Recorder::new("pg reinforce", g, seed, Some((&env, &o)));
                    rec.param("alpha", alpha).param("gamma", gamma);
                    match trajectory {
                        Some(path) => {
                            rec.param("trajectory", path.display().to_string());
                            for e in load_trajectories(&env, path)? {
                                pg::reinforce_update(m, &mut policy, &e, *alpha, gamma)?;
                                rec.history.push(e.discounted_return(gamma));
                            }
                        }
                        None => {
                            let cfg = PgConfig {
                                alpha: *alpha,
                                gamma,
                                episodes: *episodes,
                                max_steps: *max_steps,
                                ..PgConfig::default()
                            };
                            cfg.validate().map_err(|e| usage(e.to_string()))?;
                            rec.param("episodes", episodes).param("max_steps", max_steps);
                            let r = pg::reinforce(m, &policy, &starts(&env, g)?, &cfg, &mut seeded_rng(seed))?;
                            policy = r.policy;
                            rec.history = r.episode_returns;
                        }
                    }
                    rec.output("theta", policy.theta_json(m))
                        .output("policy_probs", policy.probs_json(m));
                    Ok(rec.finish(started))
                }
                PgCommand::Ac {
                    alpha,
                    beta,
                    gamma,
                    episodes,
                    max_steps,
                    mode,
                    trajectory,
                    trace,
                } => {
                    let gamma = resolve_gamma(*gamma, &o, 0.9);
                    let (mode, clip) = match mode {
                        AcModeArg::Online => (AcMode::Online, ClipMode::Training),
                        AcModeArg::PaperTrace => (AcMode::PaperTrace, ClipMode::PaperTrace),
                    };
                    let mut policy = ThetaPolicy::new(m, clip)?;
                    let mut critic = CriticTable::new(m, *beta);
                    let mut rec = Recorder::new("pg ac", g, seed, Some((&env, &o)));
                    rec.param("alpha", alpha)
                        .param("beta", beta)
                        .param("gamma", gamma)
                        .param("mode", mode.as_str());
                    let steps = match trajectory {
                        Some(path) => {
                            rec.param("trajectory", path.display().to_string());
                            let mut all = Vec::new();
                            for e in load_trajectories(&env, path)? {
                                all.extend(pg::actor_critic_episode(m, &mut policy, &mut critic, &e, *alpha, gamma, mode)?);
                                rec.history.push(e.discounted_return(gamma));
                            }
                            Some(all)
                        }
                        None => {
                            let cfg = PgConfig {
                                alpha: *alpha,
                                beta: *beta,
                                gamma,
                                episodes: *episodes,
                                max_steps: *max_steps,
                            };
                            cfg.validate().map_err(|e| usage(e.to_string()))?;
                            rec.param("episodes", episodes).param("max_steps", max_steps);
                            let r = pg::actor_critic(m, &policy, &critic, &starts(&env, g)?, &cfg, mode, &mut seeded_rng(seed))?;
                            policy = r.policy;
                            critic = r.critic;
                            rec.history = r.episode_returns;
                            trace.then_some(r.trace)
                        }
                    };
                    rec.output("theta", policy.theta_json(m))
                        .output("policy_probs", policy.probs_json(m))
                        .output("critic", critic.to_json(m));
                    if let Some(steps) = steps {
                        rec.output("trace", Value::Array(steps.iter().map(|s| s.to_json(m)).collect()));
                    }
                    Ok(rec.finish(started))
                }
            }
        }
        Command::Quantum(QuantumCommand::Train {
            episodes,
            alpha,
            beta,
            sigma0,
            mu0,
        }) => {
            let actor = GaussianActor::new(*mu0, *sigma0, *alpha, *beta).map_err(|e| usage(e.to_string()))?;
            let (initial, target) = (QubitState::zero(), QubitState::one());
            let r = quantum::train_qubit_controller(&initial, &target, &actor, *episodes, &mut seeded_rng(seed))
                .map_err(|e| usage(e.to_string()))?;
            let fin = quantum::apply(&quantum::rx(r.actor.mu), &initial);
            let mut rec = Recorder::new("quantum train", g, seed, None);
            rec.param("episodes", episodes)
                .param("alpha", alpha)
                .param("beta", beta)
                .param("sigma0", sigma0)
                .param("mu0", mu0);
            rec.output("mu", json!(r.actor.mu))
                .output("sigma", json!(r.actor.sigma()))
                .output("final_fidelity", json!(r.final_fidelity))
                .output("bloch_initial", json!(quantum::bloch(&initial)))
                .output("bloch_final", json!(quantum::bloch(&fin)))
                .output("bloch_target", json!(quantum::bloch(&target)));
            rec.history = r.fidelity_history;
            Ok(rec.finish(started))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("tabrl").chain(args.iter().copied());
        let code = run(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn set_parsing() {
        let cli = Cli::try_parse_from(["tabrl", "dp", "vi", "--set", "terminal_reward=3", "--set", "gamma = 0.5"]).unwrap();
        let o = overrides(&cli.global).unwrap();
        assert_eq!(o["terminal_reward"], 3.0);
        assert_eq!(o["gamma"], 0.5);
        let (code, _, err) = call(&["dp", "vi", "--set", "nonsense"]);
        assert_eq!(code, 2, "{err}");
        let (code, _, _) = call(&["dp", "vi", "--set", "colour=1"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn strict_non_convergence() {
        let (code, out, _) = call(&["dp", "vi", "--max-sweeps", "1", "--strict"]);
        assert_eq!(code, 3);
        assert!(out.contains("\"converged\": false"));
        let (code, _, _) = call(&["dp", "vi", "--max-sweeps", "1"]);
        assert_eq!(code, 0);
    }

    #[test]
    fn csv_history() {
        let (code, out, _) = call(&["td", "sarsa", "--episodes", "3", "--format", "csv"]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "episode,value");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn repeat_summarizes() {
        let (code, out, _) = call(&["quantum", "train", "--episodes", "50", "--repeat", "3"]);
        assert_eq!(code, 0);
        let r: RepeatResult = serde_json::from_str(&out).unwrap();
        assert_eq!(r.runs.len(), 3);
        assert_eq!(r.summary["runs"], json!(3));
        assert!(r.summary["final_fidelity"]["mean"].is_number());
        assert_eq!(r.runs[1].config["seed"], json!(1));
    }
}
