//! `sbrl`: generate sparse linear MDPs, collect batch data, run the fitted
//! evaluation and optimization algorithms, audit distribution mismatch, check
//! the lower-bound instances and run experiment sweeps.
//!
//! Every subcommand accepts `--config <file.toml>` whose keys are the long flag
//! names in snake case; flags given on the command line win.
//!
//! Exit codes: 0 success, 1 a threshold or structural check failed, 2 usage or I/O error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use sbrl_core::diagnostics::{audit, AuditInput};
use sbrl_core::fqi::{lasso_fqi, policy_suboptimality};
use sbrl_core::generate::{generate_instance, strong_signal_instance, GeneratorSpec};
use sbrl_core::hard::{build_hard_instance, default_hard_params, verify_lower_bound_anatomy};
use sbrl_core::harness::{
    append_rows, resolve_policy, run_sweep, summarize, Algorithm, ExperimentConfig, PolicySpec, Tuning,
};
use sbrl_core::ope::{lasso_fqe, post_selection_fqe, ridge_fqe_baseline};
use sbrl_core::solvers::RestrictedEigenvalueOptions;
use sbrl_core::{collect, split_folds, BatchDataset, InitialDistribution, Policy, SparseLinearMdp};

#[derive(Parser)]
#[command(name = "sbrl", version, about = "Sparse batch reinforcement learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random sparse linear MDP as JSON.
    Generate(GenerateArgs),
    /// Collect episodes under a behavior policy into CSV plus a metadata sidecar.
    Collect(CollectArgs),
    /// Estimate a target policy's value from a dataset.
    Ope(OpeArgs),
    /// Learn a greedy policy with Lasso fitted Q-iteration and score it.
    Fqi(FqiArgs),
    /// Restricted chi-square, divergence series, C_min bracket and signal check.
    Diagnose(DiagnoseArgs),
    /// Build a lower-bound instance and verify its structure.
    Hard(HardArgs),
    /// Run a multi-cell experiment sweep and write rows plus a summary.
    Sweep(SweepArgs),
}

enum Verdict {
    Pass,
    Fail,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct GenerateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_states: Option<usize>,
    #[arg(long)]
    n_actions: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    feature_concentration: Option<f64>,
    #[arg(long)]
    psi_concentration: Option<f64>,
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Put the relevant features first instead of drawing them at random.
    #[arg(long)]
    leading_support: Option<bool>,
    /// Hadamard-feature instance with one relevant coordinate (ignores n_actions and s).
    #[arg(long)]
    strong_signal: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct CollectArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    mdp: Option<PathBuf>,
    /// `uniform`, `optimal`, `epsilon-greedy:<eps>` or a policy JSON file.
    #[arg(long)]
    behavior: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV path; metadata goes next to it as `<stem>.meta.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Hyperparameters shared by `ope` and `fqi`; unset values use the default formulas.
#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct TuningArgs {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    iterations_scale: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda1_scale: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda2_scale: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    monte_carlo: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

impl TuningArgs {
    fn tuning(&self) -> Tuning {
        let base = Tuning::default();
        Tuning {
            iterations: self.iterations,
            iterations_scale: self.iterations_scale.unwrap_or(base.iterations_scale),
            lambda1: self.lambda1,
            lambda1_scale: self.lambda1_scale.unwrap_or(base.lambda1_scale),
            lambda2: self.lambda2,
            lambda2_scale: self.lambda2_scale.unwrap_or(base.lambda2_scale),
            lambda3: self.lambda3,
            delta: self.delta.unwrap_or(base.delta),
            monte_carlo: self.monte_carlo,
            tol: self.tol.unwrap_or(base.tol),
            max_iter: self.max_iter.unwrap_or(base.max_iter),
        }
    }
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct OpeArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// `lasso-fqe`, `post-select` or `ridge-fqe-baseline`.
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// `uniform`, `optimal`, `epsilon-greedy:<eps>` or a policy JSON file.
    #[arg(long)]
    target: Option<String>,
    /// Start state of the evaluated value; uniform when absent.
    #[arg(long)]
    start: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    tuning: TuningArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FqiArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    start: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    tuning: TuningArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct DiagnoseArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long)]
    behavior: Option<String>,
    #[arg(long)]
    target: Option<String>,
    /// Sample size for the signal check.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    len: Option<usize>,
    #[arg(long)]
    start: Option<usize>,
    /// Feature set for the divergence; the model's support when absent.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<usize>>,
    #[arg(long)]
    horizon_tol: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    re: ReArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Effort for the restricted-eigenvalue search; it dominates the runtime for large `d`.
#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct ReArgs {
    #[arg(long)]
    re_restarts: Option<usize>,
    #[arg(long)]
    re_steps: Option<usize>,
    /// Enumerate supports up to this count, sample this many beyond it.
    #[arg(long)]
    re_max_supports: Option<usize>,
}

impl ReArgs {
    fn options(&self) -> RestrictedEigenvalueOptions {
        let base = RestrictedEigenvalueOptions::default();
        RestrictedEigenvalueOptions {
            restarts: self.re_restarts.unwrap_or(base.restarts),
            steps: self.re_steps.unwrap_or(base.steps),
            max_supports: self.re_max_supports.unwrap_or(base.max_supports),
            seed: base.seed,
        }
    }
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct HardArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    len: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    model_index: Option<usize>,
    /// Also write the instance itself as MDP JSON.
    #[arg(long)]
    mdp_out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    re: ReArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Base seed; cell seeds are this plus each listed seed offset.
    #[arg(long)]
    seed: u64,
    /// Output directory for `rows.csv` and `summary.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    d: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    s: Option<Vec<usize>>,
    /// Number of seeds when the config lists none (offsets `0..seeds`).
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    algo: Option<Vec<String>>,
    #[arg(long)]
    episode_len: Option<usize>,
    #[arg(long)]
    lambda1_scale: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    chi_square: Option<bool>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Overlays the flags that were given on top of the TOML config.
fn merge<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T> {
    let mut merged = match config {
        Some(path) => {
            let table: toml::Table = toml::from_str(&read_text(path)?)
                .with_context(|| format!("cannot parse {}", path.display()))?;
            serde_json::to_value(table)?
        }
        None => json!({}),
    };
    let Value::Object(given) = serde_json::to_value(flags)? else {
        unreachable!("flag structs serialize to objects")
    };
    let target = merged.as_object_mut().expect("TOML tables are objects");
    for (k, v) in given {
        if !v.is_null() {
            target.insert(k, v);
        }
    }
    serde_json::from_value(merged).context("invalid configuration")
}

fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| anyhow!("missing --{}", name.replace('_', "-")))
}

fn load_mdp(path: &Path) -> Result<SparseLinearMdp> {
    SparseLinearMdp::from_json(&read_text(path)?).with_context(|| format!("invalid MDP file {}", path.display()))
}

fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

fn load_dataset(csv: &Path) -> Result<BatchDataset> {
    BatchDataset::read_csv(csv, &meta_path(csv)).with_context(|| format!("cannot load dataset {}", csv.display()))
}

fn parse_policy(text: &str) -> Result<PolicySpec> {
    Ok(match text {
        "uniform" => PolicySpec::Uniform,
        "optimal" => PolicySpec::Optimal,
        _ => match text.strip_prefix("epsilon-greedy:") {
            Some(eps) => PolicySpec::EpsilonGreedy {
                epsilon: eps.parse().with_context(|| format!("bad epsilon in {text:?}"))?,
            },
            None => PolicySpec::File { path: text.into() },
        },
    })
}

fn policy(mdp: &SparseLinearMdp, text: &str) -> Result<Policy> {
    let optimal = mdp.exact_optimal_value(1e-10)?.policy;
    Ok(resolve_policy(&parse_policy(text)?, mdp, &optimal)?)
}

fn start_distribution(mdp: &SparseLinearMdp, start: Option<usize>) -> Result<InitialDistribution> {
    Ok(match start {
        Some(x) => InitialDistribution::point_mass(mdp.n_states(), x)?,
        None => InitialDistribution::uniform(mdp.n_states()),
    })
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn cmd_generate(flags: &GenerateArgs) -> Result<Verdict> {
    let a = merge(flags, flags.config.as_deref())?;
    let defaults = GeneratorSpec::new(5, 4, 32, 3, 0.9, 0);
    let mut spec = GeneratorSpec::new(
        a.n_states.unwrap_or(defaults.n_states),
        a.n_actions.unwrap_or(defaults.n_actions),
        a.d.unwrap_or(defaults.d),
        a.s.unwrap_or(defaults.s),
        a.gamma.unwrap_or(defaults.gamma),
        a.seed.unwrap_or(defaults.seed),
    );
    spec.feature_concentration = a.feature_concentration.unwrap_or(spec.feature_concentration);
    spec.psi_concentration = a.psi_concentration.unwrap_or(spec.psi_concentration);
    spec.noise_scale = a.noise_scale.unwrap_or(spec.noise_scale);
    spec.leading_support = a.leading_support.unwrap_or(spec.leading_support);
    let mdp = if a.strong_signal.unwrap_or(false) {
        strong_signal_instance(spec.n_states, spec.d, spec.gamma, spec.seed)?
    } else {
        generate_instance(&spec)?
    };
    let text = mdp.to_json()?;
    match &a.out {
        Some(path) => fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(Verdict::Pass)
}

fn cmd_collect(flags: &CollectArgs) -> Result<Verdict> {
    let a = merge(flags, flags.config.as_deref())?;
    let mdp = load_mdp(&required(a.mdp, "mdp")?)?;
    let spec = a.behavior.unwrap_or_else(|| "uniform".into());
    let behavior = policy(&mdp, &spec)?;
    let out = required(a.out, "out")?;
    let data = collect(
        &mdp,
        &[behavior],
        &InitialDistribution::uniform(mdp.n_states()),
        required(a.episodes, "episodes")?,
        required(a.len, "len")?,
        a.seed.unwrap_or(0),
        &spec,
    )?;
    data.write_csv(&out, &meta_path(&out))
        .with_context(|| format!("cannot write {}", out.display()))?;
    eprintln!("wrote {} transitions to {}", data.len(), out.display());
    Ok(Verdict::Pass)
}

fn cmd_ope(flags: &OpeArgs) -> Result<Verdict> {
    let a = merge(flags, flags.config.as_deref())?;
    let algo_name = required(a.algo, "algo")?;
    let algo: Algorithm = serde_json::from_value(Value::String(algo_name.clone()))
        .map_err(|_| anyhow!("unknown algorithm {algo_name:?}"))?;
    let mdp = load_mdp(&required(a.mdp, "mdp")?)?;
    let data = load_dataset(&required(a.data, "data")?)?;
    let target = policy(&mdp, a.target.as_deref().unwrap_or("optimal"))?;
    let xi0 = start_distribution(&mdp, a.start)?;
    let cfg = a.tuning.tuning().resolve(data.len(), mdp.dim(), mdp.gamma(), a.seed.unwrap_or(0))?;
    let model = mdp.access();
    let result = match algo {
        Algorithm::LassoFqe => {
            let folds = split_folds(&data, cfg.iterations)?;
            lasso_fqe(&data, &folds, &model, &target, &xi0, &cfg)?
        }
        Algorithm::PostSelect => post_selection_fqe(&data, &model, &target, &xi0, &cfg)?,
        Algorithm::RidgeFqeBaseline => ridge_fqe_baseline(&data, &model, &target, &xi0, &cfg)?,
        Algorithm::LassoFqi => bail!("use the fqi subcommand for policy optimization"),
    };
    let v_true = mdp.exact_policy_value(&target, &xi0)?.scalar;
    emit(
        &json!({
            "algo": algo.name(),
            "n": data.len(),
            "iterations": cfg.iterations,
            "lambda1": cfg.lambda1,
            "lambda2": cfg.lambda2,
            "lambda3": result.lambda3,
            "v_hat": result.value,
            "std_error": result.std_error,
            "v_true": v_true,
            "abs_err": (result.value - v_true).abs(),
            "selected": result.selected,
            "degenerate": result.degenerate,
            "min_norm": result.min_norm,
            "final_weights": result.weights.last(),
            "features": result.features,
        }),
        a.out.as_deref(),
    )?;
    Ok(Verdict::Pass)
}

fn cmd_fqi(flags: &FqiArgs) -> Result<Verdict> {
    let a = merge(flags, flags.config.as_deref())?;
    let mdp = load_mdp(&required(a.mdp, "mdp")?)?;
    let data = load_dataset(&required(a.data, "data")?)?;
    let xi0 = start_distribution(&mdp, a.start)?;
    let cfg = a.tuning.tuning().resolve(data.len(), mdp.dim(), mdp.gamma(), a.seed.unwrap_or(0))?;
    let folds = split_folds(&data, cfg.iterations)?;
    let result = lasso_fqi(&data, &folds, &mdp.access(), &cfg)?;
    let gaps = policy_suboptimality(&mdp, &result.policy(mdp.n_actions())?, &xi0)?;
    emit(
        &json!({
            "n": data.len(),
            "iterations": cfg.iterations,
            "lambda1": cfg.lambda1,
            "actions": result.actions,
            "weights": result.weights,
            "sup_gap": gaps.sup_gap,
            "xi0_gap": gaps.weighted_gap,
        }),
        a.out.as_deref(),
    )?;
    Ok(Verdict::Pass)
}

fn cmd_diagnose(flags: &DiagnoseArgs) -> Result<Verdict> {
    let a = merge(flags, flags.config.as_deref())?;
    let mdp = load_mdp(&required(a.mdp, "mdp")?)?;
    let behavior = policy(&mdp, a.behavior.as_deref().unwrap_or("uniform"))?;
    let target = policy(&mdp, a.target.as_deref().unwrap_or("optimal"))?;
    let xi0 = start_distribution(&mdp, a.start)?;
    let data_init = InitialDistribution::uniform(mdp.n_states());
    let report = audit(&AuditInput {
        mdp: &mdp,
        behavior: &behavior,
        target: &target,
        xi0: &xi0,
        data_init: &data_init,
        episode_len: a.len.unwrap_or(1),
        n: required(a.n, "n")?,
        delta: a.delta.unwrap_or(0.1),
        features: a.features.as_deref(),
        horizon_tol: a.horizon_tol.unwrap_or(1e-10),
        re_options: a.re.options(),
    })?;
    emit(&report, a.out.as_deref())?;
    Ok(Verdict::Pass)
}

fn cmd_hard(flags: &HardArgs) -> Result<Verdict> {
    let a = merge(flags, flags.config.as_deref())?;
    let defaults = default_hard_params(
        a.s.unwrap_or(2),
        a.d.unwrap_or(6),
        a.n.unwrap_or(100_000),
        a.len.unwrap_or(1),
        a.gamma.unwrap_or(0.75),
    )?;
    let mut params = defaults.params;
    params.model_index = a.model_index.unwrap_or(1);
    let bundle = build_hard_instance(&params)?;
    let report = verify_lower_bound_anatomy(&bundle, &a.re.options())?;
    if let Some(path) = &a.mdp_out {
        fs::write(path, bundle.mdp.to_json()?).with_context(|| format!("cannot write {}", path.display()))?;
    }
    emit(
        &json!({
            "params": params,
            "sample_size_ok": defaults.sample_size_ok,
            "p_min": bundle.p_min,
            "anatomy": report,
        }),
        a.out.as_deref(),
    )?;
    Ok(if report.passed() { Verdict::Pass } else { Verdict::Fail })
}

fn cmd_sweep(a: &SweepArgs) -> Result<Verdict> {
    let mut cfg: ExperimentConfig = toml::from_str(&read_text(&a.config)?)
        .with_context(|| format!("invalid sweep config {}", a.config.display()))?;
    if let Some(n) = &a.n {
        cfg.sweep.n = n.clone();
    }
    if let Some(d) = &a.d {
        cfg.sweep.d = d.clone();
    }
    if let Some(s) = &a.s {
        cfg.sweep.s = s.clone();
    }
    if let Some(e) = &a.epsilons {
        cfg.sweep.epsilons = e.clone();
    }
    if let Some(names) = &a.algo {
        cfg.algorithms = names
            .iter()
            .map(|n| serde_json::from_value(Value::String(n.clone())).map_err(|_| anyhow!("unknown algorithm {n:?}")))
            .collect::<Result<_>>()?;
    }
    if let Some(l) = a.episode_len {
        cfg.episode_len = l;
    }
    if let Some(v) = a.lambda1_scale {
        cfg.tuning.lambda1_scale = v;
    }
    if let Some(v) = a.lambda3 {
        cfg.tuning.lambda3 = Some(v);
    }
    if let Some(v) = a.chi_square {
        cfg.chi_square = v;
    }
    if cfg.sweep.seeds.is_empty() {
        cfg.sweep.seeds = (0..a.seeds.unwrap_or(20)).collect();
    }
    cfg.sweep.seeds = cfg.sweep.seeds.iter().map(|s| a.seed + s).collect();
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    cfg.out = Some(a.out.clone());

    log::info!("sweep {} with {} cells", cfg.hash(), cfg.cells().len());
    let outcome = run_sweep(&cfg)?;
    append_rows(&a.out.join("rows.csv"), &outcome.rows)?;
    let summary = summarize(&outcome.rows, &cfg.thresholds);
    let failures: Vec<Value> = outcome
        .failures
        .iter()
        .map(|(cell, err)| json!({ "cell": cell, "error": err }))
        .collect();
    let report = json!({
        "config_hash": outcome.config_hash,
        "rows": outcome.rows.len(),
        "failed_cells": failures,
        "summary": summary,
    });
    emit(&report, Some(&a.out.join("summary.json")))?;
    emit(&report, None)?;
    if !outcome.failures.is_empty() || !summary.failed_checks.is_empty() {
        for check in &summary.failed_checks {
            eprintln!("check failed: {check}");
        }
        return Ok(Verdict::Fail);
    }
    Ok(Verdict::Pass)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Collect(a) => cmd_collect(a),
        Command::Ope(a) => cmd_ope(a),
        Command::Fqi(a) => cmd_fqi(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Hard(a) => cmd_hard(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
