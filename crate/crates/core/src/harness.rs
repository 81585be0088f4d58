//! Experiment sweeps: one row per (algorithm, N, d, s, epsilon, seed) cell and
//! summary statistics over the rows.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{collect, split_folds};
use crate::diagnostics::restricted_chi_square;
use crate::error::{invalid, Result};
use crate::fqi::{lasso_fqi, policy_suboptimality};
use crate::generate::{generate_instance, strong_signal_instance, GeneratorSpec};
use crate::mdp::{InitialDistribution, Policy, SparseLinearMdp};
use crate::ope::{lasso_fqe, post_selection_fqe, ridge_fqe_baseline, OpeConfig, OpeResult};
use crate::solvers::{default_iterations, default_lambda1, default_lambda2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InstanceSource {
    File { path: PathBuf },
    Generator(GeneratorSpec),
    /// See [`strong_signal_instance`].
    StrongSignal { n_states: usize, d: usize, gamma: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PolicySpec {
    Uniform,
    /// Greedy with respect to the exact optimal value.
    Optimal,
    /// `(1 - epsilon) optimal + epsilon uniform`.
    EpsilonGreedy { epsilon: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    LassoFqe,
    PostSelect,
    RidgeFqeBaseline,
    LassoFqi,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::LassoFqe => "lasso-fqe",
            Algorithm::PostSelect => "post-select",
            Algorithm::RidgeFqeBaseline => "ridge-fqe-baseline",
            Algorithm::LassoFqi => "lasso-fqi",
        }
    }
}

/// Hyperparameters. Explicit values win; otherwise the default formulas are
/// used, multiplied by the corresponding scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tuning {
    pub iterations: Option<usize>,
    pub iterations_scale: f64,
    pub lambda1: Option<f64>,
    pub lambda1_scale: f64,
    pub lambda2: Option<f64>,
    pub lambda2_scale: f64,
    pub lambda3: Option<f64>,
    pub delta: f64,
    pub monte_carlo: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Tuning {
    fn default() -> Self {
        Self {
            iterations: None,
            iterations_scale: 1.0,
            lambda1: None,
            lambda1_scale: 1.0,
            lambda2: None,
            lambda2_scale: 1.0,
            lambda3: None,
            delta: 0.1,
            monte_carlo: None,
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

impl Tuning {
    /// Solver settings for `n` samples in dimension `d`.
    pub fn resolve(&self, n: usize, d: usize, gamma: f64, seed: u64) -> Result<OpeConfig> {
        let t = match self.iterations {
            Some(t) => t,
            None => {
                let (t, _) = default_iterations(n, gamma)?;
                ((t as f64 * self.iterations_scale).ceil() as usize).max(1)
            }
        };
        let lambda1 = match self.lambda1 {
            Some(v) => v,
            None => self.lambda1_scale * default_lambda1(n, t, d, gamma, self.delta)?,
        };
        let lambda2 = match self.lambda2 {
            Some(v) => v,
            None => self.lambda2_scale * default_lambda2(n, d, self.delta)?,
        };
        Ok(OpeConfig {
            iterations: t,
            monte_carlo: self.monte_carlo,
            lambda1,
            lambda2,
            lambda3: self.lambda3,
            delta: self.delta,
            tol: self.tol,
            max_iter: self.max_iter,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepAxes {
    pub n: Vec<usize>,
    /// Overrides the generator's `d`.
    pub d: Vec<usize>,
    /// Overrides the generator's `s`.
    pub s: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Behavior epsilon-greedy levels around the optimal policy; replaces `behavior`.
    pub epsilons: Vec<f64>,
}

/// Summary checks that turn a sweep into a pass/fail verdict.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub slope_range: Option<(f64, f64)>,
    pub max_d_ratio: Option<f64>,
    pub min_spearman: Option<f64>,
    pub min_screening_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub behavior: PolicySpec,
    pub target: PolicySpec,
    pub episode_len: usize,
    /// Start state of the evaluated value; `None` means uniform over states.
    /// Data episodes always start uniformly.
    #[serde(default)]
    pub target_start: Option<usize>,
    pub algorithms: Vec<Algorithm>,
    pub sweep: SweepAxes,
    #[serde(default)]
    pub tuning: Tuning,
    /// Compute the restricted chi-square of each cell's behavior on the support.
    #[serde(default)]
    pub chi_square: bool,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweep.n.is_empty() || self.sweep.seeds.is_empty() || self.algorithms.is_empty() {
            return invalid("sweep needs nonempty N, seed and algorithm lists");
        }
        let mut seeds = self.sweep.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.sweep.seeds.len() {
            return invalid("sweep seeds must be distinct");
        }
        if self.episode_len == 0 {
            return invalid("episode length must be positive");
        }
        if self.sweep.epsilons.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return invalid("epsilon levels must lie in [0, 1]");
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form, with the
    /// output location excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }

    pub fn cells(&self) -> Vec<Cell> {
        let opt_axis = |v: &Vec<usize>| -> Vec<Option<usize>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        };
        let eps: Vec<Option<f64>> = if self.sweep.epsilons.is_empty() {
            vec![None]
        } else {
            self.sweep.epsilons.iter().copied().map(Some).collect()
        };
        let mut cells = Vec::new();
        for &algorithm in &self.algorithms {
            for &d in &opt_axis(&self.sweep.d) {
                for &s in &opt_axis(&self.sweep.s) {
                    for &epsilon in &eps {
                        for &n in &self.sweep.n {
                            for &seed in &self.sweep.seeds {
                                cells.push(Cell {
                                    algorithm,
                                    n,
                                    d,
                                    s,
                                    epsilon,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub n: usize,
    pub d: Option<usize>,
    pub s: Option<usize>,
    pub epsilon: Option<f64>,
    pub seed: u64,
}

/// One CSV row. Fields that do not apply to an algorithm are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub algo: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub d: usize,
    pub s: usize,
    pub gamma: f64,
    pub epsilon: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    pub seed: u64,
    pub v_hat: Option<f64>,
    pub v_true: Option<f64>,
    pub abs_err: Option<f64>,
    pub k_hat_size: Option<usize>,
    pub screening_success: Option<bool>,
    pub sup_gap: Option<f64>,
    pub xi0_gap: Option<f64>,
    pub chi_square: Option<f64>,
    pub config_hash: String,
    pub wall_ms: f64,
}

impl Row {
    /// The error metric summarized for this row: absolute OPE error, or the
    /// sup-norm suboptimality for policy optimization.
    pub fn error(&self) -> Option<f64> {
        self.abs_err.or(self.sup_gap)
    }
}

pub fn load_instance(source: &InstanceSource, d: Option<usize>, s: Option<usize>) -> Result<SparseLinearMdp> {
    match source {
        InstanceSource::File { path } => {
            if d.is_some() || s.is_some() {
                return invalid("d and s axes need a generated instance");
            }
            SparseLinearMdp::from_json(&std::fs::read_to_string(path)?)
        }
        InstanceSource::Generator(spec) => {
            let mut spec = spec.clone();
            if let Some(d) = d {
                spec.d = d;
            }
            if let Some(s) = s {
                spec.s = s;
            }
            generate_instance(&spec)
        }
        InstanceSource::StrongSignal {
            n_states,
            d: d0,
            gamma,
            seed,
        } => {
            if s.is_some_and(|s| s != 1) {
                return invalid("the strong-signal instance has s = 1");
            }
            strong_signal_instance(*n_states, d.unwrap_or(*d0), *gamma, *seed)
        }
    }
}

pub fn resolve_policy(spec: &PolicySpec, mdp: &SparseLinearMdp, optimal: &Policy) -> Result<Policy> {
    match spec {
        PolicySpec::Uniform => Ok(Policy::uniform(mdp.n_states(), mdp.n_actions())),
        PolicySpec::Optimal => Ok(optimal.clone()),
        PolicySpec::EpsilonGreedy { epsilon } => Policy::epsilon_greedy(optimal, *epsilon),
        PolicySpec::File { path } => {
            let p: Policy = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            if p.n_states() != mdp.n_states() || p.n_actions() != mdp.n_actions() {
                return invalid("policy file does not match the instance");
            }
            Ok(p)
        }
    }
}

/// Runs a single cell.
pub fn run_cell(config: &ExperimentConfig, cell: &Cell, config_hash: &str) -> Result<Row> {
    let start = Instant::now();
    let mdp = load_instance(&config.instance, cell.d, cell.s)?;
    let model = mdp.access();
    let optimal = mdp.exact_optimal_value(1e-10)?.policy;
    let target = resolve_policy(&config.target, &mdp, &optimal)?;
    let behavior = match cell.epsilon {
        Some(epsilon) => Policy::epsilon_greedy(&optimal, epsilon)?,
        None => resolve_policy(&config.behavior, &mdp, &optimal)?,
    };
    let init = InitialDistribution::uniform(mdp.n_states());
    let xi0 = match config.target_start {
        Some(x) => InitialDistribution::point_mass(mdp.n_states(), x)?,
        None => init.clone(),
    };
    let l = config.episode_len;
    let k = cell.n / l;
    if k == 0 {
        return invalid(format!("N = {} is shorter than one episode", cell.n));
    }
    let n = k * l;
    let gamma = mdp.gamma();
    let d = mdp.dim();
    let ope = config.tuning.resolve(n, d, gamma, cell.seed)?;
    let (t, lambda1, lambda2) = (ope.iterations, ope.lambda1, ope.lambda2);
    let data = collect(
        &mdp,
        std::slice::from_ref(&behavior),
        &init,
        k,
        l,
        cell.seed,
        &format!("{:?}", cell.epsilon.map_or(config.behavior.clone(), |e| PolicySpec::EpsilonGreedy { epsilon: e })),
    )?;
    let v_true = mdp.exact_policy_value(&target, &xi0)?.scalar;
    let mut row = Row {
        algo: cell.algorithm.name().to_string(),
        n,
        k,
        l,
        t,
        d,
        s: mdp.sparsity(),
        gamma,
        epsilon: cell.epsilon,
        lambda1: None,
        lambda2: None,
        lambda3: None,
        seed: cell.seed,
        v_hat: None,
        v_true: None,
        abs_err: None,
        k_hat_size: None,
        screening_success: None,
        sup_gap: None,
        xi0_gap: None,
        chi_square: None,
        config_hash: config_hash.to_string(),
        wall_ms: 0.0,
    };
    let fill_ope = |row: &mut Row, result: &OpeResult| {
        row.v_hat = Some(result.value);
        row.v_true = Some(v_true);
        row.abs_err = Some((result.value - v_true).abs());
        row.lambda3 = result.lambda3;
    };
    match cell.algorithm {
        Algorithm::LassoFqe => {
            let folds = split_folds(&data, t)?;
            let result = lasso_fqe(&data, &folds, &model, &target, &xi0, &ope)?;
            row.lambda1 = Some(lambda1);
            fill_ope(&mut row, &result);
        }
        Algorithm::PostSelect => {
            let result = post_selection_fqe(&data, &model, &target, &xi0, &ope)?;
            row.lambda2 = Some(lambda2);
            fill_ope(&mut row, &result);
            let selected = result.selected.unwrap_or_default();
            row.k_hat_size = Some(selected.len());
            row.screening_success = Some(mdp.support().iter().all(|j| selected.contains(j)));
        }
        Algorithm::RidgeFqeBaseline => {
            let result = ridge_fqe_baseline(&data, &model, &target, &xi0, &ope)?;
            fill_ope(&mut row, &result);
        }
        Algorithm::LassoFqi => {
            let folds = split_folds(&data, t)?;
            let result = lasso_fqi(&data, &folds, &model, &ope)?;
            row.lambda1 = Some(lambda1);
            let gaps = policy_suboptimality(&mdp, &result.policy(mdp.n_actions())?, &xi0)?;
            row.sup_gap = Some(gaps.sup_gap);
            row.xi0_gap = Some(gaps.weighted_gap);
        }
    }
    if config.chi_square {
        row.chi_square = restricted_chi_square(&mdp, &target, &xi0, &behavior, &init, l, mdp.support()).ok();
    }
    row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(row)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<Row>,
    pub failures: Vec<(Cell, String)>,
    pub config_hash: String,
}

/// Runs every cell in parallel; rows come back in cell order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let hash = config.hash();
    let results: Vec<(Cell, Result<Row>)> = config
        .cells()
        .into_par_iter()
        .map(|cell| (cell, run_cell(config, &cell, &hash)))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::error!("cell {cell:?} failed: {e}");
                failures.push((cell, e.to_string()));
            }
        }
    }
    Ok(SweepOutcome {
        rows,
        failures,
        config_hash: hash,
    })
}

/// Appends rows to a CSV file, writing the header only when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[Row]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len();
    Some(if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let m = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / m, ry.iter().sum::<f64>() / m);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

/// Number of strict increases in a sequence that should be non-increasing,
/// counting only increases above `slack` (relative).
pub fn inversions(values: &[f64], slack: f64) -> usize {
    values
        .windows(2)
        .filter(|w| w[1] > w[0] * (1.0 + slack))
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub algo: String,
    pub d: usize,
    pub s: usize,
    pub epsilon: Option<f64>,
    /// `(N, median error, rows)` ascending in `N`.
    pub points: Vec<(usize, f64, usize)>,
    pub slope: Option<f64>,
    pub screening_rate: Option<f64>,
    pub k_hat_within_8s_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionRatio {
    pub algo: String,
    pub n: usize,
    pub s: usize,
    pub d_small: usize,
    pub d_large: usize,
    /// `median error(d_large) / median error(d_small)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchCorrelation {
    pub algo: String,
    pub n: usize,
    pub d: usize,
    pub s: usize,
    /// `(epsilon, chi_square, median error)`.
    pub points: Vec<(f64, f64, f64)>,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    /// Cells where both Lasso FQE and post-selection ran.
    pub pairs: usize,
    /// Pairs where post-selection error is at most the Lasso FQE error.
    pub post_select_wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub curves: Vec<CurveSummary>,
    pub dimension_ratios: Vec<DimensionRatio>,
    pub mismatch: Vec<MismatchCorrelation>,
    pub paired: PairedComparison,
    pub failed_checks: Vec<String>,
}

type CurveKey = (String, usize, usize, Option<u64>);

pub fn summarize(rows: &[Row], thresholds: &Thresholds) -> SweepSummary {
    let eps_key = |e: Option<f64>| e.map(f64::to_bits);
    let mut groups: BTreeMap<CurveKey, BTreeMap<usize, Vec<&Row>>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.algo.clone(), row.d, row.s, eps_key(row.epsilon)))
            .or_default()
            .entry(row.n)
            .or_default()
            .push(row);
    }
    let mut curves = Vec::new();
    for ((algo, d, s, eps), by_n) in &groups {
        let points: Vec<(usize, f64, usize)> = by_n
            .iter()
            .filter_map(|(&n, rs)| {
                let mut errs: Vec<f64> = rs.iter().filter_map(|r| r.error()).collect();
                median(&mut errs).map(|m| (n, m, rs.len()))
            })
            .collect();
        let slope = log_log_slope(&points.iter().map(|p| (p.0 as f64, p.1)).collect::<Vec<_>>());
        let all: Vec<&&Row> = by_n.values().flatten().collect();
        let screened: Vec<bool> = all.iter().filter_map(|r| r.screening_success).collect();
        let rate = |v: Vec<bool>| {
            (!v.is_empty()).then(|| v.iter().filter(|b| **b).count() as f64 / v.len() as f64)
        };
        let within: Vec<bool> = all
            .iter()
            .filter_map(|r| r.k_hat_size.map(|k| k <= 8 * r.s))
            .collect();
        curves.push(CurveSummary {
            algo: algo.clone(),
            d: *d,
            s: *s,
            epsilon: eps.map(f64::from_bits),
            points,
            slope,
            screening_rate: rate(screened),
            k_hat_within_8s_rate: rate(within),
        });
    }

    let mut dimension_ratios = Vec::new();
    let mut by_algo_s: BTreeMap<(String, usize, Option<u64>), Vec<&CurveSummary>> = BTreeMap::new();
    for c in &curves {
        by_algo_s
            .entry((c.algo.clone(), c.s, eps_key(c.epsilon)))
            .or_default()
            .push(c);
    }
    for ((algo, s, _), cs) in &by_algo_s {
        if cs.len() < 2 {
            continue;
        }
        let small = cs.iter().min_by_key(|c| c.d).unwrap();
        let large = cs.iter().max_by_key(|c| c.d).unwrap();
        for &(n, err_small, _) in &small.points {
            if let Some(&(_, err_large, _)) = large.points.iter().find(|p| p.0 == n) {
                dimension_ratios.push(DimensionRatio {
                    algo: algo.clone(),
                    n,
                    s: *s,
                    d_small: small.d,
                    d_large: large.d,
                    ratio: err_large / err_small,
                });
            }
        }
    }

    let mut mismatch_groups: BTreeMap<(String, usize, usize, usize), BTreeMap<u64, Vec<&Row>>> =
        BTreeMap::new();
    for row in rows {
        if let (Some(eps), Some(_)) = (row.epsilon, row.chi_square) {
            mismatch_groups
                .entry((row.algo.clone(), row.n, row.d, row.s))
                .or_default()
                .entry(eps.to_bits())
                .or_default()
                .push(row);
        }
    }
    let mut mismatch = Vec::new();
    for ((algo, n, d, s), by_eps) in mismatch_groups {
        let points: Vec<(f64, f64, f64)> = by_eps
            .iter()
            .filter_map(|(&e, rs)| {
                let mut errs: Vec<f64> = rs.iter().filter_map(|r| r.error()).collect();
                let chi = rs[0].chi_square?;
                median(&mut errs).map(|m| (f64::from_bits(e), chi, m))
            })
            .collect();
        let chis: Vec<f64> = points.iter().map(|p| p.1).collect();
        let errs: Vec<f64> = points.iter().map(|p| p.2).collect();
        mismatch.push(MismatchCorrelation {
            algo,
            n,
            d,
            s,
            spearman: spearman(&chis, &errs),
            points,
        });
    }

    let mut lasso: BTreeMap<(usize, usize, usize, Option<u64>, u64), f64> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.algo == Algorithm::LassoFqe.name()) {
        if let Some(e) = row.abs_err {
            lasso.insert((row.n, row.d, row.s, eps_key(row.epsilon), row.seed), e);
        }
    }
    let mut paired = PairedComparison {
        pairs: 0,
        post_select_wins: 0,
    };
    for row in rows.iter().filter(|r| r.algo == Algorithm::PostSelect.name()) {
        if let (Some(e), Some(l)) = (
            row.abs_err,
            lasso.get(&(row.n, row.d, row.s, eps_key(row.epsilon), row.seed)),
        ) {
            paired.pairs += 1;
            if e <= *l {
                paired.post_select_wins += 1;
            }
        }
    }

    let mut failed_checks = Vec::new();
    if let Some((lo, hi)) = thresholds.slope_range {
        for c in &curves {
            match c.slope {
                Some(sl) if sl >= lo && sl <= hi => {}
                other => failed_checks.push(format!(
                    "{} d={} s={}: slope {other:?} outside [{lo}, {hi}]",
                    c.algo, c.d, c.s
                )),
            }
        }
    }
    if let Some(max) = thresholds.max_d_ratio {
        for r in &dimension_ratios {
            if !(r.ratio <= max) {
                failed_checks.push(format!(
                    "{} N={}: d ratio {} above {max}",
                    r.algo, r.n, r.ratio
                ));
            }
        }
    }
    if let Some(min) = thresholds.min_spearman {
        for m in &mismatch {
            if !m.spearman.is_some_and(|v| v >= min) {
                failed_checks.push(format!(
                    "{} N={}: Spearman {:?} below {min}",
                    m.algo, m.n, m.spearman
                ));
            }
        }
    }
    if let Some(min) = thresholds.min_screening_rate {
        for c in &curves {
            if let Some(rate) = c.screening_rate {
                if rate < min {
                    failed_checks.push(format!("{} d={}: screening rate {rate} below {min}", c.algo, c.d));
                }
            }
        }
    }
    SweepSummary {
        curves,
        dimension_ratios,
        mismatch,
        paired,
        failed_checks,
    }
}
