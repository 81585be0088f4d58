//! Batch data: episodic collection, episode-disjoint folds and covariance matrices.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{
    sample_index, InitialDistribution, ModelAccess, OccupancyMeasure, Policy, SparseLinearMdp,
};
use crate::rng::stream_rng;

/// One observed transition `(x, a, x')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transition {
    pub x: usize,
    pub a: usize,
    pub x_next: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Number of episodes.
    pub episodes: usize,
    /// Episode length.
    pub episode_len: usize,
    /// Total transitions, `episodes * episode_len`.
    pub n: usize,
    pub seed: u64,
    pub behavior: String,
}

/// `K` independent episodes of `L` contiguous transitions each.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDataset {
    episodes: Vec<Vec<Transition>>,
    meta: DatasetMeta,
}

impl BatchDataset {
    pub fn from_episodes(episodes: Vec<Vec<Transition>>, seed: u64, behavior: &str) -> Result<Self> {
        let episode_len = episodes.first().map_or(0, Vec::len);
        if episodes.is_empty() || episode_len == 0 {
            return invalid("dataset needs at least one non-empty episode");
        }
        if episodes.iter().any(|e| e.len() != episode_len) {
            return invalid("all episodes must have the same length");
        }
        let meta = DatasetMeta {
            episodes: episodes.len(),
            episode_len,
            n: episodes.len() * episode_len,
            seed,
            behavior: behavior.to_string(),
        };
        Ok(Self { episodes, meta })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.meta.n
    }

    pub fn is_empty(&self) -> bool {
        self.meta.n == 0
    }

    pub fn episodes(&self) -> &[Vec<Transition>] {
        &self.episodes
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.episodes.iter().flatten()
    }

    /// Checks every index against a model's state and action counts.
    pub fn validate_for(&self, n_states: usize, n_actions: usize) -> Result<()> {
        match self
            .transitions()
            .find(|t| t.x >= n_states || t.x_next >= n_states || t.a >= n_actions)
        {
            Some(t) => invalid(format!(
                "transition {t:?} out of range for {n_states} states, {n_actions} actions"
            )),
            None => Ok(()),
        }
    }

    /// Writes `episode,step,x,a,x_next` rows plus a JSON sidecar with the metadata.
    pub fn write_csv(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(csv_path)?));
        w.write_record(["episode", "step", "x", "a", "x_next"])?;
        for (k, episode) in self.episodes.iter().enumerate() {
            for (h, t) in episode.iter().enumerate() {
                w.write_record(&[
                    k.to_string(),
                    h.to_string(),
                    t.x.to_string(),
                    t.a.to_string(),
                    t.x_next.to_string(),
                ])?;
            }
        }
        w.flush()?;
        serde_json::to_writer_pretty(BufWriter::new(File::create(meta_path)?), &self.meta)?;
        Ok(())
    }

    pub fn read_csv(csv_path: &Path, meta_path: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_reader(BufReader::new(File::open(meta_path)?))?;
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(csv_path)?));
        let mut episodes: Vec<Vec<Transition>> = vec![Vec::new(); meta.episodes];
        for record in r.records() {
            let record = record?;
            let field = |i: usize| -> Result<usize> {
                record
                    .get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("bad CSV field {i} in {record:?}")))
            };
            let (k, h) = (field(0)?, field(1)?);
            let episode = episodes
                .get_mut(k)
                .ok_or_else(|| Error::InvalidArgument(format!("episode {k} beyond meta count")))?;
            if h != episode.len() {
                return invalid(format!("episode {k} step {h} out of order"));
            }
            episode.push(Transition {
                x: field(2)?,
                a: field(3)?,
                x_next: field(4)?,
            });
        }
        let ds = Self::from_episodes(episodes, meta.seed, &meta.behavior)?;
        if ds.meta != meta {
            return invalid(format!(
                "CSV contents disagree with meta: {:?} vs {:?}",
                ds.meta, meta
            ));
        }
        Ok(ds)
    }
}

/// Samples `k` independent episodes of length `l`.
///
/// `behavior` holds either one policy (used for every episode) or exactly one
/// policy per episode. Episode `i` draws from its own RNG stream derived from
/// `(seed, i)`, so results do not depend on thread scheduling and `k` can grow
/// without replaying earlier episodes.
pub fn collect(
    mdp: &SparseLinearMdp,
    behavior: &[Policy],
    initial: &InitialDistribution,
    k: usize,
    l: usize,
    seed: u64,
    description: &str,
) -> Result<BatchDataset> {
    if k == 0 || l == 0 {
        return invalid("need at least one episode of positive length");
    }
    if behavior.is_empty() {
        return invalid("empty behavior policy list");
    }
    if behavior.len() != 1 && behavior.len() != k {
        return invalid(format!(
            "behavior list has {} policies for {k} episodes",
            behavior.len()
        ));
    }
    if initial.len() != mdp.n_states() {
        return invalid("initial distribution does not match the MDP");
    }
    if behavior
        .iter()
        .any(|p| p.n_states() != mdp.n_states() || p.n_actions() != mdp.n_actions())
    {
        return invalid("behavior policy shape does not match the MDP");
    }
    let episodes: Vec<Vec<Transition>> = (0..k)
        .into_par_iter()
        .map(|episode| {
            let policy = &behavior[if behavior.len() == 1 { 0 } else { episode }];
            let mut rng = stream_rng(seed, episode as u64);
            let mut x = sample_index(initial.probs(), rng.random());
            (0..l)
                .map(|_| {
                    let a = sample_index(policy.row(x), rng.random());
                    let x_next = sample_index(mdp.transition_row(x, a), rng.random());
                    let t = Transition { x, a, x_next };
                    x = x_next;
                    t
                })
                .collect()
        })
        .collect();
    BatchDataset::from_episodes(episodes, seed, description)
}

/// Episode-disjoint folds: fold `t` holds episodes `[t R, (t + 1) R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    folds: Vec<Vec<usize>>,
    episodes_per_fold: usize,
    leftover: Vec<usize>,
}

impl FoldSplit {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    pub fn episodes_per_fold(&self) -> usize {
        self.episodes_per_fold
    }

    pub fn fold(&self, t: usize) -> &[usize] {
        &self.folds[t]
    }

    /// Episodes not assigned to any fold (`K mod T` of them).
    pub fn leftover(&self) -> &[usize] {
        &self.leftover
    }

    pub fn transitions<'a>(
        &'a self,
        dataset: &'a BatchDataset,
        t: usize,
    ) -> impl Iterator<Item = &'a Transition> + 'a {
        self.folds[t]
            .iter()
            .flat_map(move |&e| dataset.episodes[e].iter())
    }
}

pub fn split_folds(dataset: &BatchDataset, t: usize) -> Result<FoldSplit> {
    let k = dataset.meta.episodes;
    if t == 0 {
        return invalid("fold count must be at least 1");
    }
    if k < t {
        return invalid(format!("{k} episodes cannot fill {t} folds"));
    }
    let r = k / t;
    let folds = (0..t).map(|i| (i * r..(i + 1) * r).collect()).collect();
    if k % t != 0 {
        log::debug!("{} episodes left over after splitting {k} into {t} folds", k % t);
    }
    Ok(FoldSplit {
        folds,
        episodes_per_fold: r,
        leftover: (r * t..k).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceKind {
    Empirical,
    Population,
}

/// An uncentered feature covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub sigma: DMatrix<f64>,
    pub kind: CovarianceKind,
}

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        crate::linalg::min_eigenvalue(&self.sigma)
    }

    /// The principal submatrix on `features`.
    pub fn restrict(&self, features: &[usize]) -> DMatrix<f64> {
        self.sigma.select_rows(features).select_columns(features)
    }
}

/// `(1/n) sum phi(x_i, a_i) phi(x_i, a_i)^T` over the given transitions.
pub fn empirical_covariance<'a>(
    model: &ModelAccess<'_>,
    transitions: impl IntoIterator<Item = &'a Transition>,
) -> Result<CovarianceMatrix> {
    let stats = TransitionStats::new(model, transitions)?;
    Ok(CovarianceMatrix {
        sigma: stats.gram,
        kind: CovarianceKind::Empirical,
    })
}

/// Exact state marginals at steps `0..l` under a stationary behavior policy.
pub fn step_marginals(
    mdp: &SparseLinearMdp,
    behavior: &Policy,
    initial: &InitialDistribution,
    l: usize,
) -> Vec<DVector<f64>> {
    let p = mdp.policy_transition(behavior);
    let mut state = DVector::from_column_slice(initial.probs());
    let mut out = Vec::with_capacity(l);
    for _ in 0..l {
        let next = p.tr_mul(&state);
        out.push(std::mem::replace(&mut state, next));
    }
    out
}

/// The expected data occupancy `mu_bar`: the average over steps `0..l` of the
/// state-action marginals under `behavior` started from `initial`.
pub fn behavior_occupancy(
    mdp: &SparseLinearMdp,
    behavior: &Policy,
    initial: &InitialDistribution,
    l: usize,
) -> Result<OccupancyMeasure> {
    if l == 0 {
        return invalid("episode length must be positive");
    }
    if initial.len() != mdp.n_states()
        || behavior.n_states() != mdp.n_states()
        || behavior.n_actions() != mdp.n_actions()
    {
        return invalid("behavior policy or initial distribution does not match the MDP");
    }
    let n_actions = mdp.n_actions();
    let mut mass = vec![0.0; mdp.n_pairs()];
    for marginal in step_marginals(mdp, behavior, initial, l) {
        for x in 0..mdp.n_states() {
            for a in 0..n_actions {
                mass[x * n_actions + a] += marginal[x] * behavior.prob(x, a) / l as f64;
            }
        }
    }
    Ok(OccupancyMeasure::from_mass(n_actions, mass))
}

/// `Sigma = E[(1/L) sum_h phi(x_h, a_h) phi(x_h, a_h)^T]` computed exactly.
pub fn population_covariance(
    mdp: &SparseLinearMdp,
    behavior: &Policy,
    initial: &InitialDistribution,
    l: usize,
) -> Result<CovarianceMatrix> {
    let mu = behavior_occupancy(mdp, behavior, initial, l)?;
    let d = mdp.dim();
    let mut sigma = DMatrix::zeros(d, d);
    for x in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let m = mu.get(x, a);
            if m == 0.0 {
                continue;
            }
            let phi = DVector::from_column_slice(mdp.features(x, a));
            sigma.ger(m, &phi, &phi, 1.0);
        }
    }
    Ok(CovarianceMatrix {
        sigma,
        kind: CovarianceKind::Population,
    })
}

/// Sufficient statistics of a set of transitions for linear regression on
/// targets that are functions of the next state.
///
/// For targets `y_i = f(x_i')` the normal-equation pieces are
/// `X^T X / n = gram` and `X^T y / n = cross * f`, so every fitted-iteration
/// step reduces to small dense algebra independent of `n`.
#[derive(Debug, Clone)]
pub struct TransitionStats {
    pub n: usize,
    /// `(1/n) sum phi phi^T`, `d x d`.
    pub gram: DMatrix<f64>,
    /// `(1/n) sum phi(x_i, a_i) e_{x_i'}^T`, `d x n_states`.
    pub cross: DMatrix<f64>,
    /// Empirical next-state frequencies.
    pub next_freq: DVector<f64>,
}

impl TransitionStats {
    pub fn new<'a>(
        model: &ModelAccess<'_>,
        transitions: impl IntoIterator<Item = &'a Transition>,
    ) -> Result<Self> {
        let (n_states, n_actions, d) = (model.n_states(), model.n_actions(), model.dim());
        let mut counts = vec![0.0f64; n_states * n_actions * n_states];
        let mut n = 0usize;
        for t in transitions {
            if t.x >= n_states || t.a >= n_actions || t.x_next >= n_states {
                return invalid(format!("transition {t:?} out of range"));
            }
            counts[(t.x * n_actions + t.a) * n_states + t.x_next] += 1.0;
            n += 1;
        }
        if n == 0 {
            return invalid("no transitions");
        }
        let inv_n = 1.0 / n as f64;
        // Distinct state-action rows weighted by sqrt(frequency) so that the
        // Gram matrix is a single dense product.
        let mut rows: Vec<(usize, f64)> = Vec::new();
        let mut cross = DMatrix::zeros(d, n_states);
        let mut next_freq = DVector::zeros(n_states);
        for pair in 0..n_states * n_actions {
            let row = &counts[pair * n_states..(pair + 1) * n_states];
            let c: f64 = row.iter().sum();
            if c == 0.0 {
                continue;
            }
            rows.push((pair, c * inv_n));
            let phi = model.features(pair / n_actions, pair % n_actions);
            for (xn, &cnt) in row.iter().enumerate() {
                if cnt == 0.0 {
                    continue;
                }
                next_freq[xn] += cnt * inv_n;
                for j in 0..d {
                    cross[(j, xn)] += cnt * inv_n * phi[j];
                }
            }
        }
        let weighted = DMatrix::from_fn(rows.len(), d, |i, j| {
            let (pair, w) = rows[i];
            w.sqrt() * model.features(pair / n_actions, pair % n_actions)[j]
        });
        let gram = weighted.tr_mul(&weighted);
        Ok(Self {
            n,
            gram,
            cross,
            next_freq,
        })
    }

    /// Restricts the statistics to a subset of feature coordinates.
    pub fn restrict(&self, features: &[usize]) -> Self {
        Self {
            n: self.n,
            gram: self.gram.select_rows(features).select_columns(features),
            cross: self.cross.select_rows(features),
            next_freq: self.next_freq.clone(),
        }
    }

    /// `X^T y / n` for targets `y_i = values[x_i']`.
    pub fn xty(&self, values: &DVector<f64>) -> DVector<f64> {
        &self.cross * values
    }

    /// `y^T y / n` for targets `y_i = values[x_i']`.
    pub fn yty(&self, values: &DVector<f64>) -> f64 {
        self.next_freq
            .iter()
            .zip(values.iter())
            .map(|(f, v)| f * v * v)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpSpec;

    fn deterministic_cycle() -> SparseLinearMdp {
        // Two states that swap deterministically; one feature per state.
        SparseLinearMdp::new(MdpSpec {
            n_states: 2,
            n_actions: 1,
            gamma: 0.5,
            d: 2,
            support: vec![0, 1],
            features: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            psi: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            reward: vec![vec![0.0], vec![1.0]],
        })
        .unwrap()
    }

    #[test]
    fn deterministic_trajectory_is_seed_independent() {
        let mdp = deterministic_cycle();
        let pi = [Policy::uniform(2, 1)];
        let xi = InitialDistribution::point_mass(2, 0).unwrap();
        let a = collect(&mdp, &pi, &xi, 2, 4, 1, "u").unwrap();
        let b = collect(&mdp, &pi, &xi, 2, 4, 99, "u").unwrap();
        assert_eq!(a.episodes(), b.episodes());
        let xs: Vec<usize> = a.episodes()[0].iter().map(|t| t.x).collect();
        assert_eq!(xs, vec![0, 1, 0, 1]);
        assert!(a.episodes()[0].windows(2).all(|w| w[0].x_next == w[1].x));
    }

    #[test]
    fn size_and_errors() {
        let mdp = deterministic_cycle();
        let pi = [Policy::uniform(2, 1)];
        let xi = InitialDistribution::uniform(2);
        let ds = collect(&mdp, &pi, &xi, 3, 4, 0, "u").unwrap();
        assert_eq!(ds.len(), 12);
        assert!(collect(&mdp, &[], &xi, 3, 4, 0, "u").is_err());
        assert!(collect(&mdp, &[pi[0].clone(), pi[0].clone()], &xi, 3, 4, 0, "u").is_err());
    }

    #[test]
    fn folds_floor_rule() {
        let mdp = deterministic_cycle();
        let pi = [Policy::uniform(2, 1)];
        let xi = InitialDistribution::uniform(2);
        let ds = collect(&mdp, &pi, &xi, 11, 2, 0, "u").unwrap();
        let f = split_folds(&ds, 5).unwrap();
        assert_eq!(f.episodes_per_fold(), 2);
        assert_eq!(f.leftover(), &[10]);
        assert_eq!(f.fold(4), &[8, 9]);
        let ds10 = collect(&mdp, &pi, &xi, 10, 2, 0, "u").unwrap();
        assert!(split_folds(&ds10, 5).unwrap().leftover().is_empty());
        assert!(split_folds(&ds10, 11).is_err());
        assert!(split_folds(&ds10, 0).is_err());
    }

    #[test]
    fn all_ones_features_give_all_ones_covariance() {
        let mdp = SparseLinearMdp::new(MdpSpec {
            n_states: 2,
            n_actions: 1,
            gamma: 0.5,
            d: 3,
            support: vec![0],
            features: vec![vec![1.0; 3], vec![1.0; 3]],
            psi: vec![vec![0.5, 0.5]],
            reward: vec![vec![0.0], vec![0.0]],
        })
        .unwrap();
        let ds = collect(
            &mdp,
            &[Policy::uniform(2, 1)],
            &InitialDistribution::uniform(2),
            5,
            3,
            7,
            "u",
        )
        .unwrap();
        let cov = empirical_covariance(&mdp.access(), ds.transitions()).unwrap();
        assert!(cov.sigma.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn single_step_population_covariance() {
        let mdp = deterministic_cycle();
        let xi = InitialDistribution::new(vec![0.25, 0.75]).unwrap();
        let cov = population_covariance(&mdp, &Policy::uniform(2, 1), &xi, 1).unwrap();
        assert_eq!(cov.sigma, DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.75]));
    }

    #[test]
    fn csv_round_trip() {
        let mdp = deterministic_cycle();
        let ds = collect(
            &mdp,
            &[Policy::uniform(2, 1)],
            &InitialDistribution::uniform(2),
            4,
            3,
            5,
            "uniform",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (c, m) = (dir.path().join("d.csv"), dir.path().join("d.meta.json"));
        ds.write_csv(&c, &m).unwrap();
        assert_eq!(BatchDataset::read_csv(&c, &m).unwrap(), ds);
    }
}
