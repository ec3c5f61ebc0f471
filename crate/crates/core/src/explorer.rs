//! Layer-by-layer reward-free exploration with one deployment per layer.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{solve_design, DesignProblem};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, psd_projection, Matrix};
use crate::lsvi::{cov_from_entries, Candidates, CovarianceEntry, Dataset, Leverage, LsviModel, RewardTable};
use crate::mdp::{derive_seed, FeatureTable, LinearMdp, Rollout, Trajectory};
use crate::policy::{MixturePolicy, PolicySet};
use crate::scalar::Real;

/// Mixing weights tried, in order, when the design mixture violates the eigenvalue constraint.
pub const BLEND_SCHEDULE: [f64; 4] = [0.125, 0.25, 0.5, 1.0];

/// Episodes simulated per independent rng stream.
const EPISODE_CHUNK: usize = 256;

const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreMode {
    /// Covariance design with estimated leverage objective.
    Linear,
    /// Occupancy design with ratio objective; requires canonical features.
    Tabular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Episodes per deployment; replaces the theoretical `N` when set.
    pub n_override: Option<usize>,
    /// Greedy uncertainty tables added per layer when building the exploration set.
    pub exp_budget: usize,
    pub design_tol: f64,
    pub design_max_iter: usize,
    pub design_ridge: f64,
    pub mode: ExploreMode,
    pub seed: u64,
    /// Multiplier on the eigenvalue (or occupancy) constraint threshold.
    pub threshold_scale: f64,
    /// Upper limit on behaviourally distinct candidates per layer.
    pub max_candidates: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            epsilon: 0.1,
            delta: 0.1,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            n_override: None,
            exp_budget: 300,
            design_tol: crate::design::DEFAULT_TOL,
            design_max_iter: 1000,
            design_ridge: crate::design::DEFAULT_RIDGE,
            mode: ExploreMode::Linear,
            seed: 0,
            threshold_scale: 1.0,
            max_candidates: 1_000_000,
        }
    }
}

/// Quantities fixed by the configuration before any episode is collected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreConstants {
    pub iota: f64,
    pub eps_bar: f64,
    /// `N` from the formula, before any override.
    pub n_theory: f64,
    pub n: usize,
    pub threshold: f64,
    /// Cap `A` of the leverage reward (linear mode).
    pub leverage_cap: f64,
    /// `80·C₁·C₃`.
    pub c4: f64,
}

/// Above this the formula `N` is rejected unless overridden.
pub const MAX_EPISODES: f64 = 1e9;

impl ExploreConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(self.epsilon) || !open_unit(self.delta) {
            return Err(Error::contract("epsilon and delta must lie in (0, 1)"));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c3 > 0.0) {
            return Err(Error::contract("C1, C2 and C3 must be positive"));
        }
        if self.n_override == Some(0) {
            return Err(Error::contract("n_override must be at least 1"));
        }
        if !(self.threshold_scale >= 0.0) || !self.threshold_scale.is_finite() {
            return Err(Error::contract("threshold_scale must be finite and nonnegative"));
        }
        if !(self.design_tol > 0.0) || self.design_max_iter == 0 || !(self.design_ridge >= 0.0) {
            return Err(Error::contract(
                "design tolerance, iteration limit and ridge are invalid",
            ));
        }
        if self.max_candidates == 0 {
            return Err(Error::contract("max_candidates must be positive"));
        }
        Ok(())
    }

    /// `ι`, `ε̄`, `N`, threshold and leverage cap for an instance of the given shape.
    pub fn constants(
        &self,
        d: usize,
        num_states: usize,
        num_actions: usize,
        horizon: usize,
    ) -> Result<ExploreConstants> {
        self.validate()?;
        let (d_f, h_f, s_f, a_f) = (d as f64, horizon as f64, num_states as f64, num_actions as f64);
        let iota = (d_f * h_f / (self.epsilon * self.delta)).ln();
        let (eps_bar, n_theory, threshold) = match self.mode {
            ExploreMode::Linear => {
                let eps_bar = self.c1 * self.epsilon / (h_f * h_f * d_f.sqrt() * iota);
                (
                    eps_bar,
                    self.c2 * d_f * iota / (eps_bar * eps_bar),
                    self.c3 * d_f * d_f * h_f * eps_bar * iota,
                )
            }
            ExploreMode::Tabular => {
                let eps_bar = self.c1 * self.epsilon / (h_f * h_f * s_f.sqrt() * iota);
                (
                    eps_bar,
                    self.c2 * s_f * a_f * iota / (eps_bar * eps_bar),
                    self.c3 * h_f * s_f.sqrt() * eps_bar * iota,
                )
            }
        };
        if self.threshold_scale != 1.0 {
            log::warn!("constraint threshold scaled by {}", self.threshold_scale);
        }
        let n = match self.n_override {
            Some(n) => n,
            None if n_theory <= MAX_EPISODES => n_theory.ceil() as usize,
            None => {
                return Err(Error::Size(format!(
                    "N = {n_theory:.3e} episodes per deployment; set n_override"
                )))
            }
        };
        Ok(ExploreConstants {
            iota,
            eps_bar,
            n_theory,
            n,
            threshold: threshold * self.threshold_scale,
            leverage_cap: eps_bar / (self.c2 * d_f.powi(3) * h_f * iota * iota),
            c4: 80.0 * self.c1 * self.c3,
        })
    }
}

/// Diagnostics of one solve of the layer objective.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveDiagnostics {
    pub layer: usize,
    pub candidates: usize,
    /// Distinct estimated covariances among the candidates.
    pub labels: usize,
    pub design_g: f64,
    pub design_iterations: usize,
    pub design_converged: bool,
    pub effective_dim: usize,
    pub lambda_min: f64,
    pub threshold: f64,
    /// `λ_min − threshold` of the returned mixture.
    pub margin: f64,
    /// Uniform weight blended in (0 when the design mixture was feasible).
    pub beta: f64,
    /// The uniform mixture replaced the design mixture.
    pub chose_uniform: bool,
    /// `max_π̂ Ê_π̂ min(φ^T(NΣ̂)^{-1}φ, A)`; the ratio objective in tabular mode.
    pub objective: f64,
    /// `max_π̂ Ê_π̂ φ^T(NΣ̂)^{-1}φ`; equal to `objective` in tabular mode.
    pub uncapped_objective: f64,
    pub uniform_objective: Option<f64>,
    pub leverage_cap: f64,
    pub components: usize,
    /// Clamp hits across the candidate estimates.
    pub clamped: usize,
    /// Largest observed `‖w̄‖ / bound` across the candidate estimates.
    pub worst_weight_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct ObjectiveSolution<T: Real> {
    pub mixture: MixturePolicy<T>,
    pub diagnostics: ObjectiveDiagnostics,
}

/// Label-level view of the candidates: distinct atoms with their first candidate and mass.
struct Atoms<T: Real> {
    matrices: Vec<Matrix<T>>,
    first: Vec<usize>,
    mass: Vec<T>,
}

fn group_atoms<T: Real>(matrices: Vec<Matrix<T>>, masses: &[T]) -> Atoms<T> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut atoms = Atoms {
        matrices: Vec::new(),
        first: Vec::new(),
        mass: Vec::new(),
    };
    for (i, m) in matrices.into_iter().enumerate() {
        let key: Vec<u64> = m.as_slice().iter().map(|x| x.as_f64().to_bits()).collect();
        match index.get(&key) {
            Some(&k) => atoms.mass[k] += masses[i],
            None => {
                index.insert(key, atoms.matrices.len());
                atoms.matrices.push(m);
                atoms.first.push(i);
                atoms.mass.push(masses[i]);
            }
        }
    }
    atoms
}

fn combine<T: Real>(weights: &[T], atoms: &[Matrix<T>]) -> Matrix<T> {
    let d = atoms[0].rows();
    let mut out = Matrix::zeros(d, d);
    for (w, m) in weights.iter().zip(atoms) {
        if *w != T::zero() {
            out.add_scaled(*w, m);
        }
    }
    out
}

fn blend<T: Real>(mu: &[T], uniform: &[T], beta: f64) -> Vec<T> {
    let b = T::lit(beta);
    mu.iter()
        .zip(uniform)
        .map(|(&m, &u)| (T::one() - b) * m + b * u)
        .collect()
}

fn to_mixture<T: Real>(cands: &Candidates<T>, atoms: &Atoms<T>, weights: &[T]) -> Result<MixturePolicy<T>> {
    let comps = weights
        .iter()
        .zip(&atoms.first)
        .filter(|(w, _)| **w > T::zero())
        .map(|(&w, &i)| (w, cands.policy(i)))
        .collect();
    MixturePolicy::normalized(comps)
}

/// Stage-one estimates: one covariance (or occupancy vector) per candidate.
fn candidate_covariances<T: Real>(
    model: &LsviModel<T>,
    cands: &Candidates<T>,
    tabular: bool,
) -> Result<(Vec<Matrix<T>>, usize, f64)> {
    let f = model.features();
    let d = f.dim();
    if tabular {
        if !f.is_canonical() {
            return Err(Error::contract("tabular exploration requires canonical-basis features"));
        }
        let na = f.num_actions();
        let index: Vec<Option<usize>> = (0..f.num_states() * na)
            .map(|sa| f.canonical_index(sa / na, sa % na))
            .collect();
        let rt = RewardTable::build(f, d, |s, a, c| {
            if index[s * na + a] == Some(c) {
                T::one()
            } else {
                T::zero()
            }
        });
        let (vals, stats) = cands.estimate_er(model, &rt, &vec![T::one(); d]);
        let mats = vals.chunks(d).map(Matrix::from_diag).collect();
        Ok((mats, stats.clamped, stats.worst_ratio))
    } else {
        let pairs = CovarianceEntry::pairs(d);
        let rewards: Vec<CovarianceEntry> = pairs.iter().map(|&(i, j)| CovarianceEntry { i, j }).collect();
        let refs: Vec<&dyn crate::mdp::LayerReward<T>> = rewards.iter().map(|r| r as _).collect();
        let rt = RewardTable::from_rewards(f, &refs);
        let (vals, stats) = cands.estimate_er(model, &rt, &vec![T::one(); pairs.len()]);
        let mats = vals
            .par_chunks(pairs.len())
            .map(|e| psd_projection(&cov_from_entries(d, e)))
            .collect();
        Ok((mats, stats.clamped, stats.worst_ratio))
    }
}

/// `(capped, uncapped)` objective of a mixture covariance over all candidates.
fn leverage_objective<T: Real>(
    model: &LsviModel<T>,
    cands: &Candidates<T>,
    sigma: &Matrix<T>,
    n: usize,
    cap: T,
    ridge: T,
) -> Result<(f64, f64)> {
    let f = model.features();
    let mut reg = sigma.clone();
    reg.add_diag(ridge);
    let lev = Leverage::new(&reg, T::from_count(n), cap)?;
    let mut top = T::zero();
    for s in 0..f.num_states() {
        for a in f.valid_actions(s) {
            top = top.max(lev.raw(f.phi(s, a)));
        }
    }
    let rt = RewardTable::build(f, 2, |s, a, c| {
        let r = lev.raw(f.phi(s, a));
        if c == 0 {
            r.min(cap)
        } else {
            r
        }
    });
    let (vals, _) = cands.estimate_er(model, &rt, &[cap, top]);
    let max_col = |c: usize| vals.iter().skip(c).step_by(2).fold(0.0f64, |m, v| m.max(v.as_f64()));
    Ok((max_col(0), max_col(1)))
}

/// `max_π̂ Σ_k d̂_π̂(k) / d̂_μ(k)` with `0/0 = 0`.
fn ratio_objective<T: Real>(atoms: &[Matrix<T>], occ: &Matrix<T>) -> f64 {
    let d = occ.rows();
    atoms
        .iter()
        .map(|m| {
            (0..d)
                .map(|k| {
                    let (p, q) = (m[(k, k)].as_f64(), occ[(k, k)].as_f64());
                    if p <= 0.0 {
                        0.0
                    } else if q <= 0.0 {
                        f64::INFINITY
                    } else {
                        p / q
                    }
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

fn constraint_value<T: Real>(sigma: &Matrix<T>, tabular: bool) -> f64 {
    if tabular {
        (0..sigma.rows())
            .map(|k| sigma[(k, k)].as_f64())
            .fold(f64::INFINITY, f64::min)
    } else {
        min_eigenvalue(sigma).as_f64()
    }
}

/// Chooses the layer-`h` deployment mixture from data of earlier deployments.
///
/// Every candidate's covariance is estimated, a log-det design over them gives `μ̂`, and
/// uniform mass over the set is blended in when `λ_min(Σ̂_μ̂)` misses the threshold. The
/// uniform mixture replaces the result when it is feasible with a smaller objective.
pub fn solve_exploration_objective<T: Real>(
    h: usize,
    dataset: &Dataset<T>,
    exp_set: &PolicySet<T>,
    config: &ExploreConfig,
) -> Result<ObjectiveSolution<T>> {
    let f = dataset.features();
    let constants = config.constants(f.dim(), f.num_states(), f.num_actions(), dataset.horizon())?;
    let model = dataset.model();
    solve_with_model(h, &model, exp_set, config, &constants)
}

/// Occupancy-ratio variant for canonical-basis instances.
pub fn solve_exploration_objective_tabular<T: Real>(
    h: usize,
    dataset: &Dataset<T>,
    policy_set: &PolicySet<T>,
    config: &ExploreConfig,
) -> Result<ObjectiveSolution<T>> {
    let config = ExploreConfig {
        mode: ExploreMode::Tabular,
        ..config.clone()
    };
    solve_exploration_objective(h, dataset, policy_set, &config)
}

fn solve_with_model<T: Real>(
    h: usize,
    model: &LsviModel<T>,
    exp_set: &PolicySet<T>,
    config: &ExploreConfig,
    constants: &ExploreConstants,
) -> Result<ObjectiveSolution<T>> {
    if h >= model.horizon() {
        return Err(Error::contract(format!("layer {h} out of range")));
    }
    let tabular = config.mode == ExploreMode::Tabular;
    for l in 0..h {
        if model.samples(l) == 0 {
            return Err(Error::Estimation {
                layer: l,
                reason: "no samples recorded at this layer".into(),
            });
        }
    }
    let cands = Candidates::for_layer(model, exp_set, h, config.max_candidates)?;
    let (matrices, clamped, worst_ratio) = candidate_covariances(model, &cands, tabular)?;
    let atoms = group_atoms(matrices, cands.masses());

    let ridge = T::lit(config.design_ridge);
    let problem = DesignProblem::from_matrices(atoms.matrices.clone(), ridge)?;
    let design = solve_design(&problem, T::lit(config.design_tol), config.design_max_iter)?;

    let threshold = constants.threshold;
    let feasible = |w: &[T]| {
        let v = constraint_value(&combine(w, &atoms.matrices), tabular);
        (v >= threshold - FEASIBILITY_TOL, v)
    };
    let (ok, mut lambda) = feasible(&design.mu);
    let mut weights = design.mu.clone();
    let mut beta = 0.0;
    if !ok {
        let mut best = lambda;
        let mut accepted = false;
        for &b in &BLEND_SCHEDULE {
            let w = blend(&design.mu, &atoms.mass, b);
            let (ok, v) = feasible(&w);
            best = best.max(v);
            if ok {
                weights = w;
                lambda = v;
                beta = b;
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::Infeasible {
                layer: h,
                best_lambda_min: best,
                threshold,
            });
        }
    }

    let cap = T::lit(constants.leverage_cap);
    let objective_of = |w: &[T]| -> Result<(f64, f64)> {
        let sigma = combine(w, &atoms.matrices);
        if tabular {
            let r = ratio_objective(&atoms.matrices, &sigma);
            Ok((r, r))
        } else {
            leverage_objective(model, &cands, &sigma, constants.n, cap, ridge)
        }
    };
    let (mut objective, mut uncapped) = objective_of(&weights)?;
    let mut chose_uniform = false;
    let mut uniform_objective = None;
    if beta < 1.0 {
        let (ok, v) = feasible(&atoms.mass);
        if ok {
            let (uo, uu) = objective_of(&atoms.mass)?;
            uniform_objective = Some(uu);
            if uu < uncapped {
                weights = atoms.mass.clone();
                lambda = v;
                objective = uo;
                uncapped = uu;
                chose_uniform = true;
            }
        }
    } else {
        uniform_objective = Some(uncapped);
    }

    let mixture = to_mixture(&cands, &atoms, &weights)?;
    let diagnostics = ObjectiveDiagnostics {
        layer: h,
        candidates: cands.len(),
        labels: atoms.matrices.len(),
        design_g: design.g.as_f64(),
        design_iterations: design.iterations,
        design_converged: design.converged,
        effective_dim: design.effective_dim,
        lambda_min: lambda,
        threshold,
        margin: lambda - threshold,
        beta,
        chose_uniform,
        objective,
        uncapped_objective: uncapped,
        uniform_objective,
        leverage_cap: if tabular { 0.0 } else { constants.leverage_cap },
        components: mixture.components().len(),
        clamped,
        worst_weight_ratio: worst_ratio,
    };
    Ok(ObjectiveSolution { mixture, diagnostics })
}

/// Environment access permitted to the learner: running episodes, nothing else.
pub trait TrajectorySampler<T: Real> {
    fn sample_trajectory(&mut self, policy: &MixturePolicy<T>, deployment: usize) -> Result<Trajectory>;

    /// `episodes` independent episodes of one deployment.
    fn sample_deployment(
        &mut self,
        policy: &MixturePolicy<T>,
        deployment: usize,
        episodes: usize,
    ) -> Result<Vec<Trajectory>> {
        (0..episodes)
            .map(|_| self.sample_trajectory(policy, deployment))
            .collect()
    }
}

/// Simulator over a known MDP; episodes of a deployment use split, seed-derived rng streams.
pub struct SimulatedEnv<'a, T: Real> {
    mdp: &'a LinearMdp<T>,
    seed: u64,
    single: ChaCha8Rng,
}

impl<'a, T: Real> SimulatedEnv<'a, T> {
    pub fn new(mdp: &'a LinearMdp<T>, seed: u64) -> Result<Self> {
        let report = crate::mdp::validate(mdp);
        if let Some(v) = report.violations.first() {
            return Err(Error::model(format!("cannot simulate an invalid MDP: {v}")));
        }
        Ok(SimulatedEnv {
            mdp,
            seed,
            single: ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::MAX])),
        })
    }
}

impl<T: Real> TrajectorySampler<T> for SimulatedEnv<'_, T> {
    fn sample_trajectory(&mut self, policy: &MixturePolicy<T>, deployment: usize) -> Result<Trajectory> {
        Ok(Rollout::unchecked(self.mdp, policy)?.sample(&mut self.single, deployment))
    }

    fn sample_deployment(
        &mut self,
        policy: &MixturePolicy<T>,
        deployment: usize,
        episodes: usize,
    ) -> Result<Vec<Trajectory>> {
        let roll = Rollout::unchecked(self.mdp, policy)?;
        let chunks: Vec<Vec<Trajectory>> = (0..episodes.div_ceil(EPISODE_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[deployment as u64, c as u64]));
                let count = EPISODE_CHUNK.min(episodes - c * EPISODE_CHUNK);
                (0..count).map(|_| roll.sample(&mut rng, deployment)).collect()
            })
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DeploymentEntry<T: Real> {
    pub layer: usize,
    pub episodes: usize,
    pub wall_time_s: f64,
    pub mixture: MixturePolicy<T>,
    pub diagnostics: ObjectiveDiagnostics,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DeploymentLog<T: Real> {
    pub constants: ExploreConstants,
    pub entries: Vec<DeploymentEntry<T>>,
}

impl<T: Real> DeploymentLog<T> {
    pub fn deployments(&self) -> usize {
        self.entries.len()
    }

    /// One entry per layer, in order, each with exactly `N` episodes.
    pub fn is_compliant(&self, horizon: usize) -> bool {
        self.entries.len() == horizon
            && self
                .entries
                .iter()
                .enumerate()
                .all(|(h, e)| e.layer == h && e.episodes == self.constants.n)
    }
}

#[derive(Clone, Debug)]
pub struct Exploration<T: Real> {
    pub dataset: Dataset<T>,
    pub log: DeploymentLog<T>,
}

/// Runs one deployment per layer, each of exactly `N` episodes fixed up front.
pub fn explore<T: Real, E: TrajectorySampler<T> + ?Sized>(
    env: &mut E,
    features: Arc<FeatureTable<T>>,
    horizon: usize,
    initial_state: usize,
    config: &ExploreConfig,
    exp_set: &PolicySet<T>,
) -> Result<Exploration<T>> {
    if exp_set.horizon() != horizon {
        return Err(Error::contract("exploration set horizon does not match the instance"));
    }
    if exp_set.is_empty() {
        return Err(Error::contract("exploration set is empty"));
    }
    let constants = config.constants(features.dim(), features.num_states(), features.num_actions(), horizon)?;
    let n = constants.n;
    let mut dataset = Dataset::new(features, horizon, initial_state);
    let mut entries = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let start = Instant::now();
        let model = dataset.model();
        let sol = solve_with_model(h, &model, exp_set, config, &constants)?;
        let batch = env.sample_deployment(&sol.mixture, h, n)?;
        if batch.len() != n || batch.iter().any(|t| t.deployment_index != h) {
            return Err(Error::contract(format!(
                "environment returned {} episodes for deployment {h}, expected {n}",
                batch.len()
            )));
        }
        dataset.extend(batch)?;
        log::info!(
            "deployment {h}: {} components, lambda_min {:.3e}, objective {:.3e}",
            sol.diagnostics.components,
            sol.diagnostics.lambda_min,
            sol.diagnostics.objective
        );
        entries.push(DeploymentEntry {
            layer: h,
            episodes: n,
            wall_time_s: start.elapsed().as_secs_f64(),
            mixture: sol.mixture,
            diagnostics: sol.diagnostics,
        });
    }
    Ok(Exploration {
        dataset,
        log: DeploymentLog { constants, entries },
    })
}
