use serde::{Deserialize, Serialize};

use super::rewards::{CovarianceEntry, Leverage};
use super::LsviModel;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mdp::{dp_occupancy, FeatureTable, LayerReward, LinearMdp, RewardFunction};
use crate::policy::{ActionTable, CovarianceOracle, DeterministicPolicy, MixturePolicy, PolicyLike};
use crate::scalar::Real;

const REWARD_TOL: f64 = 1e-9;

/// Per-layer record of one backward pass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer: usize,
    /// `w̄_h` (one column per simultaneously estimated reward, row-major `d × m`).
    pub weights: Vec<f64>,
    /// Largest `‖w̄_h‖₂` over the columns.
    pub weight_norm: f64,
    pub weight_bound: f64,
    /// `(s, π_h(s))` evaluations that hit either end of the truncation interval.
    pub clamped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateTrace {
    /// Regression layers, ascending.
    pub layers: Vec<LayerTrace>,
    pub value: f64,
}

impl EstimateTrace {
    /// Every weight norm is within `(1 + rel)` of its bound.
    pub fn bounds_hold(&self, rel: f64) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight_norm <= l.weight_bound * (1.0 + rel))
    }

    pub fn total_clamped(&self) -> usize {
        self.layers.iter().map(|l| l.clamped).sum()
    }
}

/// Reward values on every valid `(s,a)`, `m` columns: `values[(s·A + a)·m + c]`.
pub(crate) struct RewardTable<T: Real> {
    pub m: usize,
    pub na: usize,
    pub values: Vec<T>,
}

impl<T: Real> RewardTable<T> {
    pub fn build(features: &FeatureTable<T>, m: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let na = features.num_actions();
        let mut values = vec![T::zero(); features.num_states() * na * m];
        for s in 0..features.num_states() {
            for a in features.valid_actions(s) {
                for c in 0..m {
                    values[(s * na + a) * m + c] = f(s, a, c);
                }
            }
        }
        RewardTable { m, na, values }
    }

    pub fn from_rewards(features: &FeatureTable<T>, rewards: &[&dyn LayerReward<T>]) -> Self {
        Self::build(features, rewards.len(), |s, a, c| rewards[c].value(features, s, a))
    }

    #[inline]
    pub fn at(&self, s: usize, a: usize) -> &[T] {
        let i = (s * self.na + a) * self.m;
        &self.values[i..i + self.m]
    }

    /// Every entry of column `c` lies in `[0, caps[c]]` within tolerance.
    pub fn check(&self, caps: &[T]) -> Result<()> {
        let tol = T::tol(REWARD_TOL);
        for (i, &v) in self.values.iter().enumerate() {
            let c = i % self.m;
            if !(v >= -tol && v <= caps[c] + tol) {
                let sa = i / self.m;
                return Err(Error::contract(format!(
                    "reward {v} at (s={}, a={}) outside [0, {}]",
                    sa / self.na,
                    sa % self.na,
                    caps[c]
                )));
            }
        }
        Ok(())
    }
}

/// `w = K V` with `K` of shape `d × S` and `V` of shape `S × m` (row-major).
#[inline]
pub(crate) fn regress<T: Real>(k: &Matrix<T>, v: &[T], m: usize) -> Vec<T> {
    let (d, n) = (k.rows(), k.cols());
    let mut w = vec![T::zero(); d * m];
    for i in 0..d {
        let row = k.row(i);
        for c in 0..m {
            let mut acc = T::zero();
            for sp in 0..n {
                acc += row[sp] * v[sp * m + c];
            }
            w[i * m + c] = acc;
        }
    }
    w
}

/// `φ^T w[:,c]`.
#[inline]
pub(crate) fn project<T: Real>(phi: &[T], w: &[T], m: usize, c: usize) -> T {
    let mut acc = T::zero();
    for (i, &p) in phi.iter().enumerate() {
        acc += p * w[i * m + c];
    }
    acc
}

/// Counts of clamp hits plus the running maximum of weight-norm ratios.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct PassStats {
    pub clamped: usize,
    pub worst_ratio: f64,
}

impl PassStats {
    pub fn merge(&mut self, other: PassStats) {
        self.clamped += other.clamped;
        self.worst_ratio = self.worst_ratio.max(other.worst_ratio);
    }
}

/// Largest column norm of a row-major `d × m` block.
pub(crate) fn max_column_norm<T: Real>(w: &[T], m: usize) -> f64 {
    let d = w.len() / m.max(1);
    (0..m)
        .map(|c| (0..d).map(|i| w[i * m + c].as_f64().powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Values `V_l(s)` for the listed states, `m` columns, written into `out[s·m + c]`.
///
/// `base` is `φ^T w̄` (absent at the reward-only layer), `reward` is added when present, and the
/// result is clamped to `[0, caps[c]]` when `clamp` is set.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn layer_values<T: Real>(
    features: &FeatureTable<T>,
    actions: &[usize],
    states: &[usize],
    w: Option<&[T]>,
    reward: Option<&RewardTable<T>>,
    caps: &[T],
    clamp: bool,
    out: &mut [T],
) -> usize {
    let m = caps.len();
    let mut clamped = 0;
    for &s in states {
        let a = actions[s];
        let phi = features.phi(s, a);
        let r = reward.map(|t| t.at(s, a));
        for c in 0..m {
            let mut q = match w {
                Some(w) => project(phi, w, m, c),
                None => T::zero(),
            };
            if let Some(r) = r {
                q += r[c];
            }
            if clamp {
                if q < T::zero() {
                    q = T::zero();
                    clamped += 1;
                } else if q > caps[c] {
                    q = caps[c];
                    clamped += 1;
                }
            }
            out[s * m + c] = q;
        }
    }
    clamped
}

fn all_states(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn table_for<T: Real>(model: &LsviModel<T>, policy: &DeterministicPolicy<T>) -> Result<ActionTable> {
    if policy.horizon() != model.horizon() {
        return Err(Error::contract(format!(
            "policy horizon {} does not match dataset horizon {}",
            policy.horizon(),
            model.horizon()
        )));
    }
    policy.action_table(model.features())
}

/// Algorithm-4 pass for `m` rewards at once; columns are computed independently.
pub(crate) fn er_pass<T: Real>(
    model: &LsviModel<T>,
    table: &ActionTable,
    h: usize,
    rewards: &RewardTable<T>,
    caps: &[T],
) -> (Vec<T>, EstimateTrace) {
    let f = model.features();
    let (n, m, d) = (f.num_states(), caps.len(), f.dim());
    let states = all_states(n);
    let mut v = vec![T::zero(); n * m];
    layer_values(f, &table.layers[h], &states, None, Some(rewards), caps, false, &mut v);
    let mut layers = Vec::with_capacity(h);
    for l in (0..h).rev() {
        let w = regress(model.regression(l), &v, m);
        let mut next = vec![T::zero(); n * m];
        let clamped = layer_values(f, &table.layers[l], &states, Some(&w), None, caps, true, &mut next);
        layers.push(LayerTrace {
            layer: l,
            weight_norm: max_column_norm(&w, m),
            weight_bound: ((d as u64 * model.samples(l)) as f64).sqrt(),
            weights: w.iter().map(|x| x.as_f64()).collect(),
            clamped,
        });
        v = next;
    }
    layers.reverse();
    let s1 = model.initial_state();
    let values = v[s1 * m..(s1 + 1) * m].to_vec();
    let value = values.first().map_or(0.0, |x| x.as_f64());
    (values, EstimateTrace { layers, value })
}

/// Algorithm-3 pass for `m` linear rewards at once.
pub(crate) fn v_pass<T: Real>(
    model: &LsviModel<T>,
    table: &ActionTable,
    rewards: &[RewardTable<T>],
    m: usize,
) -> (Vec<T>, EstimateTrace) {
    let f = model.features();
    let (n, d) = (f.num_states(), f.dim());
    let horizon = model.horizon();
    let hcap = vec![T::from_count(horizon); m];
    let states = all_states(n);
    let mut v = vec![T::zero(); n * m];
    let mut layers = Vec::with_capacity(horizon);
    for l in (0..horizon).rev() {
        let w = (l + 1 < horizon).then(|| regress(model.regression(l), &v, m));
        let mut next = vec![T::zero(); n * m];
        let clamped = layer_values(
            f,
            &table.layers[l],
            &states,
            w.as_deref(),
            Some(&rewards[l]),
            &hcap,
            true,
            &mut next,
        );
        layers.push(LayerTrace {
            layer: l,
            weight_norm: w.as_deref().map_or(0.0, |w| max_column_norm(w, m)),
            weight_bound: horizon as f64 * ((d as u64 * model.samples(l)) as f64).sqrt(),
            weights: w.map_or_else(|| vec![0.0; d * m], |w| w.iter().map(|x| x.as_f64()).collect()),
            clamped,
        });
        v = next;
    }
    layers.reverse();
    let s1 = model.initial_state();
    let values = v[s1 * m..(s1 + 1) * m].to_vec();
    let value = values.first().map_or(0.0, |x| x.as_f64());
    (values, EstimateTrace { layers, value })
}

/// Per-layer reward tables for linear rewards, validated to lie in `[0, 1]`.
pub(crate) fn linear_reward_tables<T: Real>(
    features: &FeatureTable<T>,
    horizon: usize,
    rewards: &[&RewardFunction<T>],
) -> Result<Vec<RewardTable<T>>> {
    for r in rewards {
        if !r.is_linear() {
            return Err(Error::contract("value estimation requires a linear reward"));
        }
        if r.horizon() != horizon {
            return Err(Error::contract(format!(
                "reward horizon {} does not match {horizon}",
                r.horizon()
            )));
        }
        r.check_range(features, T::tol(REWARD_TOL))?;
    }
    Ok((0..horizon)
        .map(|h| RewardTable::build(features, rewards.len(), |s, a, c| rewards[c].value(features, h, s, a)))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate<T: Real> {
    pub value: T,
    pub trace: EstimateTrace,
}

/// `V̂^π(r)` by backward least-squares value iteration clamped to `[0, H]`.
pub fn estimate_v<T: Real>(
    model: &LsviModel<T>,
    policy: &DeterministicPolicy<T>,
    reward: &RewardFunction<T>,
) -> Result<Estimate<T>> {
    let table = table_for(model, policy)?;
    let tables = linear_reward_tables(model.features(), model.horizon(), &[reward])?;
    model.require_layers(model.horizon().saturating_sub(1))?;
    let (values, trace) = v_pass(model, &table, &tables, 1);
    Ok(Estimate {
        value: values[0],
        trace,
    })
}

/// `Ê_π r(s_h, a_h)` for a reward bounded by its cap `A ≤ 1`, clamped to `[0, A]`.
pub fn estimate_er<T: Real>(
    model: &LsviModel<T>,
    policy: &DeterministicPolicy<T>,
    h: usize,
    reward: &dyn LayerReward<T>,
) -> Result<Estimate<T>> {
    if h >= model.horizon() {
        return Err(Error::contract(format!("layer {h} out of range")));
    }
    let cap = reward.cap();
    if !(cap >= T::zero() && cap <= T::one() + T::tol(REWARD_TOL)) {
        return Err(Error::contract(format!("reward cap {cap} outside [0, 1]")));
    }
    let table = table_for(model, policy)?;
    let rt = RewardTable::from_rewards(model.features(), &[reward]);
    rt.check(&[cap])?;
    model.require_layers(h)?;
    let (values, trace) = er_pass(model, &table, h, &rt, &[cap]);
    Ok(Estimate {
        value: values[0],
        trace,
    })
}

/// `Σ_i p_i Ê_{π_i} r(s_h, a_h)`.
pub fn estimate_er_mixture<T: Real>(
    model: &LsviModel<T>,
    mixture: &MixturePolicy<T>,
    h: usize,
    reward: &dyn LayerReward<T>,
) -> Result<T> {
    let mut total = T::zero();
    for c in mixture.components() {
        total += c.weight * estimate_er(model, &c.policy, h, reward)?.value;
    }
    Ok(total)
}

/// Per-component `Ê_{ij}` for every `i ≤ j`, packed upper-triangle row-major.
pub(crate) fn cov_entries<T: Real>(model: &LsviModel<T>, table: &ActionTable, h: usize) -> Vec<T> {
    let f = model.features();
    let d = f.dim();
    let pairs = CovarianceEntry::pairs(d);
    let rewards: Vec<CovarianceEntry> = pairs.iter().map(|&(i, j)| CovarianceEntry { i, j }).collect();
    let refs: Vec<&dyn LayerReward<T>> = rewards.iter().map(|r| r as &dyn LayerReward<T>).collect();
    let rt = RewardTable::from_rewards(f, &refs);
    let caps = vec![T::one(); pairs.len()];
    er_pass(model, table, h, &rt, &caps).0
}

/// `Σ̂ = 2Ê − 1` from packed upper-triangle entries.
pub(crate) fn cov_from_entries<T: Real>(d: usize, e: &[T]) -> Matrix<T> {
    let mut out = Matrix::zeros(d, d);
    for (k, (i, j)) in CovarianceEntry::pairs(d).into_iter().enumerate() {
        let v = T::lit(2.0) * e[k] - T::one();
        out[(i, j)] = v;
        out[(j, i)] = v;
    }
    out
}

/// Coordinate-wise estimate of `E_π φ(s_h,a_h) φ(s_h,a_h)^T` for a mixture.
pub fn estimate_cov<T: Real, P: PolicyLike<T> + ?Sized>(
    model: &LsviModel<T>,
    policy: &P,
    h: usize,
) -> Result<Matrix<T>> {
    if h >= model.horizon() {
        return Err(Error::contract(format!("layer {h} out of range")));
    }
    let f = model.features();
    let comps = policy.resolve(f)?;
    if let Some((_, t)) = comps.iter().find(|(_, t)| t.horizon() != model.horizon()) {
        return Err(Error::contract(format!(
            "policy horizon {} does not match",
            t.horizon()
        )));
    }
    model.require_layers(h)?;
    let d = f.dim();
    let mut e = vec![T::zero(); d * (d + 1) / 2];
    for (p, table) in &comps {
        for (acc, x) in e.iter_mut().zip(cov_entries(model, table, h)) {
            *acc += *p * x;
        }
    }
    Ok(cov_from_entries(d, &e))
}

/// `Ê_π min(φ^T (N Σ̂)^{-1} φ, A)`.
pub fn estimate_leverage<T: Real>(
    model: &LsviModel<T>,
    policy: &DeterministicPolicy<T>,
    cov: &Matrix<T>,
    n: T,
    h: usize,
    cap: T,
) -> Result<Estimate<T>> {
    let reward = Leverage::new(cov, n, cap)?;
    estimate_er(model, policy, h, &reward)
}

/// `E_π Σ_{h ∈ layers} ‖φ(s_h,a_h)‖_{Λ_h^{-1}}`, exact under the true model.
pub fn true_uncertainty<T: Real, P: PolicyLike<T> + ?Sized>(
    model: &LsviModel<T>,
    policy: &P,
    layers: std::ops::Range<usize>,
    mdp: &LinearMdp<T>,
) -> Result<T> {
    let f = mdp.features();
    let na = f.num_actions();
    let mut total = T::zero();
    for h in layers {
        let occ = dp_occupancy(mdp, policy, h)?;
        for s in 0..f.num_states() {
            for a in f.valid_actions(s) {
                let p = occ[s * na + a];
                if p != T::zero() {
                    total += p * model.uncertainty(h, f.phi(s, a));
                }
            }
        }
    }
    Ok(total)
}

impl<T: Real> CovarianceOracle<T> for LsviModel<T> {
    fn features(&self) -> &FeatureTable<T> {
        LsviModel::features(self)
    }

    fn covariance(&self, policy: &DeterministicPolicy<T>, h: usize) -> Result<Matrix<T>> {
        estimate_cov(self, policy, h)
    }

    fn expected_reward(&self, policy: &DeterministicPolicy<T>, h: usize, reward: &dyn LayerReward<T>) -> Result<T> {
        Ok(estimate_er(self, policy, h, reward)?.value)
    }
}
