use super::{DeterministicPolicy, MixturePolicy, PolicySet};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, Matrix};
use crate::mdp::{dp_occupancy, expected_feature_cov, FeatureTable, LayerReward, LinearMdp};
use crate::scalar::Real;

/// Source of per-policy layer statistics: exact (model) or estimated (data).
pub trait CovarianceOracle<T: Real> {
    fn features(&self) -> &FeatureTable<T>;
    /// `E_π[φ(s_h,a_h) φ(s_h,a_h)^T]`.
    fn covariance(&self, policy: &DeterministicPolicy<T>, h: usize) -> Result<Matrix<T>>;
    /// `E_π r(s_h,a_h)`.
    fn expected_reward(&self, policy: &DeterministicPolicy<T>, h: usize, reward: &dyn LayerReward<T>) -> Result<T>;
}

/// Oracle backed by exact dynamic programming on a known model.
pub struct ExactOracle<'a, T: Real> {
    pub mdp: &'a LinearMdp<T>,
}

impl<T: Real> CovarianceOracle<T> for ExactOracle<'_, T> {
    fn features(&self) -> &FeatureTable<T> {
        self.mdp.features()
    }

    fn covariance(&self, policy: &DeterministicPolicy<T>, h: usize) -> Result<Matrix<T>> {
        expected_feature_cov(self.mdp, policy, h)
    }

    fn expected_reward(&self, policy: &DeterministicPolicy<T>, h: usize, reward: &dyn LayerReward<T>) -> Result<T> {
        let occ = dp_occupancy(self.mdp, policy, h)?;
        let f = self.mdp.features();
        let na = f.num_actions();
        let mut total = T::zero();
        for s in 0..f.num_states() {
            for a in f.valid_actions(s) {
                let p = occ[s * na + a];
                if p != T::zero() {
                    total += p * reward.value(f, s, a);
                }
            }
        }
        Ok(total)
    }
}

/// `√(φ^T (I+Σ)^{-1} φ)`, bounded by 1 for unit features.
struct Uncertainty<T: Real> {
    chol: crate::linalg::Cholesky<T>,
}

impl<T: Real> LayerReward<T> for Uncertainty<T> {
    fn value(&self, features: &FeatureTable<T>, s: usize, a: usize) -> T {
        self.chol.inv_quad_form(features.phi(s, a)).max(T::zero()).sqrt()
    }

    fn cap(&self) -> T {
        T::one()
    }
}

#[derive(Clone, Debug)]
pub struct ExplorativeMixture<T: Real> {
    pub mixture: MixturePolicy<T>,
    /// Indices (into the layer-`h` prefix enumeration) of the chosen policies.
    pub chosen: Vec<usize>,
    /// `Σ_i` after each selection.
    pub sigmas: Vec<Matrix<T>>,
}

/// Greedy uncertainty-driven mixture for layer `h`.
///
/// Starting from `Σ_0 = 0`, round `i` picks the candidate maximizing
/// `E_π √(φ^T (I+Σ_{i-1})^{-1} φ)` (lowest index on ties) and sets
/// `Σ_i = Σ_{i-1} + E_{π_i} φφ^T`. The result is uniform over the `t−1` picks
/// (one pick when `t = 1`).
pub fn build_explorative_mixture<T: Real, O: CovarianceOracle<T> + ?Sized>(
    oracle: &O,
    set: &PolicySet<T>,
    h: usize,
    rounds: usize,
) -> Result<ExplorativeMixture<T>> {
    if rounds == 0 {
        return Err(Error::contract("rounds must be at least 1"));
    }
    if h >= set.horizon() {
        return Err(Error::contract(format!("layer {h} out of range")));
    }
    let n = set
        .prefix_len(h)
        .ok_or_else(|| Error::Size("policy set too large to enumerate".into()))?;
    let d = oracle.features().dim();
    let mut sigma = Matrix::zeros(d, d);
    let mut chosen = Vec::new();
    let mut sigmas = Vec::new();
    for _ in 0..(rounds - 1).max(1) {
        let mut m = sigma.clone();
        m.add_diag(T::one());
        let (chol, _) = cholesky_with_jitter(&m, "explorative mixture")?;
        let reward = Uncertainty { chol };
        let mut best: Option<(usize, T)> = None;
        for i in 0..n {
            let v = oracle.expected_reward(&set.prefix_policy(h, i), h, &reward)?;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        let (i, _) = best.expect("nonempty set");
        sigma.add_scaled(T::one(), &oracle.covariance(&set.prefix_policy(h, i), h)?);
        chosen.push(i);
        sigmas.push(sigma.clone());
    }
    let mixture = MixturePolicy::uniform(chosen.iter().map(|&i| set.prefix_policy(h, i)).collect())?;
    Ok(ExplorativeMixture {
        mixture,
        chosen,
        sigmas,
    })
}
