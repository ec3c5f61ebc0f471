use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{validate, FeatureTable, LinearMdp};
use crate::error::{Error, Result};
use crate::linalg::{psd_rank, Matrix};
use crate::scalar::Real;

const STOCHASTIC_TOL: f64 = 1e-8;
const MAX_ATTEMPTS: usize = 100;

/// Explicit tabular MDP: `transitions[h][s·A + a][s']`, `rewards[h][s·A + a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TabularMdp<T: Real> {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    pub transitions: Vec<Vec<Vec<T>>>,
    pub rewards: Vec<Vec<T>>,
    #[serde(default)]
    pub initial_state: usize,
}

impl<T: Real> TabularMdp<T> {
    pub fn to_linear(&self) -> Result<LinearMdp<T>> {
        tabular_to_linear(self)
    }

    /// Dirichlet(1) transition rows and uniform `[0,1]` rewards.
    pub fn random<R: Rng + ?Sized>(num_states: usize, num_actions: usize, horizon: usize, rng: &mut R) -> Self {
        let sa = num_states * num_actions;
        TabularMdp {
            num_states,
            num_actions,
            transitions: (0..horizon)
                .map(|_| (0..sa).map(|_| dirichlet(num_states, rng)).collect())
                .collect(),
            rewards: (0..horizon)
                .map(|_| (0..sa).map(|_| T::lit(rng.random::<f64>())).collect())
                .collect(),
            initial_state: 0,
        }
    }
}

/// Canonical-basis embedding: `φ(s,a) = e_{s·A+a}`, `μ_h` rows are transition rows.
pub fn tabular_to_linear<T: Real>(tab: &TabularMdp<T>) -> Result<LinearMdp<T>> {
    let (n, na) = (tab.num_states, tab.num_actions);
    let sa = n * na;
    if tab.transitions.len() != tab.rewards.len() {
        return Err(Error::shape(
            "transitions and rewards must have the same number of layers",
        ));
    }
    let tol = T::tol(STOCHASTIC_TOL);
    let mut measures = Vec::with_capacity(tab.transitions.len());
    for (h, layer) in tab.transitions.iter().enumerate() {
        if layer.len() != sa || layer.iter().any(|r| r.len() != n) {
            return Err(Error::shape(format!("transition table at layer {h} must be {sa}x{n}")));
        }
        for (i, row) in layer.iter().enumerate() {
            let sum: T = row.iter().copied().sum();
            if row.iter().any(|&p| !(p >= T::zero())) || (sum - T::one()).abs() > tol {
                return Err(Error::contract(format!(
                    "transition row (h={h}, s={}, a={}) is not stochastic (sum {sum})",
                    i / na,
                    i % na
                )));
            }
        }
        measures.push(Matrix::from_rows(layer.clone())?);
    }
    for (h, r) in tab.rewards.iter().enumerate() {
        if r.len() != sa {
            return Err(Error::shape(format!(
                "reward table at layer {h} must have {sa} entries"
            )));
        }
        if r.iter().any(|&x| !(x >= T::zero() && x <= T::one())) {
            return Err(Error::contract(format!("reward at layer {h} outside [0,1]")));
        }
    }
    LinearMdp::new(
        FeatureTable::canonical(n, na),
        measures,
        tab.rewards.clone(),
        tab.initial_state,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureStyle {
    /// Features on the probability simplex in `R^d`.
    Simplex,
    /// `φ(s,a) = e_{s·A+a}`; requires `d = S·A`.
    Canonical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpSpec {
    pub d: usize,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(default = "default_style")]
    pub style: FeatureStyle,
}

fn default_style() -> FeatureStyle {
    FeatureStyle::Simplex
}

fn dirichlet<T: Real, R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<T> {
    let gamma = Gamma::new(1.0, 1.0).expect("valid gamma parameters");
    loop {
        let x: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = x.iter().sum();
        if total > 0.0 {
            return x.into_iter().map(|v| T::lit(v / total)).collect();
        }
    }
}

/// Random rank-`d` linear MDP.
///
/// Simplex features make `Σ_k φ_k = 1`, so `d` latent next-state distributions as the rows
/// of `μ_h` give exact normalization, and `θ_h ∈ [0,1]^d` keeps rewards in `[0,1]`.
/// Draws whose features fail to span `R^d` are retried.
pub fn generate_random_linear_mdp<T: Real, R: Rng + ?Sized>(spec: &RandomMdpSpec, rng: &mut R) -> Result<LinearMdp<T>> {
    let (d, n, na, horizon) = (spec.d, spec.num_states, spec.num_actions, spec.horizon);
    if d == 0 || n == 0 || na == 0 || horizon == 0 {
        return Err(Error::contract("d, S, A and H must all be positive"));
    }
    if spec.style == FeatureStyle::Canonical && d != n * na {
        return Err(Error::contract(format!("canonical features need d = S·A = {}", n * na)));
    }
    if n < d {
        log::warn!("generating a linear MDP with S = {n} < d = {d}");
    }
    for attempt in 0..MAX_ATTEMPTS {
        let features = match spec.style {
            FeatureStyle::Canonical => FeatureTable::canonical(n, na),
            FeatureStyle::Simplex => FeatureTable::new(n, na, (0..n * na).map(|_| dirichlet(d, rng)).collect())?,
        };
        let measures = (0..horizon)
            .map(|_| Matrix::from_rows((0..d).map(|_| dirichlet(n, rng)).collect()))
            .collect::<Result<Vec<_>>>()?;
        let thetas = (0..horizon)
            .map(|_| (0..d).map(|_| T::lit(rng.random::<f64>())).collect())
            .collect();
        let mdp = LinearMdp::new(features, measures, thetas, 0)?;

        let mut gram = Matrix::zeros(d, d);
        for row in mdp.features().rows() {
            gram.add_outer(T::one(), &row);
        }
        if psd_rank(&gram, T::tol(1e-9)) < d {
            log::debug!("attempt {attempt}: features do not span R^{d}, retrying");
            continue;
        }
        if validate(&mdp).is_valid() {
            return Ok(mdp);
        }
    }
    Err(Error::model(format!(
        "could not generate a valid rank-{d} linear MDP in {MAX_ATTEMPTS} attempts"
    )))
}

/// The two-state bandit-like instance.
///
/// State 0 is the initial state with actions `0..d-1`; action `j` has feature `e_{j+1}`.
/// Action 0 keeps the agent in state 0 with no reward; action `j ≥ 1` moves to the
/// absorbing state 1 and pays `arm_rewards[h][j-1]`. State 1 offers only action 0,
/// with feature `e_0`. `arm_rewards` is `H × (d−2)`.
pub fn build_hard_instance<T: Real>(d: usize, horizon: usize, arm_rewards: &[Vec<T>]) -> Result<LinearMdp<T>> {
    if d < 3 {
        return Err(Error::contract("the hard instance needs d >= 3"));
    }
    if horizon == 0 || arm_rewards.len() != horizon || arm_rewards.iter().any(|r| r.len() != d - 2) {
        return Err(Error::shape(format!("arm_rewards must be {horizon} x {}", d - 2)));
    }
    if arm_rewards
        .iter()
        .flatten()
        .any(|&r| !(r >= T::zero() && r <= T::one()))
    {
        return Err(Error::contract("arm rewards must lie in [0,1]"));
    }
    let na = d - 1;
    let unit = |k: usize| -> Vec<T> { (0..d).map(|i| if i == k { T::one() } else { T::zero() }).collect() };
    let mut rows = Vec::with_capacity(2 * na);
    let mut mask = Vec::with_capacity(2 * na);
    for j in 0..na {
        rows.push(unit(j + 1));
        mask.push(true);
    }
    for j in 0..na {
        rows.push(if j == 0 { unit(0) } else { vec![T::zero(); d] });
        mask.push(j == 0);
    }
    let features = FeatureTable::with_mask(2, na, rows, mask)?;

    let stay = unit(1);
    let absorb: Vec<T> = (0..d).map(|k| if k == 1 { T::zero() } else { T::one() }).collect();
    let mu = Matrix::from_fn(d, 2, |k, s| if s == 0 { stay[k] } else { absorb[k] });
    let thetas = arm_rewards
        .iter()
        .map(|arms| {
            let mut theta = vec![T::zero(); d];
            theta[2..].copy_from_slice(arms);
            theta
        })
        .collect();
    LinearMdp::new(features, vec![mu; horizon], thetas, 0)
}

/// Every arm value `r_{h,i}` of the hard instance, row-major over `(h, i)`.
pub fn hard_instance_arm_values<T: Real>(arm_rewards: &[Vec<T>]) -> Vec<T> {
    arm_rewards.iter().flatten().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{dp_optimal, dp_policy_value};
    use crate::policy::DeterministicPolicy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hard_instance_transitions_match_construction() {
        let arms = vec![vec![0.3, 0.6], vec![0.9, 0.1]];
        let mdp = build_hard_instance::<f64>(4, 2, &arms).unwrap();
        assert_eq!(mdp.num_actions(), 3);
        assert_eq!(mdp.transition_row(0, 0, 0), &[1.0, 0.0]);
        for a in 1..3 {
            assert_eq!(mdp.transition_row(0, 0, a), &[0.0, 1.0]);
        }
        assert_eq!(mdp.transition_row(0, 1, 0), &[0.0, 1.0]);
        assert_eq!(mdp.features().valid_actions(1).collect::<Vec<_>>(), vec![0]);
        let r = mdp.reward();
        assert_eq!(r.value(mdp.features(), 1, 0, 1), 0.9);
        assert_eq!(r.value(mdp.features(), 0, 0, 2), 0.6);
        assert_eq!(r.value(mdp.features(), 0, 0, 0), 0.0);
        assert_eq!(r.value(mdp.features(), 0, 1, 0), 0.0);
    }

    #[test]
    fn hard_instance_pull_at_layer_h_earns_that_arm() {
        let arms = vec![vec![0.3, 0.6], vec![0.9, 0.1]];
        let mdp = build_hard_instance::<f64>(4, 2, &arms).unwrap();
        let p = DeterministicPolicy::from_tables(vec![vec![0, 0], vec![1, 0]]);
        assert_eq!(dp_policy_value(&mdp, &p, &mdp.reward()).unwrap(), 0.9);
        assert_eq!(dp_optimal(&mdp, &mdp.reward()).unwrap().value, 0.9);
    }

    #[test]
    fn hard_instance_rejects_small_d() {
        assert!(build_hard_instance::<f64>(2, 1, &[vec![]]).is_err());
    }

    #[test]
    fn canonical_embedding_rejects_non_stochastic_rows() {
        let tab = TabularMdp {
            num_states: 1,
            num_actions: 1,
            transitions: vec![vec![vec![0.9]]],
            rewards: vec![vec![0.5]],
            initial_state: 0,
        };
        assert!(matches!(tabular_to_linear::<f64>(&tab), Err(Error::Contract(_))));
    }

    #[test]
    fn random_tabular_embeds_validly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let tab = TabularMdp::<f64>::random(3, 2, 3, &mut rng);
            assert!(validate(&tab.to_linear().unwrap()).is_valid());
        }
    }

    #[test]
    fn random_linear_mdps_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = RandomMdpSpec {
            d: 3,
            num_states: 6,
            num_actions: 3,
            horizon: 3,
            style: FeatureStyle::Simplex,
        };
        for _ in 0..10 {
            let mdp = generate_random_linear_mdp::<f64, _>(&spec, &mut rng).unwrap();
            assert!(validate(&mdp).is_valid());
            assert_eq!(mdp.dim(), 3);
        }
        let canon = RandomMdpSpec {
            d: 4,
            num_states: 2,
            num_actions: 2,
            horizon: 2,
            style: FeatureStyle::Canonical,
        };
        let mdp = generate_random_linear_mdp::<f64, _>(&canon, &mut rng).unwrap();
        assert!(mdp.features().is_canonical());
    }
}
