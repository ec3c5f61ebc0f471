use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{LayerRule, PolicySet, Provenance};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, Matrix};
use crate::mdp::FeatureTable;
use crate::scalar::Real;

/// Default cap on the number of enumerated tabular policies.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// `d·ln(1 + 8H²√d/ε)`: log-size bound of one layer of the evaluation net.
pub fn eval_net_log_size(d: usize, horizon: usize, epsilon: f64) -> f64 {
    let (d, h) = (d as f64, horizon as f64);
    d * (8.0 * h * h * d.sqrt() / epsilon).ln_1p()
}

/// `2d²·ln(1 + 32H²√d/ε²)`: log-size bound of one layer of the exploration net.
pub fn exp_net_log_size(d: usize, horizon: usize, epsilon: f64) -> f64 {
    let (d, h) = (d as f64, horizon as f64);
    2.0 * d * d * (32.0 * h * h * d.sqrt() / (epsilon * epsilon)).ln_1p()
}

fn check_net_args(epsilon: f64, budget: usize) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::contract("epsilon must be positive"));
    }
    if budget < 1 {
        return Err(Error::contract("budget must be at least 1"));
    }
    Ok(())
}

fn gaussian(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Uniform point of the grid-snapped `ε/2H`-cover of the ball of radius `2H√d`.
fn cover_point(d: usize, radius: f64, spacing: f64, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let g = gaussian(d, rng);
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
        let w: Vec<f64> = g.iter().map(|x| (x / norm * r / spacing).round() * spacing).collect();
        if w.iter().map(|x| x * x).sum::<f64>().sqrt() <= radius {
            return w;
        }
    }
}

/// Argmax-linear evaluation net, per layer a deduplicated random subsample.
///
/// Each layer draws `budget` points of the `ε/2H`-grid cover of `B^d(2H√d)` (the zero
/// vector first) and keeps one rule per distinct induced action table.
pub fn build_eval_set<T: Real>(
    features: &FeatureTable<T>,
    horizon: usize,
    epsilon: f64,
    budget: usize,
    seed: u64,
) -> Result<PolicySet<T>> {
    check_net_args(epsilon, budget)?;
    if horizon == 0 {
        return Err(Error::contract("horizon must be positive"));
    }
    let d = features.dim();
    let radius = 2.0 * horizon as f64 * (d as f64).sqrt();
    let spacing = epsilon / (horizon as f64 * (d as f64).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_full = eval_net_log_size(d, horizon, epsilon);
    if log_full > (budget as f64).ln() {
        log::debug!("eval net has ~e^{log_full:.1} points per layer; subsampling {budget}");
    }
    let mut layers = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut seen = HashSet::new();
        let mut rules = Vec::new();
        for i in 0..budget {
            let w: Vec<T> = if i == 0 {
                vec![T::zero(); d]
            } else {
                cover_point(d, radius, spacing, &mut rng)
                    .into_iter()
                    .map(T::lit)
                    .collect()
            };
            let rule = LayerRule::LinearArgmax { w };
            if seen.insert(rule.resolve(features)?) {
                rules.push(rule);
            }
        }
        layers.push(rules);
    }
    PolicySet::product(layers, Provenance::EvalNet, Some(epsilon), Some(seed))
}

/// Per-state greedy table for `r(s,a) = √(φ^T (I+Σ)^{-1} φ)`, lowest index on ties.
pub fn uncertainty_greedy_rule<T: Real>(features: &FeatureTable<T>, sigma: &Matrix<T>) -> Result<LayerRule<T>> {
    let mut m = sigma.symmetrized();
    m.add_diag(T::one());
    let (chol, _) = cholesky_with_jitter(&m, "uncertainty reward")?;
    let actions = (0..features.num_states())
        .map(|s| {
            let mut best: Option<(usize, T)> = None;
            for a in features.valid_actions(s) {
                let r = chol.inv_quad_form(features.phi(s, a)).max(T::zero()).sqrt();
                if best.is_none_or(|(_, b)| r > b) {
                    best = Some((a, r));
                }
            }
            best.expect("valid action").0
        })
        .collect();
    Ok(LayerRule::Table { actions })
}

#[derive(Clone, Debug)]
pub struct ExpSetOptions<T: Real> {
    /// Reuse this evaluation net instead of building one from the seed.
    pub eval_set: Option<PolicySet<T>>,
    /// Number of random Wishart-style `Σ` draws.
    pub wishart_draws: usize,
    /// Additional `Σ` matrices, e.g. from explorative-mixture iterations.
    pub extra_sigmas: Vec<Matrix<T>>,
}

impl<T: Real> Default for ExpSetOptions<T> {
    fn default() -> Self {
        ExpSetOptions {
            eval_set: None,
            wishart_draws: 256,
            extra_sigmas: Vec::new(),
        }
    }
}

fn wishart<T: Real>(d: usize, rng: &mut impl Rng) -> Matrix<T> {
    let k = rng.random_range(1..=2 * d);
    let scale = 10f64.powf(rng.random_range(-2.0..4.0));
    let mut sigma = Matrix::zeros(d, d);
    for _ in 0..k {
        let g: Vec<T> = gaussian(d, rng).into_iter().map(T::lit).collect();
        sigma.add_outer(T::lit(scale / k as f64), &g);
    }
    sigma
}

/// Exploration net: every evaluation-net rule plus up to `budget` distinct greedy tables
/// of uncertainty rewards, per layer. `Σ = 0` is always the first draw.
pub fn build_exp_set<T: Real>(
    features: &FeatureTable<T>,
    horizon: usize,
    epsilon: f64,
    budget: usize,
    seed: u64,
    options: &ExpSetOptions<T>,
) -> Result<PolicySet<T>> {
    check_net_args(epsilon, budget)?;
    let eval = match &options.eval_set {
        Some(e) => {
            if e.horizon() != horizon {
                return Err(Error::contract("eval set horizon does not match"));
            }
            e.clone()
        }
        None => build_eval_set(features, horizon, epsilon, budget, seed)?,
    };
    let eval_layers = eval
        .layer_rules()
        .ok_or_else(|| Error::contract("eval set must be a per-layer product"))?;
    let d = features.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut sigmas = vec![Matrix::zeros(d, d)];
    sigmas.extend((0..options.wishart_draws).map(|_| wishart::<T>(d, &mut rng)));
    sigmas.extend(options.extra_sigmas.iter().cloned());
    let greedy = sigmas
        .iter()
        .map(|s| uncertainty_greedy_rule(features, s))
        .collect::<Result<Vec<_>>>()?;

    let mut layers = Vec::with_capacity(horizon);
    for eval_rules in eval_layers {
        let mut seen: HashSet<Vec<usize>> = eval_rules.iter().map(|r| r.resolve(features)).collect::<Result<_>>()?;
        let mut rules = eval_rules.clone();
        let mut added = 0;
        for rule in &greedy {
            if added == budget {
                break;
            }
            if seen.insert(rule.resolve(features)?) {
                rules.push(rule.clone());
                added += 1;
            }
        }
        layers.push(rules);
    }
    PolicySet::product(layers, Provenance::ExpNet, Some(epsilon), Some(seed))
}

/// Every deterministic tabular policy, as per-layer lists of all valid action tables
/// (state 0 varies fastest).
pub fn enumerate_tabular_policies<T: Real>(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    mask: &[bool],
    cap: u128,
) -> Result<PolicySet<T>> {
    if mask.len() != num_states * num_actions {
        return Err(Error::shape("mask must have S·A entries"));
    }
    let valid: Vec<Vec<usize>> = (0..num_states)
        .map(|s| (0..num_actions).filter(|&a| mask[s * num_actions + a]).collect())
        .collect();
    if valid.iter().any(Vec::is_empty) {
        return Err(Error::contract("every state needs a valid action"));
    }
    let per_layer = valid.iter().try_fold(1u128, |acc, v| acc.checked_mul(v.len() as u128));
    let total = per_layer.and_then(|p| (0..horizon).try_fold(1u128, |acc, _| acc.checked_mul(p)));
    match (per_layer, total) {
        (Some(p), Some(t)) if t <= cap => {
            let mut tables = Vec::with_capacity(p as usize);
            let mut digits = vec![0usize; num_states];
            for _ in 0..p {
                tables.push(LayerRule::Table {
                    actions: digits.iter().enumerate().map(|(s, &k)| valid[s][k]).collect(),
                });
                for (s, k) in digits.iter_mut().enumerate() {
                    *k += 1;
                    if *k < valid[s].len() {
                        break;
                    }
                    *k = 0;
                }
            }
            PolicySet::product(vec![tables; horizon], Provenance::TabularEnum, None, None)
        }
        _ => Err(Error::Size(format!(
            "enumerating all policies of an S={num_states}, A={num_actions}, H={horizon} instance \
             exceeds the cap of {cap}; shrink the instance or raise the cap"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_size_formula() {
        let v = eval_net_log_size(4, 3, 0.1);
        assert!((v - 4.0 * (1.0f64 + 8.0 * 9.0 * 2.0 / 0.1).ln()).abs() < 1e-12);
    }

    #[test]
    fn one_action_gives_one_policy() {
        let f = FeatureTable::<f64>::new(2, 1, vec![vec![0.5], vec![1.0]]).unwrap();
        let set = build_eval_set(&f, 3, 0.01, 50, 4).unwrap();
        assert_eq!(set.len(), Some(1));
    }

    #[test]
    fn eval_set_is_reproducible() {
        let f = FeatureTable::<f64>::canonical(2, 2);
        let a = build_eval_set(&f, 2, 0.1, 40, 9).unwrap();
        let b = build_eval_set(&f, 2, 0.1, 40, 9).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn exp_set_contains_eval_set() {
        let f = FeatureTable::<f64>::canonical(2, 3);
        let eval = build_eval_set(&f, 2, 0.2, 30, 1).unwrap();
        let exp = build_exp_set(
            &f,
            2,
            0.2,
            30,
            1,
            &ExpSetOptions {
                eval_set: Some(eval.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        let exp_tables: HashSet<_> = exp.action_tables(&f).unwrap().into_iter().collect();
        for t in eval.action_tables(&f).unwrap() {
            assert!(exp_tables.contains(&t));
        }
    }

    #[test]
    fn zero_sigma_greedy_maximizes_feature_norm() {
        let f = FeatureTable::<f64>::new(1, 3, vec![vec![0.1, 0.0], vec![0.3, 0.4], vec![0.0, 0.2]]).unwrap();
        let rule = uncertainty_greedy_rule(&f, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(rule, LayerRule::Table { actions: vec![1] });
    }

    #[test]
    fn tabular_enumeration_counts() {
        let set = enumerate_tabular_policies::<f64>(1, 3, 2, &[true; 3], DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(set.len(), Some(9));
        let set = enumerate_tabular_policies::<f64>(2, 2, 1, &[true; 4], DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(set.len(), Some(4));
        let masked = enumerate_tabular_policies::<f64>(2, 3, 1, &[true, true, true, true, false, false], 100).unwrap();
        assert_eq!(masked.len(), Some(3));
        assert!(matches!(
            enumerate_tabular_policies::<f64>(4, 4, 3, &[true; 16], DEFAULT_ENUMERATION_CAP),
            Err(Error::Size(_))
        ));
    }
}
