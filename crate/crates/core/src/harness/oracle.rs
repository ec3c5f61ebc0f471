//! Exact oracles the harness checks the learner against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{solve_design, DesignProblem};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymmetricEigen};
use crate::lsvi::{true_uncertainty, Dataset};
use crate::mdp::{dp_policy_value, expected_feature_cov, LinearMdp, RewardFunction};
use crate::policy::{DeterministicPolicy, PolicySet};
use crate::scalar::{argmax_first, Real};

/// Frontier entries examined per layer before giving up.
pub const FRONTIER_LIMIT: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct BestInSet<T: Real> {
    pub value: T,
    pub index: u128,
    pub policy: DeterministicPolicy<T>,
}

struct Entry<T> {
    values: Vec<T>,
    /// Rule index per layer, from the current layer to the last.
    path: Vec<usize>,
}

/// `max_{π ∈ set} V^π(r)` under the true model.
///
/// Product sets are solved backwards over suffix value vectors restricted to reachable
/// states, discarding vectors dominated on every reachable state, so the result is exact
/// without enumerating the product.
pub fn best_in_set<T: Real>(
    mdp: &LinearMdp<T>,
    set: &PolicySet<T>,
    reward: &RewardFunction<T>,
) -> Result<BestInSet<T>> {
    if set.horizon() != mdp.horizon() {
        return Err(Error::contract("policy set horizon does not match the instance"));
    }
    let Some(rules) = set.layer_rules() else {
        let n = set.len().expect("list sets have a length");
        let values = (0..n)
            .map(|i| dp_policy_value(mdp, &set.policy(i), reward))
            .collect::<Result<Vec<T>>>()?;
        let i = argmax_first(&values).expect("nonempty set");
        return Ok(BestInSet {
            value: values[i],
            index: i as u128,
            policy: set.policy(i),
        });
    };
    if reward.horizon() != mdp.horizon() {
        return Err(Error::contract("reward horizon does not match the instance"));
    }
    let f = mdp.features();
    let ns = f.num_states();
    let horizon = mdp.horizon();

    // Distinct action tables per layer, lowest rule index first.
    let mut tables: Vec<Vec<(usize, Vec<usize>)>> = Vec::with_capacity(horizon);
    for layer in rules {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for (k, rule) in layer.iter().enumerate() {
            let t = rule.resolve(f)?;
            if seen.insert(t.clone()) {
                out.push((k, t));
            }
        }
        tables.push(out);
    }

    let mut reach = vec![vec![false; ns]; horizon];
    reach[0][mdp.initial_state()] = true;
    for h in 0..horizon - 1 {
        let states: Vec<usize> = (0..ns).filter(|&s| reach[h][s]).collect();
        for s in states {
            for (_, t) in &tables[h] {
                for (sp, &p) in mdp.transition_row(h, s, t[s]).iter().enumerate() {
                    if p > T::zero() {
                        reach[h + 1][sp] = true;
                    }
                }
            }
        }
    }

    let mut frontier: Vec<Entry<T>> = vec![Entry {
        values: vec![T::zero(); ns],
        path: Vec::new(),
    }];
    for h in (0..horizon).rev() {
        let states: Vec<usize> = (0..ns).filter(|&s| reach[h][s]).collect();
        if tables[h].len().saturating_mul(frontier.len()) > FRONTIER_LIMIT {
            return Err(Error::Size(format!(
                "best-in-set frontier at layer {h} exceeds {FRONTIER_LIMIT} entries"
            )));
        }
        let mut next = Vec::with_capacity(tables[h].len() * frontier.len());
        for (k, t) in &tables[h] {
            for e in &frontier {
                let mut values = vec![T::zero(); ns];
                for &s in &states {
                    let a = t[s];
                    let mut v = reward.value(f, h, s, a);
                    if h + 1 < horizon {
                        for (sp, &p) in mdp.transition_row(h, s, a).iter().enumerate() {
                            if p != T::zero() {
                                v += p * e.values[sp];
                            }
                        }
                    }
                    values[s] = v;
                }
                let mut path = Vec::with_capacity(e.path.len() + 1);
                path.push(*k);
                path.extend_from_slice(&e.path);
                next.push(Entry { values, path });
            }
        }
        frontier = prune(next, &states);
    }

    let best = frontier
        .into_iter()
        .next()
        .expect("the first layer collapses to one entry");
    let mut index = 0u128;
    let mut stride = 1u128;
    for (layer, &k) in rules.iter().zip(&best.path) {
        index += k as u128 * stride;
        stride *= layer.len() as u128;
    }
    let policy = DeterministicPolicy::new(rules.iter().zip(&best.path).map(|(l, &k)| l[k].clone()).collect());
    Ok(BestInSet {
        value: best.values[mdp.initial_state()],
        index,
        policy,
    })
}

/// Keeps entries not weakly dominated by an earlier-kept or strictly better entry.
fn prune<T: Real>(mut entries: Vec<Entry<T>>, states: &[usize]) -> Vec<Entry<T>> {
    let key = |e: &Entry<T>| states.iter().fold(T::zero(), |acc, &s| acc + e.values[s]);
    // Descending total is a linear extension of the dominance order; stable sort keeps
    // enumeration order among equal totals.
    entries.sort_by(|a, b| key(b).partial_cmp(&key(a)).unwrap_or(std::cmp::Ordering::Equal));
    let mut kept: Vec<Entry<T>> = Vec::new();
    for e in entries {
        let dominated = kept.iter().any(|k| states.iter().all(|&s| k.values[s] >= e.values[s]));
        if !dominated {
            kept.push(e);
        }
    }
    kept
}

/// Random linear rewards with `θ_h ~ U[0,1]^d`, rescaled so every valid pair lies in `[0,1]`.
pub fn sample_linear_rewards<T: Real>(mdp: &LinearMdp<T>, count: usize, seed: u64) -> Result<Vec<RewardFunction<T>>> {
    let f = mdp.features();
    let d = f.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut reward = None;
        for _ in 0..1000 {
            let thetas: Vec<Vec<T>> = (0..mdp.horizon())
                .map(|_| (0..d).map(|_| T::lit(rng.random::<f64>())).collect())
                .collect();
            let mut lo = T::zero();
            let mut hi = T::zero();
            for theta in &thetas {
                for s in 0..f.num_states() {
                    for a in f.valid_actions(s) {
                        let v = crate::scalar::dot(f.phi(s, a), theta);
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
            if lo < T::zero() {
                continue;
            }
            let scale = T::one() / hi.max(T::one());
            reward = Some(RewardFunction::linear(
                thetas
                    .into_iter()
                    .map(|t| t.into_iter().map(|x| x * scale).collect())
                    .collect(),
            ));
            break;
        }
        out.push(reward.ok_or_else(|| {
            Error::contract("features admit no nonnegative random linear reward; supply rewards explicitly")
        })?);
    }
    Ok(out)
}

/// Policies whose behaviour through layer `h` exhausts the set, or a seeded sample of them.
pub fn probe_policies<T: Real>(
    set: &PolicySet<T>,
    h: usize,
    limit: usize,
    seed: u64,
) -> (Vec<DeterministicPolicy<T>>, bool) {
    match set.prefix_len(h) {
        Some(n) if n <= limit => ((0..n).map(|i| set.prefix_policy(h, i)).collect(), true),
        total => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rules = set.layer_rules();
            let sample = (0..limit)
                .map(|_| match (rules, total) {
                    (Some(rules), _) => {
                        let layers = rules
                            .iter()
                            .enumerate()
                            .map(|(l, r)| {
                                if l <= h {
                                    r[rng.random_range(0..r.len())].clone()
                                } else {
                                    r[0].clone()
                                }
                            })
                            .collect();
                        DeterministicPolicy::new(layers)
                    }
                    (None, Some(n)) => set.policy(rng.random_range(0..n)),
                    (None, None) => unreachable!("list sets have a length"),
                })
                .collect();
            (sample, false)
        }
    }
}

/// `max_π E_π ‖φ_h‖_{Λ_h^{-1}}` before and after deployment `h`, per layer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyTrace {
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    /// `max_π Σ_{l ≤ h} E_π ‖φ_l‖_{Λ_l^{-1}}` on the final dataset.
    pub cumulative: Vec<f64>,
    /// Every probed policy's uncertainty at layer `h` did not increase.
    pub monotone: Vec<bool>,
    pub policies: Vec<usize>,
    pub exhaustive: Vec<bool>,
}

impl UncertaintyTrace {
    pub fn all_monotone(&self) -> bool {
        self.monotone.iter().all(|&m| m)
    }
}

pub fn uncertainty_trace<T: Real>(
    mdp: &LinearMdp<T>,
    dataset: &Dataset<T>,
    set: &PolicySet<T>,
    limit: usize,
    seed: u64,
) -> Result<UncertaintyTrace> {
    let horizon = dataset.horizon();
    let full = dataset.model();
    let mut trace = UncertaintyTrace::default();
    for h in 0..horizon {
        let before = dataset.truncated(h)?.model();
        let after = dataset.truncated(h + 1)?.model();
        let (policies, exhaustive) = probe_policies(set, h, limit, crate::mdp::derive_seed(seed, &[h as u64]));
        let mut b_max = 0f64;
        let mut a_max = 0f64;
        let mut c_max = 0f64;
        let mut monotone = true;
        for p in &policies {
            let b = true_uncertainty(&before, p, h..h + 1, mdp)?.as_f64();
            let a = true_uncertainty(&after, p, h..h + 1, mdp)?.as_f64();
            let c = true_uncertainty(&full, p, 0..h + 1, mdp)?.as_f64();
            monotone &= a <= b;
            b_max = b_max.max(b);
            a_max = a_max.max(a);
            c_max = c_max.max(c);
        }
        trace.before.push(b_max);
        trace.after.push(a_max);
        trace.cumulative.push(c_max);
        trace.monotone.push(monotone);
        trace.policies.push(policies.len());
        trace.exhaustive.push(exhaustive);
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorabilityReport {
    /// Per layer, `λ_min` of the log-det design over exact policy covariances.
    pub per_layer: Vec<f64>,
    /// The worst layer; a lower bound on `λ*` restricted to the probed policies.
    pub lambda_star_lower: f64,
    /// `H λ*² / (C₄ d^{7/2} ln(1/λ*))` at the lower bound; infinite when `λ* ≥ 1`.
    pub epsilon_limit: f64,
    pub c4: f64,
    pub epsilon: f64,
    pub condition_holds: bool,
}

pub fn explorability<T: Real>(
    mdp: &LinearMdp<T>,
    set: &PolicySet<T>,
    limit: usize,
    seed: u64,
    c4: f64,
    epsilon: f64,
) -> Result<ExplorabilityReport> {
    let d = mdp.dim();
    let mut per_layer = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        let (policies, _) = probe_policies(set, h, limit, crate::mdp::derive_seed(seed, &[h as u64, 1]));
        let mut mats: Vec<Matrix<T>> = policies
            .iter()
            .map(|p| expected_feature_cov(mdp, p, h))
            .collect::<Result<_>>()?;
        mats.dedup();
        let problem = DesignProblem::from_matrices(mats, T::lit(1e-9))?;
        let lam = match solve_design(&problem, T::lit(0.01), 2000) {
            Ok(res) => SymmetricEigen::new(&problem.mixture(&res.mu)).values[0]
                .as_f64()
                .max(0.0),
            Err(Error::Span { .. }) => 0.0,
            Err(e) => return Err(e),
        };
        per_layer.push(lam);
    }
    let lambda = per_layer.iter().copied().fold(f64::INFINITY, f64::min);
    let h = mdp.horizon() as f64;
    let epsilon_limit = if lambda >= 1.0 {
        f64::INFINITY
    } else if lambda <= 0.0 {
        0.0
    } else {
        h * lambda * lambda / (c4 * (d as f64).powf(3.5) * (1.0 / lambda).ln())
    };
    Ok(ExplorabilityReport {
        per_layer,
        lambda_star_lower: lambda,
        epsilon_limit,
        c4,
        epsilon,
        condition_holds: epsilon < epsilon_limit,
    })
}
