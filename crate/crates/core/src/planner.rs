//! Greedy planning over a finite evaluation set from reward-free data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsvi::{linear_reward_tables, Candidates, Dataset};
use crate::mdp::RewardFunction;
use crate::policy::{DeterministicPolicy, PolicySet};
use crate::scalar::Real;

/// Behaviourally distinct policies evaluated per call, at most.
pub const PLAN_CANDIDATE_LIMIT: usize = 4_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PolicyEstimate<T: Real> {
    /// Index in the evaluation set.
    pub index: u128,
    pub value: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PlanResult<T: Real> {
    /// Position of the reward in the request.
    pub reward_id: usize,
    pub chosen_index: u128,
    pub chosen: DeterministicPolicy<T>,
    pub estimated_value: T,
    /// One entry per behaviour class of the set, keyed by its lowest policy index and
    /// ordered by it; every other member shares the estimate exactly.
    pub estimates: Vec<PolicyEstimate<T>>,
    /// Largest `‖w̄‖ / H√(dN)` seen while estimating.
    pub worst_weight_ratio: f64,
}

/// `argmax_π V̂^π(r)` over the evaluation set, lowest index on ties.
pub fn plan<T: Real>(
    dataset: &Dataset<T>,
    reward: &RewardFunction<T>,
    eval_set: &PolicySet<T>,
) -> Result<PlanResult<T>> {
    Ok(plan_many(dataset, std::slice::from_ref(reward), eval_set)?.remove(0))
}

/// [`plan`] for each reward against the same read-only dataset.
pub fn plan_many<T: Real>(
    dataset: &Dataset<T>,
    rewards: &[RewardFunction<T>],
    eval_set: &PolicySet<T>,
) -> Result<Vec<PlanResult<T>>> {
    if eval_set.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    if rewards.is_empty() {
        return Ok(Vec::new());
    }
    let horizon = dataset.horizon();
    let model = dataset.model();
    for h in 0..horizon.saturating_sub(1) {
        if model.samples(h) == 0 {
            return Err(Error::Estimation {
                layer: h,
                reason: "no samples recorded at this layer".into(),
            });
        }
    }
    let refs: Vec<&RewardFunction<T>> = rewards.iter().collect();
    let tables = linear_reward_tables(dataset.features(), horizon, &refs)?;
    let cands = Candidates::for_layer(&model, eval_set, horizon - 1, PLAN_CANDIDATE_LIMIT)?;
    let m = rewards.len();
    let (values, stats) = cands.estimate_v(&model, &tables, m);

    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by_key(|&i| cands.set_indices()[i]);
    (0..m)
        .map(|c| {
            let mut best: Option<(usize, T)> = None;
            for &i in &order {
                let v = values[i * m + c];
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            let (i, v) = best.expect("nonempty candidates");
            Ok(PlanResult {
                reward_id: c,
                chosen_index: cands.set_indices()[i],
                chosen: cands.policy(i),
                estimated_value: v,
                estimates: order
                    .iter()
                    .map(|&k| PolicyEstimate {
                        index: cands.set_indices()[k],
                        value: values[k * m + c],
                    })
                    .collect(),
                worst_weight_ratio: stats.worst_ratio,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsvi::estimate_v;
    use crate::mdp::{generate_random_linear_mdp, FeatureStyle, LinearMdp, RandomMdpSpec, Rollout};
    use crate::policy::{build_eval_set, MixturePolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (LinearMdp<f64>, Dataset<f64>, PolicySet<f64>) {
        let spec = RandomMdpSpec {
            d: 3,
            num_states: 4,
            num_actions: 2,
            horizon: 3,
            style: FeatureStyle::Simplex,
        };
        let mdp = generate_random_linear_mdp::<f64, _>(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let pols = (0..2)
            .map(|a| DeterministicPolicy::from_tables(vec![vec![a; 4]; 3]))
            .collect();
        let mix = MixturePolicy::uniform(pols).unwrap();
        let roll = Rollout::new(&mdp, &mix).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut data = Dataset::new(mdp.shared_features(), 3, 0);
        for i in 0..90 {
            data.push(roll.sample(&mut rng, i / 30)).unwrap();
        }
        let set = build_eval_set(mdp.features(), 3, 0.5, 30, 5).unwrap();
        (mdp, data, set)
    }

    fn random_reward(rng: &mut ChaCha8Rng) -> RewardFunction<f64> {
        RewardFunction::linear((0..3).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect())
    }

    #[test]
    fn zero_reward_picks_index_zero() {
        let (_, data, set) = setup();
        let out = plan(&data, &RewardFunction::zero(3, 3), &set).unwrap();
        assert_eq!(out.chosen_index, 0);
        assert!(out.estimates.iter().all(|e| e.value == 0.0));
    }

    #[test]
    fn chosen_matches_direct_estimates() {
        let (_, data, set) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = random_reward(&mut rng);
        let out = plan(&data, &r, &set).unwrap();
        let model = data.model();
        assert!(out.estimates.iter().all(|e| e.value <= out.estimated_value));
        let direct = estimate_v(&model, &set.policy(out.chosen_index as usize), &r).unwrap();
        assert_eq!(direct.value, out.estimated_value);
        for e in out.estimates.iter().step_by(7) {
            let v = estimate_v(&model, &set.policy(e.index as usize), &r).unwrap().value;
            assert_eq!(v, e.value);
        }
    }

    #[test]
    fn many_rewards_match_individual_calls() {
        let (_, data, set) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rewards: Vec<_> = (0..4).map(|_| random_reward(&mut rng)).collect();
        let before = data.checksum();
        let many = plan_many(&data, &rewards, &set).unwrap();
        assert_eq!(data.checksum(), before);
        for (i, r) in rewards.iter().enumerate() {
            let one = plan(&data, r, &set).unwrap();
            assert_eq!(one.chosen_index, many[i].chosen_index);
            assert_eq!(one.estimated_value, many[i].estimated_value);
        }
    }

    #[test]
    fn single_policy_set_returns_it() {
        let (_, data, _) = setup();
        let p = DeterministicPolicy::from_tables(vec![vec![1; 4]; 3]);
        let set = PolicySet::from_list(vec![p.clone()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_reward(&mut rng);
        let out = plan(&data, &r, &set).unwrap();
        assert_eq!(out.chosen, p);
        assert_eq!(out.estimated_value, estimate_v(&data.model(), &p, &r).unwrap().value);
    }
}
