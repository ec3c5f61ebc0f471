//! Bundled instances used by the experiments and the acceptance suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mdp::{
    build_hard_instance, generate_random_linear_mdp, FeatureStyle, FeatureTable, LinearMdp, RandomMdpSpec, TabularMdp,
};
use crate::scalar::Real;

pub const BUNDLED: [&str; 4] = ["chain3", "symmetric2", "hard", "random-linear"];

/// Arm rewards of the bundled hard instance (`H = 3`, three arms per layer).
pub const HARD_ARMS: [[f64; 3]; 3] = [[0.3, 0.55, 0.4], [0.2, 0.35, 0.6], [0.5, 0.45, 0.25]];

/// Generator seed of the bundled random linear instance.
pub const RANDOM_LINEAR_SEED: u64 = 7;

/// Where an experiment's MDP comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSpec {
    Bundled {
        name: String,
    },
    File {
        path: String,
    },
    RandomLinear {
        spec: RandomMdpSpec,
        seed: u64,
    },
    Hard {
        d: usize,
        #[serde(rename = "H")]
        horizon: usize,
        arm_rewards: Vec<Vec<f64>>,
    },
}

impl InstanceSpec {
    pub fn label(&self) -> String {
        match self {
            InstanceSpec::Bundled { name } => name.clone(),
            InstanceSpec::File { path } => path.clone(),
            InstanceSpec::RandomLinear { spec, seed } => format!(
                "random-linear(d={},S={},A={},H={},seed={seed})",
                spec.d, spec.num_states, spec.num_actions, spec.horizon
            ),
            InstanceSpec::Hard { d, horizon, .. } => format!("hard(d={d},H={horizon})"),
        }
    }

    pub fn build<T: Real>(&self) -> Result<LinearMdp<T>> {
        match self {
            InstanceSpec::Bundled { name } => bundled(name),
            InstanceSpec::File { path } => LinearMdp::from_json(&std::fs::read_to_string(path)?),
            InstanceSpec::RandomLinear { spec, seed } => {
                generate_random_linear_mdp(spec, &mut ChaCha8Rng::seed_from_u64(*seed))
            }
            InstanceSpec::Hard {
                d,
                horizon,
                arm_rewards,
            } => {
                let arms: Vec<Vec<T>> = arm_rewards
                    .iter()
                    .map(|r| r.iter().map(|&x| T::lit(x)).collect())
                    .collect();
                build_hard_instance(*d, *horizon, &arms)
            }
        }
    }
}

/// A bundled instance by name.
pub fn bundled<T: Real>(name: &str) -> Result<LinearMdp<T>> {
    match name {
        "chain3" => chain3(),
        "symmetric2" => symmetric2(),
        "hard" => {
            let arms: Vec<Vec<T>> = HARD_ARMS
                .iter()
                .map(|r| r.iter().map(|&x| T::lit(x)).collect())
                .collect();
            build_hard_instance(5, 3, &arms)
        }
        "random-linear" => generate_random_linear_mdp(
            &random_linear_preset(),
            &mut ChaCha8Rng::seed_from_u64(RANDOM_LINEAR_SEED),
        ),
        other => Err(Error::contract(format!(
            "unknown bundled instance {other:?}; expected one of {BUNDLED:?}"
        ))),
    }
}

pub fn random_linear_preset() -> RandomMdpSpec {
    RandomMdpSpec {
        d: 3,
        num_states: 6,
        num_actions: 3,
        horizon: 3,
        style: FeatureStyle::Simplex,
    }
}

/// Three-state chain, two actions, `H = 3`: action 1 moves right with probability 0.8,
/// action 0 moves left with probability 0.7; the remaining mass stays put.
pub fn chain3<T: Real>() -> Result<LinearMdp<T>> {
    let n = 3;
    let mut layer = Vec::with_capacity(n * 2);
    for s in 0..n {
        for (a, p) in [(0usize, 0.7), (1, 0.8)] {
            let target = if a == 1 {
                (s + 1).min(n - 1)
            } else {
                s.saturating_sub(1)
            };
            let mut row = vec![T::zero(); n];
            row[target] += T::lit(p);
            row[s] += T::lit(1.0 - p);
            layer.push(row);
        }
    }
    let mut rewards = vec![T::zero(); n * 2];
    rewards[(n - 1) * 2 + 1] = T::one();
    TabularMdp {
        num_states: n,
        num_actions: 2,
        transitions: vec![layer; 3],
        rewards: vec![rewards; 3],
        initial_state: 0,
    }
    .to_linear()
}

/// Two states, two actions, `φ(s,a) = e_a`, uniform next-state distribution, `H = 2`.
pub fn symmetric2<T: Real>() -> Result<LinearMdp<T>> {
    let e = |k: usize| -> Vec<T> { (0..2).map(|i| if i == k { T::one() } else { T::zero() }).collect() };
    let features = FeatureTable::new(2, 2, vec![e(0), e(1), e(0), e(1)])?;
    let half = T::lit(0.5);
    let mu = Matrix::from_fn(2, 2, |_, _| half);
    LinearMdp::new(features, vec![mu.clone(), mu], vec![vec![half, half]; 2], 0)
}
