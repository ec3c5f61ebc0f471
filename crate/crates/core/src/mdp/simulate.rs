use rand::Rng;

use super::{dp::resolve_for, validate, LinearMdp, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{ActionTable, PolicyLike};
use crate::scalar::Real;

/// Draws from unnormalized weights; negative entries count as zero.
pub(crate) fn sample_index<T: Real, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> usize {
    let total: T = weights.iter().map(|w| w.max(T::zero())).sum();
    let target = T::lit(rng.random::<f64>()) * total;
    let mut acc = T::zero();
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > T::zero() {
            acc += *w;
            last = i;
            if target < acc {
                return i;
            }
        }
    }
    last
}

/// SplitMix64 mixing of a base seed with stream coordinates.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    stream.iter().fold(mix(base), |acc, &x| mix(acc ^ mix(x)))
}

/// A validated MDP and a resolved policy, ready for repeated rollouts.
pub struct Rollout<'a, T: Real> {
    mdp: &'a LinearMdp<T>,
    /// Cumulative positive component weights.
    cumulative: Vec<T>,
    tables: Vec<ActionTable>,
}

impl<'a, T: Real> Rollout<'a, T> {
    pub fn new<P: PolicyLike<T> + ?Sized>(mdp: &'a LinearMdp<T>, policy: &P) -> Result<Self> {
        let report = validate(mdp);
        if let Some(v) = report.violations.first() {
            return Err(Error::model(format!(
                "cannot simulate an invalid MDP ({} violations, first: {v})",
                report.violations.len()
            )));
        }
        Self::unchecked(mdp, policy)
    }

    /// Skips MDP validation; the caller vouches for it.
    pub fn unchecked<P: PolicyLike<T> + ?Sized>(mdp: &'a LinearMdp<T>, policy: &P) -> Result<Self> {
        let (weights, tables): (Vec<T>, Vec<ActionTable>) = resolve_for(mdp, policy)?.into_iter().unzip();
        let mut acc = T::zero();
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w.max(T::zero());
                acc
            })
            .collect();
        Ok(Rollout {
            mdp,
            cumulative,
            tables,
        })
    }

    /// One episode: a mixture draws its component once, then follows it for all layers.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, deployment_index: usize) -> Trajectory {
        let table = if self.tables.len() == 1 {
            &self.tables[0]
        } else {
            let total = *self.cumulative.last().expect("nonempty mixture");
            let target = T::lit(rng.random::<f64>()) * total;
            let i = self.cumulative.partition_point(|&c| c <= target);
            &self.tables[i.min(self.tables.len() - 1)]
        };
        let horizon = self.mdp.horizon();
        let mut states = Vec::with_capacity(horizon);
        let mut actions = Vec::with_capacity(horizon);
        let mut s = self.mdp.initial_state();
        for h in 0..horizon {
            let a = table.action(h, s);
            states.push(s);
            actions.push(a);
            if h + 1 < horizon {
                s = sample_index(self.mdp.transition_row(h, s, a), rng);
            }
        }
        Trajectory {
            deployment_index,
            states,
            actions,
        }
    }
}

/// One reward-free episode under `policy`.
pub fn sample_trajectory<T: Real, P: PolicyLike<T> + ?Sized, R: Rng + ?Sized>(
    mdp: &LinearMdp<T>,
    policy: &P,
    rng: &mut R,
) -> Result<Trajectory> {
    Ok(Rollout::new(mdp, policy)?.sample(rng, 0))
}
