//! Deterministic and mixture policies, and finite policy sets.

mod explorative;
mod nets;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::FeatureTable;
use crate::scalar::{dot, Real};

pub use explorative::{build_explorative_mixture, CovarianceOracle, ExactOracle, ExplorativeMixture};
pub use nets::{
    build_eval_set, build_exp_set, enumerate_tabular_policies, eval_net_log_size, exp_net_log_size,
    uncertainty_greedy_rule, ExpSetOptions, DEFAULT_ENUMERATION_CAP,
};

pub const POLICY_SCHEMA_VERSION: u32 = 1;

/// Action rule for one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerRule<T: Real> {
    /// `π(s) = argmax_a <φ(s,a), w>` over valid actions, lowest index on ties.
    LinearArgmax { w: Vec<T> },
    /// Explicit `state → action` map.
    Table { actions: Vec<usize> },
}

impl<T: Real> LayerRule<T> {
    pub fn action(&self, features: &FeatureTable<T>, s: usize) -> Result<usize> {
        if s >= features.num_states() {
            return Err(Error::contract(format!("state {s} out of range")));
        }
        match self {
            LayerRule::LinearArgmax { w } => {
                if w.len() != features.dim() {
                    return Err(Error::shape("argmax weight has wrong dimension"));
                }
                Ok(argmax_linear(features, s, w))
            }
            LayerRule::Table { actions } => {
                let a = *actions
                    .get(s)
                    .ok_or_else(|| Error::contract(format!("table rule has no entry for state {s}")))?;
                if a >= features.num_actions() || !features.is_valid(s, a) {
                    return Err(Error::contract(format!(
                        "table rule selects masked or unknown action {a} in state {s}"
                    )));
                }
                Ok(a)
            }
        }
    }

    /// The induced `state → action` table.
    pub fn resolve(&self, features: &FeatureTable<T>) -> Result<Vec<usize>> {
        (0..features.num_states()).map(|s| self.action(features, s)).collect()
    }
}

fn argmax_linear<T: Real>(features: &FeatureTable<T>, s: usize, w: &[T]) -> usize {
    let mut best: Option<(usize, T)> = None;
    for a in features.valid_actions(s) {
        let q = dot(features.phi(s, a), w);
        match best {
            Some((_, b)) if !(q > b) => {}
            _ => best = Some((a, q)),
        }
    }
    best.expect("every state has a valid action").0
}

/// One rule per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DeterministicPolicy<T: Real> {
    pub layers: Vec<LayerRule<T>>,
}

impl<T: Real> DeterministicPolicy<T> {
    pub fn new(layers: Vec<LayerRule<T>>) -> Self {
        DeterministicPolicy { layers }
    }

    /// Always plays the lowest-index valid action.
    pub fn first_valid(features: &FeatureTable<T>, horizon: usize) -> Self {
        let actions: Vec<usize> = (0..features.num_states())
            .map(|s| features.valid_actions(s).next().expect("valid action"))
            .collect();
        DeterministicPolicy {
            layers: vec![LayerRule::Table { actions }; horizon],
        }
    }

    pub fn from_tables(tables: Vec<Vec<usize>>) -> Self {
        DeterministicPolicy {
            layers: tables.into_iter().map(|actions| LayerRule::Table { actions }).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.layers.len()
    }

    pub fn action_table(&self, features: &FeatureTable<T>) -> Result<ActionTable> {
        Ok(ActionTable {
            layers: self.layers.iter().map(|r| r.resolve(features)).collect::<Result<_>>()?,
        })
    }
}

/// `π_h(s)` for a deterministic policy.
pub fn policy_action<T: Real>(
    policy: &DeterministicPolicy<T>,
    features: &FeatureTable<T>,
    h: usize,
    s: usize,
) -> Result<usize> {
    policy
        .layers
        .get(h)
        .ok_or_else(|| Error::contract(format!("policy has no rule for layer {h}")))?
        .action(features, s)
}

/// A resolved deterministic policy: `layers[h][s]` is the action.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionTable {
    pub layers: Vec<Vec<usize>>,
}

impl ActionTable {
    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.layers[h][s]
    }

    pub fn horizon(&self) -> usize {
        self.layers.len()
    }

    pub fn to_policy<T: Real>(&self) -> DeterministicPolicy<T> {
        DeterministicPolicy::from_tables(self.layers.clone())
    }
}

/// Episode-level mixture of deterministic policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MixturePolicy<T: Real> {
    components: Vec<MixtureComponent<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MixtureComponent<T: Real> {
    pub weight: T,
    pub policy: DeterministicPolicy<T>,
}

impl<T: Real> MixturePolicy<T> {
    /// Weights must be nonnegative and sum to one within `1e-10`.
    pub fn new(components: Vec<(T, DeterministicPolicy<T>)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::contract("mixture needs at least one component"));
        }
        if components.iter().any(|(w, _)| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(Error::contract("mixture weights must be finite and nonnegative"));
        }
        let total: T = components.iter().map(|(w, _)| *w).sum();
        if (total - T::one()).abs() > T::tol(1e-10) {
            return Err(Error::contract(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(MixturePolicy {
            components: components
                .into_iter()
                .map(|(weight, policy)| MixtureComponent { weight, policy })
                .collect(),
        })
    }

    /// Rescales nonnegative weights to sum to one and drops zero-weight components.
    pub fn normalized(components: Vec<(T, DeterministicPolicy<T>)>) -> Result<Self> {
        let total: T = components.iter().map(|(w, _)| w.max(T::zero())).sum();
        if !(total > T::zero()) {
            return Err(Error::contract("mixture weights have no positive mass"));
        }
        let kept: Vec<_> = components
            .into_iter()
            .filter(|(w, _)| *w > T::zero())
            .map(|(w, p)| (w / total, p))
            .collect();
        Self::new(kept)
    }

    pub fn uniform(policies: Vec<DeterministicPolicy<T>>) -> Result<Self> {
        let n = T::from_count(policies.len().max(1));
        Self::new(policies.into_iter().map(|p| (T::one() / n, p)).collect())
    }

    pub fn singleton(policy: DeterministicPolicy<T>) -> Self {
        MixturePolicy {
            components: vec![MixtureComponent {
                weight: T::one(),
                policy,
            }],
        }
    }

    pub fn components(&self) -> &[MixtureComponent<T>] {
        &self.components
    }

    pub fn weights(&self) -> Vec<T> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn weight_sum(&self) -> T {
        self.components.iter().map(|c| c.weight).sum()
    }
}

/// Anything that can be run in an episode: resolves to weighted action tables.
pub trait PolicyLike<T: Real> {
    fn resolve(&self, features: &FeatureTable<T>) -> Result<Vec<(T, ActionTable)>>;
}

impl<T: Real> PolicyLike<T> for DeterministicPolicy<T> {
    fn resolve(&self, features: &FeatureTable<T>) -> Result<Vec<(T, ActionTable)>> {
        Ok(vec![(T::one(), self.action_table(features)?)])
    }
}

impl<T: Real> PolicyLike<T> for ActionTable {
    fn resolve(&self, features: &FeatureTable<T>) -> Result<Vec<(T, ActionTable)>> {
        for (h, layer) in self.layers.iter().enumerate() {
            if layer.len() != features.num_states() {
                return Err(Error::shape(format!("action table layer {h} has wrong length")));
            }
            for (s, &a) in layer.iter().enumerate() {
                if a >= features.num_actions() || !features.is_valid(s, a) {
                    return Err(Error::contract(format!(
                        "action table selects masked action {a} at (h={h}, s={s})"
                    )));
                }
            }
        }
        Ok(vec![(T::one(), self.clone())])
    }
}

impl<T: Real> PolicyLike<T> for MixturePolicy<T> {
    fn resolve(&self, features: &FeatureTable<T>) -> Result<Vec<(T, ActionTable)>> {
        self.components
            .iter()
            .map(|c| Ok((c.weight, c.policy.action_table(features)?)))
            .collect()
    }
}

/// Serialized policy of either kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyPolicy<T: Real> {
    Deterministic(DeterministicPolicy<T>),
    Mixture(MixturePolicy<T>),
}

impl<T: Real> PolicyLike<T> for AnyPolicy<T> {
    fn resolve(&self, features: &FeatureTable<T>) -> Result<Vec<(T, ActionTable)>> {
        match self {
            AnyPolicy::Deterministic(p) => p.resolve(features),
            AnyPolicy::Mixture(p) => p.resolve(features),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    EvalNet,
    ExpNet,
    TabularEnum,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
#[serde(rename_all = "snake_case")]
enum Storage<T: Real> {
    /// Cartesian product of per-layer rule lists, enumerated lazily.
    Product(Vec<Vec<LayerRule<T>>>),
    List(Vec<DeterministicPolicy<T>>),
}

/// A finite, nonempty set of deterministic policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PolicySet<T: Real> {
    schema_version: u32,
    provenance: Provenance,
    resolution: Option<f64>,
    seed: Option<u64>,
    horizon: usize,
    storage: Storage<T>,
}

impl<T: Real> PolicySet<T> {
    pub fn product(
        layers: Vec<Vec<LayerRule<T>>>,
        provenance: Provenance,
        resolution: Option<f64>,
        seed: Option<u64>,
    ) -> Result<Self> {
        if layers.is_empty() || layers.iter().any(Vec::is_empty) {
            return Err(Error::contract("policy set layers must be nonempty"));
        }
        Ok(PolicySet {
            schema_version: POLICY_SCHEMA_VERSION,
            provenance,
            resolution,
            seed,
            horizon: layers.len(),
            storage: Storage::Product(layers),
        })
    }

    pub fn from_list(policies: Vec<DeterministicPolicy<T>>) -> Result<Self> {
        let horizon = policies
            .first()
            .ok_or_else(|| Error::contract("policy set must be nonempty"))?
            .horizon();
        if policies.iter().any(|p| p.horizon() != horizon) {
            return Err(Error::contract("policies in a set must share a horizon"));
        }
        Ok(PolicySet {
            schema_version: POLICY_SCHEMA_VERSION,
            provenance: Provenance::Custom,
            resolution: None,
            seed: None,
            horizon,
            storage: Storage::List(policies),
        })
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn resolution(&self) -> Option<f64> {
        self.resolution
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Per-layer rule lists, when the set is a product.
    pub fn layer_rules(&self) -> Option<&[Vec<LayerRule<T>>]> {
        match &self.storage {
            Storage::Product(l) => Some(l),
            Storage::List(_) => None,
        }
    }

    /// Total number of policies, `None` on overflow.
    pub fn len(&self) -> Option<usize> {
        match &self.storage {
            Storage::Product(l) => l.iter().try_fold(1usize, |acc, v| acc.checked_mul(v.len())),
            Storage::List(p) => Some(p.len()),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of distinct behaviours through layer `h` (0-based, inclusive).
    pub fn prefix_len(&self, h: usize) -> Option<usize> {
        match &self.storage {
            Storage::Product(l) => l[..=h.min(l.len() - 1)]
                .iter()
                .try_fold(1usize, |acc, v| acc.checked_mul(v.len())),
            Storage::List(p) => Some(p.len()),
        }
    }

    /// The `index`-th policy whose layers `0..=h` enumerate the product (layer 0
    /// fastest) and whose later layers use each list's first rule.
    pub fn prefix_policy(&self, h: usize, index: usize) -> DeterministicPolicy<T> {
        match &self.storage {
            Storage::Product(l) => {
                let mut rest = index;
                let layers = l
                    .iter()
                    .enumerate()
                    .map(|(layer, rules)| {
                        if layer <= h {
                            let k = rest % rules.len();
                            rest /= rules.len();
                            rules[k].clone()
                        } else {
                            rules[0].clone()
                        }
                    })
                    .collect();
                DeterministicPolicy { layers }
            }
            Storage::List(p) => p[index].clone(),
        }
    }

    pub fn policy(&self, index: usize) -> DeterministicPolicy<T> {
        self.prefix_policy(self.horizon - 1, index)
    }

    /// Lazily enumerates every policy. Panics if the size overflows `usize`.
    pub fn iter(&self) -> impl Iterator<Item = DeterministicPolicy<T>> + '_ {
        let n = self.len().expect("policy set too large to enumerate");
        (0..n).map(move |i| self.policy(i))
    }

    pub fn iter_prefix(&self, h: usize) -> impl Iterator<Item = DeterministicPolicy<T>> + '_ {
        let n = self.prefix_len(h).expect("policy set too large to enumerate");
        (0..n).map(move |i| self.prefix_policy(h, i))
    }

    /// Set of induced action tables; used for subset checks.
    pub fn action_tables(&self, features: &FeatureTable<T>) -> Result<Vec<ActionTable>> {
        self.iter().map(|p| p.action_table(features)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(text)?;
        if set.schema_version != POLICY_SCHEMA_VERSION {
            return Err(Error::model(format!(
                "unsupported policy-set schema version {}",
                set.schema_version
            )));
        }
        match &set.storage {
            Storage::Product(l) if l.is_empty() || l.iter().any(Vec::is_empty) => {
                Err(Error::contract("policy set layers must be nonempty"))
            }
            Storage::List(p) if p.is_empty() => Err(Error::contract("policy set must be nonempty")),
            _ => Ok(set),
        }
    }
}
