//! Finite-state episodic linear MDPs.
//!
//! Transitions and rewards are linear in a known feature map:
//! `P_h(s'|s,a) = <φ(s,a), μ_h(s')>` and `r_h(s,a) = <φ(s,a), θ_h>`.
//! Layers are 0-based in code (`h = 0..H`); states and actions are dense indices.

mod dp;
mod generate;
mod simulate;
mod validate;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, Real};

pub use dp::{
    advantage_decomposition, dp_occupancy, dp_optimal, dp_policy_value, expected_feature_cov, layer_occupancies,
    DpSolution,
};
pub use generate::{
    build_hard_instance, generate_random_linear_mdp, hard_instance_arm_values, tabular_to_linear, FeatureStyle,
    RandomMdpSpec, TabularMdp,
};
pub use simulate::{derive_seed, sample_trajectory, Rollout};
pub use validate::{validate, ValidationReport, Violation};

/// Current version of the MDP document schema.
pub const MDP_SCHEMA_VERSION: u32 = 1;

/// Known feature map `φ(s,a) ∈ R^d` plus the per-state valid-action mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FeatureTable<T: Real> {
    dim: usize,
    num_states: usize,
    num_actions: usize,
    /// `(s·A + a)·d + k`.
    values: Vec<T>,
    /// `s·A + a`.
    mask: Vec<bool>,
}

impl<T: Real> FeatureTable<T> {
    /// `rows[s·A + a]` is `φ(s,a)`; every action is valid.
    pub fn new(num_states: usize, num_actions: usize, rows: Vec<Vec<T>>) -> Result<Self> {
        Self::with_mask(num_states, num_actions, rows, vec![true; num_states * num_actions])
    }

    pub fn with_mask(num_states: usize, num_actions: usize, rows: Vec<Vec<T>>, mask: Vec<bool>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::shape("feature table needs at least one state and one action"));
        }
        if rows.len() != num_states * num_actions || mask.len() != rows.len() {
            return Err(Error::shape(format!(
                "expected {} feature rows and mask entries, got {} and {}",
                num_states * num_actions,
                rows.len(),
                mask.len()
            )));
        }
        let dim = rows[0].len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("feature rows must share a positive dimension"));
        }
        for s in 0..num_states {
            if !(0..num_actions).any(|a| mask[s * num_actions + a]) {
                return Err(Error::shape(format!("state {s} has no valid action")));
            }
        }
        Ok(FeatureTable {
            dim,
            num_states,
            num_actions,
            values: rows.into_iter().flatten().collect(),
            mask,
        })
    }

    /// Canonical basis `φ(s,a) = e_{s·A+a}`, so `d = S·A`.
    pub fn canonical(num_states: usize, num_actions: usize) -> Self {
        let d = num_states * num_actions;
        let rows = (0..d)
            .map(|i| (0..d).map(|k| if k == i { T::one() } else { T::zero() }).collect())
            .collect();
        Self::new(num_states, num_actions, rows).expect("canonical table is well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn phi(&self, s: usize, a: usize) -> &[T] {
        let start = (s * self.num_actions + a) * self.dim;
        &self.values[start..start + self.dim]
    }

    #[inline]
    pub fn is_valid(&self, s: usize, a: usize) -> bool {
        self.mask[s * self.num_actions + a]
    }

    pub fn valid_actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_actions).filter(move |&a| self.is_valid(s, a))
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Whether every φ(s,a) over valid pairs is a distinct standard basis vector.
    pub fn is_canonical(&self) -> bool {
        let mut seen = vec![false; self.dim];
        for s in 0..self.num_states {
            for a in self.valid_actions(s) {
                let phi = self.phi(s, a);
                let ones: Vec<usize> = (0..self.dim).filter(|&k| phi[k] == T::one()).collect();
                let zeros = phi.iter().filter(|&&v| v == T::zero()).count();
                if ones.len() != 1 || zeros != self.dim - 1 || seen[ones[0]] {
                    return false;
                }
                seen[ones[0]] = true;
            }
        }
        true
    }

    /// Basis index of `(s,a)` in a canonical table.
    pub fn canonical_index(&self, s: usize, a: usize) -> Option<usize> {
        self.phi(s, a).iter().position(|&v| v == T::one())
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.values.chunks(self.dim).map(<[T]>::to_vec).collect()
    }
}

/// A finite-state episodic linear MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMdp<T: Real> {
    horizon: usize,
    features: Arc<FeatureTable<T>>,
    /// Per layer, a `d × S` matrix whose column `s'` is `μ_h(s')`.
    measures: Vec<Matrix<T>>,
    thetas: Vec<Vec<T>>,
    initial_state: usize,
    /// Per layer, `P_h(s'|s,a)` at `(s·A + a)·S + s'`.
    transitions: Vec<Vec<T>>,
}

impl<T: Real> LinearMdp<T> {
    /// Checks shapes only; use [`validate`] for the probabilistic invariants.
    pub fn new(
        features: FeatureTable<T>,
        measures: Vec<Matrix<T>>,
        thetas: Vec<Vec<T>>,
        initial_state: usize,
    ) -> Result<Self> {
        let horizon = measures.len();
        if horizon == 0 {
            return Err(Error::shape("horizon must be positive"));
        }
        if thetas.len() != horizon {
            return Err(Error::shape(format!(
                "{} measure layers but {} reward layers",
                horizon,
                thetas.len()
            )));
        }
        let d = features.dim();
        let s_count = features.num_states();
        for (h, m) in measures.iter().enumerate() {
            if m.rows() != d || m.cols() != s_count {
                return Err(Error::shape(format!(
                    "measure at layer {h} is {}x{}, expected {d}x{s_count}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if let Some(h) = thetas.iter().position(|t| t.len() != d) {
            return Err(Error::shape(format!("theta at layer {h} has wrong dimension")));
        }
        if initial_state >= s_count {
            return Err(Error::shape("initial state out of range"));
        }
        let transitions = measures
            .iter()
            .map(|mu| {
                let mut p = Vec::with_capacity(s_count * features.num_actions() * s_count);
                for s in 0..s_count {
                    for a in 0..features.num_actions() {
                        let phi = features.phi(s, a);
                        for sp in 0..s_count {
                            let mut v = T::zero();
                            for k in 0..d {
                                v += phi[k] * mu[(k, sp)];
                            }
                            p.push(v);
                        }
                    }
                }
                p
            })
            .collect();
        Ok(LinearMdp {
            horizon,
            features: Arc::new(features),
            measures,
            thetas,
            initial_state,
            transitions,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn num_states(&self) -> usize {
        self.features.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.features.num_actions()
    }

    pub fn features(&self) -> &FeatureTable<T> {
        &self.features
    }

    pub fn shared_features(&self) -> Arc<FeatureTable<T>> {
        Arc::clone(&self.features)
    }

    pub fn measures(&self) -> &[Matrix<T>] {
        &self.measures
    }

    pub fn thetas(&self) -> &[Vec<T>] {
        &self.thetas
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// `P_h(·|s,a)` as a slice over next states.
    #[inline]
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[T] {
        let n = self.num_states();
        let start = (s * self.num_actions() + a) * n;
        &self.transitions[h][start..start + n]
    }

    /// The reward built into the instance.
    pub fn reward(&self) -> RewardFunction<T> {
        RewardFunction::linear(self.thetas.clone())
    }

    pub fn with_thetas(&self, thetas: Vec<Vec<T>>) -> Result<Self> {
        Self::new(
            (*self.features).clone(),
            self.measures.clone(),
            thetas,
            self.initial_state,
        )
    }

    pub fn to_document(&self) -> MdpDocument<T> {
        let a = self.num_actions();
        MdpDocument {
            schema_version: MDP_SCHEMA_VERSION,
            d: self.dim(),
            num_states: self.num_states(),
            num_actions: a,
            horizon: self.horizon,
            features: self.features.rows(),
            measures: self.measures.iter().map(Matrix::to_rows).collect(),
            thetas: self.thetas.clone(),
            initial_state: self.initial_state,
            action_mask: self.features.mask().chunks(a).map(<[bool]>::to_vec).collect(),
        }
    }

    pub fn from_document(doc: MdpDocument<T>) -> Result<Self> {
        if doc.schema_version != MDP_SCHEMA_VERSION {
            return Err(Error::model(format!(
                "unsupported MDP schema version {}",
                doc.schema_version
            )));
        }
        let mask: Vec<bool> = if doc.action_mask.is_empty() {
            vec![true; doc.num_states * doc.num_actions]
        } else {
            if doc.action_mask.len() != doc.num_states || doc.action_mask.iter().any(|r| r.len() != doc.num_actions) {
                return Err(Error::shape("action_mask must be S rows of A booleans"));
            }
            doc.action_mask.into_iter().flatten().collect()
        };
        let features = FeatureTable::with_mask(doc.num_states, doc.num_actions, doc.features, mask)?;
        if features.dim() != doc.d {
            return Err(Error::shape(format!(
                "declared d = {} but features have dimension {}",
                doc.d,
                features.dim()
            )));
        }
        let measures = doc
            .measures
            .into_iter()
            .map(Matrix::from_rows)
            .collect::<Result<Vec<_>>>()?;
        if measures.len() != doc.horizon {
            return Err(Error::shape("measures length must equal H"));
        }
        Self::new(features, measures, doc.thetas, doc.initial_state)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

/// On-disk JSON form of a [`LinearMdp`]. Arrays are row-major:
/// `features[s·A + a][k]`, `measures[h][k][s']`, `thetas[h][k]`, `action_mask[s][a]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MdpDocument<T: Real> {
    pub schema_version: u32,
    pub d: usize,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub features: Vec<Vec<T>>,
    pub measures: Vec<Vec<Vec<T>>>,
    pub thetas: Vec<Vec<T>>,
    pub initial_state: usize,
    #[serde(default)]
    pub action_mask: Vec<Vec<bool>>,
}

/// Scalar reward on `(s,a)` for a single layer, with a declared upper bound.
pub trait LayerReward<T: Real>: Send + Sync {
    fn value(&self, features: &FeatureTable<T>, s: usize, a: usize) -> T;
    /// Declared uniform upper bound `A`.
    fn cap(&self) -> T;
}

/// Per-layer rewards, either linear in the features or given pointwise.
#[derive(Clone)]
pub enum RewardFunction<T: Real> {
    Linear {
        thetas: Vec<Vec<T>>,
    },
    Generic {
        layers: Vec<Arc<dyn LayerReward<T>>>,
        cap: T,
    },
}

impl<T: Real> std::fmt::Debug for RewardFunction<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RewardFunction::Linear { thetas } => f.debug_struct("Linear").field("thetas", thetas).finish(),
            RewardFunction::Generic { layers, cap } => f
                .debug_struct("Generic")
                .field("layers", &layers.len())
                .field("cap", cap)
                .finish(),
        }
    }
}

impl<T: Real> RewardFunction<T> {
    pub fn linear(thetas: Vec<Vec<T>>) -> Self {
        RewardFunction::Linear { thetas }
    }

    pub fn zero(dim: usize, horizon: usize) -> Self {
        RewardFunction::Linear {
            thetas: vec![vec![T::zero(); dim]; horizon],
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, RewardFunction::Linear { .. })
    }

    pub fn horizon(&self) -> usize {
        match self {
            RewardFunction::Linear { thetas } => thetas.len(),
            RewardFunction::Generic { layers, .. } => layers.len(),
        }
    }

    /// Upper end of the admissible reward range (`1` for linear rewards).
    pub fn upper_bound(&self) -> T {
        match self {
            RewardFunction::Linear { .. } => T::one(),
            RewardFunction::Generic { cap, .. } => *cap,
        }
    }

    #[inline]
    pub fn value(&self, features: &FeatureTable<T>, h: usize, s: usize, a: usize) -> T {
        match self {
            RewardFunction::Linear { thetas } => dot(features.phi(s, a), &thetas[h]),
            RewardFunction::Generic { layers, .. } => layers[h].value(features, s, a),
        }
    }

    /// Every valid `(h,s,a)` reward lies in `[0, upper_bound]` within `tol`.
    pub fn check_range(&self, features: &FeatureTable<T>, tol: T) -> Result<()> {
        let hi = self.upper_bound();
        if let RewardFunction::Linear { thetas } = self {
            if let Some(bad) = thetas.iter().position(|t| t.len() != features.dim()) {
                return Err(Error::shape(format!("theta at layer {bad} has wrong dimension")));
            }
        }
        for h in 0..self.horizon() {
            for s in 0..features.num_states() {
                for a in features.valid_actions(s) {
                    let r = self.value(features, h, s, a);
                    if !(r >= -tol && r <= hi + tol) {
                        return Err(Error::contract(format!(
                            "reward r_{h}({s},{a}) = {r} outside [0, {hi}]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reward-free trajectory: states and actions for layers `0..H`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(rename = "deployment")]
    pub deployment_index: usize,
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}
