//! Reward-free datasets and least-squares value iteration estimators.

mod batch;
mod estimate;
mod rewards;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::mdp::{FeatureTable, Trajectory};
use crate::scalar::Real;

pub use batch::{Candidates, ProductClasses};
pub(crate) use estimate::{cov_from_entries, linear_reward_tables, RewardTable};
pub use estimate::{
    estimate_cov, estimate_er, estimate_er_mixture, estimate_leverage, estimate_v, true_uncertainty, Estimate,
    EstimateTrace, LayerTrace,
};
pub use rewards::{CovarianceEntry, Indicator, Leverage};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Append-only store of reward-free trajectories with per-layer Gram caches.
#[derive(Clone, Debug)]
pub struct Dataset<T: Real> {
    features: Arc<FeatureTable<T>>,
    horizon: usize,
    initial_state: usize,
    trajectories: Vec<Trajectory>,
    /// `[h][s·A + a]`.
    visits: Vec<Vec<u64>>,
    /// `[h][(s·A + a)·S + s']` for `h < H − 1`.
    transitions: Vec<Vec<u64>>,
    /// `Λ_h = I + Σ_n φφ^T`.
    grams: Vec<Matrix<T>>,
    watermark: usize,
}

/// Sidecar metadata written next to a JSON-lines dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    pub d: usize,
    pub initial_state: usize,
    pub trajectories: usize,
    pub checksum: String,
}

impl<T: Real> Dataset<T> {
    pub fn new(features: Arc<FeatureTable<T>>, horizon: usize, initial_state: usize) -> Self {
        let d = features.dim();
        let sa = features.num_states() * features.num_actions();
        let n = features.num_states();
        Dataset {
            horizon,
            initial_state,
            trajectories: Vec::new(),
            visits: vec![vec![0; sa]; horizon],
            transitions: vec![vec![0; sa * n]; horizon.saturating_sub(1)],
            grams: vec![Matrix::identity(d); horizon],
            watermark: 0,
            features,
        }
    }

    pub fn features(&self) -> &FeatureTable<T> {
        &self.features
    }

    pub fn shared_features(&self) -> Arc<FeatureTable<T>> {
        Arc::clone(&self.features)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Number of trajectories folded into the Gram cache.
    pub fn watermark(&self) -> usize {
        self.watermark
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// Distinct deployment indices, ascending.
    pub fn deployments(&self) -> Vec<usize> {
        self.trajectories
            .iter()
            .map(|t| t.deployment_index)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Samples recorded at layer `h`.
    pub fn layer_count(&self, h: usize) -> u64 {
        self.visits[h].iter().sum()
    }

    pub fn visits(&self, h: usize) -> &[u64] {
        &self.visits[h]
    }

    pub fn gram(&self, h: usize) -> &Matrix<T> {
        &self.grams[h]
    }

    fn check(&self, t: &Trajectory) -> Result<()> {
        let f = &self.features;
        if t.states.len() != self.horizon || t.actions.len() != self.horizon {
            return Err(Error::contract(format!(
                "trajectory has {} states and {} actions, expected {}",
                t.states.len(),
                t.actions.len(),
                self.horizon
            )));
        }
        if t.states[0] != self.initial_state {
            return Err(Error::contract("trajectory does not start at the initial state"));
        }
        for (h, (&s, &a)) in t.states.iter().zip(&t.actions).enumerate() {
            if s >= f.num_states() || a >= f.num_actions() || !f.is_valid(s, a) {
                return Err(Error::contract(format!("invalid pair (s={s}, a={a}) at layer {h}")));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, t: Trajectory) -> Result<()> {
        self.check(&t)?;
        let na = self.features.num_actions();
        let n = self.features.num_states();
        for h in 0..self.horizon {
            let (s, a) = (t.states[h], t.actions[h]);
            self.visits[h][s * na + a] += 1;
            self.grams[h].add_outer(T::one(), self.features.phi(s, a));
            if h + 1 < self.horizon {
                self.transitions[h][(s * na + a) * n + t.states[h + 1]] += 1;
            }
        }
        self.trajectories.push(t);
        self.watermark += 1;
        Ok(())
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Trajectory>) -> Result<()> {
        for t in ts {
            self.push(t)?;
        }
        Ok(())
    }

    /// `Λ_h` rebuilt directly from the stored trajectories.
    pub fn recompute_gram(&self, h: usize) -> Matrix<T> {
        let mut g = Matrix::identity(self.features.dim());
        for t in &self.trajectories {
            g.add_outer(T::one(), self.features.phi(t.states[h], t.actions[h]));
        }
        g
    }

    /// Trajectories from deployments `< k` only.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        let mut out = Dataset::new(self.shared_features(), self.horizon, self.initial_state);
        out.extend(self.trajectories.iter().filter(|t| t.deployment_index < k).cloned())?;
        Ok(out)
    }

    /// SHA-256 over the shape and all visit and transition counts.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in [
            self.horizon,
            self.features.num_states(),
            self.features.num_actions(),
            self.initial_state,
            self.trajectories.len(),
        ] {
            hasher.update((v as u64).to_le_bytes());
        }
        for layer in self.visits.iter().chain(&self.transitions) {
            for c in layer {
                hasher.update(c.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            schema_version: DATASET_SCHEMA_VERSION,
            horizon: self.horizon,
            num_states: self.features.num_states(),
            num_actions: self.features.num_actions(),
            d: self.features.dim(),
            initial_state: self.initial_state,
            trajectories: self.trajectories.len(),
            checksum: self.checksum(),
        }
    }

    pub fn meta_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".meta.json");
        PathBuf::from(p)
    }

    /// One trajectory per line, plus a `<path>.meta.json` sidecar with the count checksum.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for t in &self.trajectories {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        std::fs::write(
            Self::meta_path(path),
            serde_json::to_string_pretty(&self.meta())? + "\n",
        )?;
        Ok(())
    }

    /// Loads a JSON-lines dataset, rebuilding the Gram caches and verifying the sidecar
    /// checksum when present.
    pub fn load_jsonl(
        path: &Path,
        features: Arc<FeatureTable<T>>,
        horizon: usize,
        initial_state: usize,
    ) -> Result<Self> {
        let mut out = Dataset::new(features, horizon, initial_state);
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trajectory =
                serde_json::from_str(&line).map_err(|e| Error::model(format!("{}:{}: {e}", path.display(), i + 1)))?;
            out.push(t)?;
        }
        let meta_path = Self::meta_path(path);
        if meta_path.exists() {
            let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
            if meta.checksum != out.checksum() {
                return Err(Error::model(format!(
                    "dataset checksum mismatch: {} records {}, recomputed {}",
                    meta_path.display(),
                    meta.checksum,
                    out.checksum()
                )));
            }
        } else {
            log::warn!("no checksum sidecar at {}", meta_path.display());
        }
        Ok(out)
    }

    /// Read-only regression snapshot at the current watermark.
    pub fn model(&self) -> LsviModel<T> {
        let f = &self.features;
        let (d, n, na) = (f.dim(), f.num_states(), f.num_actions());
        let mut regress = Vec::with_capacity(self.horizon);
        let mut observed = Vec::with_capacity(self.horizon);
        let mut chol = Vec::with_capacity(self.horizon);
        for h in 0..self.horizon {
            let c = Cholesky::new(&self.grams[h]).expect("identity-regularized Gram is positive definite");
            let mut seen = vec![false; n];
            for s in 0..n {
                seen[s] = (0..na).any(|a| self.visits[h][s * na + a] > 0);
            }
            if h == 0 {
                seen[self.initial_state] = true;
            }
            observed.push(seen);
            if h + 1 < self.horizon {
                let mut m = Matrix::zeros(d, n);
                for s in 0..n {
                    for a in 0..na {
                        let phi = f.phi(s, a);
                        for sp in 0..n {
                            let c = self.transitions[h][(s * na + a) * n + sp];
                            if c > 0 {
                                let c = T::lit(c as f64);
                                for k in 0..d {
                                    m[(k, sp)] += c * phi[k];
                                }
                            }
                        }
                    }
                }
                regress.push(c.solve_matrix(&m));
            }
            chol.push(c);
        }
        LsviModel {
            features: self.shared_features(),
            horizon: self.horizon,
            initial_state: self.initial_state,
            regress,
            chol,
            samples: (0..self.horizon).map(|h| self.layer_count(h)).collect(),
            observed,
            watermark: self.watermark,
        }
    }
}

/// Frozen regression quantities: `K_h = Λ_h^{-1} Σ_n φ(s_h^n,a_h^n) e_{s_{h+1}^n}^T`, so that
/// `w̄_h = K_h V_{h+1}` for any next-layer value vector.
#[derive(Clone, Debug)]
pub struct LsviModel<T: Real> {
    features: Arc<FeatureTable<T>>,
    horizon: usize,
    initial_state: usize,
    /// `d × S`, for `h < H − 1`.
    regress: Vec<Matrix<T>>,
    chol: Vec<Cholesky<T>>,
    samples: Vec<u64>,
    /// States visited at each layer (the initial state always counts at layer 0).
    observed: Vec<Vec<bool>>,
    watermark: usize,
}

impl<T: Real> LsviModel<T> {
    pub fn features(&self) -> &FeatureTable<T> {
        &self.features
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn samples(&self, h: usize) -> u64 {
        self.samples[h]
    }

    pub fn watermark(&self) -> usize {
        self.watermark
    }

    pub fn observed(&self, h: usize) -> &[bool] {
        &self.observed[h]
    }

    pub fn regression(&self, h: usize) -> &Matrix<T> {
        &self.regress[h]
    }

    /// `‖φ‖_{Λ_h^{-1}}`.
    pub fn uncertainty(&self, h: usize, phi: &[T]) -> T {
        self.chol[h].inv_quad_form(phi).max(T::zero()).sqrt()
    }

    fn require_layers(&self, upto: usize) -> Result<()> {
        for h in 0..upto {
            if self.samples[h] == 0 {
                return Err(Error::Estimation {
                    layer: h,
                    reason: "no samples recorded at this layer".into(),
                });
            }
        }
        Ok(())
    }
}
