use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix, SymmetricEigen};
use crate::mdp::{FeatureTable, LayerReward};
use crate::scalar::Real;

/// `(φ_i φ_j + 1) / 2`, in `[0, 1]` for unit-norm features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CovarianceEntry {
    pub i: usize,
    pub j: usize,
}

impl CovarianceEntry {
    /// Upper-triangle index pairs `(i, j)`, `i ≤ j`, row-major.
    pub fn pairs(d: usize) -> Vec<(usize, usize)> {
        (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect()
    }
}

impl<T: Real> LayerReward<T> for CovarianceEntry {
    fn value(&self, features: &FeatureTable<T>, s: usize, a: usize) -> T {
        let phi = features.phi(s, a);
        let half = T::lit(0.5);
        let v = (phi[self.i] * phi[self.j] + T::one()) * half;
        v.max(T::zero()).min(T::one())
    }

    fn cap(&self) -> T {
        T::one()
    }
}

/// `min(φ^T (N Σ̂)^{-1} φ, A)`.
#[derive(Clone, Debug)]
pub struct Leverage<T: Real> {
    chol: Cholesky<T>,
    cap: T,
}

impl<T: Real> Leverage<T> {
    pub fn new(cov: &Matrix<T>, n: T, cap: T) -> Result<Self> {
        if !(n > T::zero()) {
            return Err(Error::contract("leverage scale N must be positive"));
        }
        if !(cap >= T::zero()) {
            return Err(Error::contract("leverage cap must be nonnegative"));
        }
        let scaled = cov.symmetrized().scaled(n);
        let chol = Cholesky::new(&scaled).ok_or_else(|| {
            let eig = SymmetricEigen::new(&scaled);
            Error::Singular {
                context: "N·Σ̂ in leverage reward".into(),
                direction: eig.vector(0).iter().map(|x| x.as_f64()).collect(),
            }
        })?;
        Ok(Leverage { chol, cap })
    }

    /// Uncapped value `φ^T (N Σ̂)^{-1} φ`.
    pub fn raw(&self, phi: &[T]) -> T {
        self.chol.inv_quad_form(phi).max(T::zero())
    }
}

impl<T: Real> LayerReward<T> for Leverage<T> {
    fn value(&self, features: &FeatureTable<T>, s: usize, a: usize) -> T {
        self.raw(features.phi(s, a)).min(self.cap)
    }

    fn cap(&self) -> T {
        self.cap
    }
}

/// `1[s = state, a = action]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Indicator {
    pub state: usize,
    pub action: usize,
}

impl<T: Real> LayerReward<T> for Indicator {
    fn value(&self, _: &FeatureTable<T>, s: usize, a: usize) -> T {
        if s == self.state && a == self.action {
            T::one()
        } else {
            T::zero()
        }
    }

    fn cap(&self) -> T {
        T::one()
    }
}
