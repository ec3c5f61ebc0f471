//! Generalized G-optimal design over policy-induced covariance matrices.
//!
//! For atoms `Λ(π)` and a distribution `μ`, `V(μ) = Σ_π μ(π) Λ(π)` and
//! `g(μ) = max_π Tr(V(μ)^{-1} Λ(π))`. Maximizing `log det V(μ)` drives `g` down to `d`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, log_det_or_neg_inf, min_eigenvalue, psd_rank, Matrix, SymmetricEigen};
use crate::scalar::{argmax_first, Real};

pub const DEFAULT_TOL: f64 = 0.05;
pub const DEFAULT_RIDGE: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const SPAN_REL_TOL: f64 = 1e-9;
const LINE_SEARCH_EVALS: usize = 40;
const PARALLEL_LABELS: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DesignProblem<T: Real> {
    pub labels: Vec<String>,
    pub matrices: Vec<Matrix<T>>,
    #[serde(default)]
    pub ridge: T,
}

impl<T: Real> DesignProblem<T> {
    pub fn new(labels: Vec<String>, matrices: Vec<Matrix<T>>, ridge: T) -> Result<Self> {
        let p = DesignProblem {
            labels,
            matrices,
            ridge,
        };
        p.validate()?;
        Ok(p)
    }

    /// Labels `"0"`, `"1"`, ….
    pub fn from_matrices(matrices: Vec<Matrix<T>>, ridge: T) -> Result<Self> {
        let labels = (0..matrices.len()).map(|i| i.to_string()).collect();
        Self::new(labels, matrices, ridge)
    }

    pub fn dim(&self) -> usize {
        self.matrices.first().map_or(0, Matrix::rows)
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrices.is_empty() {
            return Err(Error::contract("design problem needs at least one label"));
        }
        if self.labels.len() != self.matrices.len() {
            return Err(Error::shape("labels and matrices differ in length"));
        }
        if !(self.ridge >= T::zero()) {
            return Err(Error::contract("ridge must be nonnegative"));
        }
        let d = self.dim();
        for (i, m) in self.matrices.iter().enumerate() {
            if m.rows() != d || m.cols() != d {
                return Err(Error::shape(format!("matrix {i} is not {d}x{d}")));
            }
            if !m.is_finite() {
                return Err(Error::contract(format!("matrix {i} has non-finite entries")));
            }
            if m.max_asymmetry() > T::tol(SYMMETRY_TOL) {
                return Err(Error::contract(format!("matrix {i} is not symmetric")));
            }
            if min_eigenvalue(m) < -T::tol(PSD_TOL) {
                return Err(Error::contract(format!("matrix {i} is not positive semidefinite")));
            }
        }
        Ok(())
    }

    /// `V(μ)` without the ridge.
    pub fn mixture(&self, mu: &[T]) -> Matrix<T> {
        let d = self.dim();
        let mut v = Matrix::zeros(d, d);
        for (w, m) in mu.iter().zip(&self.matrices) {
            if *w != T::zero() {
                v.add_scaled(*w, m);
            }
        }
        v
    }

    /// `V(μ) + ridge·I`.
    pub fn covariance(&self, mu: &[T]) -> Matrix<T> {
        let mut v = self.mixture(mu);
        v.add_diag(self.ridge);
        v
    }

    fn check_mu(&self, mu: &[T]) -> Result<()> {
        if mu.len() != self.len() {
            return Err(Error::shape("mu has the wrong length"));
        }
        if mu.iter().any(|&w| !(w >= T::zero())) {
            return Err(Error::contract("mu must be nonnegative"));
        }
        let total: T = mu.iter().copied().sum();
        if (total - T::one()).abs() > T::tol(1e-10) {
            return Err(Error::contract(format!("mu sums to {total}, not 1")));
        }
        Ok(())
    }

    /// `Tr(V^{-1} Λ(π))` for every label.
    fn gradient(&self, vinv: &Matrix<T>) -> Vec<T> {
        if self.len() >= PARALLEL_LABELS {
            self.matrices.par_iter().map(|m| vinv.trace_product(m)).collect()
        } else {
            self.matrices.iter().map(|m| vinv.trace_product(m)).collect()
        }
    }
}

/// One Frank-Wolfe iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignStep {
    pub iteration: usize,
    pub g: f64,
    pub log_det: f64,
    /// Label moved toward (the gradient argmax), and the step length taken.
    pub label: usize,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DesignResult<T: Real> {
    pub mu: Vec<T>,
    /// `V(μ) + ridge·I`.
    pub v: Matrix<T>,
    pub g: T,
    pub iterations: usize,
    pub converged: bool,
    /// Dimension the certificate is measured against: `d`, or the span's rank when deficient.
    pub effective_dim: usize,
    pub span_deficient: bool,
    pub trace: Vec<DesignStep>,
}

const SINGULAR_REL_TOL: f64 = 1e-12;

/// `V^{-1}`. Without a ridge, a numerically singular `V` is an error rather than jittered.
fn inverse_of<T: Real>(v: &Matrix<T>, ridge: T) -> Result<Matrix<T>> {
    if ridge == T::zero() {
        let eig = SymmetricEigen::new(v);
        if eig.min() <= T::tol(SINGULAR_REL_TOL) * eig.max().abs() {
            return Err(Error::Singular {
                context: "design covariance V(mu)".into(),
                direction: eig.vector(0).iter().map(|x| x.as_f64()).collect(),
            });
        }
    }
    Ok(cholesky_with_jitter(v, "design covariance V(mu)")?.0.inverse())
}

/// `g(μ) = max_π Tr(V(μ)^{-1} Λ(π))`.
pub fn g_value<T: Real>(mu: &[T], problem: &DesignProblem<T>) -> Result<T> {
    problem.check_mu(mu)?;
    let vinv = inverse_of(&problem.covariance(mu), problem.ridge)?;
    let grad = problem.gradient(&vinv);
    Ok(grad[argmax_first(&grad).expect("nonempty problem")])
}

/// Frank-Wolfe ascent on `log det V(μ)` from the uniform distribution, with
/// golden-section line search, until `g(μ) ≤ d(1 + tol)` or `max_iter` steps.
pub fn solve_design<T: Real>(problem: &DesignProblem<T>, tol: T, max_iter: usize) -> Result<DesignResult<T>> {
    problem.validate()?;
    let d = problem.dim();
    let n = problem.len();
    let mut span = problem.mixture(&vec![T::one(); n]);
    span = span.scaled(T::one() / T::from_count(n));
    let rank = psd_rank(&span, T::tol(SPAN_REL_TOL));
    let span_deficient = rank < d;
    if span_deficient {
        if problem.ridge == T::zero() {
            return Err(Error::Span { dim: d, rank });
        }
        log::info!("design atoms span only rank {rank} of {d}; certificate uses the effective rank");
    }
    let target = T::from_count(rank) * (T::one() + tol);

    let mut mu = vec![T::one() / T::from_count(n); n];
    let mut vmu = problem.mixture(&mu);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut g;
    loop {
        let mut v = vmu.clone();
        v.add_diag(problem.ridge);
        let vinv = inverse_of(&v, problem.ridge)?;
        let grad = problem.gradient(&vinv);
        let best = argmax_first(&grad).expect("nonempty problem");
        g = grad[best];
        let log_det = log_det_or_neg_inf(&v);
        if g <= target {
            converged = true;
            trace.push(step(iterations, g, log_det, best, T::zero()));
            break;
        }
        if iterations >= max_iter {
            trace.push(step(iterations, g, log_det, best, T::zero()));
            break;
        }
        let atom = &problem.matrices[best];
        let objective = |gamma: T| {
            let mut m = vmu.scaled(T::one() - gamma);
            m.add_scaled(gamma, atom);
            m.add_diag(problem.ridge);
            log_det_or_neg_inf(&m)
        };
        let gamma = golden_section(objective, LINE_SEARCH_EVALS);
        if !(objective(gamma) > log_det) {
            trace.push(step(iterations, g, log_det, best, T::zero()));
            log::debug!("design line search stalled at iteration {iterations}");
            break;
        }
        trace.push(step(iterations, g, log_det, best, gamma));
        for w in mu.iter_mut() {
            *w *= T::one() - gamma;
        }
        mu[best] += gamma;
        vmu = vmu.scaled(T::one() - gamma);
        vmu.add_scaled(gamma, atom);
        iterations += 1;
    }
    let total: T = mu.iter().copied().sum();
    for w in mu.iter_mut() {
        *w /= total;
    }
    let v = problem.covariance(&mu);
    Ok(DesignResult {
        mu,
        v,
        g,
        iterations,
        converged,
        effective_dim: rank,
        span_deficient,
        trace,
    })
}

fn step<T: Real>(iteration: usize, g: T, log_det: T, label: usize, gamma: T) -> DesignStep {
    DesignStep {
        iteration,
        g: g.as_f64(),
        log_det: log_det.as_f64(),
        label,
        gamma: gamma.as_f64(),
    }
}

/// Maximizer of a unimodal function on `[0, 1]` using `evals` function evaluations.
fn golden_section<T: Real>(f: impl Fn(T) -> T, evals: usize) -> T {
    let ratio = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let (mut lo, mut hi) = (T::zero(), T::one());
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 2..evals {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        x1
    } else {
        x2
    }
}

/// Calls `visit` on every point of the simplex grid with spacing `1/k` over `n` labels.
fn for_each_grid_point<T: Real>(n: usize, k: usize, mut visit: impl FnMut(&[T])) {
    let mut counts = vec![0usize; n];
    counts[n - 1] = k;
    let scale = T::one() / T::from_count(k);
    loop {
        let mu: Vec<T> = counts.iter().map(|&c| T::from_count(c) * scale).collect();
        visit(&mu);
        // Next composition of k into n parts, in lexicographic order.
        let Some(i) = (0..n - 1).rev().find(|&i| counts[i + 1..].iter().any(|&c| c > 0)) else {
            return;
        };
        counts[i] += 1;
        let rest: usize = k - counts[..=i].iter().sum::<usize>();
        for c in counts[i + 1..].iter_mut() {
            *c = 0;
        }
        counts[n - 1] = rest;
    }
}

fn grid_steps(grid_step: f64) -> Result<usize> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::contract("grid step must lie in (0, 1]"));
    }
    Ok((1.0 / grid_step).round().max(1.0) as usize)
}

/// Exhaustive simplex-grid search for the `g`-minimizing design (at most 4 labels).
pub fn brute_force_design<T: Real>(problem: &DesignProblem<T>, grid_step: f64) -> Result<DesignResult<T>> {
    problem.validate()?;
    let n = problem.len();
    if n > 4 {
        return Err(Error::Size(format!(
            "brute-force design supports at most 4 labels, got {n}"
        )));
    }
    let k = grid_steps(grid_step)?;
    let mut best: Option<(T, Vec<T>)> = None;
    for_each_grid_point::<T>(n, k, |mu| {
        let Ok(vinv) = inverse_of(&problem.covariance(mu), problem.ridge) else {
            return;
        };
        let grad = problem.gradient(&vinv);
        let g = grad[argmax_first(&grad).expect("nonempty")];
        if best.as_ref().is_none_or(|(b, _)| g < *b) {
            best = Some((g, mu.to_vec()));
        }
    });
    let (g, mu) = best.ok_or(Error::Span {
        dim: problem.dim(),
        rank: psd_rank(&problem.mixture(&vec![T::one(); n]), T::tol(SPAN_REL_TOL)),
    })?;
    let d = problem.dim();
    Ok(DesignResult {
        v: problem.covariance(&mu),
        mu,
        g,
        iterations: 0,
        converged: g <= T::from_count(d) * (T::one() + T::lit(DEFAULT_TOL)),
        effective_dim: d,
        span_deficient: false,
        trace: Vec::new(),
    })
}

/// `max_μ λ_min(Σ_π μ(π) Λ(π))` over a simplex grid, with the best grid point.
pub fn grid_lambda_star<T: Real>(matrices: &[Matrix<T>], grid_step: f64) -> Result<(T, Vec<T>)> {
    let n = matrices.len();
    if n == 0 {
        return Err(Error::contract("need at least one matrix"));
    }
    if n > 4 {
        return Err(Error::Size(format!("grid search supports at most 4 matrices, got {n}")));
    }
    let k = grid_steps(grid_step)?;
    let d = matrices[0].rows();
    let mut best: Option<(T, Vec<T>)> = None;
    for_each_grid_point::<T>(n, k, |mu| {
        let mut v = Matrix::zeros(d, d);
        for (w, m) in mu.iter().zip(matrices) {
            v.add_scaled(*w, m);
        }
        let lam = min_eigenvalue(&v);
        if best.as_ref().is_none_or(|(b, _)| lam > *b) {
            best = Some((lam, mu.to_vec()));
        }
    });
    Ok(best.expect("grid is nonempty"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinEigCheck {
    pub holds: bool,
    /// `λ_min(V(μ)) − λ*/d`.
    pub margin: f64,
    pub lambda_min: f64,
}

/// Whether `λ_min(V(μ)) ≥ λ*/d − tol` (ridge excluded).
pub fn check_min_eig_bound<T: Real>(problem: &DesignProblem<T>, mu: &[T], lambda_star: T, tol: T) -> MinEigCheck {
    let lambda_min = min_eigenvalue(&problem.mixture(mu));
    let margin = lambda_min - lambda_star / T::from_count(problem.dim());
    MinEigCheck {
        holds: margin >= -tol,
        margin: margin.as_f64(),
        lambda_min: lambda_min.as_f64(),
    }
}
