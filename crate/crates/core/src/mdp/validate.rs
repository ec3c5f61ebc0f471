use std::fmt;

use serde::Serialize;

use super::LinearMdp;
use crate::scalar::{dot, norm2, Real};

const NORMALIZATION_TOL: f64 = 1e-8;
const RANGE_TOL: f64 = 1e-9;
const NORM_SLACK: f64 = 1e-6;

/// One broken invariant, with coordinates (0-based) and magnitude.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    FeatureNorm {
        s: usize,
        a: usize,
        norm: f64,
    },
    Normalization {
        h: usize,
        s: usize,
        a: usize,
        sum: f64,
    },
    TransitionRange {
        h: usize,
        s: usize,
        a: usize,
        next: usize,
        p: f64,
    },
    RewardRange {
        h: usize,
        s: usize,
        a: usize,
        r: f64,
    },
    MeasureNorm {
        h: usize,
        norm: f64,
        bound: f64,
    },
    ThetaNorm {
        h: usize,
        norm: f64,
        bound: f64,
    },
    NonFinite {
        what: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FeatureNorm { s, a, norm } => write!(f, "||phi({s},{a})|| = {norm} > 1"),
            Violation::Normalization { h, s, a, sum } => {
                write!(f, "normalization at (h={h},s={s},a={a}): sum_s' P = {sum}")
            }
            Violation::TransitionRange { h, s, a, next, p } => {
                write!(f, "P_{h}({next}|{s},{a}) = {p} outside [0,1]")
            }
            Violation::RewardRange { h, s, a, r } => write!(f, "r_{h}({s},{a}) = {r} outside [0,1]"),
            Violation::MeasureNorm { h, norm, bound } => {
                write!(f, "||mu_{h}(S)|| = {norm} > {bound}")
            }
            Violation::ThetaNorm { h, norm, bound } => write!(f, "||theta_{h}|| = {norm} > {bound}"),
            Violation::NonFinite { what } => write!(f, "non-finite values in {what}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every violated linear-MDP invariant. Masked actions are skipped.
pub fn validate<T: Real>(mdp: &LinearMdp<T>) -> ValidationReport {
    let mut violations = Vec::new();
    let f = mdp.features();
    let d = mdp.dim();
    let n = mdp.num_states();
    let norm_tol = T::tol(RANGE_TOL);
    let sum_tol = T::tol(NORMALIZATION_TOL);
    let bound = T::from_count(d).sqrt() + T::tol(NORM_SLACK);

    if f.rows().iter().flatten().any(|v| !v.is_finite()) {
        violations.push(Violation::NonFinite {
            what: "features".into(),
        });
    }
    for (h, mu) in mdp.measures().iter().enumerate() {
        if !mu.is_finite() {
            violations.push(Violation::NonFinite {
                what: format!("measure at layer {h}"),
            });
        }
    }
    if mdp.thetas().iter().flatten().any(|v| !v.is_finite()) {
        violations.push(Violation::NonFinite { what: "thetas".into() });
    }
    if !violations.is_empty() {
        return ValidationReport { violations };
    }

    for s in 0..n {
        for a in f.valid_actions(s) {
            let norm = norm2(f.phi(s, a));
            if norm > T::one() + norm_tol {
                violations.push(Violation::FeatureNorm {
                    s,
                    a,
                    norm: norm.as_f64(),
                });
            }
        }
    }

    for h in 0..mdp.horizon() {
        for s in 0..n {
            for a in f.valid_actions(s) {
                let row = mdp.transition_row(h, s, a);
                let sum: T = row.iter().copied().sum();
                if (sum - T::one()).abs() > sum_tol {
                    violations.push(Violation::Normalization {
                        h,
                        s,
                        a,
                        sum: sum.as_f64(),
                    });
                }
                for (next, &p) in row.iter().enumerate() {
                    if p < -norm_tol || p > T::one() + norm_tol {
                        violations.push(Violation::TransitionRange {
                            h,
                            s,
                            a,
                            next,
                            p: p.as_f64(),
                        });
                    }
                }
                let r = dot(f.phi(s, a), &mdp.thetas()[h]);
                if r < -norm_tol || r > T::one() + norm_tol {
                    violations.push(Violation::RewardRange { h, s, a, r: r.as_f64() });
                }
            }
        }

        let mu = &mdp.measures()[h];
        let row_sums: Vec<T> = (0..d).map(|k| mu.row(k).iter().copied().sum()).collect();
        let mu_norm = norm2(&row_sums);
        if mu_norm > bound {
            violations.push(Violation::MeasureNorm {
                h,
                norm: mu_norm.as_f64(),
                bound: bound.as_f64(),
            });
        }
        let theta_norm = norm2(&mdp.thetas()[h]);
        if theta_norm > bound {
            violations.push(Violation::ThetaNorm {
                h,
                norm: theta_norm.as_f64(),
                bound: bound.as_f64(),
            });
        }
    }

    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::mdp::{build_hard_instance, FeatureTable, LinearMdp};

    #[test]
    fn hard_instance_is_valid() {
        let arms = vec![vec![0.2, 0.9]; 3];
        let mdp = build_hard_instance::<f64>(4, 3, &arms).unwrap();
        assert!(validate(&mdp).is_valid(), "{:?}", validate(&mdp));
    }

    #[test]
    fn leaky_measure_flags_normalization_at_the_right_coordinates() {
        // One state, one action, canonical feature; mu puts 0.9 mass on s'.
        let f = FeatureTable::new(1, 1, vec![vec![1.0]]).unwrap();
        let mu = Matrix::from_rows(vec![vec![0.9]]).unwrap();
        let mdp = LinearMdp::new(f, vec![mu], vec![vec![0.5]], 0).unwrap();
        let report = validate(&mdp);
        assert_eq!(report.violations.len(), 1);
        match &report.violations[0] {
            Violation::Normalization { h, s, a, sum } => {
                assert_eq!((*h, *s, *a), (0, 0, 0));
                assert!((sum - 0.9).abs() < 1e-12);
            }
            v => panic!("unexpected violation {v}"),
        }
    }

    #[test]
    fn oversized_features_and_rewards_are_reported() {
        let f = FeatureTable::new(1, 1, vec![vec![1.5]]).unwrap();
        let mu = Matrix::from_rows(vec![vec![1.0 / 1.5]]).unwrap();
        let mdp = LinearMdp::new(f, vec![mu], vec![vec![1.0]], 0).unwrap();
        let report = validate(&mdp);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::FeatureNorm { .. })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::RewardRange { .. })));
    }

    #[test]
    fn non_finite_values_short_circuit() {
        let f = FeatureTable::new(1, 1, vec![vec![1.0]]).unwrap();
        let mu = Matrix::from_rows(vec![vec![f64::NAN]]).unwrap();
        let mdp = LinearMdp::new(f, vec![mu], vec![vec![0.0]], 0).unwrap();
        let report = validate(&mdp);
        assert!(matches!(report.violations[0], Violation::NonFinite { .. }));
    }
}
