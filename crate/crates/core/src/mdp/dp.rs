use super::{LinearMdp, RewardFunction};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::policy::{ActionTable, DeterministicPolicy, PolicyLike};
use crate::scalar::Real;

const REWARD_TOL: f64 = 1e-9;

/// Optimal value, one optimal policy, and the full `Q*`/`V*` tables.
#[derive(Clone, Debug)]
pub struct DpSolution<T: Real> {
    pub value: T,
    pub policy: DeterministicPolicy<T>,
    /// `q[h][s·A + a]`; masked pairs hold `-inf`.
    pub q: Vec<Vec<T>>,
    /// `v[h][s]`, with `v[H]` all zero.
    pub v: Vec<Vec<T>>,
}

fn check_reward<T: Real>(mdp: &LinearMdp<T>, reward: &RewardFunction<T>) -> Result<()> {
    if reward.horizon() != mdp.horizon() {
        return Err(Error::contract(format!(
            "reward has {} layers, MDP has {}",
            reward.horizon(),
            mdp.horizon()
        )));
    }
    reward.check_range(mdp.features(), T::tol(REWARD_TOL))
}

pub(crate) fn resolve_for<T: Real, P: PolicyLike<T> + ?Sized>(
    mdp: &LinearMdp<T>,
    policy: &P,
) -> Result<Vec<(T, ActionTable)>> {
    let parts = policy.resolve(mdp.features())?;
    if let Some((_, t)) = parts.iter().find(|(_, t)| t.horizon() != mdp.horizon()) {
        return Err(Error::contract(format!(
            "policy has {} layers, MDP has {}",
            t.horizon(),
            mdp.horizon()
        )));
    }
    Ok(parts)
}

/// `V^π_h(s)` for every layer, `v[H] = 0`.
pub(crate) fn table_values<T: Real>(
    mdp: &LinearMdp<T>,
    table: &ActionTable,
    reward: &RewardFunction<T>,
) -> Vec<Vec<T>> {
    let n = mdp.num_states();
    let horizon = mdp.horizon();
    let f = mdp.features();
    let mut v = vec![vec![T::zero(); n]; horizon + 1];
    for h in (0..horizon).rev() {
        for s in 0..n {
            let a = table.action(h, s);
            let next: T = mdp
                .transition_row(h, s, a)
                .iter()
                .zip(&v[h + 1])
                .map(|(&p, &x)| p * x)
                .sum();
            v[h][s] = reward.value(f, h, s, a) + next;
        }
    }
    v
}

/// Exact `V^π(r)` from the initial state; mixtures average component values.
pub fn dp_policy_value<T: Real, P: PolicyLike<T> + ?Sized>(
    mdp: &LinearMdp<T>,
    policy: &P,
    reward: &RewardFunction<T>,
) -> Result<T> {
    check_reward(mdp, reward)?;
    let s0 = mdp.initial_state();
    Ok(resolve_for(mdp, policy)?
        .iter()
        .map(|(w, t)| *w * table_values(mdp, t, reward)[0][s0])
        .sum())
}

/// Backward induction for `V*`; ties go to the lowest action index.
pub fn dp_optimal<T: Real>(mdp: &LinearMdp<T>, reward: &RewardFunction<T>) -> Result<DpSolution<T>> {
    check_reward(mdp, reward)?;
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let horizon = mdp.horizon();
    let f = mdp.features();
    let mut v = vec![vec![T::zero(); n]; horizon + 1];
    let mut q = vec![vec![T::neg_infinity(); n * na]; horizon];
    let mut tables = vec![vec![0usize; n]; horizon];
    for h in (0..horizon).rev() {
        for s in 0..n {
            let mut best: Option<(usize, T)> = None;
            for a in f.valid_actions(s) {
                let next: T = mdp
                    .transition_row(h, s, a)
                    .iter()
                    .zip(&v[h + 1])
                    .map(|(&p, &x)| p * x)
                    .sum();
                let value = reward.value(f, h, s, a) + next;
                q[h][s * na + a] = value;
                if best.is_none_or(|(_, b)| value > b) {
                    best = Some((a, value));
                }
            }
            let (a, value) = best.expect("every state has a valid action");
            tables[h][s] = a;
            v[h][s] = value;
        }
    }
    Ok(DpSolution {
        value: v[0][mdp.initial_state()],
        policy: DeterministicPolicy::from_tables(tables),
        q,
        v,
    })
}

/// Forward state-action occupancies `d_h(s,a)` at `[h][s·A + a]` for every layer.
pub fn layer_occupancies<T: Real>(mdp: &LinearMdp<T>, table: &ActionTable) -> Vec<Vec<T>> {
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let mut rho = vec![T::zero(); n];
    rho[mdp.initial_state()] = T::one();
    let mut out = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        let mut occ = vec![T::zero(); n * na];
        let mut next = vec![T::zero(); n];
        for s in 0..n {
            if rho[s] == T::zero() {
                continue;
            }
            let a = table.action(h, s);
            occ[s * na + a] += rho[s];
            for (sp, &p) in mdp.transition_row(h, s, a).iter().enumerate() {
                next[sp] += rho[s] * p;
            }
        }
        out.push(occ);
        rho = next;
    }
    out
}

/// `d_h^π(s,a)` at `s·A + a`.
pub fn dp_occupancy<T: Real, P: PolicyLike<T> + ?Sized>(mdp: &LinearMdp<T>, policy: &P, h: usize) -> Result<Vec<T>> {
    if h >= mdp.horizon() {
        return Err(Error::contract(format!("layer {h} out of range")));
    }
    let mut occ = vec![T::zero(); mdp.num_states() * mdp.num_actions()];
    for (w, t) in resolve_for(mdp, policy)? {
        for (o, x) in occ.iter_mut().zip(&layer_occupancies(mdp, &t)[h]) {
            *o += w * *x;
        }
    }
    Ok(occ)
}

/// `Λ_{π,h} = E_π[φ(s_h,a_h) φ(s_h,a_h)^T]`.
pub fn expected_feature_cov<T: Real, P: PolicyLike<T> + ?Sized>(
    mdp: &LinearMdp<T>,
    policy: &P,
    h: usize,
) -> Result<Matrix<T>> {
    let occ = dp_occupancy(mdp, policy, h)?;
    Ok(occupancy_cov(mdp, &occ))
}

pub(crate) fn occupancy_cov<T: Real>(mdp: &LinearMdp<T>, occ: &[T]) -> Matrix<T> {
    let f = mdp.features();
    let na = mdp.num_actions();
    let mut cov = Matrix::zeros(mdp.dim(), mdp.dim());
    for s in 0..mdp.num_states() {
        for a in 0..na {
            let p = occ[s * na + a];
            if p != T::zero() {
                cov.add_outer(p, f.phi(s, a));
            }
        }
    }
    cov
}

/// Both sides of the advantage decomposition:
/// `(V*(s₁) − V^π(s₁), Σ_h Σ_{s,a} d_h^π(s,a)(V*_h(s) − Q*_h(s,a)))`.
pub fn advantage_decomposition<T: Real, P: PolicyLike<T> + ?Sized>(
    mdp: &LinearMdp<T>,
    policy: &P,
    reward: &RewardFunction<T>,
) -> Result<(T, T)> {
    let opt = dp_optimal(mdp, reward)?;
    let lhs = opt.value - dp_policy_value(mdp, policy, reward)?;
    let na = mdp.num_actions();
    let mut rhs = T::zero();
    for (w, t) in resolve_for(mdp, policy)? {
        for (h, occ) in layer_occupancies(mdp, &t).iter().enumerate() {
            for s in 0..mdp.num_states() {
                let a = t.action(h, s);
                let p = occ[s * na + a];
                if p != T::zero() {
                    rhs += w * p * (opt.v[h][s] - opt.q[h][s * na + a]);
                }
            }
        }
    }
    Ok((lhs, rhs))
}
