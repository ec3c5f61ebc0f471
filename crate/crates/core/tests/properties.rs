use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfx::design::{g_value, solve_design, DesignProblem};
use rfx::explorer::{explore, ExploreConfig, ExploreMode, SimulatedEnv};
use rfx::harness::{best_in_set, sample_linear_rewards};
use rfx::linalg::{Cholesky, Matrix, SymmetricEigen};
use rfx::lsvi::{estimate_cov, estimate_v, Dataset};
use rfx::mdp::{
    derive_seed, dp_optimal, dp_policy_value, generate_random_linear_mdp, validate, FeatureStyle, LinearMdp,
    RandomMdpSpec, Rollout, TabularMdp,
};
use rfx::planner::plan_many;
use rfx::policy::{build_eval_set, enumerate_tabular_policies, MixturePolicy, DEFAULT_ENUMERATION_CAP};

fn psd(d: usize, seed: u64) -> Matrix<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(d, d);
    for _ in 0..d + 1 {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.add_outer(1.0 / (d + 1) as f64, &v);
    }
    m
}

fn random_mdp(d: usize, states: usize, actions: usize, horizon: usize, seed: u64) -> LinearMdp<f64> {
    let spec = RandomMdpSpec {
        d,
        num_states: states,
        num_actions: actions,
        horizon,
        style: FeatureStyle::Simplex,
    };
    generate_random_linear_mdp(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn uniform_data(mdp: &LinearMdp<f64>, n: usize, seed: u64) -> Dataset<f64> {
    let f = mdp.features();
    let pols = (0..f.num_actions())
        .map(|a| rfx::policy::DeterministicPolicy::from_tables(vec![vec![a; f.num_states()]; mdp.horizon()]))
        .collect();
    let mix = MixturePolicy::uniform(pols).unwrap();
    let roll = Rollout::new(mdp, &mix).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::new(mdp.shared_features(), mdp.horizon(), mdp.initial_state());
    data.extend((0..n).map(|i| roll.sample(&mut rng, i % mdp.horizon())))
        .unwrap();
    data
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cholesky_solves_spd_systems(d in 1usize..6, seed in any::<u64>()) {
        let mut a = psd(d, seed);
        a.add_diag(0.1);
        let chol = Cholesky::new(&a).unwrap();
        let b: Vec<f64> = (0..d).map(|i| i as f64 - 1.0).collect();
        let x = chol.solve(&b);
        for i in 0..d {
            let r: f64 = (0..d).map(|j| a[(i, j)] * x[j]).sum::<f64>() - b[i];
            prop_assert!(r.abs() < 1e-9);
        }
    }

    #[test]
    fn eigenvalues_are_ascending_and_reconstruct(d in 1usize..6, seed in any::<u64>()) {
        let a = psd(d, seed);
        let eig = SymmetricEigen::new(&a);
        prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        let mut rebuilt = Matrix::zeros(d, d);
        for k in 0..d {
            rebuilt.add_outer(eig.values[k], &eig.vector(k));
        }
        prop_assert!(rebuilt.sub(&a).max_abs() < 1e-9);
        prop_assert!(eig.values[0] > -1e-12);
    }

    #[test]
    fn g_is_at_least_d_and_the_solver_certifies(d in 2usize..5, labels in 2usize..8, seed in any::<u64>()) {
        let mats: Vec<Matrix<f64>> = (0..labels).map(|k| psd(d, derive_seed(seed, &[k as u64]))).collect();
        let p = DesignProblem::from_matrices(mats, 0.0).unwrap();
        let uniform = vec![1.0 / labels as f64; labels];
        prop_assert!(g_value(&uniform, &p).unwrap() >= d as f64 - 1e-9);
        let res = solve_design(&p, 0.05, 2000).unwrap();
        prop_assert!(res.g <= d as f64 * 1.05 + 1e-12);
        prop_assert!((res.mu.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(res.mu.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn min_eigenvalue_is_concave_over_mixtures(d in 2usize..5, seed in any::<u64>(), t in 0.0f64..1.0) {
        let a = psd(d, seed);
        let b = psd(d, seed ^ 1);
        let mut mix = a.scaled(t);
        mix.add_scaled(1.0 - t, &b);
        let lmin = |m: &Matrix<f64>| SymmetricEigen::new(m).values[0];
        prop_assert!(lmin(&mix) >= t * lmin(&a) + (1.0 - t) * lmin(&b) - 1e-12);
    }

    #[test]
    fn generated_mdps_validate(d in 2usize..4, states in 2usize..6, actions in 1usize..4, horizon in 1usize..4, seed in any::<u64>()) {
        let mdp = random_mdp(d, states.max(d), actions, horizon, seed);
        prop_assert!(validate(&mdp).is_valid());
        let tab = TabularMdp::<f64>::random(states, actions, horizon, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(validate(&tab.to_linear().unwrap()).is_valid());
    }

    #[test]
    fn estimates_respect_bounds_and_shrinking_uncertainty(seed in any::<u64>(), n in 20usize..200) {
        let mdp = random_mdp(3, 5, 2, 3, seed);
        let data = uniform_data(&mdp, n, seed ^ 7);
        let model = data.model();
        let smaller = data.truncated(1).unwrap().model();
        let rewards = sample_linear_rewards(&mdp, 2, seed).unwrap();
        let set = build_eval_set(mdp.features(), 3, 0.5, 8, seed).unwrap();
        for p in set.iter().take(10) {
            for r in &rewards {
                let e = estimate_v(&model, &p, r).unwrap();
                prop_assert!((0.0..=3.0).contains(&e.value));
                prop_assert!(e.trace.bounds_hold(0.0));
            }
            let cov = estimate_cov(&model, &p, 2).unwrap();
            prop_assert!(cov.is_symmetric(0.0));
        }
        let f = mdp.features();
        for h in 0..3 {
            for s in 0..f.num_states() {
                for a in f.valid_actions(s) {
                    prop_assert!(model.uncertainty(h, f.phi(s, a)) <= smaller.uncertainty(h, f.phi(s, a)) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn planning_is_greedy_and_reward_free(seed in any::<u64>()) {
        let mdp = random_mdp(3, 4, 2, 3, seed);
        let data = uniform_data(&mdp, 120, seed);
        let set = build_eval_set(mdp.features(), 3, 0.5, 10, seed).unwrap();
        let rewards = sample_linear_rewards(&mdp, 3, seed).unwrap();
        let before = data.checksum();
        let plans = plan_many(&data, &rewards, &set).unwrap();
        prop_assert_eq!(data.checksum(), before);
        for (plan, r) in plans.iter().zip(&rewards) {
            prop_assert!(plan.estimates.iter().all(|e| e.value <= plan.estimated_value));
            let first = plan.estimates.iter().find(|e| e.value == plan.estimated_value).unwrap();
            prop_assert_eq!(first.index, plan.chosen_index);
            let best = best_in_set(&mdp, &set, r).unwrap().value;
            let opt = dp_optimal(&mdp, r).unwrap().value;
            let chosen = dp_policy_value(&mdp, &plan.chosen, r).unwrap();
            prop_assert!(chosen <= best + 1e-12 && best <= opt + 1e-12);
        }
    }

    #[test]
    fn explore_is_compliant_and_seed_deterministic(seed in any::<u64>(), n in 10usize..80) {
        let tab = TabularMdp::<f64>::random(2, 2, 2, &mut ChaCha8Rng::seed_from_u64(seed)).to_linear().unwrap();
        let f = tab.features();
        let set = enumerate_tabular_policies::<f64>(2, 2, 2, f.mask(), DEFAULT_ENUMERATION_CAP).unwrap();
        let config = ExploreConfig {
            n_override: Some(n),
            threshold_scale: 0.0,
            mode: ExploreMode::Tabular,
            ..ExploreConfig::default()
        };
        let go = || {
            let mut env = SimulatedEnv::new(&tab, seed).unwrap();
            explore(&mut env, tab.shared_features(), 2, 0, &config, &set).unwrap()
        };
        let a = go();
        prop_assert!(a.log.is_compliant(2));
        prop_assert_eq!(a.dataset.len(), 2 * n);
        prop_assert_eq!(a.dataset.checksum(), go().dataset.checksum());
    }
}

#[test]
fn single_precision_matches_double_precision() {
    let spec = RandomMdpSpec {
        d: 3,
        num_states: 4,
        num_actions: 2,
        horizon: 2,
        style: FeatureStyle::Simplex,
    };
    let m64: LinearMdp<f64> = generate_random_linear_mdp(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let m32: LinearMdp<f32> = LinearMdp::from_json(&m64.to_json().unwrap()).unwrap();
    let r64 = sample_linear_rewards(&m64, 1, 2).unwrap().remove(0);
    let r32 = sample_linear_rewards(&m32, 1, 2).unwrap().remove(0);
    let v64 = dp_optimal(&m64, &r64).unwrap().value;
    let v32 = dp_optimal(&m32, &r32).unwrap().value;
    assert!((v64 - v32 as f64).abs() < 1e-4);
}
