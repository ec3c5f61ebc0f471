//! Experiment orchestration: instance, sets, exploration, planning, oracle checks, reports.

pub mod instances;
pub mod oracle;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explorer::{explore, DeploymentLog, ExploreConfig, ExploreMode, ObjectiveDiagnostics, SimulatedEnv};
use crate::lsvi::{estimate_v, Dataset};
use crate::mdp::{dp_optimal, dp_policy_value, LinearMdp, RewardFunction};
use crate::planner::plan_many;
use crate::policy::{
    build_eval_set, build_exp_set, enumerate_tabular_policies, ExpSetOptions, PolicySet, DEFAULT_ENUMERATION_CAP,
};
use crate::scalar::Real;

pub use instances::InstanceSpec;
pub use oracle::{
    best_in_set, explorability, sample_linear_rewards, uncertainty_trace, BestInSet, ExplorabilityReport,
    UncertaintyTrace,
};

pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RFX_OUT_DIR";

fn schema_version() -> u32 {
    EXPERIMENT_SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub instance: InstanceSpec,
    #[serde(default)]
    pub explore: ExploreConfig,
    #[serde(default)]
    pub sets: SetSpec,
    pub rewards: RewardSpec,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub checks: Checks,
    /// Output directory; falls back to `RFX_OUT_DIR`, then no files are written.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    /// Every deterministic tabular policy, used as both the evaluation and exploration set.
    TabularEnum,
    /// Evaluation net and its exploration superset; `explore.exp_budget` sizes the latter.
    Nets {
        eval_budget: usize,
        /// Net resolution; defaults to `explore.epsilon`.
        #[serde(default)]
        resolution: Option<f64>,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_wishart")]
        wishart_draws: usize,
    },
}

fn default_wishart() -> usize {
    256
}

impl Default for SetSpec {
    fn default() -> Self {
        SetSpec::Nets {
            eval_budget: 100,
            resolution: None,
            seed: 0,
            wishart_draws: default_wishart(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardSpec {
    /// `count` draws of `θ_h ~ U[0,1]^d`, shared by every seed.
    Random { count: usize, seed: u64 },
    /// The instance's own reward.
    Instance,
    /// Explicit per-layer `θ` vectors, one list per reward.
    Explicit { thetas: Vec<Vec<Vec<f64>>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Checks {
    /// Exact best-in-set value and the gap decomposition.
    pub best_in_set: bool,
    pub uncertainty_trace: bool,
    /// Lower bound on `λ*` and the small-`ε` condition.
    pub explorability: bool,
    /// Policies probed per layer by the trace and the explorability report.
    pub probe_limit: usize,
    /// Write datasets and compact logs per seed.
    pub artifacts: bool,
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            best_in_set: true,
            uncertainty_trace: true,
            explorability: false,
            probe_limit: 2000,
            artifacts: true,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != EXPERIMENT_SCHEMA_VERSION {
            return Err(Error::model(format!(
                "unsupported experiment schema version {}",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::contract("experiment needs at least one seed"));
        }
        if let InstanceSpec::File { path } = &self.instance {
            if !Path::new(path).is_file() {
                return Err(Error::contract(format!("instance file {path} does not exist")));
            }
        }
        if let RewardSpec::Random { count: 0, .. } = self.rewards {
            return Err(Error::contract("reward count must be positive"));
        }
        self.explore.validate()
    }

    /// Configured output directory, else `RFX_OUT_DIR`.
    pub fn output_dir(&self) -> Option<PathBuf> {
        self.output
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
    }
}

/// Evaluation and exploration sets for an instance.
pub fn build_sets<T: Real>(
    mdp: &LinearMdp<T>,
    spec: &SetSpec,
    config: &ExploreConfig,
) -> Result<(PolicySet<T>, PolicySet<T>)> {
    let f = mdp.features();
    match spec {
        SetSpec::TabularEnum => {
            let set = enumerate_tabular_policies(
                f.num_states(),
                f.num_actions(),
                mdp.horizon(),
                f.mask(),
                DEFAULT_ENUMERATION_CAP,
            )?;
            Ok((set.clone(), set))
        }
        SetSpec::Nets {
            eval_budget,
            resolution,
            seed,
            wishart_draws,
        } => {
            let eps = resolution.unwrap_or(config.epsilon);
            let eval = build_eval_set(f, mdp.horizon(), eps, *eval_budget, *seed)?;
            let options = ExpSetOptions {
                eval_set: Some(eval.clone()),
                wishart_draws: *wishart_draws,
                extra_sigmas: Vec::new(),
            };
            let exp = build_exp_set(f, mdp.horizon(), eps, config.exp_budget, *seed, &options)?;
            Ok((eval, exp))
        }
    }
}

pub fn build_rewards<T: Real>(mdp: &LinearMdp<T>, spec: &RewardSpec) -> Result<Vec<RewardFunction<T>>> {
    let rewards = match spec {
        RewardSpec::Random { count, seed } => sample_linear_rewards(mdp, *count, *seed)?,
        RewardSpec::Instance => vec![mdp.reward()],
        RewardSpec::Explicit { thetas } => thetas
            .iter()
            .map(|r| RewardFunction::linear(r.iter().map(|t| t.iter().map(|&x| T::lit(x)).collect()).collect()))
            .collect(),
    };
    for r in &rewards {
        if r.horizon() != mdp.horizon() {
            return Err(Error::contract("reward horizon does not match the instance"));
        }
        r.check_range(mdp.features(), T::tol(1e-9))?;
    }
    Ok(rewards)
}

/// One `(seed, reward)` pair. Per-layer quantities are `;`-joined.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub seed: u64,
    pub reward_id: usize,
    /// `ok` or `failed`.
    pub status: String,
    /// Stage that failed, empty on success.
    pub stage: String,
    pub error: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub d: usize,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    pub deployments: usize,
    pub episodes: usize,
    pub v_star: Option<f64>,
    pub v_chosen: Option<f64>,
    pub gap: Option<f64>,
    pub chosen_index: Option<u128>,
    pub estimated_value: Option<f64>,
    pub best_in_set: Option<f64>,
    pub best_in_set_gap: Option<f64>,
    pub err_chosen: Option<f64>,
    pub err_best: Option<f64>,
    /// `gap ≤ err_chosen + err_best + best_in_set_gap`.
    pub decomposition_holds: Option<bool>,
    pub unc_before: String,
    pub unc_after: String,
    pub unc_monotone: Option<bool>,
    pub design_g: String,
    pub lambda_min: String,
    pub margin: String,
    pub beta: String,
    pub chose_uniform: String,
    pub objective: String,
    pub checksum: String,
    pub reward_free: Option<bool>,
    /// Largest `‖w̄‖` over its norm bound seen while exploring and planning.
    pub weight_ratio: Option<f64>,
}

impl ReportRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub pairs: usize,
    pub median: f64,
    pub max: f64,
    /// Fraction of pairs with `gap ≤ 0.1·H`.
    pub within_tenth_h: f64,
}

impl GapStats {
    pub fn from_gaps(gaps: &[f64], horizon: usize) -> Self {
        if gaps.is_empty() {
            return GapStats::default();
        }
        let tol = 0.1 * horizon as f64;
        GapStats {
            pairs: gaps.len(),
            median: median(gaps),
            max: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            within_tenth_h: gaps.iter().filter(|&&g| g <= tol).count() as f64 / gaps.len() as f64,
        }
    }
}

/// Median, averaging the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: String,
    pub stage: String,
    pub deployments: usize,
    pub compliant: bool,
    pub checksum: String,
    pub uncertainty: Option<UncertaintyTrace>,
    pub diagnostics: Vec<ObjectiveDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub name: String,
    pub instance: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub d: usize,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    pub eval_set_size: Option<usize>,
    pub exp_set_size: Option<usize>,
    pub rows: usize,
    pub failed_rows: usize,
    pub gaps: GapStats,
    pub seeds: Vec<SeedSummary>,
    pub explorability: Option<ExplorabilityReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub explore_s: f64,
    pub plan_s: f64,
    pub oracle_s: f64,
    pub deployments_s: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub setup_s: f64,
    pub total_s: f64,
    pub seeds: Vec<SeedTiming>,
}

/// Rows, summary and timings of one spec. Runtimes live only in `timings`, so the rows
/// and the summary are reproducible byte for byte.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub summary: ExperimentSummary,
    pub timings: Timings,
}

impl ExperimentReport {
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| !r.ok())
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.gap).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(&self.rows)
    }

    /// Writes `report.csv`, `summary.json` and `timings.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.to_csv()?)?;
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&self.summary)? + "\n",
        )?;
        fs::write(
            dir.join("timings.json"),
            serde_json::to_string_pretty(&self.timings)? + "\n",
        )?;
        Ok(())
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Compact per-deployment log: diagnostics and the heaviest mixture components.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CompactLog<T: Real> {
    pub constants: crate::explorer::ExploreConstants,
    pub deployments: Vec<CompactEntry<T>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CompactEntry<T: Real> {
    pub layer: usize,
    pub episodes: usize,
    pub components: usize,
    pub top: Vec<(T, crate::policy::DeterministicPolicy<T>)>,
    pub diagnostics: ObjectiveDiagnostics,
}

pub const COMPACT_TOP: usize = 5;

impl<T: Real> CompactLog<T> {
    pub fn from_log(log: &DeploymentLog<T>) -> Self {
        let deployments = log
            .entries
            .iter()
            .map(|e| {
                let mut comps: Vec<_> = e.mixture.components().iter().enumerate().collect();
                comps.sort_by(|(i, a), (j, b)| {
                    b.weight
                        .partial_cmp(&a.weight)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(i.cmp(j))
                });
                CompactEntry {
                    layer: e.layer,
                    episodes: e.episodes,
                    components: comps.len(),
                    top: comps
                        .into_iter()
                        .take(COMPACT_TOP)
                        .map(|(_, c)| (c.weight, c.policy.clone()))
                        .collect(),
                    diagnostics: e.diagnostics.clone(),
                }
            })
            .collect();
        CompactLog {
            constants: log.constants.clone(),
            deployments,
        }
    }
}

struct Context<'a, T: Real> {
    spec: &'a ExperimentSpec,
    mdp: &'a LinearMdp<T>,
    eval: &'a PolicySet<T>,
    exp: &'a PolicySet<T>,
    rewards: &'a [RewardFunction<T>],
    n: usize,
    out: Option<PathBuf>,
}

struct SeedOutcome {
    rows: Vec<ReportRow>,
    summary: SeedSummary,
    timing: SeedTiming,
}

fn join<I: IntoIterator<Item = String>>(it: I) -> String {
    it.into_iter().collect::<Vec<_>>().join(";")
}

fn base_row<T: Real>(ctx: &Context<T>, seed: u64) -> ReportRow {
    ReportRow {
        seed,
        n: ctx.n,
        horizon: ctx.mdp.horizon(),
        d: ctx.mdp.dim(),
        num_states: ctx.mdp.num_states(),
        num_actions: ctx.mdp.num_actions(),
        status: "ok".into(),
        ..ReportRow::default()
    }
}

fn failed(ctx: &Context<impl Real>, seed: u64, stage: &str, err: &Error, timing: SeedTiming) -> SeedOutcome {
    log::warn!("seed {seed}: {stage} failed: {err}");
    let rows = (0..ctx.rewards.len())
        .map(|reward_id| ReportRow {
            reward_id,
            status: "failed".into(),
            stage: stage.into(),
            error: err.to_string(),
            ..base_row(ctx, seed)
        })
        .collect();
    SeedOutcome {
        rows,
        summary: SeedSummary {
            seed,
            status: "failed".into(),
            stage: stage.into(),
            deployments: 0,
            compliant: false,
            checksum: String::new(),
            uncertainty: None,
            diagnostics: Vec::new(),
        },
        timing,
    }
}

fn run_seed<T: Real>(ctx: &Context<T>, seed: u64) -> SeedOutcome {
    let mut timing = SeedTiming {
        seed,
        ..SeedTiming::default()
    };
    let mdp = ctx.mdp;
    let horizon = mdp.horizon();
    let mut config = ctx.spec.explore.clone();
    config.seed = seed;

    let start = Instant::now();
    let exploration = SimulatedEnv::new(mdp, seed).and_then(|mut env| {
        explore(
            &mut env,
            mdp.shared_features(),
            horizon,
            mdp.initial_state(),
            &config,
            ctx.exp,
        )
    });
    timing.explore_s = start.elapsed().as_secs_f64();
    let exploration = match exploration {
        Ok(x) => x,
        Err(e) => return failed(ctx, seed, "explore", &e, timing),
    };
    timing.deployments_s = exploration.log.entries.iter().map(|e| e.wall_time_s).collect();
    let data = &exploration.dataset;
    let log = &exploration.log;
    let checksum = data.checksum();

    if let Some(dir) = &ctx.out {
        if ctx.spec.checks.artifacts {
            if let Err(e) = write_artifacts(&dir.join(format!("seed-{seed}")), data, log) {
                return failed(ctx, seed, "artifacts", &e, timing);
            }
        }
    }

    let start = Instant::now();
    let plans = plan_many(data, ctx.rewards, ctx.eval);
    timing.plan_s = start.elapsed().as_secs_f64();
    let plans = match plans {
        Ok(p) => p,
        Err(e) => return failed(ctx, seed, "plan", &e, timing),
    };
    let reward_free = data.checksum() == checksum;

    let start = Instant::now();
    let trace = if ctx.spec.checks.uncertainty_trace {
        match uncertainty_trace(mdp, data, ctx.exp, ctx.spec.checks.probe_limit, seed) {
            Ok(t) => Some(t),
            Err(e) => return failed(ctx, seed, "uncertainty", &e, timing),
        }
    } else {
        None
    };
    let model = data.model();
    let diags: Vec<&ObjectiveDiagnostics> = log.entries.iter().map(|e| &e.diagnostics).collect();
    let fmt = |v: &[f64]| join(v.iter().map(|x| x.to_string()));
    let mut rows = Vec::with_capacity(plans.len());
    for (plan, reward) in plans.iter().zip(ctx.rewards) {
        let row = (|| -> Result<ReportRow> {
            let v_star = dp_optimal(mdp, reward)?.value.as_f64();
            let v_chosen = dp_policy_value(mdp, &plan.chosen, reward)?.as_f64();
            let est = plan.estimated_value.as_f64();
            let gap = v_star - v_chosen;
            let mut row = ReportRow {
                reward_id: plan.reward_id,
                deployments: log.deployments(),
                episodes: data.len(),
                v_star: Some(v_star),
                v_chosen: Some(v_chosen),
                gap: Some(gap),
                chosen_index: Some(plan.chosen_index),
                estimated_value: Some(est),
                err_chosen: Some((est - v_chosen).abs()),
                design_g: join(diags.iter().map(|d| d.design_g.to_string())),
                lambda_min: join(diags.iter().map(|d| d.lambda_min.to_string())),
                margin: join(diags.iter().map(|d| d.margin.to_string())),
                beta: join(diags.iter().map(|d| d.beta.to_string())),
                chose_uniform: join(diags.iter().map(|d| d.chose_uniform.to_string())),
                objective: join(diags.iter().map(|d| d.objective.to_string())),
                checksum: checksum.clone(),
                reward_free: Some(reward_free),
                weight_ratio: Some(
                    diags
                        .iter()
                        .map(|d| d.worst_weight_ratio)
                        .fold(plan.worst_weight_ratio, f64::max),
                ),
                ..base_row(ctx, seed)
            };
            if ctx.spec.checks.best_in_set {
                let best = best_in_set(mdp, ctx.eval, reward)?;
                let v_best = best.value.as_f64();
                let est_best = estimate_v(&model, &best.policy, reward)?.value.as_f64();
                let err_best = (v_best - est_best).abs();
                let err_chosen = (est - v_chosen).abs();
                let bis_gap = v_star - v_best;
                row.best_in_set = Some(v_best);
                row.best_in_set_gap = Some(bis_gap);
                row.err_best = Some(err_best);
                row.decomposition_holds = Some(gap <= err_chosen + err_best + bis_gap + 1e-12);
            }
            if let Some(t) = &trace {
                row.unc_before = fmt(&t.before);
                row.unc_after = fmt(&t.after);
                row.unc_monotone = Some(t.all_monotone());
            }
            Ok(row)
        })();
        match row {
            Ok(r) => rows.push(r),
            Err(e) => {
                log::warn!("seed {seed}, reward {}: oracle failed: {e}", plan.reward_id);
                rows.push(ReportRow {
                    reward_id: plan.reward_id,
                    status: "failed".into(),
                    stage: "oracle".into(),
                    error: e.to_string(),
                    deployments: log.deployments(),
                    episodes: data.len(),
                    checksum: checksum.clone(),
                    ..base_row(ctx, seed)
                })
            }
        }
    }
    timing.oracle_s = start.elapsed().as_secs_f64();
    SeedOutcome {
        rows,
        summary: SeedSummary {
            seed,
            status: "ok".into(),
            stage: String::new(),
            deployments: log.deployments(),
            compliant: log.is_compliant(horizon) && data.len() == horizon * ctx.n,
            checksum,
            uncertainty: trace,
            diagnostics: log.entries.iter().map(|e| e.diagnostics.clone()).collect(),
        },
        timing,
    }
}

/// Dataset (JSONL plus checksum sidecar) and compact log of one seed's exploration.
pub fn write_artifacts<T: Real>(dir: &Path, data: &Dataset<T>, log: &DeploymentLog<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    data.save_jsonl(&dir.join("dataset.jsonl"))?;
    fs::write(
        dir.join("log.json"),
        serde_json::to_string_pretty(&CompactLog::from_log(log))? + "\n",
    )?;
    Ok(())
}

/// Runs every seed of `spec` in parallel and, when an output directory is configured,
/// writes the report files and per-seed artifacts.
///
/// Setup failures (instance, sets, rewards) are errors; failures after that become
/// `failed` rows carrying the stage name.
pub fn run_experiment<T: Real>(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let total = Instant::now();
    spec.validate()?;
    let mdp: LinearMdp<T> = spec.instance.build()?;
    let config = &spec.explore;
    if config.mode == ExploreMode::Tabular && !mdp.features().is_canonical() {
        return Err(Error::contract("tabular mode needs canonical features"));
    }
    config.validate()?;
    let (eval, exp) = build_sets(&mdp, &spec.sets, config)?;
    let rewards = build_rewards(&mdp, &spec.rewards)?;
    let f = mdp.features();
    let n = config
        .constants(f.dim(), f.num_states(), f.num_actions(), mdp.horizon())?
        .n;
    let lambda = if spec.checks.explorability {
        let c = config.constants(f.dim(), f.num_states(), f.num_actions(), mdp.horizon())?;
        Some(explorability(
            &mdp,
            &exp,
            spec.checks.probe_limit,
            0,
            c.c4,
            config.epsilon,
        )?)
    } else {
        None
    };
    let out = spec.output_dir();
    let ctx = Context {
        spec,
        mdp: &mdp,
        eval: &eval,
        exp: &exp,
        rewards: &rewards,
        n,
        out: out.clone(),
    };
    let setup_s = total.elapsed().as_secs_f64();
    let outcomes: Vec<SeedOutcome> = spec.seeds.par_iter().map(|&s| run_seed(&ctx, s)).collect();

    let mut rows = Vec::new();
    let mut seeds = Vec::new();
    let mut timings = Vec::new();
    for o in outcomes {
        rows.extend(o.rows);
        seeds.push(o.summary);
        timings.push(o.timing);
    }
    let failed_rows = rows.iter().filter(|r| !r.ok()).count();
    let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap).collect();
    let summary = ExperimentSummary {
        schema_version: REPORT_SCHEMA_VERSION,
        name: spec.name.clone(),
        instance: spec.instance.label(),
        n,
        horizon: mdp.horizon(),
        d: mdp.dim(),
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
        eval_set_size: eval.len(),
        exp_set_size: exp.len(),
        rows: rows.len(),
        failed_rows,
        gaps: GapStats::from_gaps(&gaps, mdp.horizon()),
        seeds,
        explorability: lambda,
    };
    let report = ExperimentReport {
        rows,
        summary,
        timings: Timings {
            setup_s,
            total_s: total.elapsed().as_secs_f64(),
            seeds: timings,
        },
    };
    if let Some(dir) = out {
        report.write(&dir)?;
    }
    Ok(report)
}
