use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfx::design::{solve_design, DesignProblem};
use rfx::explorer::{explore, ExploreConfig, ExploreMode, SimulatedEnv};
use rfx::harness::{self, instances, CompactLog, ExperimentSpec, GapStats, SetSpec, OUT_DIR_ENV};
use rfx::lsvi::Dataset;
use rfx::mdp::{build_hard_instance, generate_random_linear_mdp, validate, FeatureStyle, RandomMdpSpec};
use rfx::planner::plan_many;
use rfx::policy::{build_eval_set, build_exp_set, enumerate_tabular_policies, ExpSetOptions, DEFAULT_ENUMERATION_CAP};
use rfx::{Error, Mdp, Reward, Set};
use serde::Serialize;

const USAGE_EXIT: u8 = 64;

#[derive(Parser)]
#[command(
    name = "rfx",
    version,
    about = "Reward-free exploration in linear MDPs with H deployments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a bundled, random or hard-instance MDP as JSON.
    GenerateMdp {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Bundled instance name (chain3, symmetric2, hard, random-linear).
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        /// Canonical features instead of the probability simplex.
        #[arg(long)]
        canonical: bool,
        /// Hard-instance arm rewards: one comma-separated list per layer, layers split by `/`.
        #[arg(long)]
        arms: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every linear-MDP invariant of an MDP file.
    Validate {
        #[arg(long)]
        mdp: PathBuf,
    },
    /// Run the H-deployment exploration phase.
    Explore {
        #[arg(long)]
        mdp: PathBuf,
        /// ExploreConfig JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Exploration set JSON; built from the config when omitted.
        #[arg(long)]
        exp_set: Option<PathBuf>,
        /// Evaluation-net budget used when building the exploration set.
        #[arg(long, default_value_t = 100)]
        eval_budget: usize,
        #[arg(long)]
        out_dataset: Option<PathBuf>,
        #[arg(long)]
        out_log: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plan on an exploration dataset for each reward in a file.
    Plan {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        mdp: PathBuf,
        /// JSON list of rewards, each a list of per-layer theta vectors.
        #[arg(long)]
        rewards: PathBuf,
        #[arg(long)]
        eval_set: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a generalized G-optimal design problem.
    Design {
        /// DesignProblem JSON (`labels`, `matrices`, `ridge`).
        #[arg(long, conflicts_with = "bundled")]
        problem: Option<PathBuf>,
        /// Bundled problem: `symmetric` (the d standard-basis projectors).
        #[arg(long)]
        bundled: Option<String>,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = rfx::design::DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment spec end to end.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory; overrides the spec and RFX_OUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the spec's seeds.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        seed: Option<Vec<u64>>,
    },
    /// Summarize a report CSV.
    Report {
        #[arg(long)]
        csv: PathBuf,
    },
    /// Build an evaluation net, exploration net, or full tabular enumeration.
    BuildSet {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, value_enum)]
        kind: SetKind,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 100)]
        budget: usize,
        #[arg(long, default_value_t = 300)]
        exp_budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Bundled,
    RandomLinear,
    Hard,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetKind {
    Eval,
    Exp,
    Tabular,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    /// Ran to completion but found problems (invalid MDP, all rows failed).
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(USAGE_EXIT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::GenerateMdp {
            kind,
            name,
            d,
            states,
            actions,
            horizon,
            canonical,
            arms,
            seed,
            out,
        } => {
            let mdp: Mdp = match kind {
                Kind::Bundled => {
                    let name = name.ok_or_else(|| Error::contract("--name is required for bundled instances"))?;
                    instances::bundled(&name)?
                }
                Kind::RandomLinear => {
                    let spec = RandomMdpSpec {
                        d,
                        num_states: states,
                        num_actions: actions,
                        horizon,
                        style: if canonical {
                            FeatureStyle::Canonical
                        } else {
                            FeatureStyle::Simplex
                        },
                    };
                    generate_random_linear_mdp(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?
                }
                Kind::Hard => {
                    let arms = match arms {
                        Some(text) => parse_arms(&text)?,
                        None => vec![vec![0.5; d.saturating_sub(2)]; horizon],
                    };
                    build_hard_instance(d, horizon, &arms)?
                }
            };
            emit(out.as_deref(), &mdp.to_json()?)
        }
        Command::Validate { mdp } => {
            let mdp = load_mdp_unchecked(&mdp)?;
            let report = validate(&mdp);
            if report.is_valid() {
                println!("valid");
                Ok(())
            } else {
                for v in &report.violations {
                    println!("{v}");
                }
                Err(Failure::Check(format!("{} violation(s)", report.violations.len())))
            }
        }
        Command::Explore {
            mdp,
            config,
            exp_set,
            eval_budget,
            out_dataset,
            out_log,
            seed,
        } => {
            let mdp = load_mdp(&mdp)?;
            let mut config: ExploreConfig = match config {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => ExploreConfig::default(),
            };
            config.seed = seed;
            config.validate()?;
            let exp = match exp_set {
                Some(p) => Set::from_json(&fs::read_to_string(p)?)?,
                None => {
                    let sets = if config.mode == ExploreMode::Tabular {
                        SetSpec::TabularEnum
                    } else {
                        SetSpec::Nets {
                            eval_budget,
                            resolution: None,
                            seed,
                            wishart_draws: 256,
                        }
                    };
                    harness::build_sets(&mdp, &sets, &config)?.1
                }
            };
            let mut env = SimulatedEnv::new(&mdp, seed)?;
            let run = explore(
                &mut env,
                mdp.shared_features(),
                mdp.horizon(),
                mdp.initial_state(),
                &config,
                &exp,
            )?;
            let dataset_path = out_path(out_dataset, "dataset.jsonl")?;
            run.dataset.save_jsonl(&dataset_path)?;
            let log_path = out_path(out_log, "log.json")?;
            fs::write(
                &log_path,
                serde_json::to_string_pretty(&CompactLog::from_log(&run.log))? + "\n",
            )?;
            println!(
                "{} deployments x {} episodes -> {}",
                run.log.deployments(),
                run.log.constants.n,
                dataset_path.display()
            );
            Ok(())
        }
        Command::Plan {
            dataset,
            mdp,
            rewards,
            eval_set,
            out,
        } => {
            let mdp = load_mdp(&mdp)?;
            let data = Dataset::load_jsonl(&dataset, mdp.shared_features(), mdp.horizon(), mdp.initial_state())?;
            let thetas: Vec<Vec<Vec<f64>>> = serde_json::from_str(&fs::read_to_string(rewards)?)?;
            let rewards: Vec<Reward> = thetas.into_iter().map(Reward::linear).collect();
            let set = Set::from_json(&fs::read_to_string(eval_set)?)?;
            let plans = plan_many(&data, &rewards, &set)?;
            #[derive(Serialize)]
            struct Chosen<'a> {
                reward_id: usize,
                chosen_index: u128,
                estimated_value: f64,
                chosen: &'a rfx::Policy,
                worst_weight_ratio: f64,
            }
            let out_rows: Vec<Chosen> = plans
                .iter()
                .map(|p| Chosen {
                    reward_id: p.reward_id,
                    chosen_index: p.chosen_index,
                    estimated_value: p.estimated_value,
                    chosen: &p.chosen,
                    worst_weight_ratio: p.worst_weight_ratio,
                })
                .collect();
            emit(out.as_deref(), &serde_json::to_string_pretty(&out_rows)?)
        }
        Command::Design {
            problem,
            bundled,
            d,
            tol,
            max_iter,
            out,
        } => {
            let problem: DesignProblem<f64> = match (problem, bundled.as_deref()) {
                (Some(p), _) => {
                    let p: DesignProblem<f64> = serde_json::from_str(&fs::read_to_string(p)?)?;
                    p.validate()?;
                    p
                }
                (None, Some("symmetric")) => symmetric_problem(d)?,
                (None, Some(other)) => return Err(Error::contract(format!("unknown bundled problem {other:?}")).into()),
                (None, None) => return Err(Error::contract("one of --problem or --bundled is required").into()),
            };
            let res = solve_design(&problem, tol, max_iter)?;
            #[derive(Serialize)]
            struct Out<'a> {
                g: f64,
                d: usize,
                bound: f64,
                certified: bool,
                mu: &'a [f64],
                iterations: usize,
                converged: bool,
            }
            let bound = res.effective_dim as f64 * (1.0 + tol);
            let text = serde_json::to_string_pretty(&Out {
                g: res.g,
                d: res.effective_dim,
                bound,
                certified: res.g <= bound,
                mu: &res.mu,
                iterations: res.iterations,
                converged: res.converged,
            })?;
            emit(out.as_deref(), &text)
        }
        Command::Run { spec, out, seed } => {
            let mut spec = ExperimentSpec::from_json(&fs::read_to_string(spec)?)?;
            if let Some(s) = seed {
                spec.seeds = s;
            }
            if out.is_some() {
                spec.output = out;
            }
            let report = harness::run_experiment::<f64>(&spec)?;
            if spec.output_dir().is_none() {
                print!("{}", report.to_csv()?);
            }
            let g = &report.summary.gaps;
            eprintln!(
                "{} rows ({} failed); median gap {:.4}, {:.1}% within 0.1H",
                report.summary.rows,
                report.summary.failed_rows,
                g.median,
                100.0 * g.within_tenth_h
            );
            if report.all_failed() {
                return Err(Failure::Check("every row failed".into()));
            }
            Ok(())
        }
        Command::Report { csv } => {
            let rows = harness::rows_from_csv(&fs::read_to_string(csv)?)?;
            let horizon = rows.first().map_or(0, |r| r.horizon);
            let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap).collect();
            #[derive(Serialize)]
            struct Out {
                rows: usize,
                failed: usize,
                seeds: usize,
                compliant: bool,
                decomposition_holds: bool,
                uncertainty_monotone: bool,
                gaps: GapStats,
            }
            let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
            seeds.dedup();
            let ok: Vec<_> = rows.iter().filter(|r| r.ok()).collect();
            let text = serde_json::to_string_pretty(&Out {
                rows: rows.len(),
                failed: rows.len() - ok.len(),
                seeds: seeds.len(),
                compliant: ok
                    .iter()
                    .all(|r| r.deployments == r.horizon && r.episodes == r.horizon * r.n),
                decomposition_holds: ok.iter().all(|r| r.decomposition_holds != Some(false)),
                uncertainty_monotone: ok.iter().all(|r| r.unc_monotone != Some(false)),
                gaps: GapStats::from_gaps(&gaps, horizon),
            })?;
            println!("{text}");
            Ok(())
        }
        Command::BuildSet {
            mdp,
            kind,
            epsilon,
            budget,
            exp_budget,
            seed,
            out,
        } => {
            let mdp = load_mdp(&mdp)?;
            let f = mdp.features();
            let set: Set = match kind {
                SetKind::Eval => build_eval_set(f, mdp.horizon(), epsilon, budget, seed)?,
                SetKind::Exp => {
                    let eval = build_eval_set(f, mdp.horizon(), epsilon, budget, seed)?;
                    let options = ExpSetOptions {
                        eval_set: Some(eval),
                        ..ExpSetOptions::default()
                    };
                    build_exp_set(f, mdp.horizon(), epsilon, exp_budget, seed, &options)?
                }
                SetKind::Tabular => enumerate_tabular_policies(
                    f.num_states(),
                    f.num_actions(),
                    mdp.horizon(),
                    f.mask(),
                    DEFAULT_ENUMERATION_CAP,
                )?,
            };
            emit(out.as_deref(), &set.to_json()?)
        }
    }
}

fn parse_arms(text: &str) -> Result<Vec<Vec<f64>>, Error> {
    text.split('/')
        .map(|layer| {
            layer
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::contract(format!("bad arm reward {x:?}: {e}")))
                })
                .collect()
        })
        .collect()
}

fn symmetric_problem(d: usize) -> Result<DesignProblem<f64>, Error> {
    let mats = (0..d)
        .map(|i| rfx::Matrix::from_fn(d, d, |r, c| if r == i && c == i { 1.0 } else { 0.0 }))
        .collect();
    DesignProblem::from_matrices(mats, 0.0)
}

fn load_mdp_unchecked(path: &Path) -> Result<Mdp, Error> {
    Mdp::from_json(&fs::read_to_string(path)?)
}

fn load_mdp(path: &Path) -> Result<Mdp, Failure> {
    let mdp = load_mdp_unchecked(path)?;
    let report = validate(&mdp);
    if let Some(v) = report.violations.first() {
        return Err(Error::model(format!("{}: {v}", path.display())).into());
    }
    Ok(mdp)
}

/// Explicit path, else `file` inside `RFX_OUT_DIR`, else the working directory.
fn out_path(explicit: Option<PathBuf>, file: &str) -> Result<PathBuf, Error> {
    if let Some(p) = explicit {
        return Ok(p);
    }
    let dir = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from);
    fs::create_dir_all(&dir)?;
    Ok(dir.join(file))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, format!("{text}\n"))?,
        None => println!("{text}"),
    }
    Ok(())
}
