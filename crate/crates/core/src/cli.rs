//! The `cmvsde` command line: `solve`, `oracle`, `diagnose` and `w1`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::conditional_law::{apply_t, apply_t_with_ensemble, effective_sample_sizes};
use crate::config::RunConfig;
use crate::diagnostics::{
    continuity_exponent, innovation_check, innovation_sweep, martingale_sweep,
    ratio_probe_ensembles, zeta_bound_check, zeta_path, ContinuitySpec, DiagnosticReport,
    InnovationSettings, InnovationSweep, Verdict,
};
use crate::error::{Error, Result};
use crate::fixed_point::{monitor_path, solve, LocalizationConfig};
use crate::io::{
    fmt_f64, quantile_table, read_measure_file, read_measure_path, to_json_string,
    with_provenance, write_json, write_measure_path, y_path_table, CsvTable, MeasureFile,
    Provenance,
};
use crate::measures::{exact_w1, nodewise_w1};
use crate::oracles::{compare_to_kalman, kalman_posterior, tree_fixed_point, KalmanSpec, TreeInstance};
use crate::reference_sim::simulate_ensemble;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const IO: i32 = 4;
    pub const NOT_CONVERGED: i32 = 5;
    pub const NUMERIC: i32 = 6;
    pub const INVALID: i32 = 7;
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse(_) | Error::UnknownScenario(_) => exit::CONFIG,
        Error::Io(_) => exit::IO,
        Error::NonConvergence { .. } | Error::LevelExhausted { .. } | Error::NotConverged(_) => {
            exit::NOT_CONVERGED
        }
        Error::NumericOverflow { .. } => exit::NUMERIC,
        _ => exit::INVALID,
    }
}

#[derive(Debug, Parser)]
#[command(name = "cmvsde", version, about = "Fixed-point solver for conditional McKean-Vlasov SDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `sim.master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Observation path CSV (`t,y`) to use instead of a fresh draw.
    #[arg(long = "y-path")]
    pub y_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    Tree,
    Kalman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Martingale,
    Zeta,
    Ratio,
    Continuity,
    Innovation,
}

impl Check {
    fn name(self) -> &'static str {
        match self {
            Check::Martingale => "martingale",
            Check::Zeta => "zeta",
            Check::Ratio => "ratio",
            Check::Continuity => "continuity",
            Check::Innovation => "innovation",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the fixed point and write the report, law path and quantiles.
    Solve(RunArgs),
    /// Run a reference oracle, optionally compared against a solve output.
    Oracle {
        #[arg(value_enum)]
        which: OracleKind,
        #[command(flatten)]
        run: RunArgs,
        /// Law path JSONL from `solve` to compare against.
        #[arg(long)]
        paired: Option<PathBuf>,
    },
    /// Run statistical checks; exits 0 only if all pass.
    Diagnose {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "martingale,zeta,ratio,continuity,innovation")]
        checks: Vec<Check>,
    },
    /// W1 between two measures, or nodewise between two law paths.
    W1 { a: PathBuf, b: PathBuf },
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Solve(run) => cmd_solve(&Prepared::new(&run)?),
        Command::Oracle { which, run, paired } => cmd_oracle(&Prepared::new(&run)?, which, paired.as_deref()),
        Command::Diagnose { run, checks } => cmd_diagnose(&Prepared::new(&run)?, &checks),
        Command::W1 { a, b } => cmd_w1(&a, &b),
    }
}

/// Effective configuration with command-line overrides applied.
pub struct Prepared {
    pub config: RunConfig,
    pub provenance: Provenance,
    pub out: PathBuf,
}

impl Prepared {
    pub fn new(args: &RunArgs) -> Result<Self> {
        let mut config = RunConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            config.sim.master_seed = seed;
        }
        if let Some(out) = &args.out {
            config.output_dir = out.clone();
        }
        if let Some(y) = &args.y_path {
            config.observation.path = Some(y.clone());
        }
        config.validate()?;
        let provenance = Provenance::new(&config, config.sim.master_seed)?;
        let out = config.output_dir.clone();
        fs::create_dir_all(&out)?;
        Ok(Self {
            config,
            provenance,
            out,
        })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        write_json(&self.file(name), &with_provenance(&self.provenance, value)?)
    }
}

#[derive(Serialize)]
struct SolveFailure<'a> {
    converged: bool,
    error: String,
    distances: &'a [f64],
    config: &'a RunConfig,
}

pub fn cmd_solve(p: &Prepared) -> Result<i32> {
    let cfg = &p.config;
    let y = cfg.observation_path(None)?;
    y_path_table(&y).write(&p.file("y_path.csv"), Some(&p.provenance))?;
    let ctx = cfg.context(y)?;
    let fp = &cfg.fixed_point;
    let report = match solve(&ctx, &cfg.initial_path()?, &cfg.localization, fp.tol, fp.max_iter) {
        Ok(r) => r,
        Err(Error::NonConvergence { distances }) => {
            let err = Error::NonConvergence { distances: distances.clone() };
            p.write_json(
                "report.json",
                &SolveFailure {
                    converged: false,
                    error: err.to_string(),
                    distances: &distances,
                    config: cfg,
                },
            )?;
            eprintln!("error: {err}");
            return Ok(exit::NOT_CONVERGED);
        }
        Err(e) => return Err(e),
    };
    p.write_json("report.json", &json!({ "report": &report, "config": cfg }))?;
    write_measure_path(&p.file("measure_path.jsonl"), &report.final_path, Some(&p.provenance))?;
    quantile_table(&report.final_path)?.write(&p.file("quantiles.csv"), Some(&p.provenance))?;

    let (_, ens) = apply_t_with_ensemble(&ctx, &report.final_path)?;
    let mut ess = CsvTable::new(&["t", "ess"]);
    for (k, e) in effective_sample_sizes(&ens).into_iter().enumerate() {
        ess.push_floats(&[ens.grid().time(k), e]);
    }
    ess.write(&p.file("ess.csv"), Some(&p.provenance))?;
    let mut summary = CsvTable::new(&["t", "particle_mean_X", "particle_mean_L", "min_L", "max_L"]);
    for r in ens.summary() {
        summary.push_floats(&[r.t, r.mean_x, r.mean_l, r.min_l, r.max_l]);
    }
    summary.write(&p.file("ensemble_summary.csv"), Some(&p.provenance))?;
    println!(
        "converged: {} levels, tau ladder {:?}, {} iterations",
        report.levels.len(),
        report.tau_ladder(),
        report.total_iterations()
    );
    Ok(exit::OK)
}

fn scenario_param(cfg: &RunConfig, key: &str, default: f64) -> f64 {
    cfg.scenario.params.get(key).and_then(|v| v.as_f64()).unwrap_or(default)
}

pub fn cmd_oracle(p: &Prepared, which: OracleKind, paired: Option<&Path>) -> Result<i32> {
    let cfg = &p.config;
    let y = cfg.observation_path(None)?;
    match which {
        OracleKind::Tree => {
            let inst = TreeInstance::new(cfg.coefficients()?, y)?;
            let fp = tree_fixed_point(&inst, cfg.fixed_point.tol, cfg.fixed_point.max_iter)?;
            write_measure_path(&p.file("tree_path.jsonl"), &fp.path, Some(&p.provenance))?;
            let mut out = json!({ "oracle": "tree", "iterations": fp.iterations, "distances": fp.distances });
            if let Some(file) = paired {
                let other = read_measure_path(file)?;
                let nodewise = nodewise_w1(&fp.path, &other)?;
                let sup = nodewise.iter().copied().fold(0.0, f64::max);
                out["nodewise_w1"] = json!(nodewise);
                out["sup_w1"] = json!(sup);
                println!("{}", to_json_string(&json!({ "sup_w1": sup }), false)?);
            }
            p.write_json("oracle_tree.json", &out)?;
        }
        OracleKind::Kalman => {
            if cfg.scenario.name != "linear-clipped" {
                return Err(Error::InvalidArgument(
                    "the Kalman oracle applies to the linear-clipped scenario only".into(),
                ));
            }
            // defaults mirror the builtin scenario
            let spec = KalmanSpec::new(
                scenario_param(cfg, "s0", 1.0),
                scenario_param(cfg, "c", 0.5),
                cfg.scenario.x0,
                cfg.oracle.kalman_p0,
            )?;
            let radius = scenario_param(cfg, "r", 8.0);
            let (m, v) = kalman_posterior(&spec, &y)?;
            let mut table = CsvTable::new(&["t", "mean", "variance"]);
            for k in 0..m.values().len() {
                table.push_floats(&[m.grid().time(k), m.value(k), v.value(k)]);
            }
            table.write(&p.file("kalman.csv"), Some(&p.provenance))?;
            let mut out = json!({ "oracle": "kalman", "spec": spec });
            if let Some(file) = paired {
                let path = read_measure_path(file)?;
                let laws: Vec<_> = cfg.checkpoints().into_iter().map(|k| (k, path.at(k).clone())).collect();
                let rows = compare_to_kalman(&laws, &(m, v), radius)?;
                let n = rows.len() as f64;
                let mean_rmse = (rows.iter().map(|r| r.mean_error().powi(2)).sum::<f64>() / n).sqrt();
                let var_rel_rmse = (rows.iter().map(|r| r.var_rel_error().powi(2)).sum::<f64>() / n).sqrt();
                let max_clipped = rows.iter().map(|r| r.clipped_mass).fold(0.0, f64::max);
                let valid = max_clipped <= cfg.oracle.max_clipped_mass;
                out["rows"] = json!(rows);
                out["mean_rmse"] = json!(mean_rmse);
                out["variance_relative_rmse"] = json!(var_rel_rmse);
                out["max_clipped_mass"] = json!(max_clipped);
                out["valid"] = json!(valid);
                println!(
                    "{}",
                    to_json_string(&json!({ "mean_rmse": mean_rmse, "variance_relative_rmse": var_rel_rmse, "valid": valid }), false)?
                );
            }
            p.write_json("oracle_kalman.json", &out)?;
        }
    }
    Ok(exit::OK)
}

fn report_table(rep: &DiagnosticReport) -> CsvTable {
    let mut t = CsvTable::new(&["statistic", "index", "value", "se", "n", "verdict"]);
    for s in &rep.statistics {
        t.push(vec![
            s.name.clone(),
            s.index.map(|i| i.to_string()).unwrap_or_default(),
            fmt_f64(s.value),
            s.se.map(fmt_f64).unwrap_or_default(),
            s.n.to_string(),
            format!("{:?}", s.verdict).to_uppercase(),
        ]);
    }
    t
}

pub fn run_check(p: &Prepared, check: Check) -> Result<DiagnosticReport> {
    let cfg = &p.config;
    let d = &cfg.diagnostics;
    let nodes = cfg.checkpoints();
    let coeffs = cfg.coefficients()?;
    let grid = cfg.time_grid()?;
    let fp = &cfg.fixed_point;
    match check {
        Check::Martingale => martingale_sweep(&coeffs, &cfg.initial_path()?, &cfg.sim, &nodes),
        Check::Zeta | Check::Ratio => {
            let ctx = cfg.context(cfg.observation_path(None)?)?;
            let mu = cfg.initial_path()?;
            let mu_prime = apply_t(&ctx, &mu)?;
            let a = simulate_ensemble(&ctx.coeffs, &mu, &ctx.y_path, &ctx.sim)?;
            let b = simulate_ensemble(&ctx.coeffs, &mu_prime, &ctx.y_path, &ctx.sim)?;
            if check == Check::Zeta {
                let loc = if d.zeta_calibrated {
                    LocalizationConfig::calibrated(&ctx.coeffs, grid.horizon())
                } else {
                    cfg.localization.clone()
                };
                let mut rep = zeta_bound_check(&zeta_path(&a, &b)?, &monitor_path(&ctx, &loc)?)?;
                rep.settings.insert("c1".into(), loc.c1);
                rep.settings.insert("c2".into(), loc.c2);
                rep.seed = Some(cfg.sim.master_seed);
                Ok(rep)
            } else {
                let mut pairs = vec![(nodes[0], nodes[0])];
                pairs.extend(nodes.windows(2).map(|w| (w[0], w[1])));
                ratio_probe_ensembles(&a, &b, &pairs, d.ratio_cap)
            }
        }
        Check::Continuity => continuity_exponent(&ContinuitySpec {
            coeffs,
            grid,
            n_particles: cfg.sim.n_particles,
            base_node: d.continuity_base_node,
            lags: d.continuity_lags.clone(),
            replications: d.continuity_replications,
            seed: cfg.sim.master_seed,
            localization: cfg.localization.clone(),
            tol: fp.tol,
            max_iter: fp.max_iter,
            min_slope: d.continuity_min_slope,
        }),
        Check::Innovation => {
            let draws = innovation_sweep(&InnovationSweep {
                coeffs,
                grid,
                particles_per_draw: d.innovation_particles,
                draws: d.innovation_draws,
                seed: cfg.sim.master_seed,
                localization: cfg.localization.clone(),
                tol: fp.tol,
                max_iter: fp.max_iter,
                nodes,
            })?;
            innovation_check(
                &draws,
                &grid,
                &InnovationSettings {
                    se_multiple: 3.0,
                    variance_band: d.innovation_variance_band,
                    bootstrap_resamples: d.bootstrap_resamples,
                    seed: cfg.sim.master_seed,
                },
            )
        }
    }
}

pub fn cmd_diagnose(p: &Prepared, checks: &[Check]) -> Result<i32> {
    let mut all_pass = true;
    for &check in checks {
        let rep = run_check(p, check)?;
        p.write_json(&format!("diag_{}.json", check.name()), &rep)?;
        report_table(&rep).write(&p.file(&format!("diag_{}.csv", check.name())), Some(&p.provenance))?;
        println!("{:<11} {:?}", check.name(), rep.verdict);
        all_pass &= rep.verdict == Verdict::Pass;
    }
    Ok(if all_pass { exit::OK } else { exit::CHECK_FAILED })
}

pub fn cmd_w1(a: &Path, b: &Path) -> Result<i32> {
    let out = match (read_measure_file(a)?, read_measure_file(b)?) {
        (MeasureFile::Measure(x), MeasureFile::Measure(y)) => json!({ "w1": exact_w1(&x, &y) }),
        (MeasureFile::Path(x), MeasureFile::Path(y)) => {
            let nodewise = nodewise_w1(&x, &y)?;
            let sup = nodewise.iter().copied().fold(0.0, f64::max);
            json!({ "nodewise": nodewise, "sup": sup })
        }
        _ => {
            return Err(Error::GridMismatch(
                "cannot compare a single measure with a measure path".into(),
            ))
        }
    };
    println!("{}", to_json_string(&out, false)?);
    Ok(exit::OK)
}
