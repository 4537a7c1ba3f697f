//! Picard iteration of the solution map with stopping-time localization.
//!
//! The monitor `A_t = C1 exp(C2 (Z*_t)^2)` is driven by `Z = ∫ g dY` and
//! defines stopping nodes `tau_N = min{k : A_k > N}` (or the last node). On
//! each level the localized map is iterated to a fixed point on
//! `[0, tau_N]`; successive levels extend the previous fixed point and the
//! results are patched together.

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::conditional_law::{apply_t, apply_t_localized, TMapContext};
use crate::error::{Error, Result};
use crate::grid::SamplePath;
use crate::measures::{check_same_grid, sup_w1_path, MeasurePath};
use crate::reference_sim::compute_z_factors;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationConfig {
    pub c1: f64,
    pub c2: f64,
    /// Strictly increasing thresholds `N_1 < N_2 < ...`.
    pub thresholds: Vec<f64>,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            c1: 4.0,
            c2: 1.0,
            thresholds: vec![1e4, 1e8, 1e16],
        }
    }
}

impl LocalizationConfig {
    pub fn new(c1: f64, c2: f64, thresholds: Vec<f64>) -> Result<Self> {
        let cfg = Self { c1, c2, thresholds };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1.is_finite() && self.c1 > 0.0 && self.c2.is_finite() && self.c2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "localization constants must be positive, got c1={}, c2={}",
                self.c1, self.c2
            )));
        }
        if self.thresholds.is_empty() {
            return Err(Error::InvalidArgument("at least one threshold is required".into()));
        }
        if self.thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("thresholds must be strictly increasing".into()));
        }
        if !(self.thresholds[0] > self.c1) {
            return Err(Error::InvalidArgument(format!(
                "smallest threshold {} must exceed c1 = {}",
                self.thresholds[0], self.c1
            )));
        }
        Ok(())
    }

    /// Constants for which `A` dominates the kernel moment process on
    /// `[0, horizon]`.
    ///
    /// Summation by parts writes `∫ f(X) dZ = f(X_t) Z_t - ∫ Z df(X)`; with
    /// `a = Σ (|f| + |f''| σ² T / 2 + |f'| |b| T)` and `b = Σ |f'| σ sqrt(T)`
    /// the fourth moments of the running sups of `L` and `1/L` given the
    /// observation are bounded by `4 · 8e · exp(2 M_h² T) · exp((4a² + 8b²) (Z*)²)`.
    pub fn calibrated(coeffs: &CoefficientSet, horizon: f64) -> Self {
        let bounds = coeffs.bounds();
        let sigma = bounds.sigma;
        let mut a = 0.0;
        let mut b = 0.0;
        for fac in coeffs.h_factors() {
            let d1 = fac.f_d1_bound.unwrap_or(fac.f_bound);
            let d2 = fac.f_d2_bound.unwrap_or(0.0);
            a += fac.f_bound + 0.5 * d2 * sigma * sigma * horizon + d1 * bounds.drift * horizon;
            b += d1 * sigma * horizon.sqrt();
        }
        let c1 = 32.0 * std::f64::consts::E * (2.0 * bounds.h * bounds.h * horizon).exp();
        let c2 = (4.0 * a * a + 8.0 * b * b).max(f64::MIN_POSITIVE);
        Self {
            c1,
            c2,
            thresholds: vec![c1 * 1e3, c1 * 1e6, c1 * 1e12, c1 * 1e24],
        }
    }
}

/// `A_k = c1 exp(c2 (sup_{j<=k} |Z_j|)^2)`.
pub fn a_process(z_path: &SamplePath, loc: &LocalizationConfig) -> Result<SamplePath> {
    let sup = z_path.running_sup_path();
    let values = sup
        .values()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let a = loc.c1 * (loc.c2 * s * s).exp();
            if a.is_finite() {
                Ok(a)
            } else {
                Err(Error::NumericOverflow {
                    step: k,
                    particle: None,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    SamplePath::new(*z_path.grid(), values)
}

/// Pointwise maximum of the running sups of several `Z` paths.
pub fn max_running_sup(z_paths: &[SamplePath], fallback: &SamplePath) -> SamplePath {
    let grid = *fallback.grid();
    let mut values = vec![0.0_f64; grid.n_nodes()];
    for z in z_paths {
        for (v, s) in values.iter_mut().zip(z.running_sup_path().values()) {
            *v = v.max(*s);
        }
    }
    SamplePath::new(grid, values).expect("sized to grid")
}

/// First node with `A > threshold`, or the last node.
pub fn tau_node(a_path: &SamplePath, threshold: f64) -> usize {
    a_path
        .values()
        .iter()
        .position(|&a| a > threshold)
        .unwrap_or(a_path.grid().n_steps())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSolution {
    pub path: MeasurePath,
    pub iterations: usize,
    pub distances: Vec<f64>,
}

/// Iterates the localized map from `mu0` until two successive iterates are
/// within `tol` in sup-W1 on `[0, tau]`.
///
/// `distances[j]` is the displacement produced by application `j`;
/// `distances[0]` measures how far `mu0` is from its image. `iterations`
/// counts the applications after the first, and is bounded by `max_iter`.
pub fn solve_level(
    ctx: &TMapContext,
    mu0: &MeasurePath,
    tau: usize,
    tol: f64,
    max_iter: usize,
) -> Result<LevelSolution> {
    check_same_grid(ctx.y_path.grid(), mu0.grid())?;
    ctx.y_path.grid().check_node(tau)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::NonConvergence { distances: vec![] });
    }
    let mut current = mu0.clone();
    let mut distances = Vec::new();
    for application in 0..=max_iter {
        let next = apply_t_localized(ctx, &current, tau)?;
        let d = sup_w1_path(&next, &current, tau)?;
        distances.push(d);
        current = next;
        if d <= tol {
            return Ok(LevelSolution {
                path: current,
                iterations: application,
                distances,
            });
        }
    }
    Err(Error::NonConvergence { distances })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub threshold: f64,
    pub tau_node: usize,
    pub iterations: usize,
    pub distances: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    /// sup-W1 on the previous level's horizon between this level's fixed
    /// point and the previous one.
    pub patch_discrepancy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub levels: Vec<LevelReport>,
    pub converged: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub localization: LocalizationConfig,
    pub master_seed: u64,
    pub n_particles: usize,
    /// Monitor `A` at every node.
    pub a_path: Vec<f64>,
    #[serde(skip)]
    pub final_path: MeasurePath,
    /// Unpatched fixed point of each level.
    #[serde(skip)]
    pub level_paths: Vec<MeasurePath>,
}

impl FixedPointReport {
    pub fn tau_ladder(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.tau_node).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.levels.iter().flat_map(|l| l.distances.iter().copied()).collect()
    }

    pub fn total_iterations(&self) -> usize {
        self.levels.iter().map(|l| l.iterations).sum()
    }
}

fn ratios(d: &[f64]) -> Vec<f64> {
    d.windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect()
}

/// `A` for the observation path of `ctx`, using the largest running sup over
/// the observation factors.
pub fn monitor_path(ctx: &TMapContext, loc: &LocalizationConfig) -> Result<SamplePath> {
    let z = compute_z_factors(&ctx.coeffs, &ctx.y_path);
    a_process(&max_running_sup(&z, &ctx.y_path), loc)
}

/// Localized Picard iteration over the threshold ladder of `loc`.
pub fn solve(
    ctx: &TMapContext,
    mu0: &MeasurePath,
    loc: &LocalizationConfig,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointReport> {
    loc.validate()?;
    let a = monitor_path(ctx, loc)?;
    let n_steps = ctx.y_path.grid().n_steps();

    let mut levels = Vec::new();
    let mut level_paths: Vec<MeasurePath> = Vec::new();
    let mut patched = mu0.clone();
    let mut prev_tau: Option<usize> = None;
    for &threshold in &loc.thresholds {
        let tau = tau_node(&a, threshold);
        let sol = solve_level(ctx, &patched, tau, tol, max_iter)?;
        let patch_discrepancy = match (prev_tau, level_paths.last()) {
            (Some(pt), Some(prev)) => Some(sup_w1_path(&sol.path, prev, pt)?),
            _ => None,
        };
        patched = match prev_tau {
            Some(pt) => patched.patched(&sol.path, pt)?,
            None => sol.path.clone(),
        };
        levels.push(LevelReport {
            threshold,
            tau_node: tau,
            iterations: sol.iterations,
            contraction_ratios: ratios(&sol.distances),
            distances: sol.distances,
            patch_discrepancy,
        });
        level_paths.push(sol.path);
        prev_tau = Some(tau);
        if tau == n_steps {
            return Ok(FixedPointReport {
                levels,
                converged: true,
                tol,
                max_iter,
                localization: loc.clone(),
                master_seed: ctx.sim.master_seed,
                n_particles: ctx.sim.n_particles,
                a_path: a.into_values(),
                final_path: patched,
                level_paths,
            });
        }
    }
    Err(Error::LevelExhausted {
        tau_node: prev_tau.unwrap_or(0),
        n_steps,
    })
}

/// sup-W1 between the fixed point and one more application of the map.
pub fn self_consistency(ctx: &TMapContext, path: &MeasurePath) -> Result<f64> {
    let again = apply_t(ctx, path)?;
    sup_w1_path(&again, path, path.grid().n_steps())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessOutcome {
    pub report_a: FixedPointReport,
    pub report_b: FixedPointReport,
    pub discrepancy: f64,
    pub pass: bool,
}

/// Solves from two initial iterates with shared observation and seeds; the
/// fixed points must agree within `2 tol`.
pub fn uniqueness_probe(
    ctx: &TMapContext,
    mu0_a: &MeasurePath,
    mu0_b: &MeasurePath,
    loc: &LocalizationConfig,
    tol: f64,
    max_iter: usize,
) -> Result<UniquenessOutcome> {
    let report_a = solve(ctx, mu0_a, loc, tol, max_iter)?;
    let report_b = solve(ctx, mu0_b, loc, tol, max_iter)?;
    let n = ctx.y_path.grid().n_steps();
    let discrepancy = sup_w1_path(&report_a.final_path, &report_b.final_path, n)?;
    Ok(UniquenessOutcome {
        pass: discrepancy <= 2.0 * tol,
        report_a,
        report_b,
        discrepancy,
    })
}

/// True if, from its largest element on, the sequence never increases and
/// ends strictly below where it started.
pub fn eventually_decreasing(distances: &[f64]) -> bool {
    if distances.len() < 2 {
        return distances.len() == 1;
    }
    let peak = distances
        .iter()
        .enumerate()
        .fold(0, |best, (i, &d)| if d > distances[best] { i } else { best });
    distances[peak..].windows(2).all(|w| w[1] <= w[0])
        && distances.last().unwrap() < distances.first().unwrap()
}
