//! Statistical checks on ensembles and fixed points: kernel martingality, the
//! kernel moment process and its bound, the Hölder-type ratio probe, the
//! continuity exponent of the law path, and the innovation test.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::CoefficientSet;
use crate::conditional_law::{ks_law_at, TMapContext};
use crate::error::{Error, Result};
use crate::fixed_point::{solve, FixedPointReport, LocalizationConfig};
use crate::grid::{sample_observation, stream_rng, IncrementLaw, SamplePath, TimeGrid};
use crate::measures::{exact_w1, MeasurePath};
use crate::reference_sim::{simulate_ensemble, simulate_particle, ParticleEnsemble, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    /// The check has nothing to measure (for example all increments vanish).
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Statistic {
    pub name: String,
    /// Node index or lag the statistic refers to.
    pub index: Option<usize>,
    pub value: f64,
    pub se: Option<f64>,
    pub n: usize,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub check: String,
    pub verdict: Verdict,
    pub statistics: Vec<Statistic>,
    /// Thresholds and settings the verdicts were computed with.
    pub settings: BTreeMap<String, f64>,
    pub seed: Option<u64>,
}

impl DiagnosticReport {
    fn new(check: &str, statistics: Vec<Statistic>, settings: &[(&str, f64)], seed: Option<u64>) -> Self {
        let verdict = if statistics.iter().any(|s| s.verdict == Verdict::Fail) {
            Verdict::Fail
        } else if !statistics.is_empty() && statistics.iter().all(|s| s.verdict == Verdict::Degenerate) {
            Verdict::Degenerate
        } else {
            Verdict::Pass
        };
        Self {
            check: check.to_string(),
            verdict,
            statistics,
            settings: settings.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            seed,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn statistic(&self, name: &str, index: Option<usize>) -> Option<&Statistic> {
        self.statistics.iter().find(|s| s.name == name && s.index == index)
    }
}

fn pass_if(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n.max(2) - 1) as f64;
    (mean, (var / n as f64).sqrt(), n)
}

/// Minimum ensemble size for [`martingale_check`].
pub const MARTINGALE_MIN_PARTICLES: usize = 100;

/// Martingale test on raw log-kernels: `columns[j]` holds `log L` of every
/// particle at `nodes[j]`.
pub fn martingale_check_columns(nodes: &[usize], columns: &[Vec<f64>]) -> Result<DiagnosticReport> {
    if nodes.len() != columns.len() {
        return Err(Error::InvalidArgument("one kernel column per node is required".into()));
    }
    let mut stats = Vec::with_capacity(nodes.len());
    for (&node, col) in nodes.iter().zip(columns) {
        if col.len() < MARTINGALE_MIN_PARTICLES {
            return Err(Error::InvalidArgument(format!(
                "martingale check needs at least {MARTINGALE_MIN_PARTICLES} particles, got {}",
                col.len()
            )));
        }
        let (mean, se, n) = mean_se(col.iter().map(|l| l.exp()));
        stats.push(Statistic {
            name: "mean_l".into(),
            index: Some(node),
            value: mean,
            se: Some(se),
            n,
            verdict: pass_if((mean - 1.0).abs() <= 3.0 * se),
        });
    }
    Ok(DiagnosticReport::new("martingale", stats, &[("se_multiple", 3.0)], None))
}

/// Particle mean of `L` at each of `nodes`, passing when within three
/// standard errors of one.
///
/// All particles of an ensemble share one observation path, so this tests
/// `E[L | Y] = 1`, which holds when `h` does not depend on `x` or vanishes.
/// The unconditional property is tested by [`martingale_sweep`].
pub fn martingale_check(ensemble: &ParticleEnsemble, nodes: &[usize]) -> Result<DiagnosticReport> {
    for &k in nodes {
        ensemble.grid().check_node(k)?;
    }
    let columns: Vec<Vec<f64>> = nodes.iter().map(|&k| ensemble.log_kernels_at(k)).collect();
    let mut rep = martingale_check_columns(nodes, &columns)?;
    rep.seed = Some(ensemble.master_seed());
    Ok(rep)
}

/// First stream of the per-particle observation paths in [`martingale_sweep`];
/// the particle increments use streams below `n_particles`.
const SWEEP_OBSERVATION_STREAM: u64 = 1 << 63;

/// Martingale test with an independent observation path per particle, so the
/// particle mean of `L` estimates its expectation under the reference
/// measure. Particle `i` uses increment stream `i` and observation stream
/// `2^63 + i` of `cfg.master_seed`.
pub fn martingale_sweep(
    coeffs: &CoefficientSet,
    mu_path: &MeasurePath,
    cfg: &SimConfig,
    nodes: &[usize],
) -> Result<DiagnosticReport> {
    let grid = *mu_path.grid();
    for &k in nodes {
        grid.check_node(k)?;
    }
    let rows: Vec<Vec<f64>> = (0..cfg.n_particles)
        .into_par_iter()
        .map(|i| {
            let inc = crate::grid::sample_increments_stream(
                &grid,
                IncrementLaw::Gaussian,
                cfg.master_seed,
                SWEEP_OBSERVATION_STREAM + i as u64,
            );
            let y = SamplePath::from_increments(grid, 0.0, &inc)?;
            let (_, l) = simulate_particle(coeffs, mu_path, &y, cfg, i)?;
            Ok(nodes.iter().map(|&k| l[k]).collect())
        })
        .collect::<Result<_>>()?;
    let columns: Vec<Vec<f64>> = (0..nodes.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut rep = martingale_check_columns(nodes, &columns)?;
    rep.seed = Some(cfg.master_seed);
    Ok(rep)
}

fn check_shared_observation(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<()> {
    if a.y_path() != b.y_path() {
        return Err(Error::ObservationMismatch(
            "the two ensembles were simulated on different observation paths".into(),
        ));
    }
    Ok(())
}

/// `mean((sup_{j<=k} L_j)^4) + mean((sup_{j<=k} 1/L_j)^4)` over the particles
/// of one ensemble, for every node `k`.
fn kernel_moment_path(ens: &ParticleEnsemble) -> Vec<f64> {
    let n_nodes = ens.grid().n_nodes();
    let n = ens.n_particles() as f64;
    let mut acc = vec![0.0; n_nodes];
    for path in ens.log_kernel_paths() {
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for (k, &l) in path.values().iter().enumerate() {
            hi = hi.max(l);
            lo = lo.min(l);
            acc[k] += (4.0 * hi).exp() + (-4.0 * lo).exp();
        }
    }
    acc.iter().map(|s| s / n).collect()
}

/// Estimated kernel moment process `zeta` at every node for the pair of
/// ensembles simulated from `mu` and `mu'` on one observation path.
///
/// Running sups are pathwise non-decreasing, so the estimate is
/// non-decreasing in `t`; at node 0 every kernel is 1 and the value is 4.
pub fn zeta_path(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<Vec<f64>> {
    check_shared_observation(a, b)?;
    Ok(kernel_moment_path(a)
        .into_iter()
        .zip(kernel_moment_path(b))
        .map(|(x, y)| x + y)
        .collect())
}

pub fn zeta_estimate(a: &ParticleEnsemble, b: &ParticleEnsemble, t_node: usize) -> Result<f64> {
    a.grid().check_node(t_node)?;
    Ok(zeta_path(a, b)?[t_node])
}

/// Passes when `zeta_t <= A_t` at every node; reports the largest ratio.
pub fn zeta_bound_check(zeta: &[f64], a_path: &SamplePath) -> Result<DiagnosticReport> {
    if zeta.len() != a_path.values().len() {
        return Err(Error::GridMismatch(format!(
            "{} zeta values for {} monitor nodes",
            zeta.len(),
            a_path.values().len()
        )));
    }
    let mut stats = Vec::new();
    let mut worst = (0.0_f64, 0);
    for (k, (&z, &a)) in zeta.iter().zip(a_path.values()).enumerate() {
        let r = z / a;
        if r > worst.0 {
            worst = (r, k);
        }
        if z > a {
            stats.push(Statistic {
                name: "violation".into(),
                index: Some(k),
                value: r,
                se: None,
                n: 1,
                verdict: Verdict::Fail,
            });
        }
    }
    stats.insert(
        0,
        Statistic {
            name: "max_ratio".into(),
            index: Some(worst.1),
            value: worst.0,
            se: None,
            n: zeta.len(),
            verdict: pass_if(worst.0 <= 1.0),
        },
    );
    Ok(DiagnosticReport::new("zeta_bound", stats, &[("max_ratio", 1.0)], None))
}

/// Default cap on the ratio probe.
pub const RATIO_CAP: f64 = 10.0;

/// For each `(s, t)`, the ratio of `W1(law_a(s), law_b(t))` to
/// `zeta_t · (sqrt(mean |X_s - X'_t|^2) + sqrt(mean |L_s - L'_t|^2))`, with
/// particle `i` of one ensemble paired with particle `i` of the other.
/// The constant in the inequality is generic, so the probe can only flag
/// blow-ups: it passes when the largest ratio is finite and at most `cap`.
pub fn ratio_probe_ensembles(
    a: &ParticleEnsemble,
    b: &ParticleEnsemble,
    node_pairs: &[(usize, usize)],
    cap: f64,
) -> Result<DiagnosticReport> {
    check_shared_observation(a, b)?;
    if a.n_particles() != b.n_particles() {
        return Err(Error::InvalidArgument("ensembles must have the same size".into()));
    }
    let zeta = zeta_path(a, b)?;
    let n = a.n_particles();
    let mut stats = Vec::with_capacity(node_pairs.len() + 1);
    let mut max_ratio = 0.0_f64;
    for (j, &(s, t)) in node_pairs.iter().enumerate() {
        a.grid().check_node(s)?;
        a.grid().check_node(t)?;
        let lhs = exact_w1(&ks_law_at(a, s)?, &ks_law_at(b, t)?);
        let (xs, xt) = (a.states_at(s), b.states_at(t));
        let (ls, lt) = (a.log_kernels_at(s), b.log_kernels_at(t));
        let dx: f64 = xs.iter().zip(&xt).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / n as f64;
        let dl: f64 = ls.iter().zip(&lt).map(|(u, v)| (u.exp() - v.exp()).powi(2)).sum::<f64>() / n as f64;
        let denom = zeta[t] * (dx.sqrt() + dl.sqrt());
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / denom };
        max_ratio = max_ratio.max(ratio);
        stats.push(Statistic {
            name: "ratio".into(),
            index: Some(j),
            value: ratio,
            se: None,
            n,
            verdict: pass_if(ratio.is_finite() && ratio <= cap),
        });
    }
    stats.insert(
        0,
        Statistic {
            name: "max_ratio".into(),
            index: None,
            value: max_ratio,
            se: None,
            n: node_pairs.len(),
            verdict: pass_if(max_ratio.is_finite() && max_ratio <= cap),
        },
    );
    Ok(DiagnosticReport::new("ratio", stats, &[("cap", cap)], Some(a.master_seed())))
}

/// Simulates ensembles for `mu` and `mu'` under `ctx` and runs the ratio probe.
pub fn ratio_probe(
    ctx: &TMapContext,
    mu: &MeasurePath,
    mu_prime: &MeasurePath,
    node_pairs: &[(usize, usize)],
    cap: f64,
) -> Result<DiagnosticReport> {
    let a = simulate_ensemble(&ctx.coeffs, mu, &ctx.y_path, &ctx.sim)?;
    let b = simulate_ensemble(&ctx.coeffs, mu_prime, &ctx.y_path, &ctx.sim)?;
    ratio_probe_ensembles(&a, &b, node_pairs, cap)
}

/// How the particle statistics of an innovation draw are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Weight by the kernel `L_t`, i.e. expectations under the weak-solution
    /// measure.
    Kernel,
    /// Unit weights: expectations under the reference measure.
    Reference,
}

/// Per-draw particle averages of `w B`, `w B^2` and `w (B_t - B_s) B_s` at
/// each checkpoint, where `B_t = Y_t - Σ_{k<t} h(t_k, X_k, Y) dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationDraw {
    pub nodes: Vec<usize>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    /// Uses `s = t / 2` (rounded down) as the intermediate node.
    pub cross: Vec<f64>,
}

impl InnovationDraw {
    pub fn from_ensemble(
        ens: &ParticleEnsemble,
        coeffs: &CoefficientSet,
        nodes: &[usize],
        weighting: Weighting,
    ) -> Result<Self> {
        let grid = *ens.grid();
        for &k in nodes {
            grid.check_node(k)?;
        }
        let g = coeffs.observation_factors(&grid, ens.y_path().values());
        let y = ens.y_path().values();
        let dt = grid.dt();
        let n = ens.n_particles() as f64;
        let mut first = vec![0.0; nodes.len()];
        let mut second = vec![0.0; nodes.len()];
        let mut cross = vec![0.0; nodes.len()];
        let mut b = vec![0.0; grid.n_nodes()];
        for (x, l) in ens.x_paths().iter().zip(ens.log_kernel_paths()) {
            let mut drift = 0.0;
            b[0] = 0.0;
            for k in 0..grid.n_steps() {
                drift += coeffs.h_with_factors(grid.time(k), x.value(k), &g, k) * dt;
                b[k + 1] = y[k + 1] - y[0] - drift;
            }
            for (j, &t) in nodes.iter().enumerate() {
                let w = match weighting {
                    Weighting::Kernel => l.value(t).exp(),
                    Weighting::Reference => 1.0,
                };
                let s = t / 2;
                first[j] += w * b[t];
                second[j] += w * b[t] * b[t];
                cross[j] += w * (b[t] - b[s]) * b[s];
            }
        }
        for v in first.iter_mut().chain(second.iter_mut()).chain(cross.iter_mut()) {
            *v /= n;
        }
        Ok(Self {
            nodes: nodes.to_vec(),
            first,
            second,
            cross,
        })
    }

    /// Draw from the fixed point of a converged solve.
    pub fn from_fixed_point(
        ctx: &TMapContext,
        report: &FixedPointReport,
        nodes: &[usize],
        weighting: Weighting,
    ) -> Result<Self> {
        if !report.converged {
            return Err(Error::NotConverged("innovation check needs a converged fixed point".into()));
        }
        let ens = simulate_ensemble(&ctx.coeffs, &report.final_path, &ctx.y_path, &ctx.sim)?;
        Self::from_ensemble(&ens, &ctx.coeffs, nodes, weighting)
    }
}

/// Inputs of [`innovation_sweep`].
#[derive(Debug, Clone)]
pub struct InnovationSweep {
    pub coeffs: CoefficientSet,
    pub grid: TimeGrid,
    pub particles_per_draw: usize,
    pub draws: usize,
    pub seed: u64,
    pub localization: LocalizationConfig,
    pub tol: f64,
    pub max_iter: usize,
    pub nodes: Vec<usize>,
}

/// Solves the fixed point on `draws` independent observation paths and
/// collects one [`InnovationDraw`] from each. Draw `d` uses seed `seed + d`
/// for both the observation and the particles.
pub fn innovation_sweep(spec: &InnovationSweep) -> Result<Vec<InnovationDraw>> {
    (0..spec.draws)
        .into_par_iter()
        .map(|d| {
            let seed = spec.seed.wrapping_add(d as u64);
            let ctx = TMapContext::new(
                spec.coeffs.clone(),
                sample_observation(&spec.grid, IncrementLaw::Gaussian, seed),
                SimConfig::new(spec.particles_per_draw, IncrementLaw::Gaussian, seed),
            );
            let rep = solve(&ctx, &ctx.dirac_path(), &spec.localization, spec.tol, spec.max_iter)?;
            InnovationDraw::from_fixed_point(&ctx, &rep, &spec.nodes, Weighting::Kernel)
        })
        .collect()
}

/// Settings of [`innovation_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnovationSettings {
    pub se_multiple: f64,
    pub variance_band: f64,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

impl Default for InnovationSettings {
    fn default() -> Self {
        Self {
            se_multiple: 3.0,
            variance_band: 0.05,
            bootstrap_resamples: 200,
            seed: 0,
        }
    }
}

/// Standard error of the mean of `values` by resampling whole draws.
fn bootstrap_se(values: &[f64], resamples: usize, seed: u64, stream: u64) -> f64 {
    let n = values.len();
    let mut rng = stream_rng(seed, stream);
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let m = means.iter().sum::<f64>() / resamples as f64;
    (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (resamples.max(2) - 1) as f64).sqrt()
}

/// Tests that `B` behaves as a Brownian motion under the weighted measure,
/// pooling draws taken on independent observation paths.
///
/// Per checkpoint: the mean of `B_t` and the cross moment
/// `(B_t - B_s) B_s` must lie within `se_multiple` bootstrap standard errors
/// of zero, and the second moment within `variance_band · t` of `t`.
pub fn innovation_check(draws: &[InnovationDraw], grid: &TimeGrid, settings: &InnovationSettings) -> Result<DiagnosticReport> {
    let Some(head) = draws.first() else {
        return Err(Error::InvalidArgument("innovation check needs at least one draw".into()));
    };
    if draws.iter().any(|d| d.nodes != head.nodes) {
        return Err(Error::InvalidArgument("all draws must share their checkpoints".into()));
    }
    let n = draws.len();
    let mut stats = Vec::new();
    for (j, &node) in head.nodes.iter().enumerate() {
        let t = grid.time(node);
        let pick = |f: fn(&InnovationDraw) -> &Vec<f64>| draws.iter().map(|d| f(d)[j]).collect::<Vec<_>>();
        let first = pick(|d| &d.first);
        let second = pick(|d| &d.second);
        let cross = pick(|d| &d.cross);
        let avg = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
        let se = |v: &[f64], which: u64| bootstrap_se(v, settings.bootstrap_resamples, settings.seed, 3 * j as u64 + which);

        let (m1, s1) = (avg(&first), se(&first, 0));
        stats.push(Statistic {
            name: "mean".into(),
            index: Some(node),
            value: m1,
            se: Some(s1),
            n,
            verdict: pass_if(m1.abs() <= settings.se_multiple * s1),
        });
        let (m2, s2) = (avg(&second), se(&second, 1));
        stats.push(Statistic {
            name: "variance_minus_t".into(),
            index: Some(node),
            value: m2 - t,
            se: Some(s2),
            n,
            verdict: pass_if(t > 0.0 && (m2 - t).abs() <= settings.variance_band * t),
        });
        let (mc, sc) = (avg(&cross), se(&cross, 2));
        stats.push(Statistic {
            name: "cross".into(),
            index: Some(node),
            value: mc,
            se: Some(sc),
            n,
            verdict: pass_if(mc.abs() <= settings.se_multiple * sc),
        });
    }
    Ok(DiagnosticReport::new(
        "innovation",
        stats,
        &[
            ("se_multiple", settings.se_multiple),
            ("variance_band", settings.variance_band),
            ("bootstrap_resamples", settings.bootstrap_resamples as f64),
        ],
        Some(settings.seed),
    ))
}

/// Minimum replications for [`continuity_exponent`].
pub const CONTINUITY_MIN_REPLICATIONS: usize = 30;

/// Inputs of the continuity-exponent sweep.
#[derive(Debug, Clone)]
pub struct ContinuitySpec {
    pub coeffs: CoefficientSet,
    pub grid: TimeGrid,
    pub n_particles: usize,
    pub base_node: usize,
    /// Lags in nodes.
    pub lags: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub localization: LocalizationConfig,
    pub tol: f64,
    pub max_iter: usize,
    pub min_slope: f64,
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Fourth moments `E[W1(law_s, law_{s+lag})^4]` over replications with
/// independent observation paths, and the log-log slope against the lag.
///
/// Replication `r` draws its observation and particles from seed
/// `seed + r`.
pub fn continuity_exponent(spec: &ContinuitySpec) -> Result<DiagnosticReport> {
    if spec.replications < CONTINUITY_MIN_REPLICATIONS {
        return Err(Error::InsufficientReplications {
            got: spec.replications,
            required: CONTINUITY_MIN_REPLICATIONS,
        });
    }
    if spec.lags.len() < 2 || spec.lags.contains(&0) {
        return Err(Error::InvalidArgument("need at least two positive lags".into()));
    }
    for &lag in &spec.lags {
        spec.grid.check_node(spec.base_node + lag)?;
    }
    let per_rep: Vec<Vec<f64>> = (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            let seed = spec.seed.wrapping_add(r as u64);
            let ctx = TMapContext::new(
                spec.coeffs.clone(),
                sample_observation(&spec.grid, IncrementLaw::Gaussian, seed),
                SimConfig::new(spec.n_particles, IncrementLaw::Gaussian, seed),
            );
            let fp = solve(&ctx, &ctx.dirac_path(), &spec.localization, spec.tol, spec.max_iter)?;
            let base = fp.final_path.at(spec.base_node);
            Ok(spec
                .lags
                .iter()
                .map(|&lag| exact_w1(base, fp.final_path.at(spec.base_node + lag)).powi(4))
                .collect())
        })
        .collect::<Result<_>>()?;

    let dt = spec.grid.dt();
    let mut stats = Vec::new();
    let mut moments = Vec::new();
    for (j, &lag) in spec.lags.iter().enumerate() {
        let (m, se, n) = mean_se(per_rep.iter().map(|row| row[j]));
        moments.push(m);
        stats.push(Statistic {
            name: "fourth_moment".into(),
            index: Some(lag),
            value: m,
            se: Some(se),
            n,
            verdict: if m > 0.0 { Verdict::Pass } else { Verdict::Degenerate },
        });
    }
    let settings = [("min_slope", spec.min_slope), ("base_node", spec.base_node as f64)];
    if moments.iter().all(|&m| m == 0.0) {
        stats.push(Statistic {
            name: "slope".into(),
            index: None,
            value: f64::NAN,
            se: None,
            n: spec.replications,
            verdict: Verdict::Degenerate,
        });
        return Ok(DiagnosticReport::new("continuity", stats, &settings, Some(spec.seed)));
    }
    let slope = if moments.iter().all(|&m| m > 0.0) {
        let lx: Vec<f64> = spec.lags.iter().map(|&l| (l as f64 * dt).ln()).collect();
        let ly: Vec<f64> = moments.iter().map(|m| m.ln()).collect();
        ols_slope(&lx, &ly)
    } else {
        f64::NAN
    };
    stats.push(Statistic {
        name: "slope".into(),
        index: None,
        value: slope,
        se: None,
        n: spec.replications,
        verdict: pass_if(slope >= spec.min_slope),
    });
    Ok(DiagnosticReport::new("continuity", stats, &settings, Some(spec.seed)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::builtin;
    use crate::fixed_point::{a_process, max_running_sup};
    use crate::reference_sim::compute_z_factors;
    use serde_json::{json, Value};

    fn ctx(name: &str, params: Value, n: usize, steps: usize, seed: u64) -> TMapContext {
        let g = TimeGrid::new(1.0, steps).unwrap();
        TMapContext::new(
            builtin(name, &params, 0.0).unwrap(),
            sample_observation(&g, IncrementLaw::Gaussian, seed),
            SimConfig::new(n, IncrementLaw::Gaussian, seed),
        )
    }

    fn ensemble(c: &TMapContext) -> ParticleEnsemble {
        simulate_ensemble(&c.coeffs, &c.dirac_path(), &c.y_path, &c.sim).unwrap()
    }

    #[test]
    fn martingale_without_observation_is_exact() {
        let c = ctx("no-observation", Value::Null, 200, 20, 1);
        let rep = martingale_check(&ensemble(&c), &[0, 5, 20]).unwrap();
        assert!(rep.passed());
        for s in &rep.statistics {
            assert_eq!((s.value, s.se), (1.0, Some(0.0)));
            assert_eq!(s.n, 200);
        }
    }

    #[test]
    fn martingale_passes_for_bounded_h() {
        let c = ctx("meanfield-tanh", Value::Null, 20_000, 50, 2);
        let rep = martingale_sweep(&c.coeffs, &c.dirac_path(), &c.sim, &[10, 25, 50]).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.statistics.iter().all(|s| s.se.unwrap() > 0.0));
    }

    #[test]
    fn martingale_detects_missing_compensator() {
        let c = ctx("constant", json!({"c": 1.0}), 20_000, 50, 3);
        let ens = ensemble(&c);
        let grid = *ens.grid();
        let y = ens.y_path().values();
        // add back the -h^2 dt / 2 term the update subtracts
        let broken: Vec<SamplePath> = ens
            .x_paths()
            .iter()
            .zip(ens.log_kernel_paths())
            .map(|(x, l)| {
                let mut v = l.values().to_vec();
                let mut extra = 0.0;
                for k in 0..grid.n_steps() {
                    let h = c.coeffs.eval_h(&grid, k, x.value(k), &y[..=k]).unwrap();
                    extra += h * h * grid.dt();
                    v[k + 1] += extra;
                }
                SamplePath::new(grid, v).unwrap()
            })
            .collect();
        let bad = ParticleEnsemble::from_parts(ens.y_path().clone(), ens.x_paths().to_vec(), broken, 0).unwrap();
        assert_eq!(martingale_check(&bad, &[50]).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn martingale_needs_enough_particles() {
        let c = ctx("constant", Value::Null, 10, 5, 1);
        assert!(martingale_check(&ensemble(&c), &[5]).is_err());
    }

    #[test]
    fn zeta_examples() {
        let c = ctx("meanfield-tanh", Value::Null, 500, 20, 4);
        let a = ensemble(&c);
        let other = MeasurePath::constant(*c.y_path.grid(), crate::measures::DiscreteMeasure::dirac(1.0));
        let b = simulate_ensemble(&c.coeffs, &other, &c.y_path, &c.sim).unwrap();
        let z = zeta_path(&a, &b).unwrap();
        assert_eq!(z[0], 4.0);
        assert!(z.windows(2).all(|w| w[1] >= w[0]));
        assert!(z[20] > 4.0 && z[20].is_finite());
        assert_eq!(zeta_estimate(&a, &b, 20).unwrap(), z[20]);

        let c0 = ctx("no-observation", Value::Null, 50, 10, 4);
        let e0 = ensemble(&c0);
        assert!(zeta_path(&e0, &e0).unwrap().iter().all(|&v| v == 4.0));

        let other_y = ctx("meanfield-tanh", Value::Null, 500, 20, 5);
        assert!(matches!(zeta_path(&a, &ensemble(&other_y)), Err(Error::ObservationMismatch(_))));
    }

    #[test]
    fn zeta_bound_examples() {
        let c = ctx("no-observation", Value::Null, 50, 10, 4);
        let e = ensemble(&c);
        let z = zeta_path(&e, &e).unwrap();
        let a = a_process(&SamplePath::constant(*c.y_path.grid(), 0.0), &LocalizationConfig::default()).unwrap();
        let rep = zeta_bound_check(&z, &a).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.statistics[0].value, 1.0);

        let small = LocalizationConfig::new(0.1, 1.0, vec![1.0]).unwrap();
        let a = a_process(&SamplePath::constant(*c.y_path.grid(), 0.0), &small).unwrap();
        assert_eq!(zeta_bound_check(&z, &a).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn calibrated_bound_holds() {
        let c = ctx("constant", Value::Null, 2000, 50, 6);
        let e = ensemble(&c);
        let loc = LocalizationConfig::calibrated(&c.coeffs, 1.0);
        let z = compute_z_factors(&c.coeffs, &c.y_path);
        let a = a_process(&max_running_sup(&z, &c.y_path), &loc).unwrap();
        assert!(zeta_bound_check(&zeta_path(&e, &e).unwrap(), &a).unwrap().passed());
    }

    #[test]
    fn ratio_probe_examples() {
        let c = ctx("meanfield-tanh", Value::Null, 300, 16, 7);
        let mu = c.dirac_path();
        let rep = ratio_probe(&c, &mu, &mu, &[(8, 8)], RATIO_CAP).unwrap();
        assert_eq!(rep.statistics[0].value, 0.0);
        assert!(rep.passed());

        let other = crate::conditional_law::apply_t(&c, &mu).unwrap();
        let rep = ratio_probe(&c, &mu, &other, &[(4, 8), (8, 12), (12, 16)], RATIO_CAP).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.statistics.len(), 4);
    }

    #[test]
    fn innovation_without_observation_reduces_to_y() {
        let c = ctx("no-observation", Value::Null, 10, 8, 9);
        let d = InnovationDraw::from_ensemble(&ensemble(&c), &c.coeffs, &[4, 8], Weighting::Kernel).unwrap();
        let y = c.y_path.values();
        assert!((d.first[0] - y[4]).abs() < 1e-15 && (d.first[1] - y[8]).abs() < 1e-15);
        assert!((d.second[1] - y[8] * y[8]).abs() < 1e-15);
        assert!((d.cross[1] - (y[8] - y[4]) * y[4]).abs() < 1e-15);
    }

    fn innovation_draws(params: Value, x0: f64, weighting: Weighting, draws: u64) -> Vec<InnovationDraw> {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let coeffs = builtin("constant", &params, x0).unwrap();
        (0..draws)
            .into_par_iter()
            .map(|s| {
                let c = TMapContext::new(
                    coeffs.clone(),
                    sample_observation(&g, IncrementLaw::Gaussian, 1000 + s),
                    SimConfig::new(5, IncrementLaw::Gaussian, 1000 + s),
                );
                InnovationDraw::from_ensemble(&ensemble(&c), &c.coeffs, &[10, 20], weighting).unwrap()
            })
            .collect()
    }

    #[test]
    fn innovation_detects_missing_reweighting() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let s = InnovationSettings::default();
        let good = innovation_draws(json!({"c": 3.0}), 1.5, Weighting::Kernel, 4000);
        let rep = innovation_check(&good, &g, &s).unwrap();
        assert!(rep.statistic("mean", Some(20)).unwrap().verdict == Verdict::Pass, "{rep:?}");
        let bad = innovation_draws(json!({"c": 3.0}), 1.5, Weighting::Reference, 4000);
        assert_eq!(innovation_check(&bad, &g, &s).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn innovation_requires_converged_input() {
        let c = ctx("constant", Value::Null, 10, 8, 9);
        let mut rep = solve(&c, &c.dirac_path(), &LocalizationConfig::default(), 1e-6, 5).unwrap();
        rep.converged = false;
        assert!(matches!(
            InnovationDraw::from_fixed_point(&c, &rep, &[8], Weighting::Kernel),
            Err(Error::NotConverged(_))
        ));
    }

    fn continuity(s0: f64, reps: usize) -> Result<DiagnosticReport> {
        continuity_exponent(&ContinuitySpec {
            coeffs: builtin("constant", &json!({"s0": s0}), 0.0).unwrap(),
            grid: TimeGrid::new(1.0, 32).unwrap(),
            n_particles: 200,
            base_node: 8,
            lags: vec![1, 2, 4, 8],
            replications: reps,
            seed: 11,
            localization: LocalizationConfig::default(),
            tol: 1e-6,
            max_iter: 5,
            min_slope: 1.8,
        })
    }

    #[test]
    fn continuity_edges() {
        assert!(matches!(continuity(1.0, 1), Err(Error::InsufficientReplications { got: 1, required: 30 })));
        let rep = continuity(0.0, 30).unwrap();
        assert_eq!(rep.verdict, Verdict::Degenerate);
    }

    #[test]
    fn ols_slope_exact_line() {
        assert!((ols_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-15);
    }
}
