//! Particle simulation of the decoupled system under the reference measure.
//!
//! For a frozen measure path `mu` and a fixed observation path `Y`, each
//! particle follows
//!
//! ```text
//! X_{k+1}    = X_k + b_k dt + sigma_k dB_k
//! logL_{k+1} = logL_k + h_k dY_k - h_k^2 dt / 2
//! ```
//!
//! with `sigma_k`, `b_k` evaluated on the prefixes up to node `k` and
//! `h_k = h(t_k, X_k, Y_{0..=k})`. The kernel is kept in log space, so
//! `L = exp(logL)` is positive by construction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, PathInput};
use crate::error::{Error, Result};
use crate::grid::{stream_rng, IncrementLaw, SamplePath, TimeGrid};
use crate::measures::{check_same_grid, MeasurePath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_particles: usize,
    #[serde(default)]
    pub increment_law: IncrementLaw,
    pub master_seed: u64,
    /// Drive particle `i` by the Rademacher path encoded in the bits of `i`
    /// instead of a random stream. Requires `n_particles == 2^n_steps`.
    #[serde(default)]
    pub enumerate: bool,
}

impl SimConfig {
    pub fn new(n_particles: usize, increment_law: IncrementLaw, master_seed: u64) -> Self {
        Self {
            n_particles,
            increment_law,
            master_seed,
            enumerate: false,
        }
    }

    /// One particle per Rademacher path of `grid`.
    pub fn enumerated(grid: &TimeGrid) -> Result<Self> {
        if grid.n_steps() > 30 {
            return Err(Error::InvalidArgument(format!(
                "full enumeration of {} steps is not supported",
                grid.n_steps()
            )));
        }
        Ok(Self {
            n_particles: 1 << grid.n_steps(),
            increment_law: IncrementLaw::Rademacher,
            master_seed: 0,
            enumerate: true,
        })
    }

    fn check(&self, grid: &TimeGrid) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidArgument("n_particles must be at least 1".into()));
        }
        if self.enumerate {
            if self.increment_law != IncrementLaw::Rademacher {
                return Err(Error::InvalidArgument(
                    "enumerated seeding requires rademacher increments".into(),
                ));
            }
            if grid.n_steps() > 30 || self.n_particles != 1usize << grid.n_steps() {
                return Err(Error::InvalidArgument(format!(
                    "enumerated seeding needs 2^{} particles, got {}",
                    grid.n_steps(),
                    self.n_particles
                )));
            }
        }
        Ok(())
    }
}

/// Particle paths of `X` and `log L` sharing one observation path.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    grid: TimeGrid,
    y_path: SamplePath,
    x_paths: Vec<SamplePath>,
    log_kernel_paths: Vec<SamplePath>,
    master_seed: u64,
}

impl ParticleEnsemble {
    /// Assembles an ensemble from precomputed paths, checking the shape
    /// invariants (`logL_0 = 0`, finite values, common grid).
    pub fn from_parts(
        y_path: SamplePath,
        x_paths: Vec<SamplePath>,
        log_kernel_paths: Vec<SamplePath>,
        master_seed: u64,
    ) -> Result<Self> {
        let grid = *y_path.grid();
        if x_paths.is_empty() || x_paths.len() != log_kernel_paths.len() {
            return Err(Error::InvalidArgument(
                "need the same positive number of state and kernel paths".into(),
            ));
        }
        for p in x_paths.iter().chain(&log_kernel_paths) {
            check_same_grid(&grid, p.grid())?;
            if p.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("paths must be finite".into()));
            }
        }
        if log_kernel_paths.iter().any(|p| p.value(0) != 0.0) {
            return Err(Error::InvalidArgument("log-kernel paths must start at 0".into()));
        }
        Ok(Self {
            grid,
            y_path,
            x_paths,
            log_kernel_paths,
            master_seed,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn y_path(&self) -> &SamplePath {
        &self.y_path
    }

    pub fn x_paths(&self) -> &[SamplePath] {
        &self.x_paths
    }

    pub fn log_kernel_paths(&self) -> &[SamplePath] {
        &self.log_kernel_paths
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn n_particles(&self) -> usize {
        self.x_paths.len()
    }

    /// States of all particles at `node`.
    pub fn states_at(&self, node: usize) -> Vec<f64> {
        self.x_paths.iter().map(|p| p.value(node)).collect()
    }

    /// `log L` of all particles at `node`.
    pub fn log_kernels_at(&self, node: usize) -> Vec<f64> {
        self.log_kernel_paths.iter().map(|p| p.value(node)).collect()
    }

    /// Per-node particle summary `(t, mean X, mean L, min L, max L)`.
    pub fn summary(&self) -> Vec<EnsembleSummaryRow> {
        let n = self.n_particles() as f64;
        (0..self.grid.n_nodes())
            .map(|k| {
                let mut sum_x = 0.0;
                let mut sum_l = 0.0;
                let mut min_l = f64::INFINITY;
                let mut max_l = 0.0_f64;
                for (x, l) in self.x_paths.iter().zip(&self.log_kernel_paths) {
                    let lk = l.value(k).exp();
                    sum_x += x.value(k);
                    sum_l += lk;
                    min_l = min_l.min(lk);
                    max_l = max_l.max(lk);
                }
                EnsembleSummaryRow {
                    t: self.grid.time(k),
                    mean_x: sum_x / n,
                    mean_l: sum_l / n,
                    min_l,
                    max_l,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleSummaryRow {
    pub t: f64,
    pub mean_x: f64,
    pub mean_l: f64,
    pub min_l: f64,
    pub max_l: f64,
}

/// States and log-kernels recorded only at selected nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSnapshot {
    pub nodes: Vec<usize>,
    /// `states[j][i]`: particle `i` at `nodes[j]`.
    pub states: Vec<Vec<f64>>,
    pub log_kernels: Vec<Vec<f64>>,
}

enum Increments {
    Stream {
        rng: rand_chacha::ChaCha8Rng,
        law: IncrementLaw,
        sqrt_dt: f64,
    },
    Enumerated {
        index: u64,
        step: usize,
        sqrt_dt: f64,
    },
}

impl Increments {
    fn for_particle(cfg: &SimConfig, grid: &TimeGrid, particle: usize) -> Self {
        let sqrt_dt = grid.dt().sqrt();
        if cfg.enumerate {
            Increments::Enumerated {
                index: particle as u64,
                step: 0,
                sqrt_dt,
            }
        } else {
            Increments::Stream {
                rng: stream_rng(cfg.master_seed, particle as u64),
                law: cfg.increment_law,
                sqrt_dt,
            }
        }
    }

    #[inline]
    fn next(&mut self) -> f64 {
        match self {
            Increments::Stream { rng, law, sqrt_dt } => law.draw(rng, *sqrt_dt),
            Increments::Enumerated {
                index,
                step,
                sqrt_dt,
            } => {
                let up = (*index >> *step) & 1 == 1;
                *step += 1;
                if up {
                    *sqrt_dt
                } else {
                    -*sqrt_dt
                }
            }
        }
    }
}

/// Shared, read-only inputs of one simulation run.
struct Run<'a> {
    coeffs: &'a CoefficientSet,
    grid: TimeGrid,
    y: &'a [f64],
    mu: &'a MeasurePath,
    g_values: Vec<Vec<f64>>,
    cfg: SimConfig,
    /// Steps `k >= kernel_stop` leave `log L` unchanged.
    kernel_stop: usize,
    /// Last node simulated.
    last_node: usize,
}

impl<'a> Run<'a> {
    fn new(
        coeffs: &'a CoefficientSet,
        mu_path: &'a MeasurePath,
        y_path: &'a SamplePath,
        cfg: SimConfig,
        kernel_stop: usize,
        last_node: usize,
    ) -> Result<Self> {
        let grid = *y_path.grid();
        check_same_grid(&grid, mu_path.grid())?;
        cfg.check(&grid)?;
        grid.check_node(kernel_stop)?;
        grid.check_node(last_node)?;
        if y_path.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("observation path must be finite".into()));
        }
        Ok(Self {
            coeffs,
            grid,
            y: y_path.values(),
            mu: mu_path,
            g_values: coeffs.observation_factors(&grid, y_path.values()),
            cfg,
            kernel_stop,
            last_node,
        })
    }

    /// Fills `x` and `log_l` (length `last_node + 1`) for particle `i`.
    fn particle(&self, i: usize, x: &mut [f64], log_l: &mut [f64]) -> Result<()> {
        let dt = self.grid.dt();
        let mut inc = Increments::for_particle(&self.cfg, &self.grid, i);
        let drift = self.coeffs.has_drift();
        x[0] = self.coeffs.x0();
        log_l[0] = 0.0;
        for k in 0..self.last_node {
            let t = self.grid.time(k);
            let input = PathInput {
                t,
                node: k,
                x_prefix: &x[..=k],
                y_prefix: &self.y[..=k],
                mu_prefix: self.mu.prefix(k),
            };
            let sigma = self.coeffs.sigma(&input);
            let b = if drift { self.coeffs.drift(&input) } else { 0.0 };
            let db = inc.next();
            let xk = x[k];
            x[k + 1] = xk + b * dt + sigma * db;
            log_l[k + 1] = if k < self.kernel_stop {
                let h = self.coeffs.h_with_factors(t, xk, &self.g_values, k);
                let dy = self.y[k + 1] - self.y[k];
                log_l[k] + h * dy - 0.5 * h * h * dt
            } else {
                log_l[k]
            };
            if !(x[k + 1].is_finite() && log_l[k + 1].is_finite()) {
                return Err(Error::NumericOverflow {
                    step: k + 1,
                    particle: Some(i),
                });
            }
        }
        Ok(())
    }

    fn full(&self) -> Result<ParticleEnsemble> {
        let n_nodes = self.grid.n_nodes();
        let paths: Vec<(Vec<f64>, Vec<f64>)> = (0..self.cfg.n_particles)
            .into_par_iter()
            .map(|i| {
                let mut x = vec![0.0; n_nodes];
                let mut l = vec![0.0; n_nodes];
                let m = self.last_node + 1;
                self.particle(i, &mut x[..m], &mut l[..m])?;
                // unsimulated tail holds the last simulated value
                for k in m..n_nodes {
                    x[k] = x[m - 1];
                    l[k] = l[m - 1];
                }
                Ok((x, l))
            })
            .collect::<Result<_>>()?;
        let (xs, ls): (Vec<_>, Vec<_>) = paths
            .into_iter()
            .map(|(x, l)| {
                (
                    SamplePath::new(self.grid, x).expect("sized to grid"),
                    SamplePath::new(self.grid, l).expect("sized to grid"),
                )
            })
            .unzip();
        Ok(ParticleEnsemble {
            grid: self.grid,
            y_path: SamplePath::new(self.grid, self.y.to_vec())?,
            x_paths: xs,
            log_kernel_paths: ls,
            master_seed: self.cfg.master_seed,
        })
    }

    fn snapshot(&self, nodes: &[usize]) -> Result<EnsembleSnapshot> {
        let m = self.last_node + 1;
        let per_particle: Vec<Vec<(f64, f64)>> = (0..self.cfg.n_particles)
            .into_par_iter()
            .map_init(
                || (vec![0.0; m], vec![0.0; m]),
                |(x, l), i| {
                    self.particle(i, x, l)?;
                    Ok(nodes.iter().map(|&k| (x[k], l[k])).collect())
                },
            )
            .collect::<Result<_>>()?;
        let mut states = vec![Vec::with_capacity(per_particle.len()); nodes.len()];
        let mut log_kernels = vec![Vec::with_capacity(per_particle.len()); nodes.len()];
        for row in per_particle {
            for (j, (x, l)) in row.into_iter().enumerate() {
                states[j].push(x);
                log_kernels[j].push(l);
            }
        }
        Ok(EnsembleSnapshot {
            nodes: nodes.to_vec(),
            states,
            log_kernels,
        })
    }
}

/// Simulates the decoupled system for the frozen measure path `mu_path`.
pub fn simulate_ensemble(
    coeffs: &CoefficientSet,
    mu_path: &MeasurePath,
    y_path: &SamplePath,
    cfg: &SimConfig,
) -> Result<ParticleEnsemble> {
    let n = y_path.grid().n_steps();
    Run::new(coeffs, mu_path, y_path, *cfg, n, n)?.full()
}

/// Same as [`simulate_ensemble`] with the kernel stopped at `kernel_stop`:
/// `h` is replaced by `h 1_{k < kernel_stop}`, so `L_k = L_{k ∧ kernel_stop}`
/// while `X` keeps evolving.
pub fn simulate_ensemble_stopped(
    coeffs: &CoefficientSet,
    mu_path: &MeasurePath,
    y_path: &SamplePath,
    cfg: &SimConfig,
    kernel_stop: usize,
) -> Result<ParticleEnsemble> {
    let n = y_path.grid().n_steps();
    Run::new(coeffs, mu_path, y_path, *cfg, kernel_stop, n)?.full()
}

/// Runs the simulation through `last_node` only, keeping paths in memory.
/// Nodes after `last_node` repeat the last simulated value.
pub(crate) fn simulate_ensemble_until(
    coeffs: &CoefficientSet,
    mu_path: &MeasurePath,
    y_path: &SamplePath,
    cfg: &SimConfig,
    last_node: usize,
) -> Result<ParticleEnsemble> {
    Run::new(coeffs, mu_path, y_path, *cfg, last_node, last_node)?.full()
}

/// Records states and log-kernels at `nodes` only; memory is
/// `O(n_particles * nodes.len())` regardless of the grid size.
pub fn simulate_snapshots(
    coeffs: &CoefficientSet,
    mu_path: &MeasurePath,
    y_path: &SamplePath,
    cfg: &SimConfig,
    nodes: &[usize],
) -> Result<EnsembleSnapshot> {
    let n = y_path.grid().n_steps();
    for &k in nodes {
        y_path.grid().check_node(k)?;
    }
    Run::new(coeffs, mu_path, y_path, *cfg, n, n)?.snapshot(nodes)
}

/// Paths `(X, log L)` of the single particle `particle`, driven by its own
/// increment stream of `cfg`.
pub fn simulate_particle(
    coeffs: &CoefficientSet,
    mu_path: &MeasurePath,
    y_path: &SamplePath,
    cfg: &SimConfig,
    particle: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = y_path.grid().n_steps();
    let run = Run::new(coeffs, mu_path, y_path, *cfg, n, n)?;
    let mut x = vec![0.0; n + 1];
    let mut l = vec![0.0; n + 1];
    run.particle(particle, &mut x, &mut l)?;
    Ok((x, l))
}

/// Kernel values `L_i` and their inverses `1 / L_i` at `t_node`.
pub fn kernel_values(ensemble: &ParticleEnsemble, t_node: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    ensemble.grid.check_node(t_node)?;
    Ok(ensemble
        .log_kernel_paths
        .iter()
        .map(|p| {
            let l = p.value(t_node);
            (l.exp(), (-l).exp())
        })
        .unzip())
}

/// `Z_k = Σ_{j<k} g(t_j, Y_{0..=j}) (Y_{j+1} - Y_j)`.
pub fn compute_z<G>(g: G, y_path: &SamplePath) -> SamplePath
where
    G: Fn(f64, &[f64]) -> f64,
{
    let grid = *y_path.grid();
    let y = y_path.values();
    let mut z = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    z.push(acc);
    for k in 0..grid.n_steps() {
        acc += g(grid.time(k), &y[..=k]) * (y[k + 1] - y[k]);
        z.push(acc);
    }
    SamplePath::new(grid, z).expect("sized to grid")
}

/// One `Z` path per observation factor of `coeffs`.
pub fn compute_z_factors(coeffs: &CoefficientSet, y_path: &SamplePath) -> Vec<SamplePath> {
    coeffs
        .h_factors()
        .iter()
        .map(|fac| compute_z(|t, y| (fac.g)(t, y), y_path))
        .collect()
}
