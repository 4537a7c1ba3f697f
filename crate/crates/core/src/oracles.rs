//! Independent reference computations: exhaustive enumeration of the
//! Rademacher-driven dynamics, the Kalman-Bucy filter for the linear model,
//! and a Riemann-sum W1.

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, PathInput};
use crate::error::{Error, Result};
use crate::grid::{SamplePath, TimeGrid};
use crate::measures::{check_same_grid, sup_w1_path, DiscreteMeasure, MeasurePath};

/// Largest grid the tree oracle enumerates.
pub const MAX_TREE_STEPS: usize = 10;

/// Coefficients and a fixed observation path, small enough to enumerate all
/// `2^n_steps` Rademacher paths of `B1`.
#[derive(Debug, Clone)]
pub struct TreeInstance {
    coeffs: CoefficientSet,
    y_path: SamplePath,
}

impl TreeInstance {
    pub fn new(coeffs: CoefficientSet, y_path: SamplePath) -> Result<Self> {
        let n = y_path.grid().n_steps();
        if n > MAX_TREE_STEPS {
            return Err(Error::TreeTooLarge {
                n_steps: n,
                max: MAX_TREE_STEPS,
            });
        }
        Ok(Self { coeffs, y_path })
    }

    /// Observation path whose increments are the Rademacher steps encoded in
    /// the bits of `index`.
    pub fn rademacher_observation(grid: &TimeGrid, index: u64) -> SamplePath {
        let inc = crate::grid::enumerated_increments(grid, index);
        SamplePath::from_increments(*grid, 0.0, &inc).expect("increment count matches grid")
    }

    pub fn grid(&self) -> &TimeGrid {
        self.y_path.grid()
    }

    pub fn coeffs(&self) -> &CoefficientSet {
        &self.coeffs
    }

    pub fn y_path(&self) -> &SamplePath {
        &self.y_path
    }

    pub fn dirac_path(&self) -> MeasurePath {
        MeasurePath::constant(*self.grid(), DiscreteMeasure::dirac(self.coeffs.x0()))
    }
}

/// Depth-first walk over the binary tree of `B1` paths. At depth `k` each
/// visited prefix contributes its state and log-kernel to the node-`k` cloud.
struct Walk<'a> {
    inst: &'a TreeInstance,
    mu: &'a MeasurePath,
    sqrt_dt: f64,
    x: Vec<f64>,
    log_l: Vec<f64>,
    clouds: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Walk<'_> {
    fn visit(&mut self, k: usize) -> Result<()> {
        self.clouds[k].0.push(self.x[k]);
        self.clouds[k].1.push(self.log_l[k]);
        let grid = *self.inst.grid();
        if k == grid.n_steps() {
            return Ok(());
        }
        let coeffs = &self.inst.coeffs;
        let y = self.inst.y_path.values();
        let dt = grid.dt();
        let input = PathInput {
            t: grid.time(k),
            node: k,
            x_prefix: &self.x[..=k],
            y_prefix: &y[..=k],
            mu_prefix: self.mu.prefix(k),
        };
        let sigma = coeffs.sigma(&input);
        let b = coeffs.drift(&input);
        let h = coeffs.eval_h(&grid, k, self.x[k], &y[..=k])?;
        let log_next = self.log_l[k] + h * (y[k + 1] - y[k]) - 0.5 * h * h * dt;
        for sign in [-1.0, 1.0] {
            self.x[k + 1] = self.x[k] + b * dt + sigma * sign * self.sqrt_dt;
            self.log_l[k + 1] = log_next;
            if !(self.x[k + 1].is_finite() && log_next.is_finite()) {
                return Err(Error::NumericOverflow {
                    step: k + 1,
                    particle: None,
                });
            }
            self.visit(k + 1)?;
        }
        Ok(())
    }
}

/// Exact conditional-law path of the Rademacher-discretized system with the
/// measure path frozen at `mu_path`.
///
/// Every prefix at depth `k` has probability `2^-k`, which is common to the
/// node and cancels on normalization.
pub fn tree_apply_t(instance: &TreeInstance, mu_path: &MeasurePath) -> Result<MeasurePath> {
    let grid = *instance.grid();
    check_same_grid(&grid, mu_path.grid())?;
    let n = grid.n_steps();
    if n > MAX_TREE_STEPS {
        return Err(Error::TreeTooLarge {
            n_steps: n,
            max: MAX_TREE_STEPS,
        });
    }
    let mut walk = Walk {
        inst: instance,
        mu: mu_path,
        sqrt_dt: grid.dt().sqrt(),
        x: vec![0.0; n + 1],
        log_l: vec![0.0; n + 1],
        clouds: (0..=n)
            .map(|k| (Vec::with_capacity(1 << k), Vec::with_capacity(1 << k)))
            .collect(),
    };
    walk.x[0] = instance.coeffs.x0();
    walk.visit(0)?;
    let laws = walk
        .clouds
        .into_iter()
        .map(|(atoms, logs)| {
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w = logs.iter().map(|l| (l - top).exp()).collect();
            DiscreteMeasure::normalize(atoms, w)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasurePath::new(grid, laws)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeFixedPoint {
    pub path: MeasurePath,
    /// Applications after the first.
    pub iterations: usize,
    pub distances: Vec<f64>,
}

/// Picard iteration of [`tree_apply_t`] from the Dirac path at `x0`.
pub fn tree_fixed_point(instance: &TreeInstance, tol: f64, max_iter: usize) -> Result<TreeFixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let n = instance.grid().n_steps();
    let mut current = instance.dirac_path();
    let mut distances = Vec::new();
    for application in 0..=max_iter {
        let next = tree_apply_t(instance, &current)?;
        let d = sup_w1_path(&next, &current, n)?;
        distances.push(d);
        current = next;
        if d <= tol {
            return Ok(TreeFixedPoint {
                path: current,
                iterations: application,
                distances,
            });
        }
    }
    Err(Error::NonConvergence { distances })
}

/// Linear model `dX = sigma0 dB1`, `dY = c X dt + dB2`, `X_0 ~ N(x0, p0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanSpec {
    pub sigma0: f64,
    pub c: f64,
    pub x0: f64,
    #[serde(default)]
    pub p0: f64,
}

impl KalmanSpec {
    pub fn new(sigma0: f64, c: f64, x0: f64, p0: f64) -> Result<Self> {
        let spec = Self { sigma0, c, x0, p0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma0 must be positive, got {}", self.sigma0)));
        }
        if !self.c.is_finite() || !self.x0.is_finite() {
            return Err(Error::InvalidArgument("c and x0 must be finite".into()));
        }
        if !(self.p0 >= 0.0 && self.p0.is_finite()) {
            return Err(Error::InvalidArgument(format!("p0 must be nonnegative, got {}", self.p0)));
        }
        Ok(())
    }

    /// Equilibrium of the Riccati flow, `sigma0 / |c|`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma0 / self.c.abs()
    }
}

/// Posterior mean and variance of `X_t` given `Y` on `[0, t]`, by the Euler
/// recursion of the Kalman-Bucy equations.
pub fn kalman_posterior(spec: &KalmanSpec, y_path: &SamplePath) -> Result<(SamplePath, SamplePath)> {
    spec.validate()?;
    let grid = *y_path.grid();
    let dt = grid.dt();
    let y = y_path.values();
    let (c, s2) = (spec.c, spec.sigma0 * spec.sigma0);
    let mut m = Vec::with_capacity(y.len());
    let mut p = Vec::with_capacity(y.len());
    m.push(spec.x0);
    p.push(spec.p0);
    for k in 0..grid.n_steps() {
        let (mk, pk) = (m[k], p[k]);
        m.push(mk + c * pk * (y[k + 1] - y[k] - c * mk * dt));
        p.push((pk + (s2 - c * c * pk * pk) * dt).max(0.0));
    }
    Ok((SamplePath::new(grid, m)?, SamplePath::new(grid, p)?))
}

/// `∫ |F_mu - F_nu|` by the midpoint rule on `resolution` cells spanning the
/// joint support. The absolute error is at most the cell width; resolutions
/// below 1000 are raised to 1000.
pub fn cdf_integral_w1(mu: &DiscreteMeasure, nu: &DiscreteMeasure, resolution: usize) -> f64 {
    let n = resolution.max(1000);
    let lo = mu.atoms()[0].min(nu.atoms()[0]);
    let hi = mu.atoms()[mu.len() - 1].max(nu.atoms()[nu.len() - 1]);
    if hi <= lo {
        return 0.0;
    }
    let width = (hi - lo) / n as f64;
    let cdf = |m: &DiscreteMeasure, idx: &mut usize, acc: &mut f64, x: f64| {
        while *idx < m.len() && m.atoms()[*idx] <= x {
            *acc += m.weights()[*idx];
            *idx += 1;
        }
        *acc
    };
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0, 0.0);
    let mut total = 0.0;
    for cell in 0..n {
        let x = lo + (cell as f64 + 0.5) * width;
        let a = cdf(mu, &mut i, &mut fa, x);
        let b = cdf(nu, &mut j, &mut fb, x);
        total += (a - b).abs();
    }
    total * width
}

/// One checkpoint of a filter-versus-Kalman comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KalmanRow {
    pub node: usize,
    pub t: f64,
    pub filter_mean: f64,
    pub kalman_mean: f64,
    pub filter_var: f64,
    pub kalman_var: f64,
    /// Posterior mass outside the clip radius.
    pub clipped_mass: f64,
}

impl KalmanRow {
    pub fn mean_error(&self) -> f64 {
        (self.filter_mean - self.kalman_mean).abs()
    }

    pub fn var_rel_error(&self) -> f64 {
        (self.filter_var - self.kalman_var).abs() / self.kalman_var
    }
}

/// Compares filter laws at `nodes` with the Kalman posterior.
pub fn compare_to_kalman(
    laws: &[(usize, DiscreteMeasure)],
    kalman: &(SamplePath, SamplePath),
    clip_radius: f64,
) -> Result<Vec<KalmanRow>> {
    let (m, p) = kalman;
    laws.iter()
        .map(|(node, law)| {
            m.grid().check_node(*node)?;
            Ok(KalmanRow {
                node: *node,
                t: m.grid().time(*node),
                filter_mean: law.mean(),
                kalman_mean: m.value(*node),
                filter_var: law.variance(),
                kalman_var: p.value(*node),
                clipped_mass: law.mass_outside(clip_radius),
            })
        })
        .collect()
}
