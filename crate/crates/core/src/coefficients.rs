//! Coefficient contracts: the diffusion `sigma`, the optional drift `b`, and
//! the observation function `h(t, x, y) = Σ f_i(t, x) g_i(t, y_{·∧t})` kept in
//! factorized form.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::grid::{stream_rng, TimeGrid};
use crate::measures::{exact_w1, DiscreteMeasure};

/// Arguments of a path-dependent coefficient at node `node`.
///
/// All prefixes cover nodes `0..=node`.
#[derive(Debug, Clone, Copy)]
pub struct PathInput<'a> {
    pub t: f64,
    pub node: usize,
    pub x_prefix: &'a [f64],
    pub y_prefix: &'a [f64],
    pub mu_prefix: &'a [DiscreteMeasure],
}

impl PathInput<'_> {
    pub fn x(&self) -> f64 {
        self.x_prefix[self.node]
    }

    pub fn y(&self) -> f64 {
        self.y_prefix[self.node]
    }

    pub fn mu(&self) -> &DiscreteMeasure {
        &self.mu_prefix[self.node]
    }
}

pub type PathFn = Arc<dyn Fn(&PathInput<'_>) -> f64 + Send + Sync>;
/// `f_i(t, x)`.
pub type StateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// `g_i(t, y_{·∧t})`, receiving the observation prefix.
pub type ObservationFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// One term `f(t, x) g(t, y)` of the observation function.
#[derive(Clone)]
pub struct HFactor {
    pub f: StateFn,
    pub g: ObservationFn,
    /// `sup |f|`.
    pub f_bound: f64,
    /// `sup |∂_x f|`, if certified.
    pub f_d1_bound: Option<f64>,
    /// `sup |∂_xx f|`, if certified.
    pub f_d2_bound: Option<f64>,
    /// `sup |g|`.
    pub g_bound: f64,
}

impl fmt::Debug for HFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HFactor")
            .field("f_bound", &self.f_bound)
            .field("f_d1_bound", &self.f_d1_bound)
            .field("f_d2_bound", &self.f_d2_bound)
            .field("g_bound", &self.g_bound)
            .finish_non_exhaustive()
    }
}

/// Declared bounds that `validate` checks by probing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeclaredBounds {
    pub sigma: f64,
    pub h: f64,
    pub drift: f64,
    /// Lipschitz constant of `sigma` and `b` in
    /// `(sup |x - x'|) + (sup W_1(mu, mu'))`.
    pub lipschitz: f64,
}

#[derive(Clone)]
pub struct CoefficientSet {
    name: String,
    sigma: PathFn,
    drift: Option<PathFn>,
    h_factors: Vec<HFactor>,
    bounds: DeclaredBounds,
    x0: f64,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("has_drift", &self.drift.is_some())
            .field("h_factors", &self.h_factors)
            .field("bounds", &self.bounds)
            .field("x0", &self.x0)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    pub fn builder(name: impl Into<String>) -> CoefficientSetBuilder {
        CoefficientSetBuilder {
            name: name.into(),
            sigma: None,
            drift: None,
            h_factors: Vec::new(),
            lipschitz: 0.0,
            x0: 0.0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn bounds(&self) -> &DeclaredBounds {
        &self.bounds
    }

    pub fn h_factors(&self) -> &[HFactor] {
        &self.h_factors
    }

    pub fn has_drift(&self) -> bool {
        self.drift.is_some()
    }

    pub fn sigma(&self, input: &PathInput<'_>) -> f64 {
        (self.sigma)(input)
    }

    pub fn drift(&self, input: &PathInput<'_>) -> f64 {
        self.drift.as_ref().map_or(0.0, |b| b(input))
    }

    /// `Σ f_i(t, x) g_i(t, y_prefix)` with `y_prefix` covering nodes
    /// `0..=t_node`.
    pub fn eval_h(&self, grid: &TimeGrid, t_node: usize, x: f64, y_prefix: &[f64]) -> Result<f64> {
        grid.check_node(t_node)?;
        if y_prefix.len() != t_node + 1 {
            return Err(Error::GridMismatch(format!(
                "observation prefix has {} values, node {t_node} needs {}",
                y_prefix.len(),
                t_node + 1
            )));
        }
        let t = grid.time(t_node);
        Ok(self
            .h_factors
            .iter()
            .map(|fac| (fac.f)(t, x) * (fac.g)(t, y_prefix))
            .sum())
    }

    /// `g_i(t_k, Y_{0..=k})` for every factor `i` and node `k`, laid out
    /// factor-major. These do not depend on the particle, so the simulator
    /// evaluates them once per observation path.
    pub fn observation_factors(&self, grid: &TimeGrid, y: &[f64]) -> Vec<Vec<f64>> {
        self.h_factors
            .iter()
            .map(|fac| {
                (0..y.len())
                    .map(|k| (fac.g)(grid.time(k), &y[..=k]))
                    .collect()
            })
            .collect()
    }

    /// `h` at a state value given precomputed `g` values for the node.
    #[inline]
    pub(crate) fn h_with_factors(&self, t: f64, x: f64, g_values: &[Vec<f64>], node: usize) -> f64 {
        let mut h = 0.0;
        for (fac, g) in self.h_factors.iter().zip(g_values) {
            h += (fac.f)(t, x) * g[node];
        }
        h
    }
}

pub struct CoefficientSetBuilder {
    name: String,
    sigma: Option<(PathFn, f64)>,
    drift: Option<(PathFn, f64)>,
    h_factors: Vec<HFactor>,
    lipschitz: f64,
    x0: f64,
}

impl CoefficientSetBuilder {
    pub fn sigma<F>(mut self, bound: f64, f: F) -> Self
    where
        F: Fn(&PathInput<'_>) -> f64 + Send + Sync + 'static,
    {
        self.sigma = Some((Arc::new(f), bound));
        self
    }

    pub fn drift<F>(mut self, bound: f64, f: F) -> Self
    where
        F: Fn(&PathInput<'_>) -> f64 + Send + Sync + 'static,
    {
        self.drift = Some((Arc::new(f), bound));
        self
    }

    pub fn factor(mut self, factor: HFactor) -> Self {
        self.h_factors.push(factor);
        self
    }

    pub fn lipschitz(mut self, k: f64) -> Self {
        self.lipschitz = k;
        self
    }

    pub fn x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn build(self) -> Result<CoefficientSet> {
        let (sigma, sigma_bound) = self
            .sigma
            .ok_or_else(|| Error::InvalidArgument("sigma is required".into()))?;
        let drift_bound = self.drift.as_ref().map_or(0.0, |d| d.1);
        let h_bound: f64 = self.h_factors.iter().map(|f| f.f_bound * f.g_bound).sum();
        for v in [sigma_bound, drift_bound, h_bound, self.lipschitz] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "declared bounds must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !self.x0.is_finite() {
            return Err(Error::InvalidArgument("x0 must be finite".into()));
        }
        Ok(CoefficientSet {
            name: self.name,
            sigma,
            drift: self.drift.map(|d| d.0),
            h_factors: self.h_factors,
            bounds: DeclaredBounds {
                sigma: sigma_bound,
                h: h_bound,
                drift: drift_bound,
                lipschitz: self.lipschitz,
            },
            x0: self.x0,
        })
    }
}

/// Free-function form of [`CoefficientSet::eval_h`].
pub fn eval_h(
    coeffs: &CoefficientSet,
    grid: &TimeGrid,
    t_node: usize,
    x: f64,
    y_prefix: &[f64],
) -> Result<f64> {
    coeffs.eval_h(grid, t_node, x, y_prefix)
}

const BOUND_SLACK: f64 = 1e-9;
const PROBE_X_RANGE: f64 = 10.0;
const FD_STEP: f64 = 1e-4;

/// Location of a probe, reported with validation failures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeWitness {
    pub t: f64,
    pub node: usize,
    pub x: f64,
    pub y: f64,
    pub mu_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationFailure {
    pub quantity: String,
    pub observed: f64,
    pub declared: f64,
    pub probe: ProbeWitness,
}

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} = {} exceeds declared {} at t={}, x={}",
            self.quantity, self.observed, self.declared, self.probe.t, self.probe.x
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub probes: usize,
    pub max_sigma: f64,
    pub max_h: f64,
    pub max_drift: f64,
    pub max_lipschitz_ratio: f64,
    pub max_f: Vec<f64>,
    pub max_f_d1: Vec<f64>,
    pub max_f_d2: Vec<f64>,
    pub max_g: Vec<f64>,
}

fn random_measure(rng: &mut impl Rng) -> DiscreteMeasure {
    let n = rng.random_range(1..=4);
    let atoms = (0..n)
        .map(|_| rng.random_range(-PROBE_X_RANGE..PROBE_X_RANGE))
        .collect();
    let weights = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    DiscreteMeasure::normalize(atoms, weights).expect("positive weights")
}

/// Probes the declared bounds of `coeffs` at `probe_budget` random inputs with
/// `|x| <= 10` on a 16-step unit grid.
pub fn validate(coeffs: &CoefficientSet, probe_budget: usize, seed: u64) -> Result<ValidationReport> {
    if probe_budget == 0 {
        return Err(Error::InvalidArgument("probe_budget must be at least 1".into()));
    }
    let grid = TimeGrid::new(1.0, 16)?;
    let mut rng = stream_rng(seed, 0);
    let nf = coeffs.h_factors.len();
    let mut report = ValidationReport {
        probes: probe_budget,
        max_sigma: 0.0,
        max_h: 0.0,
        max_drift: 0.0,
        max_lipschitz_ratio: 0.0,
        max_f: vec![0.0; nf],
        max_f_d1: vec![0.0; nf],
        max_f_d2: vec![0.0; nf],
        max_g: vec![0.0; nf],
    };
    let b = coeffs.bounds;

    for _ in 0..probe_budget {
        let node = rng.random_range(0..=grid.n_steps());
        let t = grid.time(node);
        let x: Vec<f64> = (0..=node)
            .map(|_| rng.random_range(-PROBE_X_RANGE..PROBE_X_RANGE))
            .collect();
        let mut y = Vec::with_capacity(node + 1);
        let mut acc = 0.0;
        for _ in 0..=node {
            y.push(acc);
            acc += rng.random_range(-1.0..1.0);
        }
        let mu: Vec<DiscreteMeasure> = (0..=node).map(|_| random_measure(&mut rng)).collect();
        let input = PathInput {
            t,
            node,
            x_prefix: &x,
            y_prefix: &y,
            mu_prefix: &mu,
        };
        let witness = || ProbeWitness {
            t,
            node,
            x: x[node],
            y: y[node],
            mu_mean: mu[node].mean(),
        };
        let fail = |quantity: &str, observed: f64, declared: f64| {
            Error::Validation(Box::new(ValidationFailure {
                quantity: quantity.to_string(),
                observed,
                declared,
                probe: witness(),
            }))
        };
        let check = |quantity: &str, observed: f64, declared: f64| -> Result<()> {
            if !observed.is_finite() || observed > declared + BOUND_SLACK {
                Err(fail(quantity, observed, declared))
            } else {
                Ok(())
            }
        };

        let sigma = coeffs.sigma(&input).abs();
        check("|sigma|", sigma, b.sigma)?;
        report.max_sigma = report.max_sigma.max(sigma);

        let drift = coeffs.drift(&input).abs();
        check("|b|", drift, b.drift)?;
        report.max_drift = report.max_drift.max(drift);

        let h = coeffs.eval_h(&grid, node, x[node], &y)?.abs();
        check("|h|", h, b.h)?;
        report.max_h = report.max_h.max(h);

        for (i, fac) in coeffs.h_factors.iter().enumerate() {
            let xn = x[node];
            let f0 = (fac.f)(t, xn);
            let fp = (fac.f)(t, xn + FD_STEP);
            let fm = (fac.f)(t, xn - FD_STEP);
            let g = (fac.g)(t, &y);
            let d1 = ((fp - fm) / (2.0 * FD_STEP)).abs();
            let d2 = ((fp - 2.0 * f0 + fm) / (FD_STEP * FD_STEP)).abs();
            check(&format!("|f_{i}|"), f0.abs(), fac.f_bound)?;
            check(&format!("|g_{i}|"), g.abs(), fac.g_bound)?;
            if let Some(bd) = fac.f_d1_bound {
                check(&format!("|d/dx f_{i}|"), d1, bd + 1e-6)?;
            }
            if let Some(bd) = fac.f_d2_bound {
                check(&format!("|d2/dx2 f_{i}|"), d2, bd + 1e-4)?;
            }
            report.max_f[i] = report.max_f[i].max(f0.abs());
            report.max_g[i] = report.max_g[i].max(g.abs());
            report.max_f_d1[i] = report.max_f_d1[i].max(d1);
            report.max_f_d2[i] = report.max_f_d2[i].max(d2);
        }

        // Lipschitz probe against a perturbed state prefix and measure prefix.
        let scale = 10f64.powf(rng.random_range(-3.0..1.0));
        let x2: Vec<f64> = x
            .iter()
            .map(|v| v + scale * rng.random_range(-1.0..1.0))
            .collect();
        let mu2: Vec<DiscreteMeasure> = if rng.random::<bool>() {
            mu.clone()
        } else {
            (0..=node).map(|_| random_measure(&mut rng)).collect()
        };
        let dx = x.iter().zip(&x2).fold(0.0_f64, |m, (a, c)| m.max((a - c).abs()));
        let dmu = mu
            .iter()
            .zip(&mu2)
            .fold(0.0_f64, |m, (a, c)| m.max(exact_w1(a, c)));
        let denom = dx + dmu;
        if denom > 0.0 {
            let input2 = PathInput {
                t,
                node,
                x_prefix: &x2,
                y_prefix: &y,
                mu_prefix: &mu2,
            };
            let r_sigma = (coeffs.sigma(&input) - coeffs.sigma(&input2)).abs() / denom;
            let r_drift = (coeffs.drift(&input) - coeffs.drift(&input2)).abs() / denom;
            let ratio = r_sigma.max(r_drift);
            check("Lipschitz ratio", ratio, b.lipschitz)?;
            report.max_lipschitz_ratio = report.max_lipschitz_ratio.max(ratio);
        }
    }
    Ok(report)
}

/// `max |tanh''| = 4 / (3 sqrt 3)`.
const TANH_D2_MAX: f64 = 0.769_800_358_919_501;

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 4] = ["constant", "meanfield-tanh", "linear-clipped", "no-observation"];

struct Params<'a> {
    scenario: &'a str,
    map: Map<String, Value>,
}

impl<'a> Params<'a> {
    fn new(scenario: &'a str, params: &Value, allowed: &[&str]) -> Result<Self> {
        let map = match params {
            Value::Null => Map::new(),
            Value::Object(m) => m.clone(),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "parameters for `{scenario}` must be an object, got {other}"
                )))
            }
        };
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "unknown parameter `{k}` for scenario `{scenario}` (expected one of {allowed:?})"
            )));
        }
        Ok(Self { scenario, map })
    }

    fn get(&self, key: &str, default: f64) -> Result<f64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "parameter `{key}` of `{}` must be a finite number",
                        self.scenario
                    ))
                }),
        }
    }
}

fn tanh_factor(c: f64, g: ObservationFn, g_bound: f64) -> HFactor {
    HFactor {
        f: Arc::new(move |_t, x| c * x.tanh()),
        g,
        f_bound: c.abs(),
        f_d1_bound: Some(c.abs()),
        f_d2_bound: Some(TANH_D2_MAX * c.abs()),
        g_bound,
    }
}

fn unit_g() -> ObservationFn {
    Arc::new(|_t, _y| 1.0)
}

/// Builtin scenarios.
///
/// | name | sigma | h | params (defaults) |
/// |---|---|---|---|
/// | `constant` | `s0` | `c tanh(x)` | `s0 = 1`, `c = 1` |
/// | `meanfield-tanh` | `s0 + s1 tanh(mean(mu_t))` | `c tanh(x) cos(y_t)` | `s0 = 1`, `s1 = 0.5`, `c = 1` |
/// | `linear-clipped` | `s0` | `c clip(x, -r, r)` | `s0 = 1`, `c = 0.5`, `r = 8` |
/// | `no-observation` | `s0` | `0` | `s0 = 1` |
pub fn builtin(name: &str, params: &Value, x0: f64) -> Result<CoefficientSet> {
    let cs = match name {
        "constant" => {
            let p = Params::new(name, params, &["s0", "c"])?;
            let s0 = p.get("s0", 1.0)?;
            let c = p.get("c", 1.0)?;
            CoefficientSet::builder(name)
                .sigma(s0.abs(), move |_| s0)
                .factor(tanh_factor(c, unit_g(), 1.0))
                .lipschitz(0.0)
        }
        "meanfield-tanh" => {
            let p = Params::new(name, params, &["s0", "s1", "c"])?;
            let s0 = p.get("s0", 1.0)?;
            let s1 = p.get("s1", 0.5)?;
            let c = p.get("c", 1.0)?;
            let g: ObservationFn = Arc::new(|_t, y: &[f64]| y[y.len() - 1].cos());
            CoefficientSet::builder(name)
                .sigma(s0.abs() + s1.abs(), move |inp| s0 + s1 * inp.mu().mean().tanh())
                .factor(tanh_factor(c, g, 1.0))
                .lipschitz(s1.abs())
        }
        "linear-clipped" => {
            let p = Params::new(name, params, &["s0", "c", "r"])?;
            let s0 = p.get("s0", 1.0)?;
            let c = p.get("c", 0.5)?;
            let r = p.get("r", 8.0)?;
            if r <= 0.0 {
                return Err(Error::InvalidArgument("clip radius r must be positive".into()));
            }
            CoefficientSet::builder(name)
                .sigma(s0.abs(), move |_| s0)
                .factor(HFactor {
                    f: Arc::new(move |_t, x| c * x.clamp(-r, r)),
                    g: unit_g(),
                    f_bound: c.abs() * r,
                    f_d1_bound: Some(c.abs()),
                    // kinks at ±r: only Lipschitz, no second derivative bound
                    f_d2_bound: None,
                    g_bound: 1.0,
                })
                .lipschitz(0.0)
        }
        "no-observation" => {
            let p = Params::new(name, params, &["s0"])?;
            let s0 = p.get("s0", 1.0)?;
            CoefficientSet::builder(name)
                .sigma(s0.abs(), move |_| s0)
                .factor(HFactor {
                    f: Arc::new(|_t, _x| 0.0),
                    g: Arc::new(|_t, _y| 0.0),
                    f_bound: 0.0,
                    f_d1_bound: Some(0.0),
                    f_d2_bound: Some(0.0),
                    g_bound: 0.0,
                })
                .lipschitz(0.0)
        }
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    cs.x0(x0).build()
}
