//! Uniform time grids, sample paths and seeded increment streams.
//!
//! Every random stream in the crate is a ChaCha8 generator addressed by a
//! `(seed, stream)` pair, so particle `i` of an ensemble always sees the same
//! increments no matter how the ensemble is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stream id reserved for the observation path drawn from a master seed.
pub const OBSERVATION_STREAM: u64 = u64::MAX;

/// Uniform discretization of `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
        }
        Ok(Self {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn time(&self, node: usize) -> f64 {
        node as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|k| self.time(k)).collect()
    }

    pub(crate) fn check_node(&self, node: usize) -> Result<()> {
        if node > self.n_steps {
            Err(Error::IndexOutOfRange {
                index: node,
                max: self.n_steps,
            })
        } else {
            Ok(())
        }
    }
}

/// Shorthand for [`TimeGrid::new`].
pub fn make_grid(horizon: f64, n_steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, n_steps)
}

/// A real-valued path sampled at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::GridMismatch(format!(
                "path has {} values, grid has {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_nodes()],
        }
    }

    /// Cumulative sum of `increments` started at `start`.
    pub fn from_increments(grid: TimeGrid, start: f64, increments: &[f64]) -> Result<Self> {
        if increments.len() != grid.n_steps() {
            return Err(Error::GridMismatch(format!(
                "{} increments for a {}-step grid",
                increments.len(),
                grid.n_steps()
            )));
        }
        let mut values = Vec::with_capacity(grid.n_nodes());
        let mut acc = start;
        values.push(acc);
        for dx in increments {
            acc += dx;
            values.push(acc);
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    /// Values at nodes `0..=node`.
    pub fn prefix(&self, node: usize) -> &[f64] {
        &self.values[..=node]
    }

    pub fn increment(&self, step: usize) -> f64 {
        self.values[step + 1] - self.values[step]
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `sup_{s <= t} |x_s|` at node `t_node`.
    pub fn running_sup(&self, t_node: usize) -> Result<f64> {
        self.grid.check_node(t_node)?;
        Ok(self.values[..=t_node]
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs())))
    }

    /// Running sup of `|x|` at every node.
    pub fn running_sup_path(&self) -> SamplePath {
        let mut m = 0.0_f64;
        let values = self
            .values
            .iter()
            .map(|v| {
                m = m.max(v.abs());
                m
            })
            .collect();
        SamplePath {
            grid: self.grid,
            values,
        }
    }
}

/// Free-function form of [`SamplePath::running_sup`].
pub fn running_sup(path: &SamplePath, t_node: usize) -> Result<f64> {
    path.running_sup(t_node)
}

/// Law of a single Brownian increment over one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IncrementLaw {
    /// i.i.d. `N(0, dt)`.
    #[default]
    Gaussian,
    /// i.i.d. `±sqrt(dt)` with probability one half each.
    Rademacher,
}

impl IncrementLaw {
    pub fn draw(self, rng: &mut ChaCha8Rng, sqrt_dt: f64) -> f64 {
        match self {
            IncrementLaw::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                z * sqrt_dt
            }
            IncrementLaw::Rademacher => {
                if rng.random::<bool>() {
                    sqrt_dt
                } else {
                    -sqrt_dt
                }
            }
        }
    }
}

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n_steps` increments drawn from stream 0 of `seed`.
pub fn sample_increments(grid: &TimeGrid, law: IncrementLaw, seed: u64) -> Vec<f64> {
    sample_increments_stream(grid, law, seed, 0)
}

pub fn sample_increments_stream(
    grid: &TimeGrid,
    law: IncrementLaw,
    seed: u64,
    stream: u64,
) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    let sqrt_dt = grid.dt().sqrt();
    (0..grid.n_steps()).map(|_| law.draw(&mut rng, sqrt_dt)).collect()
}

/// Observation path `Y` started at zero, drawn as a Brownian (or Rademacher)
/// walk under the reference measure from the reserved observation stream.
pub fn sample_observation(grid: &TimeGrid, law: IncrementLaw, seed: u64) -> SamplePath {
    let inc = sample_increments_stream(grid, law, seed, OBSERVATION_STREAM);
    SamplePath::from_increments(*grid, 0.0, &inc).expect("increment count matches grid")
}

/// Increments encoded by the binary digits of `index`: bit `k` set means
/// `+sqrt(dt)` at step `k`. Enumerating `index` over `0..2^n_steps` visits
/// every Rademacher path exactly once.
pub fn enumerated_increments(grid: &TimeGrid, index: u64) -> Vec<f64> {
    let s = grid.dt().sqrt();
    (0..grid.n_steps())
        .map(|k| if (index >> k) & 1 == 1 { s } else { -s })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        assert_eq!(make_grid(1.0, 4).unwrap().dt(), 0.25);
        assert_eq!(make_grid(2.0, 1).unwrap().dt(), 2.0);
        assert!(matches!(make_grid(1.0, 0), Err(Error::InvalidArgument(_))));
        assert!(make_grid(0.0, 3).is_err());
        assert!(make_grid(-1.0, 3).is_err());
        assert!(make_grid(f64::NAN, 3).is_err());
        let g = make_grid(1.0, 4).unwrap();
        assert_eq!(g.n_nodes(), 5);
        assert_eq!(g.time(3), 0.75);
    }

    #[test]
    fn increments_are_deterministic() {
        let g = make_grid(1.0, 50).unwrap();
        for law in [IncrementLaw::Gaussian, IncrementLaw::Rademacher] {
            assert_eq!(sample_increments(&g, law, 11), sample_increments(&g, law, 11));
            assert_ne!(sample_increments(&g, law, 11), sample_increments(&g, law, 12));
        }
    }

    #[test]
    fn rademacher_values() {
        let g = make_grid(1.0, 4).unwrap();
        let inc = sample_increments(&g, IncrementLaw::Rademacher, 3);
        assert_eq!(inc.len(), 4);
        assert!(inc.iter().all(|&v| v == 0.5 || v == -0.5));
    }

    #[test]
    fn gaussian_variance_matches_dt() {
        let g = make_grid(1.0, 100_000).unwrap();
        let inc = sample_increments(&g, IncrementLaw::Gaussian, 2024);
        let n = inc.len() as f64;
        let mean = inc.iter().sum::<f64>() / n;
        let var = inc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        assert!((var / g.dt() - 1.0).abs() < 0.05, "var/dt = {}", var / g.dt());
    }

    #[test]
    fn running_sup_examples() {
        let g = make_grid(1.0, 2).unwrap();
        let p = SamplePath::new(g, vec![0.0, -2.0, 1.0]).unwrap();
        assert_eq!(p.running_sup(2).unwrap(), 2.0);
        assert_eq!(p.running_sup(0).unwrap(), 0.0);
        assert!(matches!(p.running_sup(3), Err(Error::IndexOutOfRange { .. })));
        let c = SamplePath::constant(g, -1.5);
        for k in 0..=2 {
            assert_eq!(c.running_sup(k).unwrap(), 1.5);
        }
    }

    #[test]
    fn enumeration_covers_all_paths() {
        let g = make_grid(1.0, 3).unwrap();
        let mut seen: Vec<Vec<f64>> = (0..8).map(|i| enumerated_increments(&g, i)).collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn path_length_checked() {
        let g = make_grid(1.0, 2).unwrap();
        assert!(SamplePath::new(g, vec![0.0; 2]).is_err());
        assert!(SamplePath::from_increments(g, 0.0, &[1.0]).is_err());
    }
}
