//! Finitely supported probability measures on the real line, measure-valued
//! paths, and the 1-D Wasserstein-1 distance in primal and dual form.

use std::cmp::Ordering;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Weighted point masses with strictly increasing atoms and positive weights
/// summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    mean: f64,
}

impl DiscreteMeasure {
    /// Sorts atoms, merges exact duplicates, drops zero-weight atoms and
    /// rescales the weights to sum to one. Idempotent.
    pub fn normalize(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if let Some(a) = atoms.iter().find(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite atom {a}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid weight {w}")));
        }
        let mut pairs: Vec<(f64, f64)> = atoms.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut merged_atoms: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut merged_weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (a, w) in pairs {
            if w == 0.0 {
                continue;
            }
            // -0.0 and 0.0 compare equal and are merged.
            match merged_atoms.last() {
                Some(&last) if last == a => *merged_weights.last_mut().unwrap() += w,
                _ => {
                    merged_atoms.push(a);
                    merged_weights.push(w);
                }
            }
        }
        let total: f64 = merged_weights.iter().sum();
        if merged_atoms.is_empty() || total <= 0.0 || !total.is_finite() {
            return Err(Error::DegenerateMeasure(
                "weights must contain at least one positive entry".into(),
            ));
        }
        // weights that already sum to one up to rounding are kept as they
        // are, so normalizing is idempotent and files read back bit-exact
        if (total - 1.0).abs() > f64::EPSILON * merged_weights.len() as f64 {
            for w in &mut merged_weights {
                *w /= total;
            }
        }
        let mean = merged_atoms
            .iter()
            .zip(&merged_weights)
            .map(|(a, w)| a * w)
            .sum();
        Ok(Self {
            atoms: merged_atoms,
            weights: merged_weights,
            mean,
        })
    }

    /// Uniform empirical measure of `samples`.
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        Self::normalize(samples.to_vec(), vec![1.0; samples.len()])
    }

    pub fn dirac(x: f64) -> Self {
        assert!(x.is_finite(), "dirac atom must be finite");
        Self {
            atoms: vec![x],
            weights: vec![1.0],
            mean: x,
        }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean;
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * (a - m) * (a - m))
            .sum()
    }

    /// Generalized inverse CDF: the smallest atom `a` with `F(a) >= q`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidArgument(format!("quantile level {q} outside [0, 1]")));
        }
        let mut cdf = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            cdf += w;
            if cdf >= q {
                return Ok(*a);
            }
        }
        Ok(*self.atoms.last().unwrap())
    }

    /// Effective sample size `1 / sum w_i^2`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// `∫ phi dμ`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, phi: F) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * phi(*a))
            .sum()
    }

    /// Mass carried by atoms with `|a| > radius`.
    pub fn mass_outside(&self, radius: f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .filter(|(a, _)| a.abs() > radius)
            .map(|(_, w)| w)
            .sum()
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureRepr {
            atoms: self.atoms.clone(),
            weights: self.weights.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = MeasureRepr::deserialize(d)?;
        DiscreteMeasure::normalize(repr.atoms, repr.weights).map_err(serde::de::Error::custom)
    }
}

/// Free-function form of [`DiscreteMeasure::normalize`].
pub fn normalize(atoms: Vec<f64>, weights: Vec<f64>) -> Result<DiscreteMeasure> {
    DiscreteMeasure::normalize(atoms, weights)
}

pub fn mean(mu: &DiscreteMeasure) -> f64 {
    mu.mean()
}

pub fn quantile(mu: &DiscreteMeasure, q: f64) -> Result<f64> {
    mu.quantile(q)
}

/// Exact `W_1(mu, nu) = ∫ |F_mu - F_nu| dx`, integrated piecewise over the
/// merged support. Linear in the number of atoms.
pub fn exact_w1(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let (a, wa) = (&mu.atoms, &mu.weights);
    let (b, wb) = (&nu.atoms, &nu.weights);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0_f64, 0.0_f64);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (fa - fb).abs() * (x - prev);
        while i < a.len() && a[i] == x {
            fa += wa[i];
            i += 1;
        }
        while j < b.len() && b[j] == x {
            fb += wb[j];
            j += 1;
        }
        prev = x;
    }
    total
}

/// Piecewise-linear function on the real line.
///
/// `slopes[0]` applies left of `knots[0]`, `slopes[j]` on
/// `[knots[j-1], knots[j]]` and `slopes[knots.len()]` right of the last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    knots: Vec<f64>,
    slopes: Vec<f64>,
    value_at_zero: f64,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<f64>, slopes: Vec<f64>, value_at_zero: f64) -> Result<Self> {
        if slopes.len() != knots.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} knots need {} slopes, got {}",
                knots.len(),
                knots.len() + 1,
                slopes.len()
            )));
        }
        if knots.iter().chain(&slopes).any(|v| !v.is_finite()) || !value_at_zero.is_finite() {
            return Err(Error::InvalidArgument("non-finite knot or slope".into()));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("knots must be strictly increasing".into()));
        }
        Ok(Self {
            knots,
            slopes,
            value_at_zero,
        })
    }

    /// `x ↦ slope * x`.
    pub fn linear(slope: f64) -> Self {
        Self {
            knots: vec![0.0],
            slopes: vec![slope, slope],
            value_at_zero: 0.0,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Same function with a knot at 0, so 0 is always a breakpoint.
    fn with_zero_knot(&self) -> (Vec<f64>, Vec<f64>) {
        let pos = self.knots.partition_point(|&k| k < 0.0);
        if self.knots.get(pos) == Some(&0.0) {
            return (self.knots.clone(), self.slopes.clone());
        }
        let mut knots = self.knots.clone();
        let mut slopes = self.slopes.clone();
        knots.insert(pos, 0.0);
        slopes.insert(pos, self.slopes[pos]);
        (knots, slopes)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (knots, slopes) = self.with_zero_knot();
        eval_anchored(&knots, &slopes, &knot_values(&knots, &slopes, self.value_at_zero), x)
    }
}

fn knot_values(knots: &[f64], slopes: &[f64], value_at_zero: f64) -> Vec<f64> {
    let zero = knots
        .iter()
        .position(|&k| k == 0.0)
        .expect("zero knot present");
    let mut values = vec![0.0; knots.len()];
    values[zero] = value_at_zero;
    for j in (zero + 1)..knots.len() {
        values[j] = values[j - 1] + slopes[j] * (knots[j] - knots[j - 1]);
    }
    for j in (0..zero).rev() {
        values[j] = values[j + 1] - slopes[j + 1] * (knots[j + 1] - knots[j]);
    }
    values
}

fn eval_anchored(knots: &[f64], slopes: &[f64], values: &[f64], x: f64) -> f64 {
    // index of the first knot > x
    let p = knots.partition_point(|&k| k <= x);
    if p == 0 {
        values[0] + slopes[0] * (x - knots[0])
    } else {
        values[p - 1] + slopes[p] * (x - knots[p - 1])
    }
}

/// Piecewise-linear test function with `|slope| <= 1` and `phi(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzTestFunction {
    knots: Vec<f64>,
    slopes: Vec<f64>,
    values: Vec<f64>,
}

impl LipschitzTestFunction {
    pub fn new(knots: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        let f = PiecewiseLinear::new(knots, slopes, 0.0)?;
        if f.slopes.iter().any(|s| s.abs() > 1.0) {
            return Err(Error::InvalidArgument("slopes must lie in [-1, 1]".into()));
        }
        let (knots, slopes) = f.with_zero_knot();
        let values = knot_values(&knots, &slopes, 0.0);
        Ok(Self {
            knots,
            slopes,
            values,
        })
    }

    pub fn identity() -> Self {
        Self::new(vec![0.0], vec![1.0, 1.0]).unwrap()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval_anchored(&self.knots, &self.slopes, &self.values, x)
    }

    pub fn integrate(&self, mu: &DiscreteMeasure) -> f64 {
        mu.integrate(|x| self.eval(x))
    }
}

/// Clips every slope of `f` to `[-1, 1]` and re-anchors the result at
/// `phi(0) = 0`: `phi(x) = ∫_0^x max(-1, min(1, f'(y))) dy`.
pub fn clip_to_lip1(f: &PiecewiseLinear) -> LipschitzTestFunction {
    let (knots, slopes) = f.with_zero_knot();
    let slopes = slopes.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
    LipschitzTestFunction::new(knots, slopes).expect("clipped slopes are valid")
}

/// `max_phi |∫ phi dmu - ∫ phi dnu|` over a finite family of 1-Lipschitz
/// functions. A lower bound for `exact_w1`.
pub fn kr_dual_w1(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    family: &[LipschitzTestFunction],
) -> Result<f64> {
    if family.is_empty() {
        return Err(Error::InvalidArgument("test-function family is empty".into()));
    }
    Ok(family
        .iter()
        .map(|phi| (phi.integrate(mu) - phi.integrate(nu)).abs())
        .fold(0.0, f64::max))
}

/// Clipped family whose breakpoints are the atoms of `mu` and `nu`.
///
/// The raw slope on each gap between consecutive merged atoms is
/// `2^j (F_nu - F_mu)` for `j = 0..=60`; clipping saturates the large-`j`
/// members to the sign pattern of the CDF difference, which is an optimal
/// Kantorovich potential in one dimension.
pub fn atom_breakpoint_family(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Vec<LipschitzTestFunction> {
    let mut knots: Vec<f64> = mu.atoms.iter().chain(&nu.atoms).copied().collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let cdf = |m: &DiscreteMeasure, x: f64| -> f64 {
        let p = m.atoms.partition_point(|&a| a <= x);
        m.weights[..p].iter().sum()
    };
    let gap_diff: Vec<f64> = knots.iter().map(|&x| cdf(nu, x) - cdf(mu, x)).collect();

    let mut family = vec![
        LipschitzTestFunction::identity(),
        clip_to_lip1(&PiecewiseLinear::linear(-1.0)),
    ];
    for j in 0..=60 {
        let scale = 2f64.powi(j);
        let mut slopes = Vec::with_capacity(knots.len() + 1);
        slopes.push(0.0);
        for (m, d) in gap_diff.iter().enumerate() {
            if m + 1 < knots.len() {
                slopes.push(d * scale);
            }
        }
        slopes.push(0.0);
        let raw = PiecewiseLinear::new(knots.clone(), slopes, 0.0).expect("sorted knots");
        family.push(clip_to_lip1(&raw));
    }
    family
}

/// Ramps `(x - a)^+` and `(a - x)^+` (re-anchored at 0) on a uniform lattice of
/// `n_knots` points in `[lo, hi]`, plus `±x`.
pub fn lattice_family(lo: f64, hi: f64, n_knots: usize) -> Result<Vec<LipschitzTestFunction>> {
    if !(lo < hi) || n_knots < 2 {
        return Err(Error::InvalidArgument(
            "lattice needs lo < hi and at least two knots".into(),
        ));
    }
    let mut family = vec![
        LipschitzTestFunction::identity(),
        clip_to_lip1(&PiecewiseLinear::linear(-1.0)),
    ];
    let step = (hi - lo) / (n_knots - 1) as f64;
    for k in 0..n_knots {
        let a = lo + step * k as f64;
        let up = PiecewiseLinear::new(vec![a], vec![0.0, 1.0], 0.0)?;
        let down = PiecewiseLinear::new(vec![a], vec![-1.0, 0.0], 0.0)?;
        family.push(clip_to_lip1(&up));
        family.push(clip_to_lip1(&down));
    }
    Ok(family)
}

/// One measure per grid node, read as right-continuous and piecewise constant
/// between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePath {
    grid: TimeGrid,
    measures: Vec<DiscreteMeasure>,
}

impl MeasurePath {
    pub fn new(grid: TimeGrid, measures: Vec<DiscreteMeasure>) -> Result<Self> {
        if measures.len() != grid.n_nodes() {
            return Err(Error::GridMismatch(format!(
                "{} measures for {} grid nodes",
                measures.len(),
                grid.n_nodes()
            )));
        }
        Ok(Self { grid, measures })
    }

    pub fn constant(grid: TimeGrid, mu: DiscreteMeasure) -> Self {
        Self {
            grid,
            measures: vec![mu; grid.n_nodes()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn at(&self, node: usize) -> &DiscreteMeasure {
        &self.measures[node]
    }

    /// Measures at nodes `0..=node`.
    pub fn prefix(&self, node: usize) -> &[DiscreteMeasure] {
        &self.measures[..=node]
    }

    /// `mu_{· ∧ tau}`: nodes after `tau_node` repeat the measure at `tau_node`.
    pub fn stopped_at(&self, tau_node: usize) -> Result<Self> {
        self.grid.check_node(tau_node)?;
        let mut measures = self.measures.clone();
        for m in &mut measures[tau_node + 1..] {
            *m = self.measures[tau_node].clone();
        }
        Ok(Self {
            grid: self.grid,
            measures,
        })
    }

    /// Nodes `0..=tau_node` from `self`, the rest from `tail`.
    pub fn patched(&self, tail: &MeasurePath, tau_node: usize) -> Result<Self> {
        check_same_grid(&self.grid, &tail.grid)?;
        self.grid.check_node(tau_node)?;
        let measures = self.measures[..=tau_node]
            .iter()
            .chain(&tail.measures[tau_node + 1..])
            .cloned()
            .collect();
        Ok(Self {
            grid: self.grid,
            measures,
        })
    }

    pub fn means(&self) -> Vec<f64> {
        self.measures.iter().map(DiscreteMeasure::mean).collect()
    }

    pub fn into_measures(self) -> Vec<DiscreteMeasure> {
        self.measures
    }
}

pub(crate) fn check_same_grid(a: &TimeGrid, b: &TimeGrid) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch(format!(
            "grids differ: (T={}, n={}) vs (T={}, n={})",
            a.horizon(),
            a.n_steps(),
            b.horizon(),
            b.n_steps()
        )));
    }
    Ok(())
}

/// Nodewise `W_1` between two measure paths on the same grid.
pub fn nodewise_w1(mu_path: &MeasurePath, nu_path: &MeasurePath) -> Result<Vec<f64>> {
    check_same_grid(&mu_path.grid, &nu_path.grid)?;
    Ok(mu_path
        .measures
        .iter()
        .zip(&nu_path.measures)
        .map(|(m, n)| exact_w1(m, n))
        .collect())
}

/// `max_{k <= up_to_node} W_1(mu_k, nu_k)`.
pub fn sup_w1_path(mu_path: &MeasurePath, nu_path: &MeasurePath, up_to_node: usize) -> Result<f64> {
    check_same_grid(&mu_path.grid, &nu_path.grid)?;
    mu_path.grid.check_node(up_to_node)?;
    Ok(mu_path.measures[..=up_to_node]
        .iter()
        .zip(&nu_path.measures)
        .map(|(m, n)| exact_w1(m, n))
        .fold(0.0, |acc, d| match acc.partial_cmp(&d) {
            Some(Ordering::Less) => d,
            _ => acc,
        }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(atoms: &[f64], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::normalize(atoms.to_vec(), weights.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let mu = m(&[1.0, 0.0], &[2.0, 2.0]);
        assert_eq!(mu.atoms(), &[0.0, 1.0]);
        assert_eq!(mu.weights(), &[0.5, 0.5]);

        let merged = m(&[0.0, 0.0], &[1.0, 3.0]);
        assert_eq!(merged.atoms(), &[0.0]);
        assert_eq!(merged.weights(), &[1.0]);

        assert!(matches!(
            DiscreteMeasure::normalize(vec![0.0, 1.0], vec![0.0, 0.0]),
            Err(Error::DegenerateMeasure(_))
        ));
        assert!(DiscreteMeasure::normalize(vec![], vec![]).is_err());
        assert!(DiscreteMeasure::normalize(vec![0.0], vec![-1.0]).is_err());
        assert!(DiscreteMeasure::normalize(vec![f64::NAN], vec![1.0]).is_err());
        assert!(DiscreteMeasure::normalize(vec![0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn nearby_atoms_stay_distinct() {
        let mu = m(&[0.0, 1e-15], &[1.0, 1.0]);
        assert_eq!(mu.len(), 2);
    }

    #[test]
    fn w1_examples() {
        assert_eq!(exact_w1(&DiscreteMeasure::dirac(2.5), &DiscreteMeasure::dirac(2.5)), 0.0);
        assert_eq!(exact_w1(&DiscreteMeasure::dirac(0.0), &DiscreteMeasure::dirac(1.0)), 1.0);
        let half = m(&[0.0, 1.0], &[1.0, 1.0]);
        assert_eq!(exact_w1(&half, &DiscreteMeasure::dirac(0.5)), 0.5);
    }

    #[test]
    fn kr_examples() {
        let a = DiscreteMeasure::dirac(0.0);
        let b = DiscreteMeasure::dirac(1.0);
        let fam = vec![LipschitzTestFunction::identity()];
        assert_eq!(kr_dual_w1(&a, &b, &fam).unwrap(), 1.0);
        assert_eq!(kr_dual_w1(&a, &a, &fam).unwrap(), 0.0);
        assert!(kr_dual_w1(&a, &b, &[]).is_err());
    }

    #[test]
    fn clip_examples() {
        let phi = clip_to_lip1(&PiecewiseLinear::linear(3.0));
        for x in [-2.0, -0.5, 0.0, 1.0, 4.0] {
            assert_eq!(phi.eval(x), x);
        }
        let phi = clip_to_lip1(&PiecewiseLinear::linear(0.5));
        for x in [-2.0, 0.0, 3.0] {
            assert_eq!(phi.eval(x), 0.5 * x);
        }
        // two pieces split at 1: slope 2 then -0.3
        let f = PiecewiseLinear::new(vec![1.0], vec![2.0, -0.3], 0.0).unwrap();
        let phi = clip_to_lip1(&f);
        assert_eq!(phi.slopes(), &[1.0, 1.0, -0.3]);
        assert_eq!(phi.eval(1.0), 1.0);
        assert!((phi.eval(2.0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn clip_recentres_at_zero() {
        let f = PiecewiseLinear::new(vec![-1.0, 2.0], vec![0.2, -0.4, 0.9], 5.0).unwrap();
        assert_eq!(f.eval(0.0), 5.0);
        let phi = clip_to_lip1(&f);
        assert_eq!(phi.eval(0.0), 0.0);
        for x in [-3.0, -1.0, 0.5, 2.0, 7.0] {
            assert!((phi.eval(x) - (f.eval(x) - 5.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn lipschitz_function_rejects_steep_slopes() {
        assert!(LipschitzTestFunction::new(vec![0.0], vec![1.5, 0.0]).is_err());
        assert!(LipschitzTestFunction::new(vec![1.0, 0.0], vec![0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn sup_path_examples() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let d0 = DiscreteMeasure::dirac(0.0);
        let p = MeasurePath::constant(g, d0.clone());
        assert_eq!(sup_w1_path(&p, &p, 2).unwrap(), 0.0);

        let mut q = p.clone().into_measures();
        q[0] = DiscreteMeasure::dirac(0.3);
        let q = MeasurePath::new(g, q).unwrap();
        for k in 0..=2 {
            assert!((sup_w1_path(&p, &q, k).unwrap() - 0.3).abs() < 1e-15);
        }

        let r = MeasurePath::new(
            g,
            vec![
                DiscreteMeasure::dirac(0.1),
                DiscreteMeasure::dirac(0.4),
                DiscreteMeasure::dirac(0.2),
            ],
        )
        .unwrap();
        assert!((sup_w1_path(&p, &r, 2).unwrap() - 0.4).abs() < 1e-15);
        assert!((sup_w1_path(&p, &r, 0).unwrap() - 0.1).abs() < 1e-15);
        assert!(sup_w1_path(&p, &r, 3).is_err());
        let other = MeasurePath::constant(TimeGrid::new(1.0, 3).unwrap(), d0);
        assert!(matches!(sup_w1_path(&p, &other, 0), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn mean_and_quantile() {
        assert_eq!(DiscreteMeasure::dirac(-1.25).mean(), -1.25);
        let half = m(&[0.0, 1.0], &[1.0, 1.0]);
        assert_eq!(half.mean(), 0.5);
        assert_eq!(half.quantile(0.75).unwrap(), 1.0);
        assert_eq!(half.quantile(0.5).unwrap(), 0.0);
        assert_eq!(half.quantile(0.0).unwrap(), 0.0);
        assert_eq!(half.quantile(1.0).unwrap(), 1.0);
        assert!(half.quantile(1.5).is_err());
        assert!(half.quantile(-0.1).is_err());
        assert!(half.quantile(f64::NAN).is_err());
    }

    #[test]
    fn stopped_and_patched_paths() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        let p = MeasurePath::new(g, (0..4).map(|k| DiscreteMeasure::dirac(k as f64)).collect())
            .unwrap();
        let s = p.stopped_at(1).unwrap();
        assert_eq!(s.means(), vec![0.0, 1.0, 1.0, 1.0]);
        let c = MeasurePath::constant(g, DiscreteMeasure::dirac(9.0));
        assert_eq!(p.patched(&c, 1).unwrap().means(), vec![0.0, 1.0, 9.0, 9.0]);
    }

    #[test]
    fn serde_roundtrip_normalizes() {
        let mu: DiscreteMeasure =
            serde_json::from_str(r#"{"atoms":[1.0,0.0],"weights":[1.0,3.0]}"#).unwrap();
        assert_eq!(mu.atoms(), &[0.0, 1.0]);
        assert_eq!(mu.weights(), &[0.75, 0.25]);
        let back: DiscreteMeasure = serde_json::from_str(&serde_json::to_string(&mu).unwrap()).unwrap();
        assert_eq!(back, mu);
        assert!(serde_json::from_str::<DiscreteMeasure>(r#"{"atoms":[0.0],"weights":[0.0]}"#).is_err());
    }
}
