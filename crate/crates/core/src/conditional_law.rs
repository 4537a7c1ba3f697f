//! The solution map: measure path in, weighted conditional-law path out.
//!
//! Given the observation path, the conditional expectation under the
//! reference measure is the average over particles that share it, so the
//! conditional law at node `k` is the particle cloud `X_k^i` weighted by
//! `L_k^i / Σ_j L_k^j`.

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::SamplePath;
use crate::measures::{DiscreteMeasure, MeasurePath};
use crate::reference_sim::{
    simulate_ensemble, simulate_ensemble_until, ParticleEnsemble, SimConfig,
};

/// Everything the solution map holds fixed: coefficients, the observation
/// path and the particle seeds.
#[derive(Debug, Clone)]
pub struct TMapContext {
    pub coeffs: CoefficientSet,
    pub y_path: SamplePath,
    pub sim: SimConfig,
}

impl TMapContext {
    pub fn new(coeffs: CoefficientSet, y_path: SamplePath, sim: SimConfig) -> Self {
        Self { coeffs, y_path, sim }
    }

    /// Constant path at `δ_{x0}`.
    pub fn dirac_path(&self) -> MeasurePath {
        MeasurePath::constant(*self.y_path.grid(), DiscreteMeasure::dirac(self.coeffs.x0()))
    }
}

/// Normalized weights `exp(logL_i - max logL)`.
fn kernel_weights(log_kernels: &[f64]) -> Vec<f64> {
    let max = log_kernels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    log_kernels.iter().map(|l| (l - max).exp()).collect()
}

/// Weighted law of `states` with weights proportional to `exp(log_kernels)`.
pub fn ks_law(states: &[f64], log_kernels: &[f64]) -> Result<DiscreteMeasure> {
    if states.is_empty() || states.len() != log_kernels.len() {
        return Err(Error::InvalidArgument(
            "need matching nonempty states and kernels".into(),
        ));
    }
    DiscreteMeasure::normalize(states.to_vec(), kernel_weights(log_kernels))
}

/// Conditional law of the ensemble at `t_node`.
pub fn ks_law_at(ensemble: &ParticleEnsemble, t_node: usize) -> Result<DiscreteMeasure> {
    ensemble.grid().check_node(t_node)?;
    ks_law(&ensemble.states_at(t_node), &ensemble.log_kernels_at(t_node))
}

/// Conditional laws at every node.
pub fn ks_law_path(ensemble: &ParticleEnsemble) -> Result<MeasurePath> {
    let grid = *ensemble.grid();
    let laws = (0..grid.n_nodes())
        .map(|k| ks_law_at(ensemble, k))
        .collect::<Result<Vec<_>>>()?;
    MeasurePath::new(grid, laws)
}

/// `(Σ L)^2 / Σ L^2` per node.
pub fn effective_sample_sizes(ensemble: &ParticleEnsemble) -> Vec<f64> {
    (0..ensemble.grid().n_nodes())
        .map(|k| {
            let w = kernel_weights(&ensemble.log_kernels_at(k));
            let s: f64 = w.iter().sum();
            let s2: f64 = w.iter().map(|v| v * v).sum();
            s * s / s2
        })
        .collect()
}

/// Applies the solution map and also returns the ensemble it was built from.
pub fn apply_t_with_ensemble(
    ctx: &TMapContext,
    mu_path: &MeasurePath,
) -> Result<(MeasurePath, ParticleEnsemble)> {
    let ens = simulate_ensemble(&ctx.coeffs, mu_path, &ctx.y_path, &ctx.sim)?;
    Ok((ks_law_path(&ens)?, ens))
}

/// The solution map on a measure path.
pub fn apply_t(ctx: &TMapContext, mu_path: &MeasurePath) -> Result<MeasurePath> {
    apply_t_with_ensemble(ctx, mu_path).map(|(p, _)| p)
}

/// Localized solution map `T(mu)_{· ∧ tau}`.
///
/// The kernel is stopped at `tau_node` and the law path held constant
/// afterwards, so only nodes `0..=tau_node` are simulated.
pub fn apply_t_localized(
    ctx: &TMapContext,
    mu_path: &MeasurePath,
    tau_node: usize,
) -> Result<MeasurePath> {
    ctx.y_path.grid().check_node(tau_node)?;
    let ens = simulate_ensemble_until(&ctx.coeffs, mu_path, &ctx.y_path, &ctx.sim, tau_node)?;
    let grid = *ens.grid();
    let mut laws = (0..=tau_node)
        .map(|k| ks_law_at(&ens, k))
        .collect::<Result<Vec<_>>>()?;
    let last = laws[tau_node].clone();
    laws.resize(grid.n_nodes(), last);
    MeasurePath::new(grid, laws)
}
