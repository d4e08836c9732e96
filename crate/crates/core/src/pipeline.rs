//! The full Eulerian-to-Lagrangian chain: regularize, integrate particles, measure.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::{ScalarField, VectorField};
use crate::measures::{decomposition_report, DecompositionReport};
use crate::moser::{integrate_paths, PathEnsemble};
use crate::regularize::{regularize_triple, RegularizationReport};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    /// Smoothing scale; `None` means two cells.
    pub eps: Option<f64>,
    pub particles: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self { eps: None, particles: 100_000, steps: 64, seed: 42 }
    }
}

/// Everything the pipeline produces. Fields live on the padded grid.
#[derive(Debug, Clone)]
pub struct Decomposition<T> {
    pub v_eps: VectorField<T>,
    pub mu_eps: ScalarField<T>,
    pub nu_eps: ScalarField<T>,
    pub paths: PathEnsemble<T>,
    pub regularization: RegularizationReport,
    pub report: DecompositionReport,
}

/// Regularizes `(v, mu, nu)`, integrates the particle flow and reports the decomposition.
pub fn decompose<T: Real>(
    v: &VectorField<T>,
    mu: &ScalarField<T>,
    nu: &ScalarField<T>,
    params: &PipelineParams,
) -> Result<Decomposition<T>> {
    let eps = params.eps.map_or(v.grid.h * T::lit(2.0), T::lit);
    let (v_eps, mu_eps, nu_eps, regularization) = regularize_triple(v, mu, nu, eps)?;
    let paths = integrate_paths(&v_eps, &mu_eps, &nu_eps, params.particles, params.steps, params.seed)?;
    let report = decomposition_report(&v_eps, &paths, &mu_eps, &nu_eps)?;
    Ok(Decomposition { v_eps, mu_eps, nu_eps, paths, regularization, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid2D;
    use crate::scenarios::make_1d_profile;

    #[test]
    fn small_profile_run_is_consistent() {
        let g = Grid2D::<f64>::unit_square(16).unwrap();
        let (v, mu, nu) = make_1d_profile(g);
        let p = PipelineParams { particles: 4000, steps: 16, ..Default::default() };
        let d = decompose(&v, &mu, &nu, &p).unwrap();
        assert_eq!(d.paths.len(), 4000);
        assert_eq!(d.v_eps.grid, d.mu_eps.grid);
        assert!(d.report.defect.abs() <= 0.1 * d.report.norm_v, "{:?}", d.report);
        let again = decompose(&v, &mu, &nu, &p).unwrap();
        assert_eq!(d.report, again.report);
    }
}
