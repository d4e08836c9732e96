//! Monotone-functional check: a field that is not already of the form `v_Q` can
//! only lose cost when replaced by the intensity of its own decomposition.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::{magnitude_field, ScalarField, VectorField};
use crate::measures::intensity;
use crate::moser::PathEnsemble;
use crate::scalar::Real;

/// Relative tolerance of both harness comparisons.
const TOL: f64 = 0.02;

/// Cellwise integral functional `F(α) = Σ h² φ(α_c)` with `φ` nondecreasing on `[0, ∞)`.
#[derive(Clone)]
pub enum CostFunctional {
    TotalMass,
    /// `φ(a) = a^p`, `p > 1`.
    Power(f64),
    /// Any nondecreasing map; not assumed strictly monotone.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for CostFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TotalMass => write!(f, "TotalMass"),
            Self::Power(p) => write!(f, "Power({p})"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl CostFunctional {
    pub fn strictly_monotone(&self) -> bool {
        !matches!(self, Self::Custom(_))
    }

    pub fn eval<T: Real>(&self, a: &ScalarField<T>) -> f64 {
        let area = a.grid.cell_area().as_f64();
        let phi = |x: f64| match self {
            Self::TotalMass => x,
            Self::Power(p) => x.powf(*p),
            Self::Custom(f) => f(x),
        };
        a.values.iter().map(|x| phi(x.as_f64())).sum::<f64>() * area
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    /// `max_c (i_Q - |v|)_+ / max_c |v|`; zero when `v = 0`.
    pub max_excess: f64,
    pub cellwise_ok: bool,
    pub f_intensity: f64,
    pub f_magnitude: f64,
    pub f_ok: bool,
    /// `‖|v| - i_Q‖_{L1}`, reported only for strictly monotone `F` when the two values agree.
    pub optimality_defect: Option<f64>,
}

/// Compares the intensity of `q` with `|v|` cellwise and through `f`.
pub fn monotone_harness<T: Real>(
    v: &VectorField<T>,
    q: &PathEnsemble<T>,
    f: &CostFunctional,
) -> Result<HarnessReport> {
    let iq = intensity(q, &v.grid)?;
    let mag = magnitude_field(v);
    let top = mag.max_value().as_f64();
    let excess = iq
        .values
        .iter()
        .zip(&mag.values)
        .map(|(a, b)| (*a - *b).as_f64())
        .fold(0.0f64, f64::max);
    let max_excess = if top > 0.0 { excess / top } else { excess };
    let (fi, fm) = (f.eval(&iq), f.eval(&mag));
    let tol_f = TOL * fm.abs();
    let agree = (fm - fi).abs() <= tol_f;
    let optimality_defect = (f.strictly_monotone() && agree)
        .then(|| iq.l1_distance(&mag).map(|d| d.as_f64()))
        .transpose()?;
    Ok(HarnessReport {
        max_excess,
        cellwise_ok: max_excess <= TOL,
        f_intensity: fi,
        f_magnitude: fm,
        f_ok: fi <= fm + tol_f,
        optimality_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid2D;
    use crate::moser::Path;

    #[test]
    fn zero_field_gives_zeros() {
        let g = Grid2D::<f64>::unit_square(8).unwrap();
        let q = PathEnsemble::uniform(vec![Path::new(vec![[0.5, 0.5]; 2]).unwrap()]).unwrap();
        let r = monotone_harness(&VectorField::zeros(g), &q, &CostFunctional::TotalMass).unwrap();
        assert_eq!((r.max_excess, r.f_intensity, r.f_magnitude), (0.0, 0.0, 0.0));
        assert!(r.cellwise_ok && r.f_ok);
        assert_eq!(r.optimality_defect, Some(0.0));
    }

    #[test]
    fn straight_path_matches_its_own_flow() {
        // Path through a row of cells at constant flux: i_Q = |v| away from the ends.
        let g = Grid2D::<f64>::unit_square(16).unwrap();
        let y = g.center(0, 7)[1];
        let q = PathEnsemble::uniform(vec![Path::segment([0.0, y], [1.0, y])]).unwrap();
        let mut v = VectorField::zeros(g);
        (1..16).for_each(|i| v.u[g.u_face(i, 7)] = 1.0 / g.h);
        let r = monotone_harness(&v, &q, &CostFunctional::Power(2.0)).unwrap();
        // The end cells see half the flux in v but the full length in i_Q.
        assert!((r.max_excess - 0.5).abs() < 1e-12);
        assert!(!r.cellwise_ok);
    }

    #[test]
    fn custom_functionals_skip_the_defect() {
        let g = Grid2D::<f64>::unit_square(4).unwrap();
        let q = PathEnsemble::uniform(vec![Path::new(vec![[0.5, 0.5]; 2]).unwrap()]).unwrap();
        let f = CostFunctional::Custom(Arc::new(|x: f64| x.min(1.0)));
        assert!(!f.strictly_monotone());
        let r = monotone_harness(&VectorField::constant(g, 1.0, 0.0), &q, &f).unwrap();
        assert!(r.optimality_defect.is_none());
        assert!(r.f_ok);
        assert!(format!("{f:?}").starts_with("Custom"));
    }
}
