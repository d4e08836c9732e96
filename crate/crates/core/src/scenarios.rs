//! Canned inputs with known answers: an analytic 1D profile, face loops, a
//! transport field with an off-support cycle, and single-atom pairs.
//!
//! Every constructor returns a triple satisfying `divergence(v) = mu - nu` up to
//! rounding. Positions are taken relative to the grid's lower-left corner and
//! scaled by its width and height, so the unit square is the reference case.

use crate::error::{Error, Result};
use crate::field::{tv_norm, Grid2D, ScalarField, VectorField};
use crate::scalar::Real;

/// `v = ((x - x²)/2, 0)`, `mu = 1 + (1 - 2x)/4`, `nu = 1 - (1 - 2x)/4`.
///
/// The u faces are rebuilt column by column from `mu - nu` so the divergence
/// identity holds to rounding; they agree with the formula because the midpoint
/// rule is exact for affine integrands.
pub fn make_1d_profile<T: Real>(grid: Grid2D<T>) -> (VectorField<T>, ScalarField<T>, ScalarField<T>) {
    let (ox, width) = (grid.origin[0], grid.width());
    let quarter = T::lit(0.25);
    let two = T::lit(2.0);
    let s = move |x: T| (x - ox) / width;
    let mu = ScalarField::from_fn(grid, |x, _| T::one() + (T::one() - two * s(x)) * quarter);
    let nu = ScalarField::from_fn(grid, |x, _| T::one() - (T::one() - two * s(x)) * quarter);
    let mut v = VectorField::zeros(grid);
    for j in 0..grid.ny {
        let mut acc = T::zero();
        for i in 0..grid.nx {
            acc = acc + grid.h * (mu.at(i, j) - nu.at(i, j));
            v.u[grid.u_face(i + 1, j)] = acc;
        }
        v.u[grid.u_face(grid.nx, j)] = T::zero();
    }
    (v, mu, nu)
}

/// Counter-clockwise circulation of flux density `strength` around the ring of
/// cells enclosing the vertex square `[a, a + m - 1]²`, where `m ≈ 2 radius / h`
/// faces per side.
///
/// The field is the discrete curl of a vertex stream function, so every cell
/// divergence is exactly zero. The face sum `Σ h² |flux|` equals
/// `strength · h · loop length`, the loop running through the ring's cell centers.
pub fn make_cycle_field<T: Real>(
    grid: Grid2D<T>,
    center: [T; 2],
    radius: T,
    strength: T,
) -> Result<VectorField<T>> {
    if !(radius > T::zero()) || !radius.is_finite() || !strength.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "loop needs a positive radius and finite strength, got {radius} and {strength}"
        )));
    }
    let h = grid.h;
    let m = (T::lit(2.0) * radius / h).round().max(T::one());
    let fits = |c: T, o: T, n: usize| -> Option<(usize, usize)> {
        let a = ((c - o) / h - (m - T::one()) * T::lit(0.5)).round();
        let b = a + m - T::one();
        (a >= T::one() && b <= T::from_idx(n) - T::one()).then(|| (idx(a), idx(b)))
    };
    let (Some((a, b)), Some((c, d))) =
        (fits(center[0], grid.origin[0], grid.nx), fits(center[1], grid.origin[1], grid.ny))
    else {
        return Err(Error::InvalidInput("loop does not fit inside the grid".into()));
    };
    let mut v = VectorField::zeros(grid);
    for i in a..=b {
        v.u[grid.u_face(i, c - 1)] = strength;
        v.u[grid.u_face(i, d)] = -strength;
    }
    for j in c..=d {
        v.w[grid.w_face(a - 1, j)] = -strength;
        v.w[grid.w_face(b, j)] = strength;
    }
    Ok(v)
}

fn idx<T: Real>(x: T) -> usize {
    x.as_f64() as usize
}

/// Raised-cosine profile of half-width `r`, normalized so `Σ g h = 1` along the axis.
fn bump_1d<T: Real>(n: usize, h: T, center: T, r: T) -> Vec<T> {
    let half_pi = T::lit(std::f64::consts::FRAC_PI_2);
    let raw: Vec<T> = (0..n)
        .map(|i| {
            let t = ((T::from_idx(i) + T::lit(0.5)) * h - center).abs();
            if t < r {
                let c = (half_pi * t / r).cos();
                c * c
            } else {
                T::zero()
            }
        })
        .collect();
    let total = raw.iter().copied().sum::<T>() * h;
    raw.into_iter().map(|x| x / total).collect()
}

/// Vertical transport inside the left half.
///
/// Both densities are `g(x) b(y) (1 ± a(y))` with `|a| ≤ 1/4`: they share one support
/// and stay within a factor 5/3 of each other, so `|v| / f_t` is bounded even in the
/// smoothed tails and the particle flow is not stiff.
fn separated_transport<T: Real>(
    grid: Grid2D<T>,
) -> (VectorField<T>, ScalarField<T>, ScalarField<T>) {
    let (w, hgt, h) = (grid.width(), grid.height(), grid.h);
    let g = bump_1d(grid.nx, h, T::lit(0.25) * w, T::lit(0.15) * w);
    let b = bump_1d(grid.ny, h, T::lit(0.5) * hgt, T::lit(0.35) * hgt);
    let (lo, span) = (T::lit(0.15) * hgt, T::lit(0.7) * hgt);
    let tilt = |j: usize| {
        let s = (((T::from_idx(j) + T::lit(0.5)) * h - lo) / span).max(T::zero()).min(T::one());
        T::lit(0.25) * (T::lit(std::f64::consts::PI) * s).cos()
    };
    let normalized = |sign: T| {
        let raw: Vec<T> = (0..grid.ny).map(|j| b[j] * (T::one() + sign * tilt(j))).collect();
        let total = raw.iter().copied().sum::<T>() * h;
        raw.into_iter().map(|x| x / total).collect::<Vec<T>>()
    };
    let (p, q) = (normalized(T::one()), normalized(-T::one()));
    let mut mu = ScalarField::zeros(grid);
    let mut nu = ScalarField::zeros(grid);
    let mut v = VectorField::zeros(grid);
    for i in 0..grid.nx {
        let mut acc = T::zero();
        for j in 0..grid.ny {
            let k = grid.cell(i, j);
            mu.values[k] = g[i] * p[j];
            nu.values[k] = g[i] * q[j];
            acc = acc + h * (mu.values[k] - nu.values[k]);
            v.w[grid.w_face(i, j + 1)] = acc;
        }
        v.w[grid.w_face(i, grid.ny)] = T::zero();
    }
    (v, mu, nu)
}

fn separated_loop<T: Real>(grid: Grid2D<T>, strength: T) -> Result<VectorField<T>> {
    let center = [
        grid.origin[0] + T::lit(0.75) * grid.width(),
        grid.origin[1] + T::lit(0.5) * grid.height(),
    ];
    make_cycle_field(grid, center, T::lit(0.15) * grid.width(), strength)
}

/// Loop strength at which the cycle carries exactly half of `tv_norm(v)`.
pub fn balanced_loop_strength<T: Real>(grid: Grid2D<T>) -> Result<T> {
    let (t, _, _) = separated_transport(grid);
    Ok(tv_norm(&t) / tv_norm(&separated_loop(grid, T::one())?))
}

/// Transport between two bumps in the left half plus a loop in the right half,
/// the loop carrying half of the total variation.
pub fn make_separated_scenario<T: Real>(
    grid: Grid2D<T>,
) -> Result<(VectorField<T>, ScalarField<T>, ScalarField<T>)> {
    make_separated_scenario_with_strength(grid, balanced_loop_strength(grid)?)
}

/// [`make_separated_scenario`] with an explicit loop strength; zero gives the cycle-free field.
pub fn make_separated_scenario_with_strength<T: Real>(
    grid: Grid2D<T>,
    strength: T,
) -> Result<(VectorField<T>, ScalarField<T>, ScalarField<T>)> {
    if grid.nx < 32 || grid.ny < 32 {
        return Err(Error::InvalidParameter(format!(
            "separated scenario needs at least 32x32 cells, got {}x{}",
            grid.nx, grid.ny
        )));
    }
    let (t, mu, nu) = separated_transport(grid);
    let v = if strength == T::zero() { t } else { &t + &separated_loop(grid, strength)? };
    Ok((v, mu, nu))
}

/// Whether a point lies in the right half of the reference domain `reference`,
/// the part of the separated scenario holding only the loop.
pub fn in_right_half<T: Real>(reference: &Grid2D<T>, p: [T; 2]) -> bool {
    p[0] > reference.origin[0] + T::lit(0.5) * reference.width()
}

/// Unit atoms in cells `from` and `to`, joined by a flux of mass one along an
/// L-shaped lattice path (along the row of `from`, then along the column of `to`).
pub fn make_atom_pair<T: Real>(
    grid: Grid2D<T>,
    from: (usize, usize),
    to: (usize, usize),
) -> Result<(VectorField<T>, ScalarField<T>, ScalarField<T>)> {
    for (i, j) in [from, to] {
        if i >= grid.nx || j >= grid.ny {
            return Err(Error::InvalidInput(format!("cell ({i}, {j}) is outside the grid")));
        }
    }
    let h = grid.h;
    let density = T::one() / grid.cell_area();
    let flux = T::one() / h;
    let mut mu = ScalarField::zeros(grid);
    let mut nu = ScalarField::zeros(grid);
    mu.values[grid.cell(from.0, from.1)] = density;
    nu.values[grid.cell(to.0, to.1)] = density;
    let mut v = VectorField::zeros(grid);
    let (i0, i1, j) = (from.0, to.0, from.1);
    if i1 > i0 {
        (i0 + 1..=i1).for_each(|i| v.u[grid.u_face(i, j)] = flux);
    } else {
        (i1 + 1..=i0).for_each(|i| v.u[grid.u_face(i, j)] = -flux);
    }
    let (j0, j1, i) = (from.1, to.1, to.0);
    if j1 > j0 {
        (j0 + 1..=j1).for_each(|j| v.w[grid.w_face(i, j)] = flux);
    } else {
        (j1 + 1..=j0).for_each(|j| v.w[grid.w_face(i, j)] = -flux);
    }
    Ok((v, mu, nu))
}
