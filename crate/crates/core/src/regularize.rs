//! Smoothing of a transport triple `(v, mu, nu)` into strictly positive densities
//! and an exactly divergence-consistent field on the enlarged grid `Ω'`.
//!
//! The mollifier is the lattice Gaussian `k_m ∝ exp(-(m h)² / 2 eps²)`, normalized
//! over all integer offsets. Convolving on `Ω'` therefore loses exactly the lattice
//! tail beyond `∂Ω'`, which is what the escaped masses `a_eps` and `b_eps` measure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{divergence, mass, BoundaryFlux, Grid2D, ScalarField, VectorField};
use crate::scalar::Real;

/// Diagnostics of [`regularize_triple`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationReport {
    pub epsilon: f64,
    pub a_eps: f64,
    pub b_eps: f64,
    pub c_eps: f64,
    pub poisson_residual: f64,
    pub floor: f64,
}

/// Padding width `ceil(eps^(1/3) / h)` in cells.
pub fn padding_cells<T: Real>(eps: T, h: T) -> usize {
    (eps.cbrt() / h).ceil().as_f64() as usize
}

fn check_eps<T: Real>(eps: T) -> Result<()> {
    if eps > T::zero() && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("smoothing scale must be positive, got {eps}")))
    }
}

/// Normalized 1D lattice Gaussian on offsets `0..len` plus its tail sums.
struct Kernel<T> {
    weights: Vec<T>,
    /// `tail[m] = Σ_{k ≥ m} weights[k]`, accumulated from the small end.
    tail: Vec<T>,
}

impl<T: Real> Kernel<T> {
    fn new(eps: T, h: T, len: usize) -> Self {
        let r = h / eps;
        let half = T::lit(0.5);
        let term = |m: usize| {
            let s = T::from_idx(m) * r;
            (-half * s * s).exp()
        };
        // Terms past this index underflow to zero.
        let cutoff = (T::lit(40.0) / r).ceil().as_f64() as usize + 1;
        let n = len.max(cutoff) + 2;
        let raw: Vec<T> = (0..n).map(term).collect();
        let mut tail = vec![T::zero(); n + 1];
        for m in (0..n).rev() {
            tail[m] = tail[m + 1] + raw[m];
        }
        let z = T::lit(2.0) * tail[1] + raw[0];
        let weights = raw[..len].iter().map(|&x| x / z).collect();
        let tail = tail.into_iter().map(|x| x / z).collect();
        Self { weights, tail }
    }

    #[inline]
    fn at(&self, offset: usize) -> T {
        self.weights.get(offset).copied().unwrap_or(T::zero())
    }

    /// Mass a unit atom at index `i` of `0..n` sends outside `0..n`.
    #[inline]
    fn escaped(&self, i: usize, n: usize) -> T {
        let t = |m: usize| self.tail.get(m).copied().unwrap_or(T::zero());
        t(i + 1) + t(n - i)
    }
}

/// Separable convolution of a row-major `nx x ny` array along both axes.
fn convolve_array<T: Real>(data: &[T], nx: usize, ny: usize, k: &Kernel<T>) -> Vec<T> {
    let mut tmp = vec![T::zero(); data.len()];
    for j in 0..ny {
        let row = &data[j * nx..(j + 1) * nx];
        for (i_src, &x) in row.iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            for i in 0..nx {
                let wgt = k.at(i.abs_diff(i_src));
                tmp[j * nx + i] = tmp[j * nx + i] + wgt * x;
            }
        }
    }
    let mut out = vec![T::zero(); data.len()];
    for j_src in 0..ny {
        for j in 0..ny {
            let wgt = k.at(j.abs_diff(j_src));
            if wgt == T::zero() {
                continue;
            }
            let (src, dst) = (j_src * nx, j * nx);
            for i in 0..nx {
                out[dst + i] = out[dst + i] + wgt * tmp[src + i];
            }
        }
    }
    out
}

fn kernel_for<T: Real>(eps: T, g: &Grid2D<T>) -> Kernel<T> {
    Kernel::new(eps, g.h, g.nx.max(g.ny) + 1)
}

/// Gaussian smoothing of a density, returned on the grid padded by [`padding_cells`].
pub fn gaussian_convolve_scalar<T: Real>(f: &ScalarField<T>, eps: T) -> Result<ScalarField<T>> {
    check_eps(eps)?;
    let outer = f.grid.padded(padding_cells(eps, f.grid.h));
    let e = f.embed(outer)?;
    let values = convolve_array(&e.values, outer.nx, outer.ny, &kernel_for(eps, &outer));
    Ok(ScalarField { grid: outer, values })
}

/// Face-wise Gaussian smoothing on the padded grid. Commutes with [`divergence`].
pub fn gaussian_convolve_vector<T: Real>(v: &VectorField<T>, eps: T) -> Result<VectorField<T>> {
    check_eps(eps)?;
    let outer = v.grid.padded(padding_cells(eps, v.grid.h));
    let e = v.embed(outer)?;
    let k = kernel_for(eps, &outer);
    let u = convolve_array(&e.u, outer.nx + 1, outer.ny, &k);
    let w = convolve_array(&e.w, outer.nx, outer.ny + 1, &k);
    VectorField::from_faces(outer, u, w)
}

/// Mass of `f` that the smoothing at scale `eps` carries beyond the padded grid.
pub fn escaped_mass<T: Real>(f: &ScalarField<T>, eps: T) -> Result<T> {
    check_eps(eps)?;
    let outer = f.grid.padded(padding_cells(eps, f.grid.h));
    let k = kernel_for(eps, &outer);
    let pad = (outer.nx - f.grid.nx) / 2;
    let mut acc = T::zero();
    for j in 0..f.grid.ny {
        let ty = k.escaped(j + pad, outer.ny);
        for i in 0..f.grid.nx {
            let tx = k.escaped(i + pad, outer.nx);
            acc = acc + f.at(i, j) * (tx + ty - tx * ty);
        }
    }
    Ok(acc * f.grid.cell_area())
}

/// Neumann Laplacian restricted to interior faces: `(L x)_c = Σ (x_c - x_nb) / h²`.
fn apply_laplacian<T: Real>(g: &Grid2D<T>, x: &[T], out: &mut [T]) {
    let inv = T::one() / g.cell_area();
    let (nx, ny) = (g.nx, g.ny);
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let c = x[k];
            let mut acc = T::zero();
            if i > 0 {
                acc = acc + (c - x[k - 1]);
            }
            if i + 1 < nx {
                acc = acc + (c - x[k + 1]);
            }
            if j > 0 {
                acc = acc + (c - x[k - nx]);
            }
            if j + 1 < ny {
                acc = acc + (c - x[k + nx]);
            }
            out[k] = acc * inv;
        }
    }
}

fn remove_mean<T: Real>(x: &mut [T]) {
    let m = x.iter().copied().sum::<T>() / T::from_idx(x.len());
    x.iter_mut().for_each(|v| *v = *v - m);
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Mean-zero solution of `L x = b` by conjugate gradients; `b` must have zero mean.
/// Returns the solution and the final residual norm.
fn conjugate_gradient<T: Real>(g: &Grid2D<T>, b: &[T], rel_tol: T) -> Result<(Vec<T>, T)> {
    let n = b.len();
    let mut x = vec![T::zero(); n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == T::zero() {
        return Ok((x, T::zero()));
    }
    let target = rel_tol.max(T::solver_floor()) * b_norm;
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![T::zero(); n];
    let mut rr = dot(&r, &r);
    let max_iter = 10 * n;
    for _ in 0..max_iter {
        if rr.sqrt() <= target {
            return Ok((x, rr.sqrt()));
        }
        apply_laplacian(g, &p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for k in 0..n {
            x[k] = x[k] + alpha * p[k];
            r[k] = r[k] - alpha * ap[k];
        }
        remove_mean(&mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    Err(Error::SolverFailure(format!(
        "conjugate gradient did not reach relative residual {rel_tol:e} in {max_iter} iterations"
    )))
}

/// Gradient field `δ = ∇u` with `divergence(δ) = rhs` whose boundary faces cancel
/// the outward fluxes `boundary_flux`, i.e. `δ·n = -boundary_flux` on `∂Ω`.
///
/// Requires `mass(rhs) = -h Σ boundary_flux`. Interior faces carry `∇u` for the
/// mean-zero Neumann solution `u`; boundary faces are copied exactly.
pub fn poisson_neumann<T: Real>(
    rhs: &ScalarField<T>,
    boundary_flux: &BoundaryFlux<T>,
) -> Result<VectorField<T>> {
    poisson_neumann_with_residual(rhs, boundary_flux).map(|(d, _)| d)
}

/// [`poisson_neumann`] also returning the final residual norm of the linear solve.
pub fn poisson_neumann_with_residual<T: Real>(
    rhs: &ScalarField<T>,
    boundary_flux: &BoundaryFlux<T>,
) -> Result<(VectorField<T>, T)> {
    let g = rhs.grid;
    if !boundary_flux.fits(&g) {
        return Err(Error::InvalidInput("boundary flux does not match the grid".into()));
    }
    let imbalance = mass(rhs) + boundary_flux.total(g.h);
    let scale = rhs.values.iter().fold(T::zero(), |s, x| s + x.abs()) * g.cell_area();
    // Relative slack of 1e-8, widened to the working precision for f32.
    let slack = T::lit(1e-8).max(T::epsilon() * T::lit(100.0));
    if imbalance.abs() > slack * scale.max(T::one()) {
        return Err(Error::Infeasible(format!(
            "Neumann data incompatible: mass(rhs) + h·Σ flux = {imbalance:e}"
        )));
    }
    let mut delta = VectorField::zeros(g);
    for j in 0..g.ny {
        delta.u[g.u_face(0, j)] = boundary_flux.left[j];
        delta.u[g.u_face(g.nx, j)] = -boundary_flux.right[j];
    }
    for i in 0..g.nx {
        delta.w[g.w_face(i, 0)] = boundary_flux.bottom[i];
        delta.w[g.w_face(i, g.ny)] = -boundary_flux.top[i];
    }
    // Solve L u = -(rhs - div δ_boundary), then δ = ∇u on interior faces.
    let d_b = divergence(&delta);
    let mut b: Vec<T> = rhs.values.iter().zip(&d_b.values).map(|(&r, &d)| d - r).collect();
    remove_mean(&mut b);
    let s = b.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if s == T::zero() {
        return Ok((delta, T::zero()));
    }
    b.iter_mut().for_each(|x| *x = *x / s);
    let (x, res) = conjugate_gradient(&g, &b, T::lit(1e-10))?;
    let inv_h = T::one() / g.h;
    for j in 0..g.ny {
        for i in 1..g.nx {
            let k = j * g.nx + i;
            delta.u[g.u_face(i, j)] = s * (x[k] - x[k - 1]) * inv_h;
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            let k = j * g.nx + i;
            delta.w[g.w_face(i, j)] = s * (x[k] - x[k - g.nx]) * inv_h;
        }
    }
    Ok((delta, s * res))
}

/// Smooths `(v, mu, nu)` at scale `eps` onto the padded grid `Ω'`.
///
/// Outputs satisfy `divergence(v^ε) = mu^ε - nu^ε`, unit masses, strictly positive
/// densities and zero normal flux on `∂Ω'`.
pub fn regularize_triple<T: Real>(
    v: &VectorField<T>,
    mu: &ScalarField<T>,
    nu: &ScalarField<T>,
    eps: T,
) -> Result<(VectorField<T>, ScalarField<T>, ScalarField<T>, RegularizationReport)> {
    check_eps(eps)?;
    v.grid.ensure_same(&mu.grid)?;
    v.grid.ensure_same(&nu.grid)?;
    let tol = T::lit(1e-9);
    mu.check_probability("mu", tol)?;
    nu.check_probability("nu", tol)?;
    let div = divergence(v);
    let scale = mu.max_value().max(nu.max_value()).max(T::one());
    for (k, &d) in div.values.iter().enumerate() {
        let gap = (d - (mu.values[k] - nu.values[k])).abs();
        if gap > tol * scale {
            let (i, j) = (k % v.grid.nx, k / v.grid.nx);
            return Err(Error::InvalidInput(format!(
                "divergence of v differs from mu - nu by {gap:e} in cell ({i}, {j})"
            )));
        }
    }

    let v_hat = gaussian_convolve_vector(v, eps)?;
    let outer = v_hat.grid;
    let a = escaped_mass(mu, eps)?;
    let b = escaped_mass(nu, eps)?;
    let lift = |f: &ScalarField<T>, m: T| -> Result<ScalarField<T>> {
        let add = m / outer.area();
        Ok(gaussian_convolve_scalar(f, eps)?.map(|x| x + add))
    };
    let mu_e = lift(mu, a)?;
    let nu_e = lift(nu, b)?;

    let flux = v_hat.boundary_flux();
    let c = flux.max_abs();
    // div v̂ = μ̂ - ν̂ exactly, so the correction only has to absorb the lifted
    // escaped masses and the outward flux. Solving that from the exact constant
    // keeps δ free of convolution roundoff, which a second solve cleans up.
    let lifted = ScalarField::constant(outer, (a - b) / outer.area());
    let (delta, r1) = poisson_neumann_with_residual(&lifted, &flux)?;
    let v_s = (&v_hat + &delta).with_zero_boundary();
    let target = mu_e.zip_with(&nu_e, |p, q| p - q)?;
    let rhs = target.zip_with(&divergence(&v_s), |t, d| t - d)?;
    let (cleanup, r2) = poisson_neumann_with_residual(&rhs, &BoundaryFlux::zeros(&outer))?;
    let v_e = (&v_s + &cleanup).with_zero_boundary();
    let residual = r1.max(r2);

    let floor = mu_e.min_value().min(nu_e.min_value());
    if !(floor > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "smoothing scale {eps} is too small for cell size {}: densities underflow to zero",
            v.grid.h
        )));
    }
    let report = RegularizationReport {
        epsilon: eps.as_f64(),
        a_eps: a.as_f64(),
        b_eps: b.as_f64(),
        c_eps: c.as_f64(),
        poisson_residual: residual.as_f64(),
        floor: floor.as_f64(),
    };
    Ok((v_e, mu_e, nu_e, report))
}
