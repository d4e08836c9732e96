//! Uniform cell grids, cell-centered densities and staggered face-flux fields.
//!
//! Layout conventions:
//! - cell `(i, j)` has center `origin + ((i + 1/2) h, (j + 1/2) h)` and is stored at `j * nx + i`;
//! - `u` lives on vertical faces, `(nx + 1) * ny` entries, `u[j * (nx + 1) + i]` is the
//!   left face of cell `(i, j)`;
//! - `w` lives on horizontal faces, `nx * (ny + 1)` entries, `w[j * nx + i]` is the
//!   bottom face of cell `(i, j)`.
//!
//! With this layout the divergence of a field is exact per cell, and the Neumann
//! condition is carried by the boundary faces themselves.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D<T> {
    pub nx: usize,
    pub ny: usize,
    pub h: T,
    /// Lower-left corner. Zero for the computational domain, negative for padded grids.
    pub origin: [T; 2],
}

impl<T: Real> Grid2D<T> {
    pub fn new(nx: usize, ny: usize, h: T) -> Result<Self> {
        Self::with_origin(nx, ny, h, [T::zero(), T::zero()])
    }

    /// Square `n x n` grid on the unit square.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("grid needs at least 2 cells per side".into()));
        }
        Self::new(n, n, T::one() / T::from_idx(n))
    }

    pub fn with_origin(nx: usize, ny: usize, h: T, origin: [T; 2]) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 2 cells per side, got {nx}x{ny}"
            )));
        }
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("cell size must be positive, got {h}")));
        }
        Ok(Self { nx, ny, h, origin })
    }

    /// The grid enlarged by `pad` cells on every side (same spacing).
    pub fn padded(&self, pad: usize) -> Self {
        let shift = T::from_idx(pad) * self.h;
        Self {
            nx: self.nx + 2 * pad,
            ny: self.ny + 2 * pad,
            h: self.h,
            origin: [self.origin[0] - shift, self.origin[1] - shift],
        }
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn n_u(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    #[inline]
    pub fn n_w(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn u_face(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn w_face(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_area(&self) -> T {
        self.h * self.h
    }

    pub fn area(&self) -> T {
        T::from_idx(self.n_cells()) * self.cell_area()
    }

    pub fn width(&self) -> T {
        T::from_idx(self.nx) * self.h
    }

    pub fn height(&self) -> T {
        T::from_idx(self.ny) * self.h
    }

    pub fn center(&self, i: usize, j: usize) -> [T; 2] {
        let half = T::lit(0.5);
        [
            self.origin[0] + (T::from_idx(i) + half) * self.h,
            self.origin[1] + (T::from_idx(j) + half) * self.h,
        ]
    }

    /// Upper-right corner of the domain.
    pub fn extent(&self) -> [T; 2] {
        [self.origin[0] + self.width(), self.origin[1] + self.height()]
    }

    /// Whether `p` lies in the closed domain, allowing `slack` absolute overshoot.
    pub fn contains(&self, p: [T; 2], slack: T) -> bool {
        let hi = self.extent();
        p[0] >= self.origin[0] - slack
            && p[0] <= hi[0] + slack
            && p[1] >= self.origin[1] - slack
            && p[1] <= hi[1] + slack
    }

    /// Clamps a point into the closed domain.
    pub fn clamp(&self, p: [T; 2]) -> [T; 2] {
        let hi = self.extent();
        [
            p[0].max(self.origin[0]).min(hi[0]),
            p[1].max(self.origin[1]).min(hi[1]),
        ]
    }

    /// Cell containing `p`; points on the outer boundary belong to the adjacent cell.
    pub fn locate(&self, p: [T; 2]) -> (usize, usize) {
        let fx = ((p[0] - self.origin[0]) / self.h).floor();
        let fy = ((p[1] - self.origin[1]) / self.h).floor();
        (clamp_index(fx, self.nx), clamp_index(fy, self.ny))
    }

    /// True when both grids describe the same cells (exact comparison).
    pub fn same_as(&self, other: &Self) -> bool {
        self == other
    }

    pub fn ensure_same(&self, other: &Self) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "grid mismatch: {}x{} (h={}) vs {}x{} (h={})",
                self.nx, self.ny, self.h, other.nx, other.ny, other.h
            )))
        }
    }

    /// Offset (in cells) of `inner` inside `self`, if `inner` is aligned with it.
    pub fn offset_of(&self, inner: &Self) -> Option<(usize, usize)> {
        if self.h != inner.h {
            return None;
        }
        let ox = ((inner.origin[0] - self.origin[0]) / self.h).round();
        let oy = ((inner.origin[1] - self.origin[1]) / self.h).round();
        let (ox, oy) = (ox.to_i64()?, oy.to_i64()?);
        if ox < 0 || oy < 0 {
            return None;
        }
        let (ox, oy) = (ox as usize, oy as usize);
        if ox + inner.nx > self.nx || oy + inner.ny > self.ny {
            return None;
        }
        Some((ox, oy))
    }
}

#[inline]
pub(crate) fn clamp_index<T: Real>(f: T, n: usize) -> usize {
    if !(f > T::zero()) {
        0
    } else {
        f.to_usize().unwrap_or(n - 1).min(n - 1)
    }
}

/// Cell-centered density: mass per unit area in each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    pub grid: Grid2D<T>,
    pub values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(grid: Grid2D<T>) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: Grid2D<T>, c: T) -> Self {
        Self { values: vec![c; grid.n_cells()], grid }
    }

    pub fn from_values(grid: Grid2D<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::InvalidInput(format!(
                "scalar field needs {} values, got {}",
                grid.n_cells(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(grid: Grid2D<T>, f: impl Fn(T, T) -> T) -> Self {
        let mut values = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let c = grid.center(i, j);
                values.push(f(c[0], c[1]));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[self.grid.cell(i, j)]
    }

    pub fn min_value(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `Σ |a - b| h²`.
    pub fn l1_distance(&self, other: &Self) -> Result<T> {
        self.grid.ensure_same(&other.grid)?;
        let s: T = self.values.iter().zip(&other.values).map(|(&a, &b)| (a - b).abs()).sum();
        Ok(s * self.grid.cell_area())
    }

    /// Checks the probability-density invariant: nonnegative with unit mass.
    pub fn check_probability(&self, name: &str, tol: T) -> Result<()> {
        if let Some(bad) = self.values.iter().find(|v| !(**v >= T::zero())) {
            return Err(Error::InvalidInput(format!(
                "{name} must be a nonnegative density, found value {bad}"
            )));
        }
        let m = mass(self);
        if (m - T::one()).abs() > tol.max(T::sum_slack(0.0, self.values.len())) {
            return Err(Error::InvalidInput(format!(
                "{name} must have unit mass, found mass {m:e}"
            )));
        }
        Ok(())
    }

    /// Copies this field into the aligned larger grid `outer`, zero elsewhere.
    pub fn embed(&self, outer: Grid2D<T>) -> Result<Self> {
        let (ox, oy) = outer
            .offset_of(&self.grid)
            .ok_or_else(|| Error::InvalidInput("grid is not aligned inside the target grid".into()))?;
        let mut out = Self::zeros(outer);
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                out.values[outer.cell(i + ox, j + oy)] = self.at(i, j);
            }
        }
        Ok(out)
    }

    /// Restriction to the aligned sub-grid `inner`.
    pub fn restrict(&self, inner: Grid2D<T>) -> Result<Self> {
        let (ox, oy) = self
            .grid
            .offset_of(&inner)
            .ok_or_else(|| Error::InvalidInput("sub-grid is not aligned inside this grid".into()))?;
        let mut out = Self::zeros(inner);
        for j in 0..inner.ny {
            for i in 0..inner.nx {
                out.values[inner.cell(i, j)] = self.at(i + ox, j + oy);
            }
        }
        Ok(out)
    }
}

impl<T: Real> Add for &ScalarField<T> {
    type Output = ScalarField<T>;
    fn add(self, rhs: Self) -> ScalarField<T> {
        self.zip_with(rhs, |a, b| a + b).expect("grid mismatch in scalar addition")
    }
}

impl<T: Real> Sub for &ScalarField<T> {
    type Output = ScalarField<T>;
    fn sub(self, rhs: Self) -> ScalarField<T> {
        self.zip_with(rhs, |a, b| a - b).expect("grid mismatch in scalar subtraction")
    }
}

/// Staggered field of normal flux densities on cell faces.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<T> {
    pub grid: Grid2D<T>,
    pub u: Vec<T>,
    pub w: Vec<T>,
}

impl<T: Real> VectorField<T> {
    pub fn zeros(grid: Grid2D<T>) -> Self {
        Self { u: vec![T::zero(); grid.n_u()], w: vec![T::zero(); grid.n_w()], grid }
    }

    pub fn from_faces(grid: Grid2D<T>, u: Vec<T>, w: Vec<T>) -> Result<Self> {
        if u.len() != grid.n_u() || w.len() != grid.n_w() {
            return Err(Error::InvalidInput(format!(
                "vector field needs {} u and {} w values, got {} and {}",
                grid.n_u(),
                grid.n_w(),
                u.len(),
                w.len()
            )));
        }
        Ok(Self { grid, u, w })
    }

    /// Constant flux `(a, b)` on every face, boundary faces included.
    pub fn constant(grid: Grid2D<T>, a: T, b: T) -> Self {
        Self { u: vec![a; grid.n_u()], w: vec![b; grid.n_w()], grid }
    }

    /// Samples `f` at face midpoints (x-component on vertical faces, y on horizontal).
    pub fn from_fn(grid: Grid2D<T>, f: impl Fn(T, T) -> [T; 2]) -> Self {
        let half = T::lit(0.5);
        let [x0, y0] = grid.origin;
        let mut out = Self::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..=grid.nx {
                let x = x0 + T::from_idx(i) * grid.h;
                let y = y0 + (T::from_idx(j) + half) * grid.h;
                out.u[grid.u_face(i, j)] = f(x, y)[0];
            }
        }
        for j in 0..=grid.ny {
            for i in 0..grid.nx {
                let x = x0 + (T::from_idx(i) + half) * grid.h;
                let y = y0 + T::from_idx(j) * grid.h;
                out.w[grid.w_face(i, j)] = f(x, y)[1];
            }
        }
        out
    }

    #[inline]
    pub fn u_at(&self, i: usize, j: usize) -> T {
        self.u[self.grid.u_face(i, j)]
    }

    #[inline]
    pub fn w_at(&self, i: usize, j: usize) -> T {
        self.w[self.grid.w_face(i, j)]
    }

    /// Cell vector obtained by averaging opposing face fluxes.
    #[inline]
    pub fn cell_vector(&self, i: usize, j: usize) -> [T; 2] {
        let half = T::lit(0.5);
        [
            half * (self.u_at(i, j) + self.u_at(i + 1, j)),
            half * (self.w_at(i, j) + self.w_at(i, j + 1)),
        ]
    }

    /// `v · n = 0` on every boundary face, exactly.
    pub fn is_boundary_parallel(&self) -> bool {
        self.boundary_faces().all(|(_, _, val)| val == T::zero())
    }

    /// Copy with all boundary faces set to zero.
    pub fn with_zero_boundary(&self) -> Self {
        let mut out = self.clone();
        let g = self.grid;
        for j in 0..g.ny {
            out.u[g.u_face(0, j)] = T::zero();
            out.u[g.u_face(g.nx, j)] = T::zero();
        }
        for i in 0..g.nx {
            out.w[g.w_face(i, 0)] = T::zero();
            out.w[g.w_face(i, g.ny)] = T::zero();
        }
        out
    }

    /// Outward normal fluxes on the boundary.
    pub fn boundary_flux(&self) -> BoundaryFlux<T> {
        let g = self.grid;
        BoundaryFlux {
            left: (0..g.ny).map(|j| -self.u_at(0, j)).collect(),
            right: (0..g.ny).map(|j| self.u_at(g.nx, j)).collect(),
            bottom: (0..g.nx).map(|i| -self.w_at(i, 0)).collect(),
            top: (0..g.nx).map(|i| self.w_at(i, g.ny)).collect(),
        }
    }

    /// Iterates `(is_u_face, index, raw face value)` over boundary faces.
    fn boundary_faces(&self) -> impl Iterator<Item = (bool, usize, T)> + '_ {
        let g = self.grid;
        let us = (0..g.ny).flat_map(move |j| [g.u_face(0, j), g.u_face(g.nx, j)]);
        let ws = (0..g.nx).flat_map(move |i| [g.w_face(i, 0), g.w_face(i, g.ny)]);
        us.map(|k| (true, k, self.u[k])).chain(ws.map(|k| (false, k, self.w[k])))
    }

    pub fn scale(&self, a: T) -> Self {
        Self {
            grid: self.grid,
            u: self.u.iter().map(|&x| a * x).collect(),
            w: self.w.iter().map(|&x| a * x).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            u: self.u.iter().zip(&other.u).map(|(&x, &y)| a * x + b * y).collect(),
            w: self.w.iter().zip(&other.w).map(|(&x, &y)| a * x + b * y).collect(),
        })
    }

    /// Largest absolute face value.
    pub fn max_abs(&self) -> T {
        self.u.iter().chain(&self.w).fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// `sqrt(Σ_faces value² h²)`, the face-based L2 norm.
    /// Scaled by the largest entry so tiny or huge fields neither underflow nor overflow.
    pub fn l2_norm(&self) -> T {
        let top = self.u.iter().chain(&self.w).fold(T::zero(), |m, x| m.max(x.abs()));
        if top == T::zero() || !top.is_finite() {
            return top;
        }
        let s: T = self.u.iter().chain(&self.w).map(|&x| (x / top) * (x / top)).sum();
        top * s.sqrt() * self.grid.h
    }

    /// Copies this field into the aligned larger grid, zero flux elsewhere.
    pub fn embed(&self, outer: Grid2D<T>) -> Result<Self> {
        let (ox, oy) = outer
            .offset_of(&self.grid)
            .ok_or_else(|| Error::InvalidInput("grid is not aligned inside the target grid".into()))?;
        let g = self.grid;
        let mut out = Self::zeros(outer);
        for j in 0..g.ny {
            for i in 0..=g.nx {
                out.u[outer.u_face(i + ox, j + oy)] = self.u_at(i, j);
            }
        }
        for j in 0..=g.ny {
            for i in 0..g.nx {
                out.w[outer.w_face(i + ox, j + oy)] = self.w_at(i, j);
            }
        }
        Ok(out)
    }
}

impl<T: Real> Add for &VectorField<T> {
    type Output = VectorField<T>;
    fn add(self, rhs: Self) -> VectorField<T> {
        self.axpby(T::one(), rhs, T::one()).expect("grid mismatch in vector addition")
    }
}

impl<T: Real> Sub for &VectorField<T> {
    type Output = VectorField<T>;
    fn sub(self, rhs: Self) -> VectorField<T> {
        self.axpby(T::one(), rhs, -T::one()).expect("grid mismatch in vector subtraction")
    }
}

impl<T: Real> Neg for &VectorField<T> {
    type Output = VectorField<T>;
    fn neg(self) -> VectorField<T> {
        VectorField {
            grid: self.grid,
            u: self.u.iter().map(|&x| -x).collect(),
            w: self.w.iter().map(|&x| -x).collect(),
        }
    }
}

impl<T: Real> Mul<T> for &VectorField<T> {
    type Output = VectorField<T>;
    fn mul(self, a: T) -> VectorField<T> {
        self.scale(a)
    }
}

/// Outward normal flux on each boundary face (left/right indexed by row, bottom/top by column).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFlux<T> {
    pub left: Vec<T>,
    pub right: Vec<T>,
    pub bottom: Vec<T>,
    pub top: Vec<T>,
}

impl<T: Real> BoundaryFlux<T> {
    pub fn zeros(grid: &Grid2D<T>) -> Self {
        Self {
            left: vec![T::zero(); grid.ny],
            right: vec![T::zero(); grid.ny],
            bottom: vec![T::zero(); grid.nx],
            top: vec![T::zero(); grid.nx],
        }
    }

    pub fn fits(&self, grid: &Grid2D<T>) -> bool {
        self.left.len() == grid.ny
            && self.right.len() == grid.ny
            && self.bottom.len() == grid.nx
            && self.top.len() == grid.nx
    }

    fn all(&self) -> impl Iterator<Item = &T> {
        self.left.iter().chain(&self.right).chain(&self.bottom).chain(&self.top)
    }

    /// Total outward flux `Σ flux · h`.
    pub fn total(&self, h: T) -> T {
        self.all().copied().sum::<T>() * h
    }

    pub fn max_abs(&self) -> T {
        self.all().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn scale(&self, a: T) -> Self {
        let f = |v: &Vec<T>| v.iter().map(|&x| a * x).collect();
        Self { left: f(&self.left), right: f(&self.right), bottom: f(&self.bottom), top: f(&self.top) }
    }
}

/// Per-cell discrete divergence.
pub fn divergence<T: Real>(v: &VectorField<T>) -> ScalarField<T> {
    let g = v.grid;
    let inv_h = T::one() / g.h;
    let mut values = Vec::with_capacity(g.n_cells());
    for j in 0..g.ny {
        for i in 0..g.nx {
            let dx = v.u_at(i + 1, j) - v.u_at(i, j);
            let dy = v.w_at(i, j + 1) - v.w_at(i, j);
            values.push((dx + dy) * inv_h);
        }
    }
    ScalarField { grid: g, values }
}

/// `Σ values · h²`.
pub fn mass<T: Real>(f: &ScalarField<T>) -> T {
    f.values.iter().copied().sum::<T>() * f.grid.cell_area()
}

/// Euclidean magnitude of the averaged cell vector, per cell.
pub fn magnitude_field<T: Real>(v: &VectorField<T>) -> ScalarField<T> {
    let g = v.grid;
    let mut values = Vec::with_capacity(g.n_cells());
    for j in 0..g.ny {
        for i in 0..g.nx {
            let [a, b] = v.cell_vector(i, j);
            values.push(a.hypot(b));
        }
    }
    ScalarField { grid: g, values }
}

/// Total variation `‖v‖ = Σ h² |v_cell|`.
pub fn tv_norm<T: Real>(v: &VectorField<T>) -> T {
    mass(&magnitude_field(v))
}

/// `Σ |a_cell - b_cell| h²`, the L1 distance of cell-reconstructed vectors.
pub fn vector_l1_distance<T: Real>(a: &VectorField<T>, b: &VectorField<T>) -> Result<T> {
    Ok(tv_norm(&a.axpby(T::one(), b, -T::one())?))
}
