//! Lagrangian flow of a divergence-compatible field.
//!
//! Given `v` with `div v = f0 - f1` and strictly positive densities, particles
//! seeded from `f0` follow `y' = v(y) / f_t(y)` with `f_t = (1 - t) f0 + t f1`.
//! Their trajectories, weighted equally, form the path ensemble `Q` whose time-0
//! and time-1 marginals are `f0` and `f1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{mass, Grid2D, ScalarField, VectorField};
use crate::scalar::Real;

/// Interpolated densities below this value are treated as degenerate, unless every
/// cell of both densities is strictly positive: interpolation then stays above the
/// smallest cell value, so the quotient is well defined however small that value is.
pub const DENSITY_FLOOR: f64 = 1e-14;

/// Polyline in the plane; point `k` of `n` is visited at time `k / (n - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path<T> {
    points: Vec<[T; 2]>,
}

impl<T: Real> Path<T> {
    pub fn new(points: Vec<[T; 2]>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a path needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::InvalidInput("path contains a non-finite point".into()));
        }
        Ok(Self { points })
    }

    /// Straight segment from `a` to `b`.
    pub fn segment(a: [T; 2], b: [T; 2]) -> Self {
        Self { points: vec![a, b] }
    }

    pub fn points(&self) -> &[[T; 2]] {
        &self.points
    }

    pub fn start(&self) -> [T; 2] {
        self.points[0]
    }

    pub fn end(&self) -> [T; 2] {
        self.points[self.points.len() - 1]
    }

    pub fn length(&self) -> T {
        self.points.windows(2).map(|s| dist(s[0], s[1])).sum()
    }

    pub fn reversed(&self) -> Self {
        Self { points: self.points.iter().rev().copied().collect() }
    }

    /// Whether every point lies in `grid` (closed, with a tiny slack).
    pub fn inside(&self, grid: &Grid2D<T>) -> bool {
        let slack = grid.h * T::lit(1e-9);
        self.points.iter().all(|&p| grid.contains(p, slack))
    }
}

#[inline]
pub(crate) fn dist<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

/// Weighted finite set of paths: a discrete traffic plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble<T> {
    paths: Vec<Path<T>>,
    weights: Vec<T>,
}

impl<T: Real> PathEnsemble<T> {
    pub fn new(paths: Vec<Path<T>>, weights: Vec<T>) -> Result<Self> {
        if paths.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} paths but {} weights",
                paths.len(),
                weights.len()
            )));
        }
        if paths.is_empty() {
            return Err(Error::InvalidInput("a path ensemble needs at least one path".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > T::zero()) || !w.is_finite()) {
            return Err(Error::InvalidInput(format!("path weights must be positive, got {w}")));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::sum_slack(1e-9, weights.len()) {
            return Err(Error::InvalidInput(format!("path weights must sum to 1, got {total}")));
        }
        Ok(Self { paths, weights })
    }

    /// Equal weights `1 / n`.
    pub fn uniform(paths: Vec<Path<T>>) -> Result<Self> {
        let w = T::one() / T::from_idx(paths.len().max(1));
        let weights = vec![w; paths.len()];
        Self::new(paths, weights)
    }

    /// Concatenation with weights scaled by `alpha` and `1 - alpha`.
    pub fn mixture(a: &Self, alpha: T, b: &Self) -> Result<Self> {
        let beta = T::one() - alpha;
        let paths = a.paths.iter().chain(&b.paths).cloned().collect();
        let weights = a
            .weights
            .iter()
            .map(|&w| alpha * w)
            .chain(b.weights.iter().map(|&w| beta * w))
            .collect();
        Self::new(paths, weights)
    }

    pub fn paths(&self) -> &[Path<T>] {
        &self.paths
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Path<T>, T)> {
        self.paths.iter().zip(self.weights.iter().copied())
    }

    /// `Σ w · L(ω)`.
    pub fn average_length(&self) -> T {
        self.iter().map(|(p, w)| w * p.length()).sum()
    }

    /// Every path reversed, weights unchanged.
    pub fn reversed(&self) -> Self {
        Self { paths: self.paths.iter().map(Path::reversed).collect(), weights: self.weights.clone() }
    }

    /// Applies `f` to each path, keeping the weights.
    pub fn map_paths(&self, f: impl Fn(&Path<T>) -> Path<T> + Sync + Send) -> Self {
        Self { paths: self.paths.iter().map(f).collect(), weights: self.weights.clone() }
    }
}

/// `(1 - t) f0 + t f1`, cellwise.
pub fn interpolate_density<T: Real>(
    f0: &ScalarField<T>,
    f1: &ScalarField<T>,
    t: T,
) -> Result<ScalarField<T>> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::InvalidParameter(format!("time must lie in [0, 1], got {t}")));
    }
    if t == T::zero() {
        f0.grid.ensure_same(&f1.grid)?;
        return Ok(f0.clone());
    }
    if t == T::one() {
        f0.grid.ensure_same(&f1.grid)?;
        return Ok(f1.clone());
    }
    f0.zip_with(f1, |a, b| (T::one() - t) * a + t * b)
}

/// Bilinear interpolation of cell-centered data, constant beyond the outer cell centers.
#[derive(Debug, Clone)]
struct CellSampler<T> {
    grid: Grid2D<T>,
    values: Vec<T>,
}

impl<T: Real> CellSampler<T> {
    #[inline]
    fn weights(&self, p: [T; 2]) -> (usize, usize, T, T) {
        let g = &self.grid;
        let half = T::lit(0.5);
        let sx = (p[0] - g.origin[0]) / g.h - half;
        let sy = (p[1] - g.origin[1]) / g.h - half;
        let (i0, fx) = split_coord(sx, g.nx);
        let (j0, fy) = split_coord(sy, g.ny);
        (i0, j0, fx, fy)
    }

    #[inline]
    fn sample_at(&self, (i0, j0, fx, fy): (usize, usize, T, T)) -> T {
        let nx = self.grid.nx;
        let k = j0 * nx + i0;
        let v = &self.values;
        let one = T::one();
        let bottom = (one - fx) * v[k] + fx * v[k + 1];
        let top = (one - fx) * v[k + nx] + fx * v[k + nx + 1];
        (one - fy) * bottom + fy * top
    }
}

/// Lower stencil index and fractional offset, clamped so that nodes `i0, i0 + 1` exist.
#[inline]
fn split_coord<T: Real>(s: T, n: usize) -> (usize, T) {
    let max0 = n - 2;
    let fl = s.floor();
    if !(fl > T::zero()) {
        let f = if s > T::zero() { s } else { T::zero() };
        return (0, f.min(T::one()));
    }
    let i0 = fl.to_usize().unwrap_or(max0);
    if i0 > max0 {
        return (max0, T::one());
    }
    (i0, (s - fl).min(T::one()))
}

/// Time-dependent velocity `v(x) / f_t(x)` with precomputed interpolation tables.
#[derive(Debug, Clone)]
pub struct MoserField<T> {
    vx: CellSampler<T>,
    vy: CellSampler<T>,
    f0: CellSampler<T>,
    f1: CellSampler<T>,
    threshold: T,
}

impl<T: Real> MoserField<T> {
    pub fn new(v: &VectorField<T>, f0: &ScalarField<T>, f1: &ScalarField<T>) -> Result<Self> {
        v.grid.ensure_same(&f0.grid)?;
        v.grid.ensure_same(&f1.grid)?;
        let g = v.grid;
        let mut vx = Vec::with_capacity(g.n_cells());
        let mut vy = Vec::with_capacity(g.n_cells());
        for j in 0..g.ny {
            for i in 0..g.nx {
                let [a, b] = v.cell_vector(i, j);
                vx.push(a);
                vy.push(b);
            }
        }
        let smallest = f0.values.iter().chain(&f1.values).fold(T::infinity(), |m, &x| m.min(x));
        let floor = T::lit(DENSITY_FLOOR);
        let threshold = if smallest > T::zero() { smallest.min(floor) } else { floor };
        Ok(Self {
            threshold,
            vx: CellSampler { grid: g, values: vx },
            vy: CellSampler { grid: g, values: vy },
            f0: CellSampler { grid: g, values: f0.values.clone() },
            f1: CellSampler { grid: g, values: f1.values.clone() },
        })
    }

    pub fn grid(&self) -> &Grid2D<T> {
        &self.vx.grid
    }

    pub fn velocity(&self, t: T, p: [T; 2]) -> Result<[T; 2]> {
        let st = self.vx.weights(p);
        let f = (T::one() - t) * self.f0.sample_at(st) + t * self.f1.sample_at(st);
        if !(f > T::zero() && f >= self.threshold) {
            return Err(Error::DegenerateDensity { value: f.as_f64(), x: p[0].as_f64(), y: p[1].as_f64() });
        }
        Ok([self.vx.sample_at(st) / f, self.vy.sample_at(st) / f])
    }

    /// Classical RK4 with fixed step `1 / n_steps`, clamping every stage into the domain.
    pub fn trajectory(&self, start: [T; 2], n_steps: usize) -> Result<Path<T>> {
        let g = *self.grid();
        let dt = T::one() / T::from_idx(n_steps);
        let half = T::lit(0.5);
        let sixth = T::one() / T::lit(6.0);
        let two = T::lit(2.0);
        let mut pts = Vec::with_capacity(n_steps + 1);
        let mut y = g.clamp(start);
        pts.push(y);
        let step = |y: [T; 2], k: [T; 2], s: T| g.clamp([y[0] + s * k[0], y[1] + s * k[1]]);
        for s in 0..n_steps {
            let t = T::from_idx(s) * dt;
            let k1 = self.velocity(t, y)?;
            let k2 = self.velocity(t + half * dt, step(y, k1, half * dt))?;
            let k3 = self.velocity(t + half * dt, step(y, k2, half * dt))?;
            let k4 = self.velocity(t + dt, step(y, k3, dt))?;
            let k = [
                sixth * (k1[0] + two * k2[0] + two * k3[0] + k4[0]),
                sixth * (k1[1] + two * k2[1] + two * k3[1] + k4[1]),
            ];
            y = step(y, k, dt);
            pts.push(y);
        }
        Path::new(pts)
    }
}

/// `v(x) / f_t(x)` at a single point. Build a [`MoserField`] for repeated queries.
pub fn moser_velocity<T: Real>(
    v: &VectorField<T>,
    f0: &ScalarField<T>,
    f1: &ScalarField<T>,
    t: T,
    x: [T; 2],
) -> Result<[T; 2]> {
    MoserField::new(v, f0, f1)?.velocity(t, x)
}

/// Particle count per cell: expected counts `n f0 h² / mass(f0)` rounded by one
/// seeded systematic-sampling offset, so the total is exactly `n`.
pub fn stratified_counts<T: Real>(f0: &ScalarField<T>, n: usize, seed: u64) -> Result<Vec<usize>> {
    if let Some(bad) = f0.values.iter().find(|x| !(**x >= T::zero())) {
        return Err(Error::InvalidInput(format!("initial density has negative value {bad}")));
    }
    let total = mass(f0).as_f64();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("initial density has zero mass".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let offset: f64 = rng.gen();
    let area = f0.grid.cell_area().as_f64();
    let scale = n as f64 * area / total;
    let mut counts = Vec::with_capacity(f0.values.len());
    let mut cum = 0.0;
    let mut prev = offset.floor() as i64;
    let last = f0.values.len() - 1;
    for (k, v) in f0.values.iter().enumerate() {
        cum += v.as_f64() * scale;
        let c = if k == last { n as f64 } else { cum.min(n as f64) };
        let cur = (c + offset).floor() as i64;
        counts.push((cur - prev).max(0) as usize);
        prev = cur.max(prev);
    }
    Ok(counts)
}

/// Point `r` of a `c`-point Fibonacci lattice in the unit square, shifted by a
/// random offset drawn from the stream of `cell`.
fn lattice_point(seed: u64, cell: usize, r: usize, c: usize) -> (f64, f64) {
    const GOLDEN: f64 = 0.618_033_988_749_894_8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell as u64);
    let (s1, s2): (f64, f64) = (rng.gen(), rng.gen());
    let a = ((r as f64 + 0.5) / c as f64 + s1).fract();
    let b = (r as f64 * GOLDEN + s2).fract();
    (a, b)
}

/// Runs the particle flow and returns the equally weighted path ensemble.
///
/// Inputs should be regularized: strictly positive densities and
/// `div v = f0 - f1`. Particles are seeded per cell (see [`stratified_counts`]) on a
/// randomly shifted Fibonacci lattice, which spreads them far more evenly than
/// independent uniform draws.
/// Results do not depend on the size of the rayon pool this runs in.
pub fn integrate_paths<T: Real>(
    v: &VectorField<T>,
    f0: &ScalarField<T>,
    f1: &ScalarField<T>,
    n_particles: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    if n_particles == 0 || n_steps == 0 {
        return Err(Error::InvalidParameter("need at least one particle and one step".into()));
    }
    let field = MoserField::new(v, f0, f1)?;
    let g = v.grid;
    let counts = stratified_counts(f0, n_particles, seed)?;
    let mut owner = Vec::with_capacity(n_particles);
    for (cell, &c) in counts.iter().enumerate() {
        owner.extend((0..c).map(|r| (cell, r, c)));
    }
    debug_assert_eq!(owner.len(), n_particles);
    let paths = owner
        .par_iter()
        .map(|&(cell, r, c)| {
            let (a, b) = lattice_point(seed, cell, r, c);
            let (i, j) = (cell % g.nx, cell / g.nx);
            let start = [
                g.origin[0] + (T::from_idx(i) + T::lit(a)) * g.h,
                g.origin[1] + (T::from_idx(j) + T::lit(b)) * g.h,
            ];
            field.trajectory(start, n_steps)
        })
        .collect::<Result<Vec<_>>>()?;
    PathEnsemble::uniform(paths)
}

/// Resamples `p` at `n_out` points equally spaced in arclength.
///
/// Interior vertices of `p` are kept (merged in arclength order) so the trace, and
/// therefore every trace-based measure, is unchanged. First and last points are
/// copied exactly. A zero-length path becomes `n_out` copies of its point.
pub fn reparametrize_constant_speed<T: Real>(p: &Path<T>, n_out: usize) -> Result<Path<T>> {
    if n_out < 2 {
        return Err(Error::InvalidParameter(format!("n_out must be at least 2, got {n_out}")));
    }
    let pts = p.points();
    let mut cum = Vec::with_capacity(pts.len());
    let mut acc = T::zero();
    cum.push(acc);
    for s in pts.windows(2) {
        acc = acc + dist(s[0], s[1]);
        cum.push(acc);
    }
    let total = acc;
    if total == T::zero() {
        return Path::new(vec![pts[0]; n_out]);
    }
    let merge_tol = total * T::lit(1e-12);
    let last = pts.len() - 1;
    let mut out = Vec::with_capacity(n_out + pts.len());
    out.push(pts[0]);
    // Two-pointer merge of interior vertices and equal-arclength targets.
    let mut k = 1;
    let mut seg = 0;
    for m in 1..n_out - 1 {
        let s = total * T::from_idx(m) / T::from_idx(n_out - 1);
        while k < last && cum[k] < s - merge_tol {
            out.push(pts[k]);
            k += 1;
        }
        if k < last && (cum[k] - s).abs() <= merge_tol {
            out.push(pts[k]);
            k += 1;
            continue;
        }
        while seg + 1 < last && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let f = if len > T::zero() { (s - cum[seg]) / len } else { T::zero() };
        let (a, b) = (pts[seg], pts[seg + 1]);
        out.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
    }
    out.extend_from_slice(&pts[k..last]);
    out.push(pts[last]);
    Path::new(out)
}
