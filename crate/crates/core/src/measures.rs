//! Traffic intensity and traffic flow of a path ensemble.
//!
//! Every polyline segment is clipped exactly against the cell lines. Each clipped
//! piece deposits its length into its cell (intensity) and its displacement into
//! the cell's faces, half on each of the two opposing faces (flow). Both outputs
//! therefore depend only on the traces of the paths.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    clamp_index, divergence, mass, tv_norm, Grid2D, ScalarField, VectorField,
};
use crate::moser::{dist, Path, PathEnsemble};
use crate::scalar::Real;

const CHUNK: usize = 1024;

/// Calls `f(i, j, dt)` for each piece of the segment `p -> q` inside one cell,
/// where `dt` is the piece's fraction of the segment. Pieces come in order from `p`.
pub(crate) fn clip_segment<T: Real>(
    g: &Grid2D<T>,
    p: [T; 2],
    q: [T; 2],
    ts: &mut Vec<T>,
    mut f: impl FnMut(usize, usize, T),
) {
    let a = [(p[0] - g.origin[0]) / g.h, (p[1] - g.origin[1]) / g.h];
    let b = [(q[0] - g.origin[0]) / g.h, (q[1] - g.origin[1]) / g.h];
    ts.clear();
    ts.push(T::zero());
    for axis in 0..2 {
        let (lo, hi) = if a[axis] < b[axis] { (a[axis], b[axis]) } else { (b[axis], a[axis]) };
        if hi == lo {
            continue;
        }
        let mut k = lo.floor() + T::one();
        let inv = T::one() / (b[axis] - a[axis]);
        while k < hi {
            ts.push((k - a[axis]) * inv);
            k = k + T::one();
        }
    }
    ts.push(T::one());
    ts.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    let half = T::lit(0.5);
    for w in ts.windows(2) {
        let dt = w[1] - w[0];
        if !(dt > T::zero()) {
            continue;
        }
        let tm = half * (w[0] + w[1]);
        let mx = a[0] + (b[0] - a[0]) * tm;
        let my = a[1] + (b[1] - a[1]) * tm;
        f(clamp_index(mx.floor(), g.nx), clamp_index(my.floor(), g.ny), dt);
    }
}

fn check_inside<T: Real>(q: &PathEnsemble<T>, grid: &Grid2D<T>) -> Result<()> {
    match q.paths().iter().position(|p| !p.inside(grid)) {
        None => Ok(()),
        Some(k) => Err(Error::InvalidInput(format!("path {k} leaves the grid"))),
    }
}

/// `∫ φ |ω'| dt`, with `φ` constant on cells.
pub fn weighted_length<T: Real>(p: &Path<T>, phi: &ScalarField<T>) -> Result<T> {
    if !p.inside(&phi.grid) {
        return Err(Error::InvalidInput("path leaves the grid of the weight field".into()));
    }
    let g = phi.grid;
    let mut ts = Vec::new();
    let mut acc = T::zero();
    for s in p.points().windows(2) {
        let len = dist(s[0], s[1]);
        clip_segment(&g, s[0], s[1], &mut ts, |i, j, dt| acc = acc + len * dt * phi.at(i, j));
    }
    Ok(acc)
}

/// Cell density of cumulated path length: `(1/h²) Σ w · (length inside the cell)`.
pub fn intensity<T: Real>(q: &PathEnsemble<T>, grid: &Grid2D<T>) -> Result<ScalarField<T>> {
    check_inside(q, grid)?;
    let g = *grid;
    let n = g.n_cells();
    let partials: Vec<Vec<T>> = q
        .paths()
        .par_chunks(CHUNK)
        .zip(q.weights().par_chunks(CHUNK))
        .map(|(paths, weights)| {
            let mut buf = vec![T::zero(); n];
            let mut ts = Vec::new();
            for (p, &w) in paths.iter().zip(weights) {
                for s in p.points().windows(2) {
                    let len = w * dist(s[0], s[1]);
                    clip_segment(&g, s[0], s[1], &mut ts, |i, j, dt| {
                        buf[g.cell(i, j)] = buf[g.cell(i, j)] + len * dt;
                    });
                }
            }
            buf
        })
        .collect();
    let inv_area = T::one() / g.cell_area();
    let mut values = vec![T::zero(); n];
    for part in &partials {
        for (v, &x) in values.iter_mut().zip(part) {
            *v = *v + x;
        }
    }
    for v in &mut values {
        *v = *v * inv_area;
    }
    Ok(ScalarField { grid: g, values })
}

/// Orientation in which a path is traversed when depositing, so that a path and
/// its reversal produce exactly opposite contributions.
fn canonical_sign<T: Real>(p: &Path<T>) -> T {
    let pts = p.points();
    let n = pts.len();
    for k in 0..n / 2 {
        let (a, b) = (pts[k], pts[n - 1 - k]);
        match a[0].partial_cmp(&b[0]).unwrap_or(Ordering::Equal) {
            Ordering::Less => return T::one(),
            Ordering::Greater => return -T::one(),
            Ordering::Equal => {}
        }
        match a[1].partial_cmp(&b[1]).unwrap_or(Ordering::Equal) {
            Ordering::Less => return T::one(),
            Ordering::Greater => return -T::one(),
            Ordering::Equal => {}
        }
    }
    T::one()
}

/// Face-keyed contributions of one path, summed per face in a fixed order.
fn path_face_sums<T: Real>(
    g: &Grid2D<T>,
    p: &Path<T>,
    ts: &mut Vec<T>,
    scratch: &mut Vec<(usize, T)>,
) -> T {
    let sign = canonical_sign(p);
    let pts = p.points();
    let n_u = g.n_u();
    let half = T::lit(0.5);
    scratch.clear();
    let mut push_seg = |a: [T; 2], b: [T; 2], ts: &mut Vec<T>| {
        let d = [b[0] - a[0], b[1] - a[1]];
        clip_segment(g, a, b, ts, |i, j, dt| {
            let (dx, dy) = (half * d[0] * dt, half * d[1] * dt);
            if dx != T::zero() {
                scratch.push((g.u_face(i, j), dx));
                scratch.push((g.u_face(i + 1, j), dx));
            }
            if dy != T::zero() {
                scratch.push((n_u + g.w_face(i, j), dy));
                scratch.push((n_u + g.w_face(i, j + 1), dy));
            }
        });
    };
    if sign > T::zero() {
        for s in pts.windows(2) {
            push_seg(s[0], s[1], ts);
        }
    } else {
        for s in pts.windows(2).rev() {
            push_seg(s[1], s[0], ts);
        }
    }
    scratch.sort_by_key(|&(k, _)| k);
    let mut write = 0;
    for read in 0..scratch.len() {
        if write > 0 && scratch[write - 1].0 == scratch[read].0 {
            scratch[write - 1].1 = scratch[write - 1].1 + scratch[read].1;
        } else {
            scratch[write] = scratch[read];
            write += 1;
        }
    }
    scratch.truncate(write);
    sign
}

/// Staggered flux density of the ensemble: each clipped piece's displacement,
/// weighted and divided by `h²`, split equally between the two opposing faces of its cell.
pub fn flow<T: Real>(q: &PathEnsemble<T>, grid: &Grid2D<T>) -> Result<VectorField<T>> {
    check_inside(q, grid)?;
    let g = *grid;
    let (n_u, n_w) = (g.n_u(), g.n_w());
    let inv_area = T::one() / g.cell_area();
    let partials: Vec<Vec<T>> = q
        .paths()
        .par_chunks(CHUNK)
        .zip(q.weights().par_chunks(CHUNK))
        .map(|(paths, weights)| {
            let mut buf = vec![T::zero(); n_u + n_w];
            let mut ts = Vec::new();
            let mut scratch = Vec::new();
            for (p, &w) in paths.iter().zip(weights) {
                let sign = path_face_sums(&g, p, &mut ts, &mut scratch);
                let scale = w * inv_area;
                for &(k, v) in &scratch {
                    buf[k] = buf[k] + scale * (sign * v);
                }
            }
            buf
        })
        .collect();
    let mut all = vec![T::zero(); n_u + n_w];
    for part in &partials {
        for (v, &x) in all.iter_mut().zip(part) {
            *v = *v + x;
        }
    }
    let w = all.split_off(n_u);
    VectorField::from_faces(g, all, w)
}

/// Histogram density of path start points (`at_end = false`) or end points.
pub fn endpoint_histogram<T: Real>(
    q: &PathEnsemble<T>,
    grid: &Grid2D<T>,
    at_end: bool,
) -> Result<ScalarField<T>> {
    check_inside(q, grid)?;
    let mut out = ScalarField::zeros(*grid);
    let inv_area = T::one() / grid.cell_area();
    for (p, w) in q.iter() {
        let x = if at_end { p.end() } else { p.start() };
        let (i, j) = grid.locate(x);
        let k = grid.cell(i, j);
        out.values[k] = out.values[k] + w * inv_area;
    }
    Ok(out)
}

/// Numbers certifying how much of `v` the ensemble reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub norm_v: f64,
    #[serde(rename = "norm_vQ")]
    pub norm_vq: f64,
    pub norm_residual: f64,
    pub intensity_mass: f64,
    pub defect: f64,
    pub marginal_gap_mu: f64,
    pub marginal_gap_nu: f64,
}

/// Fills a [`DecompositionReport`] from `flow(Q)`, `intensity(Q)` and the endpoint histograms.
pub fn decomposition_report<T: Real>(
    v: &VectorField<T>,
    q: &PathEnsemble<T>,
    mu: &ScalarField<T>,
    nu: &ScalarField<T>,
) -> Result<DecompositionReport> {
    v.grid.ensure_same(&mu.grid)?;
    v.grid.ensure_same(&nu.grid)?;
    let div = divergence(v);
    let mut worst = T::zero();
    let mut scale = T::one();
    for k in 0..div.values.len() {
        let rhs = mu.values[k] - nu.values[k];
        worst = worst.max((div.values[k] - rhs).abs());
        scale = scale.max(rhs.abs());
    }
    if worst > T::lit(1e-8) * scale {
        return Err(Error::InvalidInput(format!(
            "divergence of v differs from mu - nu by {worst:e}"
        )));
    }
    let g = v.grid;
    let vq = flow(q, &g)?;
    let iq = intensity(q, &g)?;
    let norm_v = tv_norm(v).as_f64();
    let norm_residual = tv_norm(&(v - &vq)).as_f64();
    let intensity_mass = mass(&iq).as_f64();
    Ok(DecompositionReport {
        norm_v,
        norm_vq: tv_norm(&vq).as_f64(),
        norm_residual,
        intensity_mass,
        defect: norm_residual + intensity_mass - norm_v,
        marginal_gap_mu: endpoint_histogram(q, &g, false)?.l1_distance(mu)?.as_f64(),
        marginal_gap_nu: endpoint_histogram(q, &g, true)?.l1_distance(nu)?.as_f64(),
    })
}
