//! Minimal-flow and optimal-transport solvers on atomic and gridded data.
//!
//! The two exact solvers scale masses to integers (units of 1e-9) and run the same
//! min-cost-flow routine, so the grid Beckmann problem and the transportation LP
//! with the matching ground cost agree to rounding.

mod euclidean;
mod harness;
mod mcf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid2D, ScalarField, VectorField};
use crate::measures::flow;
use crate::moser::{Path, PathEnsemble};
use crate::scalar::Real;

pub use euclidean::{solve_beckmann_euclidean, EuclideanSolution};
pub use harness::{monotone_harness, CostFunctional, HarnessReport};

use mcf::{scale_masses, MinCostFlow, INF_CAP};

/// Integer units per unit of mass inside the exact solvers.
pub const MASS_SCALE: i64 = 1_000_000_000_000;

/// Largest support the transportation solver accepts on each side.
pub const MAX_ATOMS: usize = 512;

/// A point mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom<T> {
    pub pos: [T; 2],
    pub mass: T,
}

impl<T: Real> Atom<T> {
    pub fn new(pos: [T; 2], mass: T) -> Self {
        Self { pos, mass }
    }
}

/// Ground cost of the transportation problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroundCost<T> {
    Euclidean,
    L1,
    /// Shortest-path length on the 4-neighbour graph of `grid` between the cells holding the points.
    Graph(Grid2D<T>),
}

impl<T: Real> GroundCost<T> {
    pub fn eval(&self, x: [T; 2], y: [T; 2]) -> T {
        match self {
            GroundCost::Euclidean => (x[0] - y[0]).hypot(x[1] - y[1]),
            GroundCost::L1 => (x[0] - y[0]).abs() + (x[1] - y[1]).abs(),
            GroundCost::Graph(g) => {
                let (a, b) = (g.locate(x), g.locate(y));
                T::from_idx(a.0.abs_diff(b.0) + a.1.abs_diff(b.1)) * g.h
            }
        }
    }
}

/// Sparse coupling between two atomic measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<T> {
    pub sources: Vec<Atom<T>>,
    pub targets: Vec<Atom<T>>,
    /// `(source index, target index, mass)`, masses positive.
    pub couplings: Vec<(usize, usize, T)>,
}

impl<T: Real> TransportPlan<T> {
    /// `∫ c dγ`.
    pub fn cost(&self, c: GroundCost<T>) -> T {
        self.couplings
            .iter()
            .map(|&(i, j, m)| m * c.eval(self.sources[i].pos, self.targets[j].pos))
            .sum()
    }

    /// Largest deviation of a row or column sum from its atom mass.
    pub fn marginal_error(&self) -> T {
        let mut rows: Vec<T> = self.sources.iter().map(|a| -a.mass).collect();
        let mut cols: Vec<T> = self.targets.iter().map(|a| -a.mass).collect();
        for &(i, j, m) in &self.couplings {
            rows[i] = rows[i] + m;
            cols[j] = cols[j] + m;
        }
        rows.iter().chain(&cols).fold(T::zero(), |e, x| e.max(x.abs()))
    }

    /// The couplings as constant-speed segments weighted by their mass.
    pub fn segments(&self) -> Result<PathEnsemble<T>> {
        let (paths, weights) = self
            .couplings
            .iter()
            .map(|&(i, j, m)| (Path::segment(self.sources[i].pos, self.targets[j].pos), m))
            .unzip();
        PathEnsemble::new(paths, weights)
    }
}

/// Solver outcome as written to JSON reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
}

impl SolverReport {
    fn exact(value: f64, iterations: usize) -> Self {
        Self { value, dual_value: value, gap: 0.0, iterations }
    }
}

fn check_atoms<T: Real>(atoms: &[Atom<T>], name: &str, grid: Option<&Grid2D<T>>) -> Result<()> {
    if atoms.is_empty() {
        return Err(Error::InvalidInput(format!("{name} atom list is empty")));
    }
    if atoms.len() > MAX_ATOMS {
        return Err(Error::InvalidInput(format!(
            "{name} has {} atoms, at most {MAX_ATOMS} are supported",
            atoms.len()
        )));
    }
    for a in atoms {
        if !(a.mass >= T::zero()) || !a.pos[0].is_finite() || !a.pos[1].is_finite() {
            return Err(Error::InvalidInput(format!("{name} atom {:?} is invalid", a.pos)));
        }
        if let Some(g) = grid {
            if !g.contains(a.pos, T::zero()) {
                return Err(Error::InvalidInput(format!("{name} atom {:?} lies outside the grid", a.pos)));
            }
        }
    }
    let total: T = atoms.iter().map(|a| a.mass).sum();
    if (total - T::one()).abs() > T::sum_slack(1e-9, atoms.len()) {
        return Err(Error::InvalidInput(format!("{name} masses sum to {total}, expected 1")));
    }
    Ok(())
}

fn scaled<T: Real>(masses: impl Iterator<Item = T>) -> Vec<i64> {
    scale_masses(&masses.map(|m| m.as_f64()).collect::<Vec<_>>(), MASS_SCALE)
}

fn unscale<T: Real>(m: i64) -> T {
    T::lit(m as f64 / MASS_SCALE as f64)
}

/// Exact optimal transport between two atomic measures.
pub fn solve_kantorovich<T: Real>(
    sources: &[Atom<T>],
    targets: &[Atom<T>],
    cost: GroundCost<T>,
) -> Result<(TransportPlan<T>, SolverReport)> {
    let grid = match &cost {
        GroundCost::Graph(g) => Some(g),
        _ => None,
    };
    check_atoms(sources, "sources", grid)?;
    check_atoms(targets, "targets", grid)?;
    let (ns, nt) = (sources.len(), targets.len());
    let sup = scaled(sources.iter().map(|a| a.mass));
    let dem = scaled(targets.iter().map(|a| a.mass));
    let (s, t) = (ns + nt, ns + nt + 1);
    let mut g = MinCostFlow::new(ns + nt + 2);
    for (i, &m) in sup.iter().enumerate() {
        g.add_arc(s, i, m, 0.0);
    }
    for (j, &m) in dem.iter().enumerate() {
        g.add_arc(ns + j, t, m, 0.0);
    }
    let mut arcs = Vec::with_capacity(ns * nt);
    for (i, a) in sources.iter().enumerate() {
        for (j, b) in targets.iter().enumerate() {
            let c = cost.eval(a.pos, b.pos).as_f64();
            arcs.push((i, j, g.add_arc(i, ns + j, INF_CAP, c)));
        }
    }
    let rounds = g
        .run(s, t, MASS_SCALE)
        .ok_or_else(|| Error::SolverFailure("transportation network is disconnected".into()))?;
    let mut value = 0.0;
    let mut couplings = Vec::new();
    for (i, j, id) in arcs {
        let f = g.flow(id);
        if f > 0 {
            let m: T = unscale(f);
            value += (m * cost.eval(sources[i].pos, targets[j].pos)).as_f64();
            couplings.push((i, j, m));
        }
    }
    let plan = TransportPlan { sources: sources.to_vec(), targets: targets.to_vec(), couplings };
    Ok((plan, SolverReport::exact(value, rounds)))
}

fn check_pair<T: Real>(mu: &ScalarField<T>, nu: &ScalarField<T>) -> Result<()> {
    mu.grid.ensure_same(&nu.grid)?;
    mu.check_probability("mu", T::lit(1e-9))?;
    nu.check_probability("nu", T::lit(1e-9))
}

/// Exact minimizer of `Σ_faces h² |flux|` under the discrete divergence constraint,
/// i.e. the Beckmann problem for the ℓ1 ground metric of the grid graph.
///
/// The returned value is `Σ h² (|u| + |w|)`, which equals the min-cost-flow cost.
pub fn solve_beckmann_graph<T: Real>(
    mu: &ScalarField<T>,
    nu: &ScalarField<T>,
) -> Result<(VectorField<T>, SolverReport)> {
    check_pair(mu, nu)?;
    let g = mu.grid;
    let area = g.cell_area();
    let sup = scaled(mu.values.iter().map(|&x| x * area));
    let dem = scaled(nu.values.iter().map(|&x| x * area));
    let n = g.n_cells();
    let (s, t) = (n, n + 1);
    let mut net = MinCostFlow::new(n + 2);
    for k in 0..n {
        let d = sup[k] - dem[k];
        if d > 0 {
            net.add_arc(s, k, d, 0.0);
        } else if d < 0 {
            net.add_arc(k, t, -d, 0.0);
        }
    }
    let mut x_arcs = Vec::new();
    let mut y_arcs = Vec::new();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.cell(i, j);
            if i + 1 < g.nx {
                let r = g.cell(i + 1, j);
                x_arcs.push((i + 1, j, net.add_arc(k, r, INF_CAP, 1.0), net.add_arc(r, k, INF_CAP, 1.0)));
            }
            if j + 1 < g.ny {
                let up = g.cell(i, j + 1);
                y_arcs.push((i, j + 1, net.add_arc(k, up, INF_CAP, 1.0), net.add_arc(up, k, INF_CAP, 1.0)));
            }
        }
    }
    let excess: i64 = (0..n).map(|k| (sup[k] - dem[k]).max(0)).sum();
    let rounds = net
        .run(s, t, excess)
        .ok_or_else(|| Error::SolverFailure("grid graph is disconnected".into()))?;
    let mut v = VectorField::zeros(g);
    let mut units: i64 = 0;
    let to_flux = |f: i64| -> T { unscale::<T>(f) / g.h };
    for (i, j, fwd, bwd) in x_arcs {
        let f = net.flow(fwd) - net.flow(bwd);
        units += f.abs();
        v.u[g.u_face(i, j)] = to_flux(f);
    }
    for (i, j, fwd, bwd) in y_arcs {
        let f = net.flow(fwd) - net.flow(bwd);
        units += f.abs();
        v.w[g.w_face(i, j)] = to_flux(f);
    }
    let value = units as f64 / MASS_SCALE as f64 * g.h.as_f64();
    Ok((v, SolverReport::exact(value, rounds)))
}

/// Graph total variation `Σ h² (|u| + |w|)` over all faces.
pub fn graph_tv<T: Real>(v: &VectorField<T>) -> T {
    let s: T = v.u.iter().chain(&v.w).map(|x| x.abs()).sum();
    s * v.grid.cell_area()
}

/// Segment flow `v_[γ]`: each coupling deposited as a straight path of its mass.
pub fn flow_from_plan<T: Real>(gamma: &TransportPlan<T>, grid: &Grid2D<T>) -> Result<VectorField<T>> {
    flow(&gamma.segments()?, grid)
}

/// Atoms of a density: one per cell with positive mass, placed at the cell center.
pub fn atoms_of<T: Real>(f: &ScalarField<T>) -> Vec<Atom<T>> {
    let g = f.grid;
    let mut out = Vec::new();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let m = f.at(i, j) * g.cell_area();
            if m > T::zero() {
                out.push(Atom::new(g.center(i, j), m));
            }
        }
    }
    out
}

/// Density of atoms binned into the cells of `grid`.
pub fn density_of<T: Real>(atoms: &[Atom<T>], grid: Grid2D<T>) -> Result<ScalarField<T>> {
    let mut f = ScalarField::zeros(grid);
    let inv = T::one() / grid.cell_area();
    for a in atoms {
        if !grid.contains(a.pos, T::zero()) {
            return Err(Error::InvalidInput(format!("atom {:?} lies outside the grid", a.pos)));
        }
        let (i, j) = grid.locate(a.pos);
        let k = grid.cell(i, j);
        f.values[k] = f.values[k] + a.mass * inv;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{divergence, tv_norm};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn unit(n: usize) -> Grid2D<f64> {
        Grid2D::unit_square(n).unwrap()
    }

    fn random_atoms(rng: &mut impl Rng, g: &Grid2D<f64>, k: usize) -> Vec<Atom<f64>> {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter()
            .map(|m| Atom::new(g.center(rng.gen_range(0..g.nx), rng.gen_range(0..g.ny)), m / s))
            .collect()
    }

    /// Value of the sorted (monotone) matching of two 1D measures.
    fn sorted_matching(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort_by(|x, y| x.0.total_cmp(&y.0));
        b.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (mut i, mut j, mut total) = (0, 0, 0.0);
        let (mut ra, mut rb) = (a[0].1, b[0].1);
        while i < a.len() && j < b.len() {
            let m = ra.min(rb);
            total += m * (a[i].0 - b[j].0).abs();
            ra -= m;
            rb -= m;
            if ra <= 1e-15 {
                i += 1;
                if i < a.len() {
                    ra = a[i].1;
                }
            }
            if rb <= 1e-15 {
                j += 1;
                if j < b.len() {
                    rb = b[j].1;
                }
            }
        }
        total
    }

    #[test]
    fn identical_measures_cost_nothing() {
        let atoms = vec![Atom::new([0.1, 0.2], 0.25), Atom::new([0.7, 0.4], 0.75)];
        let (plan, rep) = solve_kantorovich(&atoms, &atoms, GroundCost::Euclidean).unwrap();
        assert_eq!(rep.value, 0.0);
        assert_eq!(plan.couplings.len(), 2);
        assert!(plan.couplings.iter().all(|&(i, j, _)| i == j));
    }

    #[test]
    fn single_pair() {
        let (plan, rep) = solve_kantorovich(
            &[Atom::new([0.1, 0.1], 1.0)],
            &[Atom::new([0.4, 0.5], 1.0)],
            GroundCost::Euclidean,
        )
        .unwrap();
        assert_relative_eq!(rep.value, 0.5, epsilon = 1e-12);
        assert_eq!(plan.couplings, vec![(0, 0, 1.0)]);
    }

    #[test]
    fn one_dimensional_example() {
        let src = [Atom::new([0.1, 0.5], 0.5), Atom::new([0.5, 0.5], 0.5)];
        let dst = [Atom::new([0.3, 0.5], 0.5), Atom::new([0.9, 0.5], 0.5)];
        let (plan, rep) = solve_kantorovich(&src, &dst, GroundCost::Euclidean).unwrap();
        assert_relative_eq!(rep.value, 0.3, epsilon = 1e-12);
        assert!(plan.marginal_error() <= 1e-12);
        let v = flow_from_plan(&plan, &unit(10)).unwrap();
        assert_relative_eq!(tv_norm(&v), 0.3, epsilon = 1e-9);
    }

    #[test]
    fn kantorovich_input_errors() {
        let ok = [Atom::new([0.5, 0.5], 1.0)];
        assert!(matches!(solve_kantorovich::<f64>(&[], &ok, GroundCost::L1), Err(Error::InvalidInput(_))));
        let heavy = [Atom::new([0.5, 0.5], 1.5)];
        assert!(matches!(solve_kantorovich(&heavy, &ok, GroundCost::L1), Err(Error::InvalidInput(_))));
        let outside = [Atom::new([1.5, 0.5], 1.0)];
        assert!(solve_kantorovich(&outside, &ok, GroundCost::Graph(unit(4))).is_err());
    }

    #[test]
    fn graph_trivial_cases() {
        let g = unit(8);
        let f = ScalarField::constant(g, 1.0);
        let (v, rep) = solve_beckmann_graph(&f, &f).unwrap();
        assert_eq!(v.max_abs(), 0.0);
        assert_eq!(rep.value, 0.0);
        let mu = density_of(&[Atom::new(g.center(1, 3), 1.0)], g).unwrap();
        let nu = density_of(&[Atom::new(g.center(6, 3), 1.0)], g).unwrap();
        let (v, rep) = solve_beckmann_graph(&mu, &nu).unwrap();
        assert_relative_eq!(rep.value, 5.0 * g.h, epsilon = 1e-12);
        assert_relative_eq!(graph_tv(&v), rep.value, epsilon = 1e-12);
        assert!(v.w.iter().all(|&x| x == 0.0));
        for i in 0..=8 {
            let expect = if (2..=6).contains(&i) { 1.0 / g.h } else { 0.0 };
            assert_relative_eq!(v.u_at(i, 3), expect, epsilon = 1e-9);
        }
        let bad = f.map(|x| 2.0 * x);
        assert!(matches!(solve_beckmann_graph(&bad, &f), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn graph_flow_satisfies_divergence() {
        let g = unit(8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mu = density_of(&random_atoms(&mut rng, &g, 4), g).unwrap();
        let nu = density_of(&random_atoms(&mut rng, &g, 4), g).unwrap();
        let (v, _) = solve_beckmann_graph(&mu, &nu).unwrap();
        let d = divergence(&v);
        for k in 0..g.n_cells() {
            assert!((d.values[k] - (mu.values[k] - nu.values[k])).abs() <= 1e-6);
        }
        assert!(v.is_boundary_parallel());
    }

    #[test]
    fn segment_flow_antisymmetry() {
        let a = Atom::new([0.2, 0.3], 0.5);
        let b = Atom::new([0.7, 0.3], 0.5);
        let plan = TransportPlan { sources: vec![a, b], targets: vec![b, a], couplings: vec![(0, 0, 0.5), (1, 1, 0.5)] };
        let v = flow_from_plan(&plan, &unit(16)).unwrap();
        assert_eq!(v.max_abs(), 0.0);
        let one = TransportPlan { sources: vec![Atom::new([0.2, 0.3], 1.0)], targets: vec![Atom::new([0.7, 0.3], 1.0)], couplings: vec![(0, 0, 1.0)] };
        assert_relative_eq!(tv_norm(&flow_from_plan(&one, &unit(16)).unwrap()), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn report_json_names() {
        let s = serde_json::to_string(&SolverReport::exact(1.0, 3)).unwrap();
        assert_eq!(s, r#"{"value":1.0,"dual_value":1.0,"gap":0.0,"iterations":3}"#);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn graph_beckmann_equals_l1_kantorovich(seed in 0u64..100_000) {
            let g = unit(8);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (src, dst) = (random_atoms(&mut rng, &g, 4), random_atoms(&mut rng, &g, 4));
            let (mu, nu) = (density_of(&src, g).unwrap(), density_of(&dst, g).unwrap());
            let (_, pb) = solve_beckmann_graph(&mu, &nu).unwrap();
            // Same cell masses on both sides so the integer rounding agrees.
            let (src, dst) = (atoms_of(&mu), atoms_of(&nu));
            let (plan, pk) = solve_kantorovich(&src, &dst, GroundCost::L1).unwrap();
            prop_assert!((pb.value - pk.value).abs() <= 1e-9, "{} vs {}", pb.value, pk.value);
            prop_assert!(plan.marginal_error() <= 1e-9);
            let (_, pg) = solve_kantorovich(&src, &dst, GroundCost::Graph(g)).unwrap();
            prop_assert!((pg.value - pk.value).abs() <= 1e-12);
        }

        #[test]
        fn one_dimensional_instances_match_sorted_matching(seed in 0u64..100_000, k in 1usize..12) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut gen = |k: usize| {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|m| (rng.gen_range(0.0..1.0), m / s)).collect::<Vec<_>>()
            };
            let (a, b) = (gen(k), gen(k + 1));
            let atoms = |v: &[(f64, f64)]| v.iter().map(|&(x, m)| Atom::new([x, 0.5], m)).collect::<Vec<_>>();
            let (plan, rep) = solve_kantorovich(&atoms(&a), &atoms(&b), GroundCost::Euclidean).unwrap();
            prop_assert!((rep.value - sorted_matching(&a, &b)).abs() <= 1e-9);
            prop_assert!(plan.marginal_error() <= 1e-9);
        }
    }
}
