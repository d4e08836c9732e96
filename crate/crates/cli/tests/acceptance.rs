//! Acceptance suite at the reference scale: 64x64 grid, eps = 2h, 10^5 particles,
//! 64 RK4 steps, seed 42. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use minflow_core::beckmann::{atoms_of, density_of};
use minflow_core::moser::reparametrize_constant_speed;
use minflow_core::scenarios::{
    in_right_half, make_1d_profile, make_atom_pair, make_separated_scenario,
    make_separated_scenario_with_strength,
};
use minflow_core::{
    decompose, divergence, flow, intensity, magnitude_field, mass, monotone_harness, regularize_triple,
    solve_beckmann_euclidean, solve_beckmann_graph, solve_kantorovich, tv_norm, vector_l1_distance, Atom,
    CostFunctional, Decomposition, Grid64, GroundCost, Path, PathEnsemble, PipelineParams, ScalarField64,
    VectorField64,
};
use minflow_core::regularize::{gaussian_convolve_vector, poisson_neumann};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 64;
/// Relative slack for inequalities that hold with equality for straight paths.
const ROUNDING: f64 = 1e-12;

type Check = std::result::Result<String, String>;

fn grid() -> Grid64 {
    Grid64::unit_square(N).unwrap()
}

fn params() -> PipelineParams {
    PipelineParams { eps: Some(2.0 / N as f64), particles: 100_000, steps: 64, seed: 42 }
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// The profile run is timed inside a one-thread pool and shared by several criteria.
fn profile_run() -> &'static std::result::Result<(Decomposition<f64>, Duration), String> {
    static RUN: OnceLock<std::result::Result<(Decomposition<f64>, Duration), String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let (v, mu, nu) = make_1d_profile(grid());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(fail)?;
        let start = Instant::now();
        let d = pool.install(|| decompose(&v, &mu, &nu, &params())).map_err(fail)?;
        Ok((d, start.elapsed()))
    })
}

struct Separated {
    run: Decomposition<f64>,
    loop_tv: f64,
}

fn separated_run() -> &'static std::result::Result<Separated, String> {
    static RUN: OnceLock<std::result::Result<Separated, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let g = grid();
        let (v, mu, nu) = make_separated_scenario(g).map_err(fail)?;
        let (free, _, _) = make_separated_scenario_with_strength(g, 0.0).map_err(fail)?;
        let loop_tv = tv_norm(&(&v - &free));
        let run = decompose(&v, &mu, &nu, &params()).map_err(fail)?;
        Ok(Separated { run, loop_tv })
    })
}

fn c1_moser_identity() -> Check {
    let (d, elapsed) = profile_run().as_ref().map_err(Clone::clone)?;
    let g = d.v_eps.grid;
    let tv = tv_norm(&d.v_eps);
    let ei = intensity(&d.paths, &g).map_err(fail)?.l1_distance(&magnitude_field(&d.v_eps)).map_err(fail)? / tv;
    let ef = vector_l1_distance(&flow(&d.paths, &g).map_err(fail)?, &d.v_eps).map_err(fail)? / tv;
    ensure(
        ei <= 0.05 && ef <= 0.05 && elapsed.as_secs_f64() <= 60.0,
        format!("|i_Q - |v||/tv = {ei:.4}, |v_Q - v|/tv = {ef:.4}, single-thread run {:.1}s", elapsed.as_secs_f64()),
    )
}

fn c2_marginals() -> Check {
    let (d, _) = profile_run().as_ref().map_err(Clone::clone)?;
    let r = d.report;
    ensure(
        r.marginal_gap_mu <= 0.05 && r.marginal_gap_nu <= 0.05,
        format!("L1 gap mu {:.4}, nu {:.4}", r.marginal_gap_mu, r.marginal_gap_nu),
    )
}

fn c3_defect() -> Check {
    let (v, mu, nu) = make_separated_scenario_with_strength(grid(), 0.0).map_err(fail)?;
    let r = decompose(&v, &mu, &nu, &params()).map_err(fail)?.report;
    ensure(
        r.defect.abs() <= 0.02 * r.norm_v && r.norm_vq <= r.intensity_mass * (1.0 + ROUNDING) && r.intensity_mass <= 1.02 * r.norm_v,
        format!(
            "defect/|v| = {:.2e}, |v_Q| = {:.6}, i_Q(Ω) = {:.6}, |v| = {:.6}",
            r.defect / r.norm_v,
            r.norm_vq,
            r.intensity_mass,
            r.norm_v
        ),
    )
}

fn c4_cycle_removal() -> Check {
    let s = separated_run().as_ref().map_err(Clone::clone)?;
    let d = &s.run;
    let g = d.v_eps.grid;
    let i = intensity(&d.paths, &g).map_err(fail)?;
    let reference = grid();
    let mut right = 0.0;
    for j in 0..g.ny {
        for k in 0..g.nx {
            if in_right_half(&reference, g.center(k, j)) {
                right += i.at(k, j) * g.cell_area();
            }
        }
    }
    let ratio_in = right / s.loop_tv;
    let ratio_flow = d.report.norm_vq / d.report.norm_v;
    ensure(
        ratio_in <= 0.05 && ratio_flow <= 0.55,
        format!(
            "loop share of tv {:.3}, i_Q(Ω-)/loop tv = {ratio_in:.2e}, |v_Q|/|v| = {ratio_flow:.4}",
            s.loop_tv / tv_norm(&d.v_eps)
        ),
    )
}

fn random_masses(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|m| m / s).collect()
}

fn c5_graph_pb_pk() -> Check {
    let start = Instant::now();
    let g = Grid64::unit_square(16).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let side = |rng: &mut ChaCha8Rng| {
            let k = rng.gen_range(1..=64);
            let m = random_masses(rng, k);
            m.into_iter().map(|m| Atom::new([rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)], m)).collect::<Vec<_>>()
        };
        let (src, dst) = (side(&mut rng), side(&mut rng));
        let (mu, nu) = (density_of(&src, g).map_err(fail)?, density_of(&dst, g).map_err(fail)?);
        let (_, pb) = solve_beckmann_graph(&mu, &nu).map_err(fail)?;
        let (_, pk) = solve_kantorovich(&atoms_of(&mu), &atoms_of(&nu), GroundCost::L1).map_err(fail)?;
        worst = worst.max((pb.value - pk.value).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-9 && secs <= 10.0, format!("max |PB - PK| = {worst:.2e} over 20 instances in {secs:.2}s"))
}

fn c6_euclidean() -> Check {
    let g = grid();
    let (a, b) = (g.center(9, 13), g.center(50, 44));
    let d = (a[0] - b[0]).hypot(a[1] - b[1]);
    let mu = density_of(&[Atom::new(a, 1.0)], g).map_err(fail)?;
    let nu = density_of(&[Atom::new(b, 1.0)], g).map_err(fail)?;
    let two = solve_beckmann_euclidean(&mu, &nu, 200_000).map_err(fail)?.report;
    let pi = std::f64::consts::PI;
    let mu = ScalarField64::from_fn(g, |x, _| 1.0 + 0.5 * (pi * x).cos());
    let nu = ScalarField64::from_fn(g, |x, _| 1.0 - 0.5 * (pi * x).cos());
    // ∫ |F_mu - F_nu| = ∫ |sin(πx)| / π dx.
    let w1 = 2.0 / (pi * pi);
    let prod = solve_beckmann_euclidean(&mu, &nu, 200_000).map_err(fail)?.report;
    let e2 = (two.value - d).abs() / d;
    let e1 = (prod.value - w1).abs() / w1;
    ensure(
        e2 <= 0.02 && e1 <= 0.02 && two.gap <= 0.01 && prod.gap <= 0.01 && two.dual_value <= two.value,
        format!(
            "two atoms: rel err {e2:.2e}, gap {:.2e}; 1D product: rel err {e1:.2e}, gap {:.2e}",
            two.gap, prod.gap
        ),
    )
}

/// `∫ |F_a - F_b|` for measures on a line.
fn w1_line(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut events: Vec<(f64, f64)> = a.iter().copied().chain(b.iter().map(|&(x, m)| (x, -m))).collect();
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut cdf = 0.0;
    let mut total = 0.0;
    for w in events.windows(2) {
        cdf += w[0].1;
        total += cdf.abs() * (w[1].0 - w[0].0);
    }
    total
}

fn c7_kantorovich_1d() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let side = |rng: &mut ChaCha8Rng| {
            let k = rng.gen_range(1..=24);
            random_masses(rng, k).into_iter().map(|m| (rng.gen_range(0.0..1.0), m)).collect::<Vec<_>>()
        };
        let (a, b) = (side(&mut rng), side(&mut rng));
        let atoms = |v: &[(f64, f64)]| v.iter().map(|&(x, m)| Atom::new([x, 0.5], m)).collect::<Vec<_>>();
        let (_, r) = solve_kantorovich(&atoms(&a), &atoms(&b), GroundCost::Euclidean).map_err(fail)?;
        worst = worst.max((r.value - w1_line(&a, &b)).abs());
    }
    ensure(worst <= 1e-9, format!("max deviation from the sorted matching {worst:.2e} over 50 instances"))
}

fn random_ensemble(rng: &mut ChaCha8Rng, n: usize) -> PathEnsemble<f64> {
    let paths = (0..n)
        .map(|_| {
            let k = rng.gen_range(2..8);
            Path::new((0..k).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect()).unwrap()
        })
        .collect::<Vec<_>>();
    let w = random_masses(rng, n);
    PathEnsemble::new(paths, w).unwrap()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn c8_invariance() -> Check {
    let g = Grid64::unit_square(24).unwrap();
    let (mut rep, mut rev, mut tot, mut div, mut lin) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        let q = random_ensemble(&mut rng, 12);
        let (iq, vq) = (intensity(&q, &g).map_err(fail)?, flow(&q, &g).map_err(fail)?);

        let r = q.map_paths(|p| reparametrize_constant_speed(p, 29).unwrap());
        let (ir, vr) = (intensity(&r, &g).map_err(fail)?, flow(&r, &g).map_err(fail)?);
        rep = rep.max(max_rel(&iq.values, &ir.values)).max(max_rel(&vq.u, &vr.u)).max(max_rel(&vq.w, &vr.w));

        rev = rev.max((&vq + &flow(&q.reversed(), &g).map_err(fail)?).max_abs());

        let lengths: f64 = q.iter().map(|(p, w)| w * p.length()).sum();
        tot = tot.max((mass(&iq) - lengths).abs());

        let v = VectorField64::from_fn(g, |x, y| [(3.0 * x).sin() + y, (2.0 * y).cos() * x]);
        div = div.max((mass(&divergence(&v)) - v.boundary_flux().total(g.h)).abs());

        let p = random_ensemble(&mut rng, 7);
        let alpha = rng.gen_range(0.0..1.0);
        let m = PathEnsemble::mixture(&q, alpha, &p).map_err(fail)?;
        let (ip, vp) = (intensity(&p, &g).map_err(fail)?, flow(&p, &g).map_err(fail)?);
        let (im, vm) = (intensity(&m, &g).map_err(fail)?, flow(&m, &g).map_err(fail)?);
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect::<Vec<_>>();
        lin = lin
            .max(max_rel(&im.values, &mix(&iq.values, &ip.values)))
            .max(max_rel(&vm.u, &mix(&vq.u, &vp.u)))
            .max(max_rel(&vm.w, &mix(&vq.w, &vp.w)));
    }
    ensure(
        rep <= 1e-9 && rev == 0.0 && tot <= 1e-12 && div <= 1e-12 && lin <= 1e-12,
        format!("reparam {rep:.1e}, reversal {rev:.1e}, total mass {tot:.1e}, divergence {div:.1e}, linearity {lin:.1e}"),
    )
}

fn c9_regularization() -> Check {
    let g = grid();
    let (v, mu, nu) = make_atom_pair(g, (N / 4, N / 3), (3 * N / 4, 2 * N / 3)).map_err(fail)?;
    let mut rows = Vec::new();
    let mut worst_div = 0.0f64;
    let mut worst_mass = 0.0f64;
    let mut min_floor = f64::INFINITY;
    for k in [4.0, 2.0, 1.0] {
        let eps = k * g.h;
        let (ve, me, ne, rep) = regularize_triple(&v, &mu, &nu, eps).map_err(fail)?;
        let d = divergence(&ve);
        for c in 0..d.values.len() {
            worst_div = worst_div.max((d.values[c] - (me.values[c] - ne.values[c])).abs());
        }
        worst_mass = worst_mass.max((mass(&me) - 1.0).abs()).max((mass(&ne) - 1.0).abs());
        min_floor = min_floor.min(rep.floor);
        let v_hat = gaussian_convolve_vector(&v, eps).map_err(fail)?;
        let outer = v_hat.grid;
        let lifted = ScalarField64::constant(outer, (rep.a_eps - rep.b_eps) / outer.area());
        let corr = poisson_neumann(&lifted, &v_hat.boundary_flux()).map_err(fail)?.l2_norm();
        rows.push([rep.a_eps, rep.b_eps, rep.c_eps, corr]);
    }
    let decreasing = (0..4).all(|c| rows[0][c] > rows[1][c] && rows[1][c] > rows[2][c]);
    let fmt = |c: usize| format!("{:.2e}>{:.2e}>{:.2e}", rows[0][c], rows[1][c], rows[2][c]);
    ensure(
        worst_div <= 1e-8 && worst_mass <= 1e-9 && min_floor > 0.0 && decreasing,
        format!(
            "div err {worst_div:.1e}, mass err {worst_mass:.1e}, min floor {min_floor:.1e}; a {}, b {}, c {}, |δ| {}",
            fmt(0),
            fmt(1),
            fmt(2),
            fmt(3)
        ),
    )
}

fn c10_monotone_harness() -> Check {
    let (d, _) = profile_run().as_ref().map_err(Clone::clone)?;
    let h = monotone_harness(&d.v_eps, &d.paths, &CostFunctional::TotalMass).map_err(fail)?;
    let s = separated_run().as_ref().map_err(Clone::clone)?;
    let hs = monotone_harness(&s.run.v_eps, &s.run.paths, &CostFunctional::TotalMass).map_err(fail)?;
    let drop = (hs.f_magnitude - hs.f_intensity) / s.loop_tv;
    ensure(
        h.cellwise_ok && hs.cellwise_ok && drop >= 0.4,
        format!(
            "max cellwise excess {:.2e} (profile), {:.2e} (separated); F drop = {drop:.3} loop masses",
            h.max_excess, hs.max_excess
        ),
    )
}

fn c11_determinism() -> Check {
    let dir = tempfile::TempDir::new().map_err(fail)?;
    let run = |args: &[&str]| -> std::result::Result<(), String> {
        let o = Command::new(env!("CARGO_BIN_EXE_minflow"))
            .args(args)
            .current_dir(dir.path())
            .env_remove("MINFLOW_THREADS")
            .output()
            .map_err(fail)?;
        if o.status.success() {
            Ok(())
        } else {
            Err(format!("{:?}: {}", args, String::from_utf8_lossy(&o.stderr)))
        }
    };
    run(&["scenario", "profile1d", "--out-dir", "p"])?;
    let base = ["decompose", "--v", "p/v.csv", "--mu", "p/mu.csv", "--nu", "p/nu.csv", "--seed", "42"];
    for (out, threads) in [("a", "4"), ("b", "4"), ("c", "1")] {
        let mut args = base.to_vec();
        args.extend_from_slice(&["--out-dir", out, "--threads", threads]);
        run(&args)?;
    }
    let read = |d: &str| fs::read(dir.path().join(d).join("report.json")).map_err(fail);
    let (a, b, c) = (read("a")?, read("b")?, read("c")?);
    let parse = |x: &[u8]| serde_json::from_slice::<serde_json::Value>(x).map_err(fail);
    let (pa, pc) = (parse(&a)?, parse(&c)?);
    let mut worst = 0.0f64;
    for (k, va) in pa.as_object().ok_or("report is not an object")? {
        let (x, y) = (va.as_f64().unwrap_or(f64::NAN), pc[k].as_f64().unwrap_or(f64::NAN));
        worst = worst.max((x - y).abs());
    }
    ensure(a == b && worst <= 1e-12, format!("repeat identical: {}, max change 1 vs 4 threads {worst:.1e}", a == b))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 11] = [
        ("Dacorogna-Moser identity", c1_moser_identity),
        ("marginal push-forward", c2_marginals),
        ("decomposition defect", c3_defect),
        ("cycle removal", c4_cycle_removal),
        ("PB = PK on the grid graph", c5_graph_pb_pk),
        ("PB = PK, Euclidean", c6_euclidean),
        ("1D Kantorovich oracle", c7_kantorovich_1d),
        ("invariance suite", c8_invariance),
        ("regularization lemma", c9_regularization),
        ("monotone harness", c10_monotone_harness),
        ("determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {:>2} {tag}  {name}: {detail} [{secs:.1}s]", k + 1);
        failed += usize::from(outcome.is_err());
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
