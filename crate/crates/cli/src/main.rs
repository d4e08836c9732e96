//! `minflow`: batch front end for the minimal-flow toolkit.
//!
//! Exit codes: 0 on success, 2 for invalid input, 3 for solver failures.

mod render;

use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use minflow_core::beckmann::{atoms_of, density_of};
use minflow_core::io::{self, to_json};
use minflow_core::scenarios::{
    make_1d_profile, make_atom_pair, make_separated_scenario, make_separated_scenario_with_strength,
};
use minflow_core::{
    decompose, decomposition_report, flow, intensity, monotone_harness, solve_beckmann_euclidean,
    solve_beckmann_graph, solve_kantorovich, Atom, CostFunctional, Error, Grid64, GroundCost,
    PipelineParams, Result, ScalarField64, VectorField64,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "minflow", version, about = "Minimal flows, particle paths and Beckmann solvers")]
struct Cli {
    /// Worker threads for particle integration; results do not depend on it.
    #[arg(long, global = true, env = "MINFLOW_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Regularize (v, mu, nu), integrate particle paths and report the decomposition.
    Decompose(DecomposeArgs),
    /// Beckmann and Kantorovich solvers.
    Beckmann {
        #[command(subcommand)]
        which: BeckmannCommand,
    },
    /// Recompute the decomposition report for an existing path ensemble.
    Verify(VerifyArgs),
    /// Write the fields of a canned scenario.
    Scenario(ScenarioArgs),
    /// Render a scalar or vector field file as a binary PPM image.
    Render { input: PathBuf, output: PathBuf },
}

#[derive(Args)]
struct TripleArgs {
    #[arg(long)]
    v: PathBuf,
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    nu: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    input: TripleArgs,
    /// Smoothing scale; defaults to two cells.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    particles: usize,
    #[arg(long, default_value_t = 64)]
    steps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Also write paths.csv.
    #[arg(long)]
    save_paths: bool,
    /// Also write intensity.csv, flow.csv and the regularized v_eps/mu_eps/nu_eps.
    #[arg(long)]
    save_fields: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    input: TripleArgs,
    #[arg(long)]
    paths: PathBuf,
    /// Also run the monotone harness with `total-mass` or `power:<p>`.
    #[arg(long, value_parser = parse_functional)]
    functional: Option<CostFunctional>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    L1,
    Euclidean,
}

#[derive(Subcommand)]
enum BeckmannCommand {
    /// Exact Beckmann problem for the grid-graph (l1) metric.
    Graph {
        #[arg(long)]
        mu: PathBuf,
        #[arg(long)]
        nu: PathBuf,
        /// Write the optimal field to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Euclidean Beckmann problem with a certified duality gap.
    Euclidean {
        #[arg(long)]
        mu: PathBuf,
        #[arg(long)]
        nu: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        iters: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact optimal transport between atom lists.
    Kantorovich {
        #[arg(long)]
        sources: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, value_enum, default_value_t = CostArg::Euclidean)]
        cost: CostArg,
    },
    /// Solve the flow and transport problems on the same atoms and print the gap.
    Crosscheck {
        #[arg(long)]
        sources: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        /// Atoms are binned onto the unit square with this many cells per side.
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = CostArg::L1)]
        cost: CostArg,
        #[arg(long, default_value_t = 20_000)]
        iters: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioName {
    Profile1d,
    Separated,
    CycleFree,
    AtomPair,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(value_enum)]
    name: ScenarioName,
    /// Cells per side of the unit square.
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Loop strength for `separated`; defaults to half of the total variation.
    #[arg(long)]
    strength: Option<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn parse_functional(s: &str) -> std::result::Result<CostFunctional, String> {
    match s {
        "total-mass" => Ok(CostFunctional::TotalMass),
        _ => match s.strip_prefix("power:").map(str::parse::<f64>) {
            Some(Ok(p)) if p > 1.0 => Ok(CostFunctional::Power(p)),
            _ => Err(format!("expected `total-mass` or `power:<p>` with p > 1, got `{s}`")),
        },
    }
}

/// Prefixes file errors with the offending path; keeps the error class.
fn with_path<T>(r: Result<T>, path: &FsPath) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))),
        Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

fn load_scalar(p: &FsPath) -> Result<ScalarField64> {
    with_path(io::read_scalar(p), p)
}

fn load_vector(p: &FsPath) -> Result<VectorField64> {
    with_path(io::read_vector(p), p)
}

fn load_atoms(p: &FsPath) -> Result<Vec<Atom<f64>>> {
    with_path(io::read_atoms(p), p)
}

fn load_triple(a: &TripleArgs) -> Result<(VectorField64, ScalarField64, ScalarField64)> {
    Ok((load_vector(&a.v)?, load_scalar(&a.mu)?, load_scalar(&a.nu)?))
}

fn write_text(path: &FsPath, text: &str) -> Result<()> {
    with_path(fs::write(path, text).map_err(Error::from), path)
}

fn out_dir(dir: &FsPath) -> Result<()> {
    with_path(fs::create_dir_all(dir).map_err(Error::from), dir)
}

fn cmd_decompose(a: &DecomposeArgs) -> Result<()> {
    let (v, mu, nu) = load_triple(&a.input)?;
    let params = PipelineParams { eps: a.eps, particles: a.particles, steps: a.steps, seed: a.seed };
    let d = decompose(&v, &mu, &nu, &params)?;
    out_dir(&a.out_dir)?;
    let report = to_json(&d.report)?;
    write_text(&a.out_dir.join("report.json"), &format!("{report}\n"))?;
    write_text(&a.out_dir.join("regularization.json"), &format!("{}\n", to_json(&d.regularization)?))?;
    if a.save_paths {
        io::write_paths(a.out_dir.join("paths.csv"), &d.paths)?;
    }
    if a.save_fields {
        let g = d.v_eps.grid;
        io::write_scalar(a.out_dir.join("intensity.csv"), &intensity(&d.paths, &g)?)?;
        io::write_vector(a.out_dir.join("flow.csv"), &flow(&d.paths, &g)?)?;
        io::write_vector(a.out_dir.join("v_eps.csv"), &d.v_eps)?;
        io::write_scalar(a.out_dir.join("mu_eps.csv"), &d.mu_eps)?;
        io::write_scalar(a.out_dir.join("nu_eps.csv"), &d.nu_eps)?;
    }
    println!("{report}");
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<()> {
    let (v, mu, nu) = load_triple(&a.input)?;
    let q = with_path(io::read_paths::<f64>(&a.paths), &a.paths)?;
    println!("{}", to_json(&decomposition_report(&v, &q, &mu, &nu)?)?);
    if let Some(f) = &a.functional {
        println!("{}", to_json(&monotone_harness(&v, &q, f)?)?);
    }
    Ok(())
}

fn ground_cost(c: CostArg) -> GroundCost<f64> {
    match c {
        CostArg::L1 => GroundCost::L1,
        CostArg::Euclidean => GroundCost::Euclidean,
    }
}

fn cmd_beckmann(which: &BeckmannCommand) -> Result<()> {
    match which {
        BeckmannCommand::Graph { mu, nu, out } => {
            let (field, report) = solve_beckmann_graph(&load_scalar(mu)?, &load_scalar(nu)?)?;
            if let Some(p) = out {
                io::write_vector(p, &field)?;
            }
            println!("{}", to_json(&report)?);
        }
        BeckmannCommand::Euclidean { mu, nu, iters, out } => {
            let s = solve_beckmann_euclidean(&load_scalar(mu)?, &load_scalar(nu)?, *iters)?;
            if let Some(p) = out {
                io::write_vector(p, &s.field)?;
            }
            if !s.converged() {
                eprintln!(
                    "warning: duality gap {:.3}% exceeds 1% after {} iterations; value is an upper bound",
                    100.0 * s.report.gap,
                    s.report.iterations
                );
            }
            println!("{}", to_json(&s.report)?);
        }
        BeckmannCommand::Kantorovich { sources, targets, cost } => {
            let (_, report) = solve_kantorovich(&load_atoms(sources)?, &load_atoms(targets)?, ground_cost(*cost))?;
            println!("{}", to_json(&report)?);
        }
        BeckmannCommand::Crosscheck { sources, targets, grid, cost, iters } => {
            let g = Grid64::unit_square(*grid)?;
            let mu = density_of(&load_atoms(sources)?, g)?;
            let nu = density_of(&load_atoms(targets)?, g)?;
            // Both problems see the same binned atoms.
            let (src, dst) = (atoms_of(&mu), atoms_of(&nu));
            let (pb, pk, name) = match cost {
                CostArg::L1 => {
                    let (_, pb) = solve_beckmann_graph(&mu, &nu)?;
                    let (_, pk) = solve_kantorovich(&src, &dst, GroundCost::L1)?;
                    (pb, pk, "l1")
                }
                CostArg::Euclidean => {
                    let s = solve_beckmann_euclidean(&mu, &nu, *iters)?;
                    let (_, pk) = solve_kantorovich(&src, &dst, GroundCost::Euclidean)?;
                    (s.report, pk, "euclidean")
                }
            };
            let gap = (pb.value - pk.value).abs();
            let out = json!({ "cost": name, "pb": pb, "pk": pk, "gap": gap });
            println!("{}", to_json(&out)?);
        }
    }
    Ok(())
}

fn cmd_scenario(a: &ScenarioArgs) -> Result<()> {
    let g = Grid64::unit_square(a.n)?;
    let (v, mu, nu) = match a.name {
        ScenarioName::Profile1d => make_1d_profile(g),
        ScenarioName::Separated => match a.strength {
            Some(s) => make_separated_scenario_with_strength(g, s)?,
            None => make_separated_scenario(g)?,
        },
        ScenarioName::CycleFree => make_separated_scenario_with_strength(g, 0.0)?,
        ScenarioName::AtomPair => {
            let (from, to) = ((a.n / 4, a.n / 3), (3 * a.n / 4, 2 * a.n / 3));
            out_dir(&a.out_dir)?;
            io::write_atoms(a.out_dir.join("sources.csv"), &[Atom::new(g.center(from.0, from.1), 1.0)])?;
            io::write_atoms(a.out_dir.join("targets.csv"), &[Atom::new(g.center(to.0, to.1), 1.0)])?;
            make_atom_pair(g, from, to)?
        }
    };
    out_dir(&a.out_dir)?;
    io::write_vector(a.out_dir.join("v.csv"), &v)?;
    io::write_scalar(a.out_dir.join("mu.csv"), &mu)?;
    io::write_scalar(a.out_dir.join("nu.csv"), &nu)?;
    Ok(())
}

fn cmd_render(input: &FsPath, output: &FsPath) -> Result<()> {
    let text = with_path(fs::read_to_string(input).map_err(Error::from), input)?;
    let kind = text.split_whitespace().nth(1).unwrap_or("");
    let img = match kind {
        "scalar" => render::render_scalar(&with_path(io::parse_scalar(&text), input)?),
        "vector" => render::render_vector(&with_path(io::parse_vector(&text), input)?),
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("{}: expected a `# scalar` or `# vector` header", input.display()),
            })
        }
    };
    with_path(fs::write(output, img.to_ppm()).map_err(Error::from), output)
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidParameter("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::SolverFailure(format!("cannot start worker pool: {e}")))?;
    }
    match &cli.command {
        Command::Decompose(a) => cmd_decompose(a),
        Command::Beckmann { which } => cmd_beckmann(which),
        Command::Verify(a) => cmd_verify(a),
        Command::Scenario(a) => cmd_scenario(a),
        Command::Render { input, output } => cmd_render(input, output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
