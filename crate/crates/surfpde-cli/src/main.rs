//! Command-line front end: shape generation, operator training, PDE solves
//! with the learned and classical band solvers, the FEM reference, and the
//! benchmark suites.

use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::{Path, PathBuf};
use surfpde::band::BoundarySpec;
use surfpde::baselines::{
    cotan_laplacian, cpm_solve_heat, cpm_solve_poisson, fem_solve_heat, fem_solve_poisson,
    real_sh, MassMode,
};
use surfpde::geometry::{
    geodesic_sphere, load_mesh, load_xyz, make_training_shape, normalize_points, save_obj,
    AnalyticSphere, CloudSurface, MeshSurface, NonTriPolicy, Surface, TriangleMesh,
};
use surfpde::harness::{
    boundary_suite, cut_mesh, remesh_suite, remesh_summary, runtime_scaling, sphere_suite,
    torus_mesh, write_suite_csv, BenchConfigFile, SuiteContext,
};
use surfpde::operator::{load_params, save_params};
use surfpde::patches::PatchConfig;
use surfpde::solver::{
    setup_problem, solve_heat, solve_poisson, write_surface_csv, PipelineConfig, SolveConfig,
    SolveReport,
};
use surfpde::training::{train, write_history_csv, TrainConfig};
use surfpde::Vec3;

#[derive(Parser)]
#[command(
    name = "surfpde",
    about = "Narrow-band surface PDE solvers with a learned extension operator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a mesh asset (training shape, spheres, tori, cut spheres).
    GenShape(GenShapeArgs),
    /// Train the extension operator on a shape.
    Train(TrainArgs),
    /// Heat diffusion with the learned extension.
    SolveHeat(SolveArgs),
    /// Poisson solve with the learned extension.
    SolvePoisson(SolveArgs),
    /// Classical closest-point baseline (tricubic re-extension).
    BaselineCpm(BaselineCpmArgs),
    /// Cotangent-Laplacian FEM reference on a mesh.
    BaselineFem(BaselineFemArgs),
    /// Sphere accuracy sweep vs analytic truth (CSV out).
    BenchSphere(BenchArgs),
    /// Remeshing robustness study (CSV out).
    BenchRemesh(BenchArgs),
    /// Dirichlet boundary study on a cut sphere (CSV out).
    BenchBoundary(BenchArgs),
    /// Runtime scaling over band and mesh sizes (CSV out).
    BenchRuntime(BenchArgs),
}

#[derive(Args)]
struct GenShapeArgs {
    /// bumpy | sphere | torus | cut-sphere
    #[arg(long)]
    kind: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    bumps: usize,
    #[arg(long, default_value_t = 0.3)]
    height: f64,
    /// Geodesic frequency for sphere kinds.
    #[arg(long, default_value_t = 32)]
    freq: u32,
    #[arg(long, default_value_t = 0.7)]
    big_r: f64,
    #[arg(long, default_value_t = 0.25)]
    small_r: f64,
}

#[derive(Args)]
struct CommonGeometry {
    /// Shape spec: sphere[:radius] | bumpy[:seed] | torus | mesh:path.obj |
    /// cloud:path.xyz, or a bare .obj/.xyz path.
    #[arg(long)]
    shape: String,
    /// Grid spacing.
    #[arg(long, default_value_t = 0.03)]
    dx: f64,
    /// Band half-width (defaults to 3 dx, clipped to the coverage bound).
    #[arg(long)]
    eps: Option<f64>,
    /// Band nodes per patch stencil.
    #[arg(long, default_value_t = 400)]
    k: usize,
    /// Surface samples for features and band pruning.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rescale the input to a unit bounding box before solving.
    #[arg(long, default_value_t = false)]
    normalize: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    geometry: CommonGeometry,
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV path.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    max_patches: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// additive | multiplicative feature modulation of the query embedding.
    #[arg(long, default_value = "additive")]
    modulation: String,
    #[arg(long, default_value_t = 8.0)]
    lambda_init: f64,
    /// Stencil queries sampled per patch per step.
    #[arg(long, default_value_t = 128)]
    queries: usize,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    geometry: CommonGeometry,
    #[arg(long)]
    weights: PathBuf,
    /// Initial condition (heat) or forcing (Poisson): sh:l,m | const:c |
    /// coord:x|y|z.
    #[arg(long, default_value = "sh:2,0")]
    function: String,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    /// Steady tolerance (heat) or interior residual tolerance (Poisson).
    #[arg(long)]
    tol: Option<f64>,
    /// Dirichlet boundary, e.g. "plane:z=0,g=const:1".
    #[arg(long)]
    boundary: Option<String>,
    /// Output prefix; writes <prefix>_surface.csv, <prefix>_band.csv,
    /// <prefix>_report.txt.
    #[arg(long, default_value = "solve")]
    out: String,
    /// Readout points count (sampled from the surface).
    #[arg(long, default_value_t = 5000)]
    readout: usize,
}

#[derive(Args)]
struct BaselineCpmArgs {
    #[command(flatten)]
    solve: SolveArgs,
    /// heat | poisson
    #[arg(long, default_value = "poisson")]
    pde: String,
}

#[derive(Args)]
struct BaselineFemArgs {
    /// Mesh path (OBJ).
    #[arg(long)]
    mesh: PathBuf,
    /// heat | poisson
    #[arg(long, default_value = "poisson")]
    pde: String,
    #[arg(long, default_value = "sh:2,0")]
    function: String,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long, default_value = "fem")]
    out: String,
    /// lumped | consistent (Poisson right-hand side assembly)
    #[arg(long, default_value = "lumped")]
    mass: String,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML config with weights path, grids and seeds.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run() -> surfpde::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenShape(args) => gen_shape(args),
        Command::Train(args) => run_train(args),
        Command::SolveHeat(args) => run_solve(args, Pde::Heat, Backend::Learned),
        Command::SolvePoisson(args) => run_solve(args, Pde::Poisson, Backend::Learned),
        Command::BaselineCpm(args) => {
            let pde = parse_pde(&args.pde)?;
            run_solve(args.solve, pde, Backend::Cpm)
        }
        Command::BaselineFem(args) => run_fem(args),
        Command::BenchSphere(args) => run_bench(args, Bench::Sphere),
        Command::BenchRemesh(args) => run_bench(args, Bench::Remesh),
        Command::BenchBoundary(args) => run_bench(args, Bench::Boundary),
        Command::BenchRuntime(args) => run_bench(args, Bench::Runtime),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Pde {
    Heat,
    Poisson,
}

#[derive(Clone, Copy, PartialEq)]
enum Backend {
    Learned,
    Cpm,
}

enum Bench {
    Sphere,
    Remesh,
    Boundary,
    Runtime,
}

fn parse_pde(s: &str) -> surfpde::Result<Pde> {
    match s {
        "heat" => Ok(Pde::Heat),
        "poisson" => Ok(Pde::Poisson),
        other => Err(surfpde::Error::Config(format!("unknown pde {other:?}"))),
    }
}

fn gen_shape(args: GenShapeArgs) -> surfpde::Result<()> {
    let mesh = match args.kind.as_str() {
        "bumpy" => make_training_shape(args.seed, args.bumps, args.height),
        "sphere" => geodesic_sphere(args.freq, 1.0),
        "torus" => torus_mesh(args.big_r, args.small_r, 160, 56),
        "cut-sphere" => cut_mesh(&geodesic_sphere(args.freq, 1.0), 2, 0.0, true)?.0,
        other => return Err(surfpde::Error::Config(format!("unknown shape kind {other:?}"))),
    };
    save_obj(&mesh, &args.out)?;
    println!(
        "wrote {} ({} vertices, {} faces)",
        args.out.display(),
        mesh.vertices.len(),
        mesh.faces.len()
    );
    Ok(())
}

fn load_shape(spec: &str, normalize: bool) -> surfpde::Result<Surface> {
    let mut mesh: Option<TriangleMesh> = None;
    let surface = if let Some(rest) = spec.strip_prefix("sphere") {
        let radius = rest
            .strip_prefix(':')
            .map(|r| r.parse::<f64>())
            .transpose()
            .map_err(|_| surfpde::Error::Config(format!("bad sphere radius in {spec:?}")))?
            .unwrap_or(1.0);
        Some(Surface::Sphere(AnalyticSphere::new(Vec3::zeros(), radius)?))
    } else if let Some(rest) = spec.strip_prefix("bumpy") {
        let seed = rest
            .strip_prefix(':')
            .map(|r| r.parse::<u64>())
            .transpose()
            .map_err(|_| surfpde::Error::Config(format!("bad bumpy seed in {spec:?}")))?
            .unwrap_or(7);
        mesh = Some(make_training_shape(seed, 30, 0.3));
        None
    } else if spec == "torus" {
        mesh = Some(torus_mesh(0.7, 0.25, 160, 56));
        None
    } else if let Some(path) = spec.strip_prefix("mesh:") {
        mesh = Some(load_mesh(Path::new(path), NonTriPolicy::Fan)?);
        None
    } else if let Some(path) = spec.strip_prefix("cloud:") {
        let cloud = load_xyz(Path::new(path))?;
        Some(Surface::Cloud(Box::new(CloudSurface::new(&cloud, 16)?)))
    } else if spec.ends_with(".obj") {
        mesh = Some(load_mesh(Path::new(spec), NonTriPolicy::Fan)?);
        None
    } else if spec.ends_with(".xyz") {
        let cloud = load_xyz(Path::new(spec))?;
        Some(Surface::Cloud(Box::new(CloudSurface::new(&cloud, 16)?)))
    } else {
        return Err(surfpde::Error::Config(format!("unknown shape spec {spec:?}")));
    };
    match surface {
        Some(s) => Ok(s),
        None => {
            let mut mesh = mesh.unwrap();
            if normalize {
                normalize_points(&mut mesh.vertices)?;
            }
            Ok(Surface::Mesh(Box::new(MeshSurface::new(mesh)?)))
        }
    }
}

fn parse_function(spec: &str) -> surfpde::Result<Box<dyn Fn(&Vec3) -> f64 + Sync + Send>> {
    if let Some(rest) = spec.strip_prefix("sh:") {
        let (l, m) = rest.split_once(',').ok_or_else(|| {
            surfpde::Error::Config(format!("sh needs l,m in {spec:?}"))
        })?;
        let l: u32 = l
            .trim()
            .parse()
            .map_err(|_| surfpde::Error::Config(format!("bad degree in {spec:?}")))?;
        let m: i32 = m
            .trim()
            .parse()
            .map_err(|_| surfpde::Error::Config(format!("bad order in {spec:?}")))?;
        if m.unsigned_abs() > l {
            return Err(surfpde::Error::Config("|m| must not exceed l".into()));
        }
        Ok(Box::new(move |p: &Vec3| real_sh(l, m, p)))
    } else if let Some(c) = spec.strip_prefix("const:") {
        let c: f64 = c
            .parse()
            .map_err(|_| surfpde::Error::Config(format!("bad constant in {spec:?}")))?;
        Ok(Box::new(move |_: &Vec3| c))
    } else if let Some(axis) = spec.strip_prefix("coord:") {
        let idx = match axis {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            other => return Err(surfpde::Error::Config(format!("bad axis {other:?}"))),
        };
        Ok(Box::new(move |p: &Vec3| p[idx]))
    } else {
        Err(surfpde::Error::Config(format!("unknown function {spec:?}")))
    }
}

fn pipeline_from(geometry: &CommonGeometry) -> PipelineConfig {
    let mut pipe = PipelineConfig {
        dx: geometry.dx,
        n_samples: geometry.samples,
        seed: geometry.seed,
        patch: PatchConfig {
            k: geometry.k,
            seed: geometry.seed,
            ..Default::default()
        },
        ..Default::default()
    };
    if let Some(eps) = geometry.eps {
        pipe.eps_factor = eps / geometry.dx;
    }
    pipe
}

fn run_train(args: TrainArgs) -> surfpde::Result<()> {
    let surface = load_shape(&args.geometry.shape, args.geometry.normalize)?;
    let pipe = pipeline_from(&args.geometry);
    println!("building band and patches (dx = {})...", pipe.dx);
    let setup = setup_problem(surface, &pipe)?;
    println!(
        "band: {} nodes, patches: {} (repaired {})",
        setup.band.len(),
        setup.patches.patches.len(),
        setup.patches.repaired
    );
    let modulation = match args.modulation.as_str() {
        "additive" => surfpde::operator::Modulation::Additive,
        "multiplicative" => surfpde::operator::Modulation::Multiplicative,
        other => {
            return Err(surfpde::Error::Config(format!(
                "unknown modulation {other:?}"
            )))
        }
    };
    let config = TrainConfig {
        alpha: args.alpha,
        lr: args.lr,
        epochs: args.epochs,
        seed: args.geometry.seed,
        embedding_dim: args.width,
        hidden_depth: args.depth,
        max_patches: Some(args.max_patches),
        modulation,
        lambda_init: args.lambda_init,
        queries_per_pair: args.queries,
        ..Default::default()
    };
    let outcome = train(&setup.band, &setup.patches, &config)?;
    save_params(&outcome.params, &args.out)?;
    println!(
        "trained {} epochs; final validation extension rmse {:.3e}; lambda {:.4}",
        args.epochs, outcome.final_val_rmse, outcome.params.lambda
    );
    if let Some(hist) = args.history {
        let mut buf = Vec::new();
        write_history_csv(&outcome.history, &mut buf)?;
        std::fs::write(&hist, buf)?;
        println!("history -> {}", hist.display());
    }
    println!("weights -> {}", args.out.display());
    Ok(())
}

fn write_report(
    prefix: &str,
    setup: &surfpde::solver::Setup,
    report: &SolveReport,
    points: &[Vec3],
) -> surfpde::Result<()> {
    let mut buf = Vec::new();
    write_surface_csv(points, &report.surface_values, &mut buf)?;
    std::fs::write(format!("{prefix}_surface.csv"), buf)?;

    let mut buf = Vec::new();
    setup.band.dump_csv(&report.final_field, &mut buf)?;
    std::fs::write(format!("{prefix}_band.csv"), buf)?;

    let text = format!(
        "iterations = {}\nwall_seconds = {:.3}\nconverged = {}\nt_end = {:.6}\n\
         band_nodes = {}\npatches = {}\nboundary_tagged = {}\nresidual_final = {:.3e}\n",
        report.iterations,
        report.wall_seconds,
        report.converged,
        report.t_end,
        setup.band.len(),
        setup.patches.patches.len(),
        report.boundary_tagged,
        report.residual_history.last().copied().unwrap_or(f64::NAN),
    );
    std::fs::write(format!("{prefix}_report.txt"), text)?;
    println!(
        "{} iterations in {:.1}s (converged: {}); outputs -> {prefix}_*.csv/txt",
        report.iterations, report.wall_seconds, report.converged
    );
    Ok(())
}

fn run_solve(args: SolveArgs, pde: Pde, backend: Backend) -> surfpde::Result<()> {
    let surface = load_shape(&args.geometry.shape, args.geometry.normalize)?;
    let pipe = pipeline_from(&args.geometry);
    let setup = setup_problem(surface, &pipe)?;
    let func = parse_function(&args.function)?;
    let mut config = SolveConfig {
        dt: args.dt,
        t_final: args.t_final,
        ..Default::default()
    };
    if let Some(b) = &args.boundary {
        config.boundary = Some(BoundarySpec::parse(b)?);
    }
    match pde {
        Pde::Heat => {
            if args.t_final.is_none() {
                config.steady_tol = Some(args.tol.unwrap_or(1e-3));
            } else if let Some(tol) = args.tol {
                config.steady_tol = Some(tol);
            }
        }
        Pde::Poisson => {
            if let Some(tol) = args.tol {
                config.poisson_tol = tol;
            }
        }
    }
    let points: Vec<Vec3> = setup
        .samples
        .iter()
        .take(args.readout)
        .map(|s| s.position)
        .collect();

    let report = match (pde, backend) {
        (Pde::Heat, Backend::Learned) => {
            let params = load_params(&args.weights)?;
            solve_heat(&setup, &params, &*func, &config, &points)?
        }
        (Pde::Poisson, Backend::Learned) => {
            let params = load_params(&args.weights)?;
            solve_poisson(&setup, &params, &*func, &config, &points)?
        }
        (Pde::Heat, Backend::Cpm) => cpm_solve_heat(&setup, &*func, &config, &points)?,
        (Pde::Poisson, Backend::Cpm) => cpm_solve_poisson(&setup, &*func, &config, &points)?,
    };
    write_report(&args.out, &setup, &report, &points)
}

fn run_fem(args: BaselineFemArgs) -> surfpde::Result<()> {
    let mesh = load_mesh(&args.mesh, NonTriPolicy::Fan)?;
    let lap = cotan_laplacian(&mesh)?;
    let func = parse_function(&args.function)?;
    let values: Vec<f64> = mesh.vertices.iter().map(|v| func(v)).collect();
    let report = match parse_pde(&args.pde)? {
        Pde::Heat => fem_solve_heat(&lap, &values, args.t_final, Some(1e-6), None)?,
        Pde::Poisson => {
            let mass = match args.mass.as_str() {
                "lumped" => MassMode::Lumped,
                "consistent" => MassMode::Consistent,
                other => {
                    return Err(surfpde::Error::Config(format!("unknown mass mode {other:?}")))
                }
            };
            fem_solve_poisson(&lap, &values, mass)?
        }
    };
    let mut buf = Vec::new();
    write_surface_csv(&mesh.vertices, &report.values, &mut buf)?;
    std::fs::write(format!("{}_surface.csv", args.out), buf)?;
    println!(
        "fem: {} iterations; outputs -> {}_surface.csv",
        report.iterations, args.out
    );
    Ok(())
}

fn run_bench(args: BenchArgs, bench: Bench) -> surfpde::Result<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let config = BenchConfigFile::parse(&text)?;
    let params = load_params(Path::new(&config.weights))?;
    let ctx = SuiteContext {
        params,
        dx: config.dx,
        k: config.k,
        n_samples: config.n_samples,
        seed: config.seed,
    };
    let mut out = Vec::new();
    match bench {
        Bench::Sphere => {
            let rows = sphere_suite(&ctx, &config.sphere_cases()?);
            write_suite_csv(&rows, &mut out)?;
            for r in &rows {
                match &r.metrics {
                    Some(m) => println!(
                        "{:5} {:9} {:7}: nmae {:.3e}  nmaxe {:.3e}  nrmse {:.3e}  ({:.1}s)",
                        r.solver, r.resolution, r.pde, m.nmae, m.nmaxe, m.nrmse, r.seconds
                    ),
                    None => println!(
                        "{:5} {:9} {:7}: FAILED {}",
                        r.solver,
                        r.resolution,
                        r.pde,
                        r.error.as_deref().unwrap_or("")
                    ),
                }
            }
        }
        Bench::Remesh => {
            use surfpde::harness::SolverKind;
            let rows = remesh_suite(
                &ctx,
                config.remesh.n_vertices,
                &config.remesh.seeds,
                &[SolverKind::Learned, SolverKind::Fem],
            )?;
            writeln!(&mut out, "sampling,solver,seed,nmae,nmaxe,nrmse,seconds")
                .map_err(surfpde::Error::Io)?;
            for r in &rows {
                writeln!(
                    &mut out,
                    "{},{},{},{},{},{},{:.3}",
                    r.sampling, r.solver, r.seed, r.metrics.nmae, r.metrics.nmaxe,
                    r.metrics.nrmse, r.seconds
                )
                .map_err(surfpde::Error::Io)?;
            }
            for solver in ["ours", "fem"] {
                println!("{solver}:");
                for (sampling, mean, rel) in remesh_summary(&rows, solver) {
                    println!("  {sampling:10} nmae {mean:.3e}  ({:+.1}% vs regular)", rel * 100.0);
                }
            }
        }
        Bench::Boundary => {
            let rows = boundary_suite(&ctx, config.boundary.mesh_frequency)?;
            writeln!(&mut out, "case,nrmse,n_eval,seconds").map_err(surfpde::Error::Io)?;
            for r in &rows {
                writeln!(&mut out, "{},{},{},{:.3}", r.case, r.nrmse, r.n_eval, r.seconds)
                    .map_err(surfpde::Error::Io)?;
                println!("{:10}: nrmse {:.3e} ({:.1}s)", r.case, r.nrmse, r.seconds);
            }
        }
        Bench::Runtime => {
            let rows = runtime_scaling(
                &ctx,
                &config.runtime.band_sizes,
                &config.runtime.mesh_frequencies,
            )?;
            writeln!(
                &mut out,
                "band_target,band_actual,mesh_vertices,setup_seconds,solve_seconds"
            )
            .map_err(surfpde::Error::Io)?;
            for r in &rows {
                writeln!(
                    &mut out,
                    "{},{},{},{:.3},{:.3}",
                    r.band_target, r.band_actual, r.mesh_vertices, r.setup_seconds,
                    r.solve_seconds
                )
                .map_err(surfpde::Error::Io)?;
                println!(
                    "band {:6} mesh {:6}: solve {:.2}s (setup {:.2}s)",
                    r.band_actual, r.mesh_vertices, r.solve_seconds, r.setup_seconds
                );
            }
        }
    }
    std::fs::write(&args.out, out)?;
    println!("csv -> {}", args.out.display());
    Ok(())
}
