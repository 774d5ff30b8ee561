//! End-to-end PDE solving in the band: alternate re-extension with explicit
//! finite-difference updates; heat marches in time, Poisson relaxes to the
//! steady state of the same iteration (directly via a deflated Krylov solve
//! when the problem is unconstrained, since the extension map is linear).

mod extension;
mod fd;
mod linsolve;
mod readout;

pub use extension::{extend, CacheConfig, ExtensionOp, LearnedExtension};
pub use fd::{heat_step, laplacian_fd, max_stable_dt};
pub use linsolve::{gmres, GmresOutcome};
pub use readout::readout_surface;

use crate::band::{
    boundary_tag, build_grid, coverage_max_epsilon, extract_band, BoundarySpec, BoundaryTags,
    NarrowBand,
};
use crate::geometry::{sample_surface, Surface, SurfaceSample};
use crate::operator::OperatorParams;
use crate::patches::{build_patches, PatchConfig, PatchSet};
use crate::{Error, Result, Vec3};

/// Geometry-side configuration: grid, band and patch construction.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub dx: f64,
    /// Band half-width as a multiple of dx, clipped to the coverage bound
    /// for the configured stencil size.
    pub eps_factor: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub patch: PatchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dx: 0.03,
            eps_factor: 3.0,
            n_samples: 100_000,
            seed: 0,
            patch: PatchConfig::default(),
        }
    }
}

/// A surface prepared for solving: samples, band, patch cover.
pub struct Setup {
    pub surface: Surface,
    pub samples: Vec<SurfaceSample>,
    pub band: NarrowBand,
    pub patches: PatchSet,
    pub config: PipelineConfig,
}

pub fn setup_problem(surface: Surface, config: &PipelineConfig) -> Result<Setup> {
    let eps = (config.eps_factor * config.dx)
        .min(coverage_max_epsilon(config.dx, config.patch.k));
    let grid = build_grid(&surface.bbox(), config.dx, eps + 2.0 * config.dx)?;
    let samples = sample_surface(&surface, config.n_samples, config.seed)?;
    let band = extract_band(&grid, &surface, &samples, eps)?;
    let patches = build_patches(&band, &samples, &config.patch)?;
    Ok(Setup {
        surface,
        samples,
        band,
        patches,
        config: config.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    /// Time step; defaults to dx^2/8 (under the dx^2/6 explicit bound).
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    /// Early stop for heat: max |U_{n+1} - U_n| / dt below this.
    pub steady_tol: Option<f64>,
    /// Blending temperature for patch aggregation.
    pub temperature: f64,
    /// Steps between re-extensions.
    pub extension_cadence: usize,
    /// Poisson convergence: max |lap(extended) - f| over interior nodes.
    /// This residual bottoms out at the extension's self-consistency defect
    /// divided by dx^2, so the relaxation loop also stops once the iterate
    /// stops moving (see `fixed_point_tol`).
    pub poisson_tol: f64,
    /// Relaxation fixed-point detection: stop when the per-step change rate
    /// max|U_{n+1}-U_n|/dt falls below this fraction of the forcing range.
    pub fixed_point_tol: f64,
    pub max_iters: usize,
    pub boundary: Option<BoundarySpec>,
    /// Solve the Poisson fixed point directly with deflated GMRES when the
    /// problem has no Dirichlet constraints (same fixed point as the
    /// pseudo-time loop; the extension map is linear).
    pub direct_steady: bool,
    pub cache: CacheConfig,
    /// Readout kernel width; defaults to the band epsilon.
    pub readout_width: Option<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            dt: None,
            t_final: None,
            steady_tol: None,
            temperature: 0.5,
            extension_cadence: 1,
            poisson_tol: 5e-4,
            fixed_point_tol: 1e-5,
            max_iters: 400_000,
            boundary: None,
            direct_steady: true,
            cache: CacheConfig::default(),
            readout_width: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub wall_seconds: f64,
    /// Per-step update magnitude (heat) or interior residual (Poisson),
    /// subsampled to at most ~4k entries.
    pub residual_history: Vec<f64>,
    /// Final band field (band-node prefix of the solver field).
    pub final_field: Vec<f64>,
    pub surface_values: Vec<f64>,
    pub converged: bool,
    pub t_end: f64,
    pub boundary_tagged: usize,
}

fn effective_dt(band: &NarrowBand, config: &SolveConfig) -> Result<f64> {
    let dx = band.grid.spacing;
    let dt = config.dt.unwrap_or(dx * dx / 8.0);
    if dt <= 0.0 || dt > fd::max_stable_dt(dx) + 1e-15 {
        return Err(Error::Config(format!(
            "dt = {dt} outside (0, dx^2/6 = {}]",
            fd::max_stable_dt(dx)
        )));
    }
    Ok(dt)
}

fn push_subsampled(history: &mut Vec<f64>, value: f64, step: usize, total_hint: usize) {
    let stride = (total_hint / 4096).max(1);
    if step % stride == 0 {
        history.push(value);
    }
}

/// Build the cached learned extension for a prepared problem.
pub fn learned_extension(
    setup: &Setup,
    params: &OperatorParams,
    config: &SolveConfig,
) -> Result<LearnedExtension> {
    LearnedExtension::build(
        params,
        &setup.patches,
        &setup.band,
        config.temperature,
        config.cache,
    )
}

fn resolve_boundary(
    band: &NarrowBand,
    config: &SolveConfig,
) -> (Option<BoundaryTags>, usize) {
    match &config.boundary {
        Some(spec) => {
            let tags = boundary_tag(band, spec);
            let n = tags.indices.len();
            (Some(tags), n)
        }
        None => (None, 0),
    }
}

/// Heat solve: U_{t+dt} = extended(U_t) + dt * Lap(extended(U_t)), iterated
/// to `t_final` or steadiness; Dirichlet tags re-clamped every step.
pub fn run_heat(
    ext: &dyn ExtensionOp,
    band: &NarrowBand,
    u0: &dyn Fn(&Vec3) -> f64,
    config: &SolveConfig,
    readout_points: &[Vec3],
) -> Result<SolveReport> {
    let start = std::time::Instant::now();
    let dt = effective_dt(band, config)?;
    let (tags, n_tagged) = resolve_boundary(band, config);
    let t_final = match (config.t_final, config.steady_tol) {
        (Some(t), _) => t,
        (None, Some(_)) => f64::INFINITY,
        (None, None) => {
            return Err(Error::Config(
                "heat solve needs t_final or steady_tol".into(),
            ))
        }
    };
    let n_steps = if t_final.is_finite() {
        (t_final / dt).ceil() as usize
    } else {
        config.max_iters
    };
    let cadence = config.extension_cadence.max(1);

    let mut u = ext.init_field(band, u0);
    if let Some(t) = &tags {
        t.apply(&mut u);
    }
    let mut extended = vec![0.0; ext.field_len()];
    let mut history = Vec::new();
    let mut converged = false;
    let mut steps_done = 0;

    for step in 0..n_steps {
        if step % cadence == 0 {
            ext.extend_into(&u, &mut extended);
        } else {
            extended.copy_from_slice(&u);
        }
        let next = fd::heat_step(band, &extended, dt, tags.as_ref())?;
        let mut diff: f64 = 0.0;
        for (a, b) in next.iter().zip(u.iter()) {
            diff = diff.max((a - b).abs());
        }
        let rate = diff / dt;
        if !rate.is_finite() {
            return Err(Error::Solver(format!(
                "non-finite field at heat step {step}"
            )));
        }
        push_subsampled(&mut history, rate, step, n_steps);
        u = next;
        steps_done = step + 1;
        if let Some(tol) = config.steady_tol {
            if rate < tol {
                converged = true;
                break;
            }
        }
    }
    if config.steady_tol.is_none() {
        converged = true;
    }

    let width = config.readout_width.unwrap_or(band.epsilon);
    let surface_values = readout_surface(band, &u[..band.len()], readout_points, width)?;
    Ok(SolveReport {
        iterations: steps_done,
        wall_seconds: start.elapsed().as_secs_f64(),
        residual_history: history,
        final_field: u[..band.len()].to_vec(),
        surface_values,
        converged,
        t_end: steps_done as f64 * dt,
        boundary_tagged: n_tagged,
    })
}

/// Poisson solve Lap_S u = f by relaxing U <- extended(U) + dt (Lap
/// extended(U) - f) to its fixed point; `f` is extended once through the
/// closest-point map. The readout is projected to zero mean.
pub fn run_poisson(
    ext: &dyn ExtensionOp,
    band: &NarrowBand,
    f_surface: &dyn Fn(&Vec3) -> f64,
    config: &SolveConfig,
    readout_points: &[Vec3],
) -> Result<SolveReport> {
    let start = std::time::Instant::now();
    let dt = effective_dt(band, config)?;
    let (tags, n_tagged) = resolve_boundary(band, config);
    let f_band = ext.init_field(band, f_surface);
    // forcing acts on interior nodes only
    let f_int: Vec<f64> = f_band
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i < band.len() && band.interior_mask[i] {
                v
            } else {
                0.0
            }
        })
        .collect();

    let step_map = |u: &[f64], forcing: bool| -> Vec<f64> {
        let mut extended = vec![0.0; ext.field_len()];
        ext.extend_into(u, &mut extended);
        let lap = fd::laplacian_fd(band, &extended);
        let mut next = extended;
        for i in 0..band.len() {
            if band.interior_mask[i] {
                next[i] += dt * (lap[i] - if forcing { f_int[i] } else { 0.0 });
            }
        }
        if let Some(t) = &tags {
            t.apply(&mut next);
        }
        next
    };
    let interior_residual = |u: &[f64]| -> f64 {
        let mut extended = vec![0.0; ext.field_len()];
        ext.extend_into(u, &mut extended);
        let lap = fd::laplacian_fd(band, &extended);
        let mut r: f64 = 0.0;
        for i in 0..band.len() {
            if band.interior_mask[i] {
                r = r.max((lap[i] - f_band[i]).abs());
            }
        }
        r
    };

    let mut history = Vec::new();
    let mut iterations;
    let mut u;
    let fixed_point_reached;
    if config.direct_steady && tags.is_none() {
        // fixed point solves (I - L) U = -dt f with L = step_map sans forcing
        let apply = |x: &[f64]| -> Vec<f64> {
            let lx = step_map(x, false);
            x.iter().zip(lx.iter()).map(|(a, b)| a - b).collect()
        };
        let b: Vec<f64> = f_int.iter().map(|v| -dt * v).collect();
        let out = linsolve::gmres(apply, &b, 60, 60, 1e-9);
        u = out.solution;
        iterations = out.iterations;
        fixed_point_reached = out.converged;
        history.push(out.relative_residual);
    } else {
        u = vec![0.0; ext.field_len()];
        if let Some(t) = &tags {
            t.apply(&mut u);
        }
        iterations = 0;
        let f_scale = f_int
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(1e-12);
        loop {
            let next = step_map(&u, true);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Solver(format!(
                    "non-finite field at relaxation step {iterations}"
                )));
            }
            let mut rate: f64 = 0.0;
            for (a, b) in next.iter().zip(u.iter()) {
                rate = rate.max((a - b).abs());
            }
            let rate = rate / dt;
            u = next;
            iterations += 1;
            let at_fixed_point = rate < config.fixed_point_tol * f_scale;
            if iterations % 25 == 0 || iterations >= config.max_iters || at_fixed_point {
                let r = interior_residual(&u);
                push_subsampled(&mut history, r, iterations, config.max_iters / 25);
                if r < config.poisson_tol || at_fixed_point || iterations >= config.max_iters {
                    fixed_point_reached = at_fixed_point;
                    break;
                }
            }
        }
    }

    let residual = interior_residual(&u);
    let converged = fixed_point_reached || residual < config.poisson_tol;
    history.push(residual);

    let width = config.readout_width.unwrap_or(band.epsilon);
    let mut surface_values = readout_surface(band, &u[..band.len()], readout_points, width)?;
    if tags.is_none() {
        // zero-mean gauge on closed surfaces
        let mean = surface_values.iter().sum::<f64>() / surface_values.len().max(1) as f64;
        for v in surface_values.iter_mut() {
            *v -= mean;
        }
    }
    Ok(SolveReport {
        iterations,
        wall_seconds: start.elapsed().as_secs_f64(),
        residual_history: history,
        final_field: u[..band.len()].to_vec(),
        surface_values,
        converged,
        t_end: iterations as f64 * dt,
        boundary_tagged: n_tagged,
    })
}

/// Subtract the sampled surface mean from a function (zero-mean gauge for
/// Poisson forcing).
pub fn zero_mean_over_samples<'a>(
    f: &'a dyn Fn(&Vec3) -> f64,
    samples: &[SurfaceSample],
) -> (impl Fn(&Vec3) -> f64 + 'a, f64) {
    let mean = samples.iter().map(|s| f(&s.position)).sum::<f64>() / samples.len().max(1) as f64;
    (move |p: &Vec3| f(p) - mean, mean)
}

/// Heat solve with the learned extension on a prepared problem.
pub fn solve_heat(
    setup: &Setup,
    params: &OperatorParams,
    u0: &dyn Fn(&Vec3) -> f64,
    config: &SolveConfig,
    readout_points: &[Vec3],
) -> Result<SolveReport> {
    let ext = learned_extension(setup, params, config)?;
    run_heat(&ext, &setup.band, u0, config, readout_points)
}

/// Poisson solve with the learned extension; the forcing is projected to
/// zero mean over the surface samples first.
pub fn solve_poisson(
    setup: &Setup,
    params: &OperatorParams,
    f: &dyn Fn(&Vec3) -> f64,
    config: &SolveConfig,
    readout_points: &[Vec3],
) -> Result<SolveReport> {
    let ext = learned_extension(setup, params, config)?;
    let (f0, _) = zero_mean_over_samples(&f, &setup.samples);
    run_poisson(&ext, &setup.band, &f0, config, readout_points)
}

/// Surface values CSV: "x,y,z,u".
pub fn write_surface_csv<W: std::io::Write>(
    points: &[Vec3],
    values: &[f64],
    out: &mut W,
) -> Result<()> {
    writeln!(out, "x,y,z,u")?;
    for (p, v) in points.iter().zip(values.iter()) {
        writeln!(out, "{},{},{},{}", p.x, p.y, p.z, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AnalyticSphere;
    use crate::operator::Modulation;

    fn small_setup() -> Setup {
        let surf = Surface::Sphere(AnalyticSphere::unit());
        let config = PipelineConfig {
            dx: 0.1,
            eps_factor: 2.5,
            n_samples: 8_000,
            seed: 1,
            patch: PatchConfig {
                k: 80,
                seed: 2,
                ..Default::default()
            },
        };
        setup_problem(surf, &config).unwrap()
    }

    #[test]
    fn constant_initial_condition_stays_constant() {
        let setup = small_setup();
        let params = OperatorParams::new(16, 2, 3, Modulation::Additive);
        let dx = setup.band.grid.spacing;
        let config = SolveConfig {
            t_final: Some(100.0 * dx * dx / 8.0),
            ..Default::default()
        };
        let points: Vec<Vec3> = setup.samples.iter().take(200).map(|s| s.position).collect();
        let report = solve_heat(&setup, &params, &|_| 5.0, &config, &points).unwrap();
        assert_eq!(report.iterations, 100);
        for v in &report.final_field {
            assert!((v - 5.0).abs() < 1e-8, "drift {}", (v - 5.0).abs());
        }
        for v in &report.surface_values {
            assert!((v - 5.0).abs() < 1e-8);
        }
    }

    #[test]
    fn poisson_zero_forcing_zero_solution() {
        let setup = small_setup();
        let params = OperatorParams::new(16, 2, 4, Modulation::Additive);
        let config = SolveConfig::default();
        let points: Vec<Vec3> = setup.samples.iter().take(100).map(|s| s.position).collect();
        let report = solve_poisson(&setup, &params, &|_| 0.0, &config, &points).unwrap();
        assert!(report.converged);
        for v in &report.surface_values {
            assert!(v.abs() < 1e-9, "gauge-projected solution {v}");
        }
    }

    #[test]
    fn poisson_readout_is_zero_mean() {
        let setup = small_setup();
        let params = OperatorParams::new(16, 2, 5, Modulation::Additive);
        let config = SolveConfig {
            poisson_tol: 1e-3,
            ..Default::default()
        };
        let points: Vec<Vec3> = setup.samples.iter().take(400).map(|s| s.position).collect();
        let f = |p: &Vec3| p.z;
        let report = solve_poisson(&setup, &params, &f, &config, &points).unwrap();
        let mean = report.surface_values.iter().sum::<f64>() / points.len() as f64;
        assert!(mean.abs() < 1e-10, "readout mean {mean}");
    }

    #[test]
    fn gmres_solution_is_the_relaxation_fixed_point() {
        // the direct steady solve lands on the same fixed point the
        // pseudo-time loop relaxes toward: one relaxation step leaves it
        // unchanged (up to constants, which both paths quotient out), and
        // iterating from zero contracts toward it
        let setup = small_setup();
        let params = OperatorParams::new(16, 2, 6, Modulation::Additive);
        let points: Vec<Vec3> = setup.samples.iter().take(300).map(|s| s.position).collect();
        let f = |p: &Vec3| p.x * p.z;
        let config = SolveConfig::default();
        let report = solve_poisson(&setup, &params, &f, &config, &points).unwrap();
        assert!(report.converged);

        let ext = learned_extension(&setup, &params, &config).unwrap();
        let (f0, _) = zero_mean_over_samples(&f, &setup.samples);
        let f_band = ext.init_field(&setup.band, &f0);
        let dt = setup.band.grid.spacing.powi(2) / 8.0;
        let band = &setup.band;
        let step = |u: &[f64]| -> Vec<f64> {
            let extended = ext.extend(u);
            let lap = laplacian_fd(band, &extended);
            let mut next = extended;
            for i in 0..band.len() {
                if band.interior_mask[i] {
                    next[i] += dt * (lap[i] - f_band[i]);
                }
            }
            next
        };
        let zero_mean = |v: &mut Vec<f64>| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            for x in v.iter_mut() {
                *x -= m;
            }
        };

        // fixed-point property of the direct solution
        let u_star = report.final_field.clone();
        let mut moved = step(&u_star);
        let mut u0 = u_star.clone();
        zero_mean(&mut moved);
        zero_mean(&mut u0);
        let scale = u0.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
        let mut drift: f64 = 0.0;
        for (a, b) in moved.iter().zip(u0.iter()) {
            drift = drift.max((a - b).abs());
        }
        assert!(
            drift < 1e-6 * scale,
            "fixed-point drift {drift} vs scale {scale}"
        );

        // relaxation from zero approaches the fixed point
        let distance = |u: &[f64]| -> f64 {
            let mut v = u.to_vec();
            zero_mean(&mut v);
            v.iter()
                .zip(u0.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let mut u = vec![0.0; ext.field_len()];
        for _ in 0..100 {
            u = step(&u);
        }
        let d100 = distance(&u);
        for _ in 0..1100 {
            u = step(&u);
        }
        let d1200 = distance(&u);
        assert!(
            d1200 < 0.5 * d100,
            "relaxation contracts: {d100} -> {d1200}"
        );
    }

    #[test]
    fn poisson_scaling_linearity() {
        // solving with 2f yields 2u (the whole iteration is linear)
        let setup = small_setup();
        let params = OperatorParams::new(16, 2, 7, Modulation::Additive);
        let config = SolveConfig::default();
        let points: Vec<Vec3> = setup.samples.iter().take(200).map(|s| s.position).collect();
        let f1 = |p: &Vec3| p.z * p.x;
        let f2 = |p: &Vec3| 2.0 * p.z * p.x;
        let a = solve_poisson(&setup, &params, &f1, &config, &points).unwrap();
        let b = solve_poisson(&setup, &params, &f2, &config, &points).unwrap();
        let scale = a
            .surface_values
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
            .max(1e-12);
        for (x, y) in a.surface_values.iter().zip(b.surface_values.iter()) {
            assert!(
                (2.0 * x - y).abs() < 1e-6 * scale.max(1.0),
                "2*{x} vs {y}"
            );
        }
    }

    #[test]
    fn heat_requires_a_stopping_rule() {
        let setup = small_setup();
        let params = OperatorParams::new(16, 2, 8, Modulation::Additive);
        let config = SolveConfig::default(); // neither t_final nor steady_tol
        let points = vec![Vec3::new(1.0, 0.0, 0.0)];
        assert!(solve_heat(&setup, &params, &|_| 0.0, &config, &points).is_err());
    }

    #[test]
    fn surface_csv_schema() {
        let points = vec![Vec3::new(1.0, 2.0, 3.0)];
        let values = vec![0.25];
        let mut buf = Vec::new();
        write_surface_csv(&points, &values, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,y,z,u\n1,2,3,0.25\n");
    }
}
