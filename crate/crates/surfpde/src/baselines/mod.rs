//! Classical reference solvers: closest-point re-extension on the band,
//! cotangent-Laplacian FEM on meshes, and analytic sphere solutions.

mod cpm;
mod fem;
mod spherical;
mod tricubic;

pub use cpm::{cpm_reextend, CpmExtension};
pub use fem::{
    cg_zero_mean, cotan_laplacian, fem_solve_heat, fem_solve_laplace_dirichlet,
    fem_solve_poisson, FemReport, MassMode, SparseLaplacian,
};
pub use spherical::{real_sh, sphere_analytic, SphereProblem};
pub use tricubic::{lagrange_cubic, InterpStencil};

use crate::solver::{run_heat, run_poisson, SolveConfig, SolveReport, Setup};
use crate::{Result, Vec3};

/// Heat solve with the classical tricubic re-extension in place of the
/// learned operator; band, stepping, readout and report all shared with the
/// learned path.
pub fn cpm_solve_heat(
    setup: &Setup,
    u0: &dyn Fn(&Vec3) -> f64,
    config: &SolveConfig,
    readout_points: &[Vec3],
) -> Result<SolveReport> {
    let ext = CpmExtension::build(&setup.band, &setup.surface, &setup.samples)?;
    run_heat(&ext, &setup.band, u0, config, readout_points)
}

/// Poisson solve with the classical re-extension; forcing projected to zero
/// mean over the surface samples.
pub fn cpm_solve_poisson(
    setup: &Setup,
    f: &dyn Fn(&Vec3) -> f64,
    config: &SolveConfig,
    readout_points: &[Vec3],
) -> Result<SolveReport> {
    let ext = CpmExtension::build(&setup.band, &setup.surface, &setup.samples)?;
    let (f0, _) = crate::solver::zero_mean_over_samples(&f, &setup.samples);
    run_poisson(&ext, &setup.band, &f0, config, readout_points)
}
