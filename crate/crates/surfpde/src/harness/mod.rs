//! Metrics, benchmark mesh generation and the experiment suites.

mod meshgen;
mod metrics;
mod suites;

pub use meshgen::{
    convex_hull, cut_mesh, farthest_point_subset, fibonacci_sphere, sphere_mesh, torus_mesh,
    SphereSampling,
};
pub use metrics::{metrics, metrics_with_range, MetricReport};
pub use suites::{
    boundary_suite, remesh_suite, remesh_summary, runtime_scaling, sphere_suite, write_suite_csv,
    BenchmarkCase, BoundaryRow, PdeKind, RemeshRow, ResolutionTag, RuntimeRow, SolverKind,
    SuiteContext, SuiteRow, HEAT_T_FINAL,
};

use serde::Deserialize;

/// Benchmark configuration file (TOML): weight path, grids, seeds.
#[derive(Debug, Clone, Deserialize)]
pub struct BenchConfigFile {
    /// Path to the trained weight file.
    pub weights: String,
    #[serde(default = "default_dx")]
    pub dx: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sphere: SphereBenchSection,
    #[serde(default)]
    pub remesh: RemeshBenchSection,
    #[serde(default)]
    pub boundary: BoundaryBenchSection,
    #[serde(default)]
    pub runtime: RuntimeBenchSection,
}

fn default_dx() -> f64 {
    0.03
}
fn default_k() -> usize {
    400
}
fn default_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, Deserialize)]
pub struct SphereBenchSection {
    /// Subset of "coarse", "medium", "fine", "very-fine".
    #[serde(default = "all_resolutions")]
    pub resolutions: Vec<String>,
    #[serde(default = "all_solvers")]
    pub solvers: Vec<String>,
    #[serde(default = "all_pdes")]
    pub pdes: Vec<String>,
}

fn all_resolutions() -> Vec<String> {
    ["coarse", "medium", "fine", "very-fine"]
        .map(String::from)
        .to_vec()
}
fn all_solvers() -> Vec<String> {
    ["fem", "cpm", "ours"].map(String::from).to_vec()
}
fn all_pdes() -> Vec<String> {
    ["heat", "poisson"].map(String::from).to_vec()
}

impl Default for SphereBenchSection {
    fn default() -> Self {
        SphereBenchSection {
            resolutions: all_resolutions(),
            solvers: all_solvers(),
            pdes: all_pdes(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct RemeshBenchSection {
    #[serde(default = "default_remesh_vertices")]
    pub n_vertices: usize,
    #[serde(default = "default_remesh_seeds")]
    pub seeds: Vec<u64>,
}

fn default_remesh_vertices() -> usize {
    1500
}
fn default_remesh_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

impl Default for RemeshBenchSection {
    fn default() -> Self {
        RemeshBenchSection {
            n_vertices: default_remesh_vertices(),
            seeds: default_remesh_seeds(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct BoundaryBenchSection {
    #[serde(default = "default_boundary_freq")]
    pub mesh_frequency: u32,
}

fn default_boundary_freq() -> u32 {
    32
}

impl Default for BoundaryBenchSection {
    fn default() -> Self {
        BoundaryBenchSection {
            mesh_frequency: default_boundary_freq(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct RuntimeBenchSection {
    #[serde(default = "default_band_sizes")]
    pub band_sizes: Vec<usize>,
    #[serde(default = "default_mesh_freqs")]
    pub mesh_frequencies: Vec<u32>,
}

fn default_band_sizes() -> Vec<usize> {
    vec![10_000, 20_000, 30_000, 40_000, 50_000]
}
fn default_mesh_freqs() -> Vec<u32> {
    vec![10, 32, 100]
}

impl Default for RuntimeBenchSection {
    fn default() -> Self {
        RuntimeBenchSection {
            band_sizes: default_band_sizes(),
            mesh_frequencies: default_mesh_freqs(),
        }
    }
}

impl BenchConfigFile {
    pub fn parse(text: &str) -> crate::Result<Self> {
        toml::from_str(text).map_err(|e| crate::Error::Config(format!("bench config: {e}")))
    }

    pub fn sphere_cases(&self) -> crate::Result<Vec<BenchmarkCase>> {
        let mut cases = Vec::new();
        for r in &self.sphere.resolutions {
            let resolution = match r.as_str() {
                "coarse" => ResolutionTag::Coarse,
                "medium" => ResolutionTag::Medium,
                "fine" => ResolutionTag::Fine,
                "very-fine" => ResolutionTag::VeryFine,
                other => {
                    return Err(crate::Error::Config(format!("unknown resolution {other:?}")))
                }
            };
            for s in &self.sphere.solvers {
                let solver = match s.as_str() {
                    "fem" => SolverKind::Fem,
                    "cpm" => SolverKind::Cpm,
                    "ours" => SolverKind::Learned,
                    other => {
                        return Err(crate::Error::Config(format!("unknown solver {other:?}")))
                    }
                };
                for p in &self.sphere.pdes {
                    let pde = match p.as_str() {
                        "heat" => PdeKind::Heat,
                        "poisson" => PdeKind::Poisson,
                        other => {
                            return Err(crate::Error::Config(format!("unknown pde {other:?}")))
                        }
                    };
                    cases.push(BenchmarkCase {
                        resolution,
                        pde,
                        solver,
                        seed: self.seed,
                    });
                }
            }
        }
        Ok(cases)
    }
}
