//! Dense surface sampling, approximately uniform by area.

use super::{sphere_features, MeshSurface, Surface, SurfaceSample};
use crate::{Error, Result, Vec3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Draw `n` samples with features filled. Deterministic for a fixed seed.
///
/// Meshes use area-weighted face selection with uniform barycentric points;
/// clouds return a random subset (or everything when `n` matches); the
/// sphere draws exact uniform directions from normalized Gaussians.
pub fn sample_surface(surface: &Surface, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    if n == 0 {
        return Err(Error::Config("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match surface {
        Surface::Mesh(m) => Ok(sample_mesh(m, n, &mut rng)),
        Surface::Sphere(s) => {
            let dirs: Vec<Vec3> = (0..n)
                .map(|_| {
                    let v = Vec3::new(
                        standard_normal(&mut rng),
                        standard_normal(&mut rng),
                        standard_normal(&mut rng),
                    );
                    s.center + v.normalize() * s.radius
                })
                .collect();
            Ok(sphere_features(s, &dirs))
        }
        Surface::Cloud(c) => {
            if n > c.samples.len() {
                return Err(Error::Config(format!(
                    "requested {n} samples from a cloud of {} (no resampling)",
                    c.samples.len()
                )));
            }
            if n == c.samples.len() {
                return Ok(c.samples.clone());
            }
            let mut idx: Vec<usize> = (0..c.samples.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(n);
            idx.sort_unstable();
            Ok(idx.into_iter().map(|i| c.samples[i]).collect())
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::StandardNormal;
    rng.sample(StandardNormal)
}

fn sample_mesh(mesh: &MeshSurface, n: usize, rng: &mut ChaCha8Rng) -> Vec<SurfaceSample> {
    // cumulative area table + binary search per draw
    let mut cumulative = Vec::with_capacity(mesh.face_areas().len());
    let mut total = 0.0;
    for &a in mesh.face_areas() {
        total += a;
        cumulative.push(total);
    }
    let locations: Vec<(usize, [f64; 3])> = (0..n)
        .map(|_| {
            let t = rng.random::<f64>() * total;
            let face = cumulative.partition_point(|&c| c < t).min(cumulative.len() - 1);
            // uniform barycentric via the square-root trick
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            let s = r1.sqrt();
            let bary = [1.0 - s, s * (1.0 - r2), s * r2];
            (face, bary)
        })
        .collect();
    super::mesh_features(mesh, &locations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AnalyticSphere, TriangleMesh};

    #[test]
    fn sphere_samples_on_surface_with_radial_normals() {
        let surf = Surface::Sphere(AnalyticSphere::unit());
        let samples = sample_surface(&surf, 10_000, 3).unwrap();
        for s in &samples {
            assert!((s.position.norm() - 1.0).abs() < 1e-12);
            assert!((s.normal - s.position).norm() < 1e-12);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let surf = Surface::Sphere(AnalyticSphere::unit());
        let a = sample_surface(&surf, 100, 7).unwrap();
        let b = sample_surface(&surf, 100, 7).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.position, y.position);
        }
        let c = sample_surface(&surf, 100, 8).unwrap();
        assert!(a.iter().zip(c.iter()).any(|(x, y)| x.position != y.position));
    }

    #[test]
    fn planar_mesh_samples_share_plane_normal() {
        let verts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let faces = vec![[0u32, 1, 2], [0, 2, 3]];
        let mesh = MeshSurface::new(TriangleMesh::new(verts, faces).unwrap()).unwrap();
        let surf = Surface::Mesh(Box::new(mesh));
        for s in sample_surface(&surf, 10_000, 5).unwrap() {
            assert!((s.normal - Vec3::z()).norm() < 1e-12);
            assert!(s.position.z.abs() < 1e-12);
        }
    }

    #[test]
    fn face_selection_proportional_to_area() {
        // two triangles with area ratio 3:1
        let verts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, -2.0, 0.0),
        ];
        let faces = vec![[0u32, 1, 2], [0, 3, 4]]; // areas 3 and 1
        let mesh = MeshSurface::new(TriangleMesh::new(verts, faces).unwrap()).unwrap();
        let surf = Surface::Mesh(Box::new(mesh));
        let samples = sample_surface(&surf, 100_000, 13).unwrap();
        let big = samples
            .iter()
            .filter(|s| s.position.x > 0.0 || s.position.y > 0.0)
            .count();
        let ratio = big as f64 / (samples.len() - big) as f64;
        assert!((ratio - 3.0).abs() < 0.06 * 3.0, "ratio {ratio}");
    }

    #[test]
    fn cloud_subset_and_errors() {
        use crate::geometry::{CloudSurface, OrientedPointCloud};
        let pts: Vec<Vec3> = (0..100)
            .map(|i| {
                let t = i as f64 / 100.0 * std::f64::consts::TAU;
                Vec3::new(t.cos(), t.sin(), (3.0 * t).sin() * 0.1)
            })
            .collect();
        let normals: Vec<Vec3> = pts.iter().map(|p| Vec3::new(p.x, p.y, 0.0).normalize()).collect();
        let cloud = OrientedPointCloud::new(pts, normals).unwrap();
        let surf = Surface::Cloud(Box::new(CloudSurface::new(&cloud, 8).unwrap()));
        let sub = sample_surface(&surf, 50, 1).unwrap();
        assert_eq!(sub.len(), 50);
        assert!(sample_surface(&surf, 500, 1).is_err());
    }
}
