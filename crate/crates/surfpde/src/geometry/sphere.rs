//! The analytic sphere: exact closest points, exact features.

use super::{orthonormal_tangents, Aabb, SurfaceSample};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy)]
pub struct AnalyticSphere {
    pub center: Vec3,
    pub radius: f64,
}

impl AnalyticSphere {
    pub fn new(center: Vec3, radius: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::Geometry("sphere radius must be positive".into()));
        }
        Ok(AnalyticSphere { center, radius })
    }

    pub fn unit() -> Self {
        AnalyticSphere {
            center: Vec3::zeros(),
            radius: 1.0,
        }
    }

    pub fn closest_point(&self, x: &Vec3) -> Result<(Vec3, Vec3)> {
        let d = x - self.center;
        let len = d.norm();
        if len < 1e-12 * self.radius.max(1.0) {
            return Err(Error::AmbiguousClosestPoint(x.x, x.y, x.z));
        }
        let normal = d / len;
        Ok((self.center + normal * self.radius, normal))
    }

    pub fn bbox(&self) -> Aabb {
        Aabb {
            min: self.center - Vec3::repeat(self.radius),
            max: self.center + Vec3::repeat(self.radius),
        }
    }
}

/// Exact features for points on the sphere: radial normal, umbilic curvature
/// 1/R, arbitrary orthonormal tangent pair.
pub fn sphere_features(sphere: &AnalyticSphere, positions: &[Vec3]) -> Vec<SurfaceSample> {
    positions
        .iter()
        .map(|p| {
            let normal = (p - sphere.center) / sphere.radius;
            let (t1, t2) = orthonormal_tangents(&normal);
            SurfaceSample {
                position: *p,
                normal,
                t1: Some(t1),
                t2: Some(t2),
                kappa1: Some(1.0 / sphere.radius),
                kappa2: Some(1.0 / sphere.radius),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn radial_projection() {
        let s = AnalyticSphere::unit();
        let (cp, n) = s.closest_point(&Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert!((cp - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((n - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn center_is_ambiguous() {
        let s = AnalyticSphere::unit();
        assert!(matches!(
            s.closest_point(&Vec3::zeros()),
            Err(Error::AmbiguousClosestPoint(..))
        ));
    }

    #[test]
    fn features_exact() {
        let s = AnalyticSphere::new(Vec3::zeros(), 2.0).unwrap();
        let samples = sphere_features(&s, &[Vec3::new(2.0, 0.0, 0.0)]);
        assert_eq!(samples[0].kappa1, Some(0.5));
        assert_eq!(samples[0].kappa2, Some(0.5));
        assert!((samples[0].normal - Vec3::x()).norm() < 1e-15);
    }

    #[test]
    fn frames_orthonormal_at_many_points() {
        let s = AnalyticSphere::unit();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..10_000)
            .map(|_| {
                Vec3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                )
                .normalize()
            })
            .collect();
        for s in sphere_features(&s, &pts) {
            let n = s.normal;
            let t1 = s.t1.unwrap();
            let t2 = s.t2.unwrap();
            assert!((n.norm() - 1.0).abs() < 1e-10);
            assert!(n.dot(&t1).abs() < 1e-10);
            assert!(n.dot(&t2).abs() < 1e-10);
            assert!(t1.dot(&t2).abs() < 1e-10);
        }
    }
}
