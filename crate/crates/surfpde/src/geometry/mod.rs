//! Surface representations and differential feature estimation.
//!
//! Three representations are supported: triangle meshes, oriented point
//! clouds, and the analytic sphere. Each provides closest-point queries and
//! dense surface sampling with per-sample geometric features (unit normal,
//! principal directions and curvatures where the representation supports
//! them).

mod cloud;
mod mesh;
mod obj;
mod sampling;
mod shapes;
mod sphere;

pub use cloud::{pointcloud_features, CloudSurface, OrientedPointCloud};
pub use mesh::{mesh_features, MeshSurface, TriangleMesh};
pub use obj::{load_mesh, parse_obj, save_obj, NonTriPolicy};
pub use cloud::{load_xyz, parse_xyz, save_xyz};
pub use sampling::sample_surface;
pub use shapes::{geodesic_sphere, make_training_shape, torus_mesh};
pub use sphere::{sphere_features, AnalyticSphere};

use crate::{Error, Mat3, Result, Vec3};

/// A point on the surface with its geometric descriptors.
///
/// `normal` is always unit length. The tangent frame and principal
/// curvatures are optional: point clouds carry neither, mesh boundary
/// vertices lose curvature. When present, `{normal, t1, t2}` is orthonormal
/// and `kappa1 >= kappa2` (`t1` is the maximum-curvature direction).
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    pub position: Vec3,
    pub normal: Vec3,
    pub t1: Option<Vec3>,
    pub t2: Option<Vec3>,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
}

impl SurfaceSample {
    pub fn new(position: Vec3, normal: Vec3) -> Self {
        SurfaceSample {
            position,
            normal,
            t1: None,
            t2: None,
            kappa1: None,
            kappa2: None,
        }
    }

    /// Full frame as a rotation matrix with rows (n, t1, t2); `None` when the
    /// tangent pair is absent.
    pub fn frame(&self) -> Option<Mat3> {
        match (self.t1, self.t2) {
            (Some(t1), Some(t2)) => Some(Mat3::from_rows(&[
                self.normal.transpose(),
                t1.transpose(),
                t2.transpose(),
            ])),
            _ => None,
        }
    }

    /// Fill a missing tangent pair with an arbitrary orthonormal one
    /// (umbilic convention: any pair is valid).
    pub fn with_arbitrary_frame(mut self) -> Self {
        if self.t1.is_none() || self.t2.is_none() {
            let (t1, t2) = orthonormal_tangents(&self.normal);
            self.t1 = Some(t1);
            self.t2 = Some(t2);
        }
        self
    }
}

/// Deterministic orthonormal tangent pair for a unit normal.
pub fn orthonormal_tangents(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Similarity transform (uniform scale + translation) recorded by
/// [`normalize_shape`] so solutions can be mapped back to input coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub scale: f64,
    pub translation: Vec3,
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            scale: 1.0,
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p + self.translation) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale - self.translation
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn of_points<'a>(points: impl Iterator<Item = &'a Vec3>) -> Option<Self> {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        let mut any = false;
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
            any = true;
        }
        any.then_some(Aabb { min, max })
    }

    pub fn diagonal(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn dilated(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::repeat(margin),
            max: self.max + Vec3::repeat(margin),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p.x >= self.min.x
            && p.y >= self.min.y
            && p.z >= self.min.z
            && p.x <= self.max.x
            && p.y <= self.max.y
            && p.z <= self.max.z
    }
}

/// Translate and uniformly scale points in place so the tight bounding box is
/// centered at the origin with longest side 1; returns the applied transform.
pub fn normalize_points(points: &mut [Vec3]) -> Result<Transform> {
    let bbox = Aabb::of_points(points.iter())
        .ok_or_else(|| Error::Geometry("cannot normalize empty geometry".into()))?;
    let diag = bbox.diagonal();
    let longest = diag.x.max(diag.y).max(diag.z);
    if longest <= 0.0 {
        return Err(Error::Geometry(
            "cannot normalize zero-extent geometry".into(),
        ));
    }
    let center = (bbox.min + bbox.max) * 0.5;
    let t = Transform {
        scale: 1.0 / longest,
        translation: -center,
    };
    for p in points.iter_mut() {
        *p = t.apply(p);
    }
    Ok(t)
}

/// A query-ready surface: mesh, oriented point cloud, or analytic sphere.
pub enum Surface {
    Mesh(Box<MeshSurface>),
    Cloud(Box<CloudSurface>),
    Sphere(AnalyticSphere),
}

impl Surface {
    /// Closest surface point to `x` and the surface normal there.
    pub fn closest_point(&self, x: &Vec3) -> Result<(Vec3, Vec3)> {
        match self {
            Surface::Mesh(m) => m.closest_point(x),
            Surface::Cloud(c) => c.closest_point(x),
            Surface::Sphere(s) => s.closest_point(x),
        }
    }

    pub fn bbox(&self) -> Aabb {
        match self {
            Surface::Mesh(m) => m.bbox(),
            Surface::Cloud(c) => c.bbox(),
            Surface::Sphere(s) => s.bbox(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Surface::Mesh(_) => "mesh",
            Surface::Cloud(_) => "cloud",
            Surface::Sphere(_) => "sphere",
        }
    }
}

/// Center of mass proxy used to orient features; exact only for the sphere.
pub(crate) fn reference_center(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::zeros();
    }
    points.iter().sum::<Vec3>() / points.len() as f64
}
