//! Triangle meshes: exact closest-point queries and per-vertex differential
//! features (area-weighted normals, principal curvatures from the cotangent
//! mean-curvature normal and angle defect, principal directions from a local
//! quadric fit).

use super::{orthonormal_tangents, Aabb, SurfaceSample};
use crate::kdtree::KdTree;
use crate::{Error, Result, Vec3};
use nalgebra::Matrix2;

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::Geometry(format!(
                    "face {fi} references vertex out of range"
                )));
            }
        }
        Ok(TriangleMesh { vertices, faces })
    }

    pub fn face_points(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.face_points(f);
        (b - a).cross(&(c - a)).norm() * 0.5
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_points(f);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::z()
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bbox(&self) -> Option<Aabb> {
        Aabb::of_points(self.vertices.iter())
    }

    /// Remove zero-area faces; returns how many were dropped.
    pub fn drop_degenerate_faces(&mut self, area_eps: f64) -> usize {
        let before = self.faces.len();
        let verts = std::mem::take(&mut self.vertices);
        self.faces.retain(|&[a, b, c]| {
            let (pa, pb, pc) = (
                verts[a as usize],
                verts[b as usize],
                verts[c as usize],
            );
            a != b && b != c && a != c && (pb - pa).cross(&(pc - pa)).norm() * 0.5 > area_eps
        });
        self.vertices = verts;
        before - self.faces.len()
    }
}

/// Closest point on triangle (a, b, c) to `p`, with barycentric coordinates.
/// Standard region classification over the triangle's Voronoi features.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Per-vertex curvature record.
#[derive(Debug, Clone, Copy)]
struct VertexCurvature {
    kappa1: f64,
    kappa2: f64,
    t1: Vec3,
    t2: Vec3,
}

/// A mesh prepared for closest-point queries and feature evaluation.
pub struct MeshSurface {
    pub mesh: TriangleMesh,
    face_areas: Vec<f64>,
    centroid_tree: KdTree,
    max_face_radius: f64,
    vertex_normals: Vec<Vec3>,
    vertex_curvature: Vec<Option<VertexCurvature>>,
    pub degenerate_dropped: usize,
}

impl MeshSurface {
    pub fn new(mut mesh: TriangleMesh) -> Result<Self> {
        let dropped = mesh.drop_degenerate_faces(1e-14);
        if mesh.faces.is_empty() {
            return Err(Error::Geometry("mesh has no non-degenerate faces".into()));
        }
        let face_areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
        let centroids: Vec<Vec3> = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.face_points(f);
                (a + b + c) / 3.0
            })
            .collect();
        let max_face_radius = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.face_points(f);
                let cen = (a + b + c) / 3.0;
                (a - cen)
                    .norm()
                    .max((b - cen).norm())
                    .max((c - cen).norm())
            })
            .fold(0.0, f64::max);
        let centroid_tree = KdTree::build(&centroids);

        let vertex_normals = vertex_normals(&mesh, &centroid_tree);
        let vertex_curvature = vertex_curvatures(&mesh, &face_areas, &vertex_normals);

        Ok(MeshSurface {
            mesh,
            face_areas,
            centroid_tree,
            max_face_radius,
            vertex_normals,
            vertex_curvature,
            degenerate_dropped: dropped,
        })
    }

    pub fn bbox(&self) -> Aabb {
        self.mesh.bbox().expect("non-empty mesh")
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    pub fn vertex_normal(&self, v: usize) -> Vec3 {
        self.vertex_normals[v]
    }

    /// Exact closest point over the candidate set from the centroid KD-tree.
    /// Ties between faces are broken by the lowest face index.
    pub fn closest_point(&self, x: &Vec3) -> Result<(Vec3, Vec3)> {
        let (f, bary, cp) = self.closest_point_face(x)?;
        Ok((cp, self.interpolate_normal(f, bary)))
    }

    /// Closest point together with the face index and barycentric coordinates.
    pub fn closest_point_face(&self, x: &Vec3) -> Result<(usize, [f64; 3], Vec3)> {
        // seed with a few nearby centroids, then widen to the radius that
        // could still contain a closer triangle
        let seeds = self.centroid_tree.k_nearest(x, 8);
        let mut best: Option<(usize, [f64; 3], Vec3, f64)> = None;
        let consider = |f: usize, best: &mut Option<(usize, [f64; 3], Vec3, f64)>| {
            let [a, b, c] = self.mesh.face_points(f);
            let (cp, bary) = closest_point_on_triangle(x, &a, &b, &c);
            let d2 = (cp - x).norm_squared();
            let better = match best {
                None => true,
                Some((bf, _, _, bd2)) => d2 < *bd2 || (d2 == *bd2 && f < *bf),
            };
            if better {
                *best = Some((f, bary, cp, d2));
            }
        };
        for (f, _) in seeds {
            consider(f, &mut best);
        }
        let (_, _, _, d2) = best.expect("non-empty mesh");
        let reach = d2.sqrt() + self.max_face_radius;
        let mut candidates = self.centroid_tree.within_radius(x, reach);
        candidates.sort_unstable();
        for f in candidates {
            consider(f, &mut best);
        }
        let (f, bary, cp, _) = best.unwrap();
        Ok((f, bary, cp))
    }

    pub fn interpolate_normal(&self, face: usize, bary: [f64; 3]) -> Vec3 {
        let [a, b, c] = self.mesh.faces[face];
        let n = self.vertex_normals[a as usize] * bary[0]
            + self.vertex_normals[b as usize] * bary[1]
            + self.vertex_normals[c as usize] * bary[2];
        let len = n.norm();
        if len > 1e-12 {
            n / len
        } else {
            self.mesh.face_normal(face)
        }
    }

    /// Full sample (normal + frame + curvatures) at a (face, barycentric)
    /// location. Curvature is absent when any corner vertex lacks it.
    pub fn sample_at(&self, face: usize, bary: [f64; 3]) -> SurfaceSample {
        let [ia, ib, ic] = self.mesh.faces[face];
        let [pa, pb, pc] = self.mesh.face_points(face);
        let position = pa * bary[0] + pb * bary[1] + pc * bary[2];
        let normal = self.interpolate_normal(face, bary);
        let mut sample = SurfaceSample::new(position, normal);

        let curv = [ia, ib, ic].map(|v| self.vertex_curvature[v as usize]);
        if let [Some(ca), Some(cb), Some(cc)] = curv {
            // interpolate the world-space shape tensor, then re-diagonalize in
            // the tangent plane of the interpolated normal
            let tensor = |c: &VertexCurvature| {
                c.t1 * c.t1.transpose() * c.kappa1 + c.t2 * c.t2.transpose() * c.kappa2
            };
            let s = tensor(&ca) * bary[0] + tensor(&cb) * bary[1] + tensor(&cc) * bary[2];
            let (e1, e2) = orthonormal_tangents(&normal);
            let m = Matrix2::new(
                (e1.transpose() * s * e1)[0],
                (e1.transpose() * s * e2)[0],
                (e2.transpose() * s * e1)[0],
                (e2.transpose() * s * e2)[0],
            );
            let sym = (m + m.transpose()) * 0.5;
            let (k1, k2, d1) = eig2(&sym);
            let t1 = (e1 * d1.x + e2 * d1.y).normalize();
            let t1 = (t1 - normal * t1.dot(&normal)).normalize();
            let t2 = normal.cross(&t1);
            sample.kappa1 = Some(k1);
            sample.kappa2 = Some(k2);
            sample.t1 = Some(t1);
            sample.t2 = Some(t2);
        }
        sample
    }
}

/// Fill normals and frames for samples given by (face, barycentric) pairs.
pub fn mesh_features(surface: &MeshSurface, locations: &[(usize, [f64; 3])]) -> Vec<SurfaceSample> {
    locations
        .iter()
        .map(|&(f, bary)| surface.sample_at(f, bary))
        .collect()
}

fn vertex_normals(mesh: &TriangleMesh, centroid_tree: &KdTree) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); mesh.vertices.len()];
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.face_points(f);
        // cross product length is twice the face area: summing the raw cross
        // products is the area-weighted average
        let cross = (b - a).cross(&(c - a));
        for &v in &mesh.faces[f] {
            acc[v as usize] += cross;
        }
    }
    acc.iter()
        .enumerate()
        .map(|(v, n)| {
            let len = n.norm();
            if len > 1e-14 {
                n / len
            } else {
                // isolated vertex: borrow the nearest face's normal
                match centroid_tree.nearest(&mesh.vertices[v]) {
                    Some((f, _)) => mesh.face_normal(f),
                    None => Vec3::z(),
                }
            }
        })
        .collect()
}

fn eig2(m: &Matrix2<f64>) -> (f64, f64, nalgebra::Vector2<f64>) {
    // symmetric 2x2 eigen-decomposition; returns (max, min, dir of max)
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let tr = a + c;
    let det = a * c - b * b;
    let disc = (tr * tr * 0.25 - det).max(0.0).sqrt();
    let l1 = tr * 0.5 + disc;
    let l2 = tr * 0.5 - disc;
    let dir = if b.abs() > 1e-14 {
        nalgebra::Vector2::new(l1 - c, b).normalize()
    } else if a >= c {
        nalgebra::Vector2::new(1.0, 0.0)
    } else {
        nalgebra::Vector2::new(0.0, 1.0)
    };
    (l1, l2, dir)
}

/// Per-vertex principal curvatures and directions.
///
/// Curvature magnitudes follow the discrete-operator route: mean curvature
/// from the cotangent mean-curvature normal, Gaussian curvature from the
/// angle defect, kappa = H +- sqrt(H^2 - K). Directions come from a quadric
/// fit of neighbor heights over the vertex tangent plane. Boundary and
/// isolated vertices get no curvature.
fn vertex_curvatures(
    mesh: &TriangleMesh,
    face_areas: &[f64],
    normals: &[Vec3],
) -> Vec<Option<VertexCurvature>> {
    let nv = mesh.vertices.len();
    let mut area = vec![0.0f64; nv];
    let mut angle_sum = vec![0.0f64; nv];
    let mut hvec = vec![Vec3::zeros(); nv];
    let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); nv];
    let mut edge_count: std::collections::HashMap<(u32, u32), u32> =
        std::collections::HashMap::new();

    for (f, &[a, b, c]) in mesh.faces.iter().enumerate() {
        let pts = mesh.face_points(f);
        let idx = [a, b, c];
        let mut cots = [0.0f64; 3];
        let mut angles = [0.0f64; 3];
        for corner in 0..3 {
            let p = pts[corner];
            let u = pts[(corner + 1) % 3] - p;
            let v = pts[(corner + 2) % 3] - p;
            let denom = u.norm() * v.norm();
            let cosang = if denom > 0.0 {
                (u.dot(&v) / denom).clamp(-1.0, 1.0)
            } else {
                1.0
            };
            angles[corner] = cosang.acos();
            let cross = u.cross(&v).norm();
            cots[corner] = if cross > 1e-14 {
                (u.dot(&v) / cross).clamp(-1e6, 1e6)
            } else {
                1e6
            };
        }
        let obtuse_corner = angles.iter().position(|&a| a > std::f64::consts::FRAC_PI_2);
        for corner in 0..3 {
            let i = idx[corner] as usize;
            angle_sum[i] += angles[corner];

            // mixed area: circumcentric (Voronoi) cell for non-obtuse
            // triangles, area/2 at the obtuse corner and area/4 elsewhere
            area[i] += match obtuse_corner {
                None => {
                    let lq = (pts[(corner + 2) % 3] - pts[corner]).norm_squared();
                    let lr = (pts[(corner + 1) % 3] - pts[corner]).norm_squared();
                    0.125 * (lq * cots[(corner + 1) % 3] + lr * cots[(corner + 2) % 3])
                }
                Some(o) if o == corner => face_areas[f] * 0.5,
                Some(_) => face_areas[f] * 0.25,
            };

            // cotangent at this corner weights the opposite edge
            let j = idx[(corner + 1) % 3] as usize;
            let k = idx[(corner + 2) % 3] as usize;
            hvec[j] += (mesh.vertices[j] - mesh.vertices[k]) * (0.5 * cots[corner]);
            hvec[k] += (mesh.vertices[k] - mesh.vertices[j]) * (0.5 * cots[corner]);

            let key = if idx[corner] < idx[(corner + 1) % 3] {
                (idx[corner], idx[(corner + 1) % 3])
            } else {
                (idx[(corner + 1) % 3], idx[corner])
            };
            *edge_count.entry(key).or_insert(0) += 1;
            if !neighbors[i].contains(&idx[(corner + 1) % 3]) {
                neighbors[i].push(idx[(corner + 1) % 3]);
            }
            if !neighbors[i].contains(&idx[(corner + 2) % 3]) {
                neighbors[i].push(idx[(corner + 2) % 3]);
            }
        }
    }

    let mut on_boundary = vec![false; nv];
    for (&(a, b), &count) in edge_count.iter() {
        if count == 1 {
            on_boundary[a as usize] = true;
            on_boundary[b as usize] = true;
        }
    }

    (0..nv)
        .map(|i| {
            if on_boundary[i] || area[i] <= 0.0 {
                return None;
            }
            let n = normals[i];
            // discrete Laplace-Beltrami of position is -2H n
            let hv = hvec[i] / (2.0 * area[i]);
            let h = hv.norm() * hv.dot(&n).signum();
            let k_gauss = (2.0 * std::f64::consts::PI - angle_sum[i]) / area[i];
            let disc = (h * h - k_gauss).max(0.0).sqrt();
            let kappa1 = h + disc;
            let kappa2 = h - disc;

            let (t1, _) = if (kappa1 - kappa2).abs() < 1e-4 {
                orthonormal_tangents(&n)
            } else {
                principal_directions(mesh, i, &neighbors, &n)
                    .unwrap_or_else(|| orthonormal_tangents(&n))
            };
            let t1 = (t1 - n * t1.dot(&n)).normalize();
            Some(VertexCurvature {
                kappa1,
                kappa2,
                t1,
                t2: n.cross(&t1),
            })
        })
        .collect()
}

/// Quadric fit of neighbor heights over the tangent plane; returns the
/// (max-curvature, min-curvature) direction pair in world space.
fn principal_directions(
    mesh: &TriangleMesh,
    vertex: usize,
    neighbors: &[Vec<u32>],
    n: &Vec3,
) -> Option<(Vec3, Vec3)> {
    let p = mesh.vertices[vertex];
    let (e1, e2) = orthonormal_tangents(n);

    // widen to the 2-ring when the 1-ring is too small for 5 unknowns
    let mut ring: Vec<u32> = neighbors[vertex].clone();
    if ring.len() < 6 {
        let one_ring = ring.clone();
        for &j in &one_ring {
            for &k in &neighbors[j as usize] {
                if k as usize != vertex && !ring.contains(&k) {
                    ring.push(k);
                }
            }
        }
    }
    if ring.len() < 5 {
        return None;
    }

    // least squares for h = d*u + e*v + 0.5*(a u^2 + 2b uv + c v^2)
    let mut ata = nalgebra::Matrix5::<f64>::zeros();
    let mut atb = nalgebra::Vector5::<f64>::zeros();
    for &j in &ring {
        let d = mesh.vertices[j as usize] - p;
        let u = d.dot(&e1);
        let v = d.dot(&e2);
        let h = d.dot(n);
        let row = nalgebra::Vector5::new(0.5 * u * u, u * v, 0.5 * v * v, u, v);
        ata += row * row.transpose();
        atb += row * h;
    }
    let sol = ata.lu().solve(&atb)?;
    // with heights measured along the outward normal, curvature is the
    // negated Hessian of the height function
    let m = Matrix2::new(-sol[0], -sol[1], -sol[1], -sol[2]);
    let (_, _, dir) = eig2(&m);
    let t1 = (e1 * dir.x + e2 * dir.y).normalize();
    let t2 = n.cross(&t1);
    Some((t1, t2))
}
