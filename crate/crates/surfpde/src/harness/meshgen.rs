//! Benchmark mesh generators: sphere triangulations from four sampling
//! patterns (regular, random, jittered, blue-noise), plane cuts for
//! Dirichlet boundary studies, and the 3D convex hull that triangulates
//! cospherical point sets (points on a sphere hull into a Delaunay
//! triangulation of it).

use crate::geometry::{geodesic_sphere, TriangleMesh};
use crate::{Error, Result, Vec3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SphereSampling {
    Regular,
    Random,
    Jittered,
    BlueNoise,
}

impl SphereSampling {
    pub fn name(&self) -> &'static str {
        match self {
            SphereSampling::Regular => "regular",
            SphereSampling::Random => "random",
            SphereSampling::Jittered => "jittered",
            SphereSampling::BlueNoise => "blue-noise",
        }
    }
}

/// Unit-sphere triangulation with ~n vertices under the given sampling
/// pattern. Regular uses the geodesic icosphere (vertex count rounded to
/// 10 f^2 + 2); the rest triangulate sampled points by convex hull.
pub fn sphere_mesh(sampling: SphereSampling, n: usize, seed: u64) -> Result<TriangleMesh> {
    match sampling {
        SphereSampling::Regular => {
            let freq = (((n.max(12) - 2) as f64 / 10.0).sqrt().round() as u32).max(1);
            Ok(geodesic_sphere(freq, 1.0))
        }
        SphereSampling::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..n).map(|_| gaussian_direction(&mut rng)).collect();
            convex_hull(&pts)
        }
        SphereSampling::Jittered => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sigma = 0.35 * (4.0 * std::f64::consts::PI / n as f64).sqrt();
            let pts: Vec<Vec3> = fibonacci_sphere(n)
                .into_iter()
                .map(|p| {
                    let noise = Vec3::new(
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    ) * sigma;
                    (p + noise).normalize()
                })
                .collect();
            convex_hull(&pts)
        }
        SphereSampling::BlueNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool: Vec<Vec3> = (0..n * 12).map(|_| gaussian_direction(&mut rng)).collect();
            let pts = farthest_point_subset(&pool, n);
            convex_hull(&pts)
        }
    }
}

fn gaussian_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let norm = v.norm();
        if norm > 1e-9 {
            return v / norm;
        }
    }
}

pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Greedy farthest-point selection: repeatedly pick the pool point farthest
/// from the chosen set, yielding a well-spaced (blue-noise) pattern.
pub fn farthest_point_subset(pool: &[Vec3], n: usize) -> Vec<Vec3> {
    assert!(!pool.is_empty() && n >= 1);
    let mut chosen = Vec::with_capacity(n);
    let mut nearest = vec![f64::INFINITY; pool.len()];
    chosen.push(pool[0]);
    for (i, p) in pool.iter().enumerate() {
        nearest[i] = (p - pool[0]).norm_squared();
    }
    while chosen.len() < n.min(pool.len()) {
        let (best, _) = nearest
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let picked = pool[best];
        chosen.push(picked);
        for (i, p) in pool.iter().enumerate() {
            nearest[i] = nearest[i].min((p - picked).norm_squared());
        }
    }
    chosen
}

/// Incremental 3D convex hull; input must span a non-degenerate tetrahedron.
/// Points on a common sphere all become hull vertices.
pub fn convex_hull(points: &[Vec3]) -> Result<TriangleMesh> {
    if points.len() < 4 {
        return Err(Error::Geometry("hull needs at least 4 points".into()));
    }
    let scale = points.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1.0);
    let eps = 1e-10 * scale;

    // initial tetrahedron: two extremes, the farthest from their line, the
    // farthest from their plane
    let (mut i0, mut i1) = (0, 1);
    let mut best = -1.0;
    for a in 0..points.len().min(600) {
        for b in (a + 1)..points.len().min(600) {
            let d = (points[a] - points[b]).norm_squared();
            if d > best {
                best = d;
                i0 = a;
                i1 = b;
            }
        }
    }
    let dir = points[i1] - points[i0];
    let mut i2 = usize::MAX;
    best = eps;
    for (i, p) in points.iter().enumerate() {
        let d = dir.cross(&(p - points[i0])).norm();
        if d > best {
            best = d;
            i2 = i;
        }
    }
    if i2 == usize::MAX {
        return Err(Error::Geometry("hull input is collinear".into()));
    }
    let n0 = (points[i1] - points[i0]).cross(&(points[i2] - points[i0]));
    let mut i3 = usize::MAX;
    best = eps;
    for (i, p) in points.iter().enumerate() {
        let d = n0.dot(&(p - points[i0])).abs();
        if d > best {
            best = d;
            i3 = i;
        }
    }
    if i3 == usize::MAX {
        return Err(Error::Geometry("hull input is coplanar".into()));
    }

    let interior = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    let orient = |a: usize, b: usize, c: usize| -> [usize; 3] {
        let n = (points[b] - points[a]).cross(&(points[c] - points[a]));
        if n.dot(&(points[a] - interior)) >= 0.0 {
            [a, b, c]
        } else {
            [a, c, b]
        }
    };
    let mut faces: Vec<[usize; 3]> = vec![
        orient(i0, i1, i2),
        orient(i0, i1, i3),
        orient(i0, i2, i3),
        orient(i1, i2, i3),
    ];

    for (pi, p) in points.iter().enumerate() {
        if pi == i0 || pi == i1 || pi == i2 || pi == i3 {
            continue;
        }
        // faces the point sees from outside
        let mut visible = Vec::new();
        for (fi, f) in faces.iter().enumerate() {
            let n = (points[f[1]] - points[f[0]]).cross(&(points[f[2]] - points[f[0]]));
            if n.dot(&(p - points[f[0]])) > eps {
                visible.push(fi);
            }
        }
        if visible.is_empty() {
            continue;
        }
        // horizon = edges of visible faces seen exactly once
        let mut edge_count: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for &fi in &visible {
            let f = faces[fi];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                edge_count
                    .entry(key)
                    .and_modify(|c| c.0 += 1)
                    .or_insert((1, if a < b { 0 } else { 1 }));
            }
        }
        let visible_set: std::collections::HashSet<usize> = visible.iter().copied().collect();
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        for &fi in &visible {
            let f = faces[fi];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if edge_count[&key].0 == 1 {
                    // keep the winding of the visible face so new faces wind
                    // consistently outward
                    horizon.push((a, b));
                }
            }
        }
        let _ = visible_set;
        let mut keep: Vec<[usize; 3]> = faces
            .iter()
            .enumerate()
            .filter(|(fi, _)| !visible.contains(fi))
            .map(|(_, f)| *f)
            .collect();
        for (a, b) in horizon {
            keep.push([a, b, pi]);
        }
        faces = keep;
    }

    // compact vertices used by the hull
    let mut remap: HashMap<usize, u32> = HashMap::new();
    let mut verts = Vec::new();
    let mut out_faces = Vec::with_capacity(faces.len());
    for f in &faces {
        let mut tri = [0u32; 3];
        for (slot, &v) in f.iter().enumerate() {
            let id = *remap.entry(v).or_insert_with(|| {
                verts.push(points[v]);
                (verts.len() - 1) as u32
            });
            tri[slot] = id;
        }
        out_faces.push(tri);
    }
    TriangleMesh::new(verts, out_faces)
}

/// Cut a closed mesh by an axis-aligned plane, keeping one side. Crossing
/// triangles are clipped, with intersection vertices welded across shared
/// edges. Returns the open mesh and the indices of its boundary-curve
/// vertices (those on the cut plane).
pub fn cut_mesh(
    mesh: &TriangleMesh,
    axis: usize,
    value: f64,
    keep_positive: bool,
) -> Result<(TriangleMesh, Vec<u32>)> {
    let signed = |p: &Vec3| {
        let s = p[axis] - value;
        if keep_positive {
            s
        } else {
            -s
        }
    };
    let mut verts: Vec<Vec3> = mesh.vertices.clone();
    let mut on_edge: HashMap<(u32, u32), u32> = HashMap::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let tol = 1e-12;

    let mut cut_point = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
        let key = (a.min(b), a.max(b));
        *on_edge.entry(key).or_insert_with(|| {
            let (pa, pb) = (mesh.vertices[key.0 as usize], mesh.vertices[key.1 as usize]);
            let (da, db) = (signed(&pa), signed(&pb));
            let t = da / (da - db);
            let mut p = pa + (pb - pa) * t;
            p[axis] = value; // snap exactly onto the plane
            verts.push(p);
            (verts.len() - 1) as u32
        })
    };

    for f in &mesh.faces {
        let d = [0, 1, 2].map(|i| signed(&mesh.vertices[f[i] as usize]));
        let inside = [d[0] >= -tol, d[1] >= -tol, d[2] >= -tol];
        match inside.iter().filter(|&&b| b).count() {
            3 => faces.push(*f),
            0 => {}
            2 => {
                // quad region: two kept vertices + two cut points
                let out = (0..3).find(|&i| !inside[i]).unwrap();
                let (o, a, b) = (f[out], f[(out + 1) % 3], f[(out + 2) % 3]);
                let ca = cut_point(o, a, &mut verts);
                let cb = cut_point(b, o, &mut verts);
                faces.push([ca, a, b]);
                faces.push([ca, b, cb]);
            }
            1 => {
                let keep = (0..3).find(|&i| inside[i]).unwrap();
                let (kv, a, b) = (f[keep], f[(keep + 1) % 3], f[(keep + 2) % 3]);
                let ca = cut_point(kv, a, &mut verts);
                let cb = cut_point(b, kv, &mut verts);
                faces.push([kv, ca, cb]);
            }
            _ => unreachable!(),
        }
    }

    if faces.is_empty() {
        return Err(Error::Geometry("plane cut removed the entire mesh".into()));
    }
    // compact unused vertices
    let mut remap: HashMap<u32, u32> = HashMap::new();
    let mut out_verts = Vec::new();
    let mut out_faces = Vec::with_capacity(faces.len());
    for f in &faces {
        let mut tri = [0u32; 3];
        for (slot, &v) in f.iter().enumerate() {
            let id = *remap.entry(v).or_insert_with(|| {
                out_verts.push(verts[v as usize]);
                (out_verts.len() - 1) as u32
            });
            tri[slot] = id;
        }
        out_faces.push(tri);
    }
    let boundary: Vec<u32> = out_verts
        .iter()
        .enumerate()
        .filter(|(_, p)| (p[axis] - value).abs() < 1e-9)
        .map(|(i, _)| i as u32)
        .collect();
    let out = TriangleMesh::new(out_verts, out_faces)?;
    Ok((out, boundary))
}

/// Torus re-export for convenience in benchmark code.
pub use crate::geometry::torus_mesh;
