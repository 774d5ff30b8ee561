//! Procedural mesh generators: geodesic icospheres, tori, and the bumpy
//! training sphere.

use super::TriangleMesh;
use crate::Vec3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Lattice-point identity inside a subdivided icosahedron face. Edge and
/// corner points are keyed combinatorially so shared vertices weld exactly
/// (bitwise) across faces.
#[derive(Hash, PartialEq, Eq, Clone, Copy)]
enum LatticeKey {
    Corner(u32),
    Edge { a: u32, b: u32, w: u32 },
    Interior { face: u32, i: u32, j: u32 },
}

/// Geodesic sphere: icosahedron with each face split into `freq`^2 triangles,
/// vertices projected to radius `radius`. Vertex count is 10*freq^2 + 2.
pub fn geodesic_sphere(freq: u32, radius: f64) -> TriangleMesh {
    assert!(freq >= 1);
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let base = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let ico_verts: Vec<Vec3> = base
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z))
        .collect();
    let ico_faces: [[u32; 3]; 20] = [
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    let mut verts: Vec<Vec3> = Vec::new();
    let mut lookup: HashMap<LatticeKey, u32> = HashMap::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let n = freq;

    let mut vertex_for = |key: LatticeKey, pos: Vec3, verts: &mut Vec<Vec3>| -> u32 {
        *lookup.entry(key).or_insert_with(|| {
            verts.push(pos * (radius / pos.norm()));
            (verts.len() - 1) as u32
        })
    };

    for (fi, &[a, b, c]) in ico_faces.iter().enumerate() {
        let (pa, pb, pc) = (ico_verts[a as usize], ico_verts[b as usize], ico_verts[c as usize]);
        // lattice point (x, y): barycentric weights (n-x-y, x, y) on (a, b, c)
        let key_and_pos = |x: u32, y: u32| -> (LatticeKey, Vec3) {
            let (wa, wb, wc) = (n - x - y, x, y);
            let edge = |va: u32, vb: u32, w_on_a: u32, p_va: Vec3, p_vb: Vec3| {
                // canonical orientation: weight counted on the lower index
                let (lo, hi, w, plo, phi_) = if va < vb {
                    (va, vb, w_on_a, p_va, p_vb)
                } else {
                    (vb, va, n - w_on_a, p_vb, p_va)
                };
                let pos = (plo * w as f64 + phi_ * (n - w) as f64) / n as f64;
                (LatticeKey::Edge { a: lo, b: hi, w }, pos)
            };
            match (wa > 0, wb > 0, wc > 0) {
                (true, false, false) => (LatticeKey::Corner(a), pa),
                (false, true, false) => (LatticeKey::Corner(b), pb),
                (false, false, true) => (LatticeKey::Corner(c), pc),
                (true, true, false) => edge(a, b, wa, pa, pb),
                (true, false, true) => edge(a, c, wa, pa, pc),
                (false, true, true) => edge(b, c, wb, pb, pc),
                (true, true, true) => {
                    let pos = (pa * wa as f64 + pb * wb as f64 + pc * wc as f64) / n as f64;
                    (LatticeKey::Interior { face: fi as u32, i: x, j: y }, pos)
                }
                _ => unreachable!("weights sum to n >= 1"),
            }
        };
        let mut vid = |x: u32, y: u32, verts: &mut Vec<Vec3>| -> u32 {
            let (key, pos) = key_and_pos(x, y);
            vertex_for(key, pos, verts)
        };

        for x in 0..n {
            for y in 0..(n - x) {
                let v00 = vid(x, y, &mut verts);
                let v10 = vid(x + 1, y, &mut verts);
                let v01 = vid(x, y + 1, &mut verts);
                faces.push([v00, v10, v01]);
                if x + y < n - 1 {
                    let v11 = vid(x + 1, y + 1, &mut verts);
                    faces.push([v10, v11, v01]);
                }
            }
        }
    }

    TriangleMesh { vertices: verts, faces }
}

/// Torus with major radius `big_r`, tube radius `small_r`.
pub fn torus_mesh(big_r: f64, small_r: f64, nu: usize, nv: usize) -> TriangleMesh {
    let mut verts = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * std::f64::consts::PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * std::f64::consts::PI * j as f64 / nv as f64;
            let rho = big_r + small_r * v.cos();
            verts.push(Vec3::new(rho * u.cos(), rho * u.sin(), small_r * v.sin()));
        }
    }
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        let i1 = (i + 1) % nu;
        for j in 0..nv {
            let j1 = (j + 1) % nv;
            let v = |a: usize, b: usize| (a * nv + b) as u32;
            faces.push([v(i, j), v(i1, j), v(i1, j1)]);
            faces.push([v(i, j), v(i1, j1), v(i, j1)]);
        }
    }
    TriangleMesh { vertices: verts, faces }
}

/// Training asset: a subdivided icosphere displaced radially by a sum of
/// randomly placed Gaussian bumps and dimples, giving a wide spread of
/// curvature profiles. Deterministic for a fixed seed.
pub fn make_training_shape(seed: u64, bump_count: usize, bump_height: f64) -> TriangleMesh {
    assert!(bump_count >= 1);
    let mut mesh = geodesic_sphere(40, 1.0);
    if bump_height == 0.0 {
        return mesh;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    struct Bump {
        center: Vec3,
        height: f64,
        sigma: f64,
    }
    let bumps: Vec<Bump> = (0..bump_count)
        .map(|_| {
            let dir = loop {
                let v = Vec3::new(
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                );
                let n = v.norm();
                if n > 1e-3 && n <= 1.0 {
                    break v / n;
                }
            };
            let sign = if rng.random::<f64>() < 0.35 { -1.0 } else { 1.0 };
            let height = sign * bump_height * (0.5 + 0.5 * rng.random::<f64>());
            let sigma = 0.08 + 0.14 * rng.random::<f64>();
            Bump { center: dir, height, sigma }
        })
        .collect();

    for p in mesh.vertices.iter_mut() {
        let dir = p.normalize();
        let mut r = 1.0;
        for b in &bumps {
            let theta = dir.dot(&b.center).clamp(-1.0, 1.0).acos();
            r += b.height * (-theta * theta / (2.0 * b.sigma * b.sigma)).exp();
        }
        *p = dir * r;
    }
    mesh
}
