//! Surface FEM reference: linear elements with the cotangent Laplacian.
//!
//! Heat marches explicitly with the lumped mass matrix; Poisson solves the
//! stiffness system with conjugate gradients in the zero-mean subspace
//! (consistent-mass right-hand side available as an option).

use crate::geometry::TriangleMesh;
use crate::{Error, Result};
use rayon::prelude::*;
use std::collections::HashMap;

/// Cotangent Laplacian L (rows sum to zero; (Lu)_i = sum_j w_ij (u_j - u_i))
/// with the barycentric lumped mass vector.
pub struct SparseLaplacian {
    pub n: usize,
    pub lumped_mass: Vec<f64>,
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
    /// Consistent mass matrix in the same sparsity (diagonal A/6 sums,
    /// off-diagonal A/12 sums).
    mass_val: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassMode {
    #[default]
    Lumped,
    Consistent,
}

const COT_CLAMP: f64 = 1e6;

pub fn cotan_laplacian(mesh: &TriangleMesh) -> Result<SparseLaplacian> {
    let n = mesh.vertices.len();
    if mesh.faces.is_empty() {
        return Err(Error::Geometry("mesh has no faces".into()));
    }
    let mut weights: HashMap<(u32, u32), f64> = HashMap::new();
    let mut mass_off: HashMap<(u32, u32), f64> = HashMap::new();
    let mut lumped = vec![0.0f64; n];
    let mut mass_diag = vec![0.0f64; n];

    for f in 0..mesh.faces.len() {
        let idx = mesh.faces[f];
        let pts = mesh.face_points(f);
        let area = mesh.face_area(f);
        for corner in 0..3 {
            let i = idx[corner];
            let j = idx[(corner + 1) % 3];
            let k = idx[(corner + 2) % 3];
            let u = pts[(corner + 1) % 3] - pts[corner];
            let v = pts[(corner + 2) % 3] - pts[corner];
            let cross = u.cross(&v).norm();
            // zero-area faces are clamped rather than dropped so loaders
            // that keep them degrade gracefully
            let cot = if cross > 1e-14 {
                (u.dot(&v) / cross).clamp(-COT_CLAMP, COT_CLAMP)
            } else {
                COT_CLAMP
            };
            let key = (j.min(k), j.max(k));
            *weights.entry(key).or_insert(0.0) += 0.5 * cot;

            lumped[i as usize] += area / 3.0;
            mass_diag[i as usize] += area / 6.0;
            let mkey = (i.min(j), i.max(j));
            *mass_off.entry(mkey).or_insert(0.0) += area / 12.0;
        }
    }

    // assemble CSR with the diagonal as the negated row sum
    let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (&(a, b), &w) in &weights {
        adjacency[a as usize].push((b, w));
        adjacency[b as usize].push((a, w));
    }
    let mass_lookup = |a: u32, b: u32| -> f64 {
        mass_off
            .get(&(a.min(b), a.max(b)))
            .copied()
            .unwrap_or(0.0)
    };
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col = Vec::new();
    let mut val = Vec::new();
    let mut mass_val = Vec::new();
    row_ptr.push(0usize);
    for i in 0..n {
        let mut row = std::mem::take(&mut adjacency[i]);
        row.sort_by_key(|e| e.0);
        let mut diag = 0.0;
        for &(_, w) in &row {
            diag -= w;
        }
        // diagonal entry first in sorted position
        let mut inserted_diag = false;
        for (j, w) in row {
            if !inserted_diag && j as usize > i {
                col.push(i as u32);
                val.push(diag);
                mass_val.push(mass_diag[i]);
                inserted_diag = true;
            }
            col.push(j);
            val.push(w);
            mass_val.push(mass_lookup(i as u32, j));
        }
        if !inserted_diag {
            col.push(i as u32);
            val.push(diag);
            mass_val.push(mass_diag[i]);
        }
        row_ptr.push(col.len());
    }

    Ok(SparseLaplacian {
        n,
        lumped_mass: lumped,
        row_ptr,
        col,
        val,
        mass_val,
    })
}

impl SparseLaplacian {
    /// (L u)_i = sum_j w_ij (u_j - u_i).
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = 0.0;
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.val[e] * u[self.col[e] as usize];
            }
            *o = acc;
        });
    }

    pub fn apply_mass(&self, u: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = 0.0;
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.mass_val[e] * u[self.col[e] as usize];
            }
            *o = acc;
        });
    }

    /// Triplets (row, col, weight) of L, diagonal included.
    pub fn triplets(&self) -> Vec<(u32, u32, f64)> {
        let mut out = Vec::with_capacity(self.val.len());
        for i in 0..self.n {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.push((i as u32, self.col[e], self.val[e]));
            }
        }
        out
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .map(|e| self.val[e])
            .sum()
    }

    /// Explicit stability bound: dt <= min_i m_i / sum_j |L_ij| keeps the
    /// forward Euler update a convex combination.
    pub fn stable_dt(&self) -> f64 {
        let mut dt = f64::INFINITY;
        for i in 0..self.n {
            let abs_sum: f64 = (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(|e| self.val[e].abs())
                .sum();
            if abs_sum > 0.0 {
                dt = dt.min(self.lumped_mass[i] / abs_sum);
            }
        }
        dt
    }
}

fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let wsum: f64 = weights.iter().sum();
    values
        .iter()
        .zip(weights.iter())
        .map(|(v, w)| v * w)
        .sum::<f64>()
        / wsum
}

/// Conjugate gradients on the positive semidefinite stiffness K = -L with
/// constants deflated; b must be orthogonal to constants (the callers
/// project the forcing). Relative tolerance on |r|_2.
pub fn cg_zero_mean(lap: &SparseLaplacian, b: &[f64], tol: f64, max_iters: usize) -> Result<(Vec<f64>, usize)> {
    let n = lap.n;
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mean = r.iter().sum::<f64>() / n as f64;
    for v in r.iter_mut() {
        *v -= mean;
    }
    let b_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let mut kp = vec![0.0; n];
    for it in 0..max_iters {
        if rs.sqrt() <= tol * b_norm {
            return Ok((x, it));
        }
        lap.apply(&p, &mut kp);
        for v in kp.iter_mut() {
            *v = -*v; // K = -L
        }
        let pkp: f64 = p.iter().zip(kp.iter()).map(|(a, b)| a * b).sum();
        if pkp.abs() < 1e-300 {
            break;
        }
        let alpha = rs / pkp;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * kp[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rs.sqrt() <= tol * b_norm {
        Ok((x, max_iters))
    } else {
        Err(Error::Solver(format!(
            "conjugate gradients stalled at relative residual {}",
            rs.sqrt() / b_norm
        )))
    }
}

pub struct FemReport {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub dt: f64,
}

/// Explicit heat march u <- u + dt M^-1 L u to `t_final`, or to steadiness
/// when `steady_tol` is given; Dirichlet vertices (if any) stay clamped.
pub fn fem_solve_heat(
    lap: &SparseLaplacian,
    u0: &[f64],
    t_final: Option<f64>,
    steady_tol: Option<f64>,
    dirichlet: Option<(&[u32], &[f64])>,
) -> Result<FemReport> {
    let n = lap.n;
    assert_eq!(u0.len(), n);
    let dt = 0.9 * lap.stable_dt();
    let t_final = match (t_final, steady_tol) {
        (Some(t), _) => t,
        (None, Some(_)) => f64::INFINITY,
        (None, None) => {
            return Err(Error::Config("heat needs t_final or steady_tol".into()))
        }
    };
    let max_steps = if t_final.is_finite() {
        (t_final / dt).ceil() as usize
    } else {
        40_000_000
    };
    let dt = if t_final.is_finite() {
        t_final / max_steps as f64
    } else {
        dt
    };
    let mut u = u0.to_vec();
    if let Some((idx, vals)) = dirichlet {
        for (&i, &v) in idx.iter().zip(vals.iter()) {
            u[i as usize] = v;
        }
    }
    let mut lu = vec![0.0; n];
    let mut steps = 0;
    for step in 0..max_steps {
        lap.apply(&u, &mut lu);
        let mut max_rate: f64 = 0.0;
        for i in 0..n {
            let delta = dt * lu[i] / lap.lumped_mass[i];
            u[i] += delta;
            max_rate = max_rate.max((delta / dt).abs());
        }
        if let Some((idx, vals)) = dirichlet {
            for (&i, &v) in idx.iter().zip(vals.iter()) {
                u[i as usize] = v;
            }
        }
        steps = step + 1;
        if let Some(tol) = steady_tol {
            if max_rate < tol {
                break;
            }
        }
        if !u[0].is_finite() {
            return Err(Error::Solver(format!("heat diverged at step {step}")));
        }
    }
    Ok(FemReport {
        values: u,
        iterations: steps,
        dt,
    })
}

/// Poisson Lap_S u = f on a closed mesh: CG solve of K u = -M f in the
/// zero-mean subspace, solution returned with area-weighted zero mean.
pub fn fem_solve_poisson(
    lap: &SparseLaplacian,
    f: &[f64],
    mass: MassMode,
) -> Result<FemReport> {
    let n = lap.n;
    assert_eq!(f.len(), n);
    // project the forcing to zero area-weighted mean (solvability gauge)
    let fbar = weighted_mean(f, &lap.lumped_mass);
    let f0: Vec<f64> = f.iter().map(|v| v - fbar).collect();
    // K u = -M f so that L u = M f
    let mut b = vec![0.0; n];
    match mass {
        MassMode::Lumped => {
            for i in 0..n {
                b[i] = -lap.lumped_mass[i] * f0[i];
            }
        }
        MassMode::Consistent => {
            lap.apply_mass(&f0, &mut b);
            for v in b.iter_mut() {
                *v = -*v;
            }
        }
    }
    let (mut u, iterations) = cg_zero_mean(lap, &b, 1e-10, 10 * n)?;
    let ubar = weighted_mean(&u, &lap.lumped_mass);
    for v in u.iter_mut() {
        *v -= ubar;
    }
    Ok(FemReport {
        values: u,
        iterations,
        dt: 0.0,
    })
}

/// Dirichlet steady state: solve K u = 0 with clamped vertices by relaxing
/// the reduced system with CG on the free vertices.
pub fn fem_solve_laplace_dirichlet(
    lap: &SparseLaplacian,
    dirichlet_idx: &[u32],
    dirichlet_vals: &[f64],
) -> Result<FemReport> {
    let n = lap.n;
    let mut fixed = vec![false; n];
    let mut u = vec![0.0; n];
    for (&i, &v) in dirichlet_idx.iter().zip(dirichlet_vals.iter()) {
        fixed[i as usize] = true;
        u[i as usize] = v;
    }
    if dirichlet_idx.is_empty() {
        return Err(Error::Config("Dirichlet solve needs clamped vertices".into()));
    }
    // K_II u_I = -K_ID u_D via CG restricted to free vertices
    let apply_free = |x: &[f64], out: &mut [f64]| {
        // x lives on free slots only; scatter, apply, gather
        let mut full = vec![0.0; n];
        let mut fi = 0;
        for i in 0..n {
            if !fixed[i] {
                full[i] = x[fi];
                fi += 1;
            }
        }
        let mut lfull = vec![0.0; n];
        lap.apply(&full, &mut lfull);
        let mut oi = 0;
        for i in 0..n {
            if !fixed[i] {
                out[oi] = -lfull[i]; // K = -L
                oi += 1;
            }
        }
    };
    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    let nf = free.len();
    // rhs = -K_ID u_D = L_ID u_D evaluated by applying L to the clamp vector
    let mut lu_d = vec![0.0; n];
    lap.apply(&u, &mut lu_d);
    let b: Vec<f64> = free.iter().map(|&i| lu_d[i]).collect();

    // plain CG (K_II is positive definite once boundary rows are removed)
    let mut x = vec![0.0; nf];
    let mut r = b.clone();
    let b_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let mut kp = vec![0.0; nf];
    let mut iterations = 0;
    for it in 0..10 * nf {
        if rs.sqrt() <= 1e-10 * b_norm {
            break;
        }
        apply_free(&p, &mut kp);
        let pkp: f64 = p.iter().zip(kp.iter()).map(|(a, b)| a * b).sum();
        if pkp.abs() < 1e-300 {
            break;
        }
        let alpha = rs / pkp;
        for i in 0..nf {
            x[i] += alpha * p[i];
            r[i] -= alpha * kp[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..nf {
            p[i] = r[i] + beta * p[i];
        }
        iterations = it + 1;
    }
    for (slot, &i) in free.iter().enumerate() {
        u[i] = x[slot];
    }
    Ok(FemReport {
        values: u,
        iterations,
        dt: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::spherical::real_sh;
    use crate::geometry::geodesic_sphere;
    use crate::Vec3;

    #[test]
    fn row_sums_are_zero() {
        let mesh = geodesic_sphere(8, 1.0);
        let lap = cotan_laplacian(&mesh).unwrap();
        for i in 0..lap.n {
            assert!(lap.row_sum(i).abs() < 1e-9, "row {i}: {}", lap.row_sum(i));
        }
        // triplets cover the same entries
        assert_eq!(lap.triplets().len(), lap.val.len());
    }

    #[test]
    fn linear_function_in_plane_interior_zero() {
        // planar Delaunay-style grid: (L f)_i = 0 for linear f at interior
        // vertices
        let m = 10;
        let mut verts = Vec::new();
        for i in 0..m {
            for j in 0..m {
                // jitter the grid so the triangulation is not symmetric
                let dx = 0.13 * ((i * 7 + j * 3) % 5) as f64 / 5.0;
                let dy = 0.11 * ((i * 3 + j * 5) % 7) as f64 / 7.0;
                verts.push(Vec3::new(i as f64 + dx, j as f64 + dy, 0.0));
            }
        }
        let mut faces = Vec::new();
        for i in 0..m - 1 {
            for j in 0..m - 1 {
                let v = |a: usize, b: usize| (a * m + b) as u32;
                faces.push([v(i, j), v(i + 1, j), v(i + 1, j + 1)]);
                faces.push([v(i, j), v(i + 1, j + 1), v(i, j + 1)]);
            }
        }
        let mesh = TriangleMesh::new(verts.clone(), faces).unwrap();
        let lap = cotan_laplacian(&mesh).unwrap();
        let f: Vec<f64> = verts.iter().map(|p| 0.7 * p.x - 1.3 * p.y + 2.0).collect();
        let mut lf = vec![0.0; lap.n];
        lap.apply(&f, &mut lf);
        for i in 0..m {
            for j in 0..m {
                if i > 0 && i < m - 1 && j > 0 && j < m - 1 {
                    assert!(
                        lf[i * m + j].abs() < 1e-8,
                        "interior vertex ({i},{j}): {}",
                        lf[i * m + j]
                    );
                }
            }
        }
    }

    #[test]
    fn sphere_smallest_nonzero_eigenvalue_is_two() {
        // inverse power iteration with constant deflation on the 10k-vertex
        // sphere: l = 1 eigenvalue of the Laplace-Beltrami operator is 2
        let mesh = geodesic_sphere(32, 1.0);
        let lap = cotan_laplacian(&mesh).unwrap();
        let n = lap.n;
        assert_eq!(n, 10242);
        let mut x: Vec<f64> = (0..n).map(|i| ((i * 37 % 101) as f64) / 101.0 - 0.5).collect();
        let mass_total: f64 = lap.lumped_mass.iter().sum();
        let deflate = |v: &mut Vec<f64>| {
            let mean: f64 = v
                .iter()
                .zip(lap.lumped_mass.iter())
                .map(|(a, m)| a * m)
                .sum::<f64>()
                / mass_total;
            for (a, _) in v.iter_mut().zip(lap.lumped_mass.iter()) {
                *a -= mean;
            }
        };
        deflate(&mut x);
        let mut eig = 0.0;
        for _ in 0..30 {
            // solve K y = M x, normalize
            let b: Vec<f64> = x
                .iter()
                .zip(lap.lumped_mass.iter())
                .map(|(v, m)| v * m)
                .collect();
            let (mut y, _) = cg_zero_mean(&lap, &b, 1e-10, 10 * n).unwrap();
            deflate(&mut y);
            let norm = y
                .iter()
                .zip(lap.lumped_mass.iter())
                .map(|(v, m)| v * v * m)
                .sum::<f64>()
                .sqrt();
            for v in y.iter_mut() {
                *v /= norm;
            }
            // Rayleigh quotient x^T K x / x^T M x
            let mut lx = vec![0.0; n];
            lap.apply(&y, &mut lx);
            let num: f64 = y.iter().zip(lx.iter()).map(|(a, b)| -a * b).sum();
            let den: f64 = y
                .iter()
                .zip(lap.lumped_mass.iter())
                .map(|(v, m)| v * v * m)
                .sum();
            eig = num / den;
            x = y;
        }
        assert!((eig - 2.0).abs() < 0.1, "smallest nonzero eigenvalue {eig}");
    }

    #[test]
    fn poisson_zero_forcing_gives_zero() {
        let mesh = geodesic_sphere(8, 1.0);
        let lap = cotan_laplacian(&mesh).unwrap();
        let f = vec![0.0; lap.n];
        let report = fem_solve_poisson(&lap, &f, MassMode::Lumped).unwrap();
        for v in &report.values {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_sphere_matches_analytic_eigen_solution() {
        let mesh = geodesic_sphere(10, 1.0);
        let lap = cotan_laplacian(&mesh).unwrap();
        let f: Vec<f64> = mesh.vertices.iter().map(|p| real_sh(2, 0, p)).collect();
        let report = fem_solve_poisson(&lap, &f, MassMode::Lumped).unwrap();
        let mut max_err: f64 = 0.0;
        let mut max_val: f64 = 0.0;
        for (i, p) in mesh.vertices.iter().enumerate() {
            let truth = -real_sh(2, 0, p) / 6.0;
            max_err = max_err.max((report.values[i] - truth).abs());
            max_val = max_val.max(truth.abs());
        }
        assert!(
            max_err / max_val < 0.02,
            "relative max error {}",
            max_err / max_val
        );
    }

    #[test]
    fn heat_conserves_lumped_mean_and_reaches_mean_steady_state() {
        let mesh = geodesic_sphere(8, 1.0);
        let lap = cotan_laplacian(&mesh).unwrap();
        let u0: Vec<f64> = mesh.vertices.iter().map(|p| p.z + 0.2 * p.x).collect();
        let mass_total: f64 = lap.lumped_mass.iter().sum();
        let weighted_mean_0: f64 = u0
            .iter()
            .zip(lap.lumped_mass.iter())
            .map(|(v, m)| v * m)
            .sum::<f64>()
            / mass_total;
        let report = fem_solve_heat(&lap, &u0, None, Some(1e-7), None).unwrap();
        let weighted_mean_t: f64 = report
            .values
            .iter()
            .zip(lap.lumped_mass.iter())
            .map(|(v, m)| v * m)
            .sum::<f64>()
            / mass_total;
        assert!(
            (weighted_mean_0 - weighted_mean_t).abs() < 1e-10,
            "conservation: {weighted_mean_0} vs {weighted_mean_t}"
        );
        for v in &report.values {
            assert!((v - weighted_mean_0).abs() < 1e-5, "steady at the mean");
        }
    }

    #[test]
    fn heat_spectral_decay_on_sphere() {
        let mesh = geodesic_sphere(10, 1.0);
        let lap = cotan_laplacian(&mesh).unwrap();
        let u0: Vec<f64> = mesh.vertices.iter().map(|p| real_sh(1, 0, p)).collect();
        let t = 0.25;
        let report = fem_solve_heat(&lap, &u0, Some(t), None, None).unwrap();
        let decay = (-2.0 * t).exp();
        let mut sq = 0.0;
        for (i, p) in mesh.vertices.iter().enumerate() {
            let truth = decay * real_sh(1, 0, p);
            sq += (report.values[i] - truth) * (report.values[i] - truth);
        }
        let rms = (sq / lap.n as f64).sqrt();
        assert!(rms < 2e-4, "rms {rms}");
    }

    #[test]
    fn dirichlet_laplace_constant_boundary() {
        // clamp the south cap of a sphere at 1: harmonic solution on the
        // rest tends to 1 everywhere (constant is harmonic)
        let mesh = geodesic_sphere(8, 1.0);
        let lap = cotan_laplacian(&mesh).unwrap();
        let idx: Vec<u32> = mesh
            .vertices
            .iter()
            .enumerate()
            .filter(|(_, p)| p.z < -0.9)
            .map(|(i, _)| i as u32)
            .collect();
        assert!(!idx.is_empty());
        let vals = vec![1.0; idx.len()];
        let report = fem_solve_laplace_dirichlet(&lap, &idx, &vals).unwrap();
        for v in &report.values {
            assert!((v - 1.0).abs() < 1e-8, "harmonic extension of 1: {v}");
        }
    }
}
