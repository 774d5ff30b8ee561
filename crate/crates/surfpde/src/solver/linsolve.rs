//! Matrix-free restarted GMRES with constant-mode deflation.
//!
//! Used to jump directly to the steady state of the linear
//! extend-then-step iteration for Poisson problems. The operator map has the
//! all-ones vector in its kernel (extensions preserve constants), so the
//! solve runs in the zero-mean subspace.

pub struct GmresOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn project_zero_mean(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= mean;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve A x = b for a linear operator `apply` with constants deflated.
pub fn gmres<F: Fn(&[f64]) -> Vec<f64>>(
    apply: F,
    b: &[f64],
    restart: usize,
    max_outer: usize,
    tol: f64,
) -> GmresOutcome {
    let n = b.len();
    let mut rhs = b.to_vec();
    project_zero_mean(&mut rhs);
    let b_norm = norm(&rhs).max(1e-300);

    let apply_deflated = |x: &[f64]| {
        let mut y = apply(x);
        project_zero_mean(&mut y);
        y
    };

    let mut x = vec![0.0; n];
    let mut total_iters = 0usize;
    let mut rel = 1.0;

    for _ in 0..max_outer {
        let ax = apply_deflated(&x);
        let mut r: Vec<f64> = rhs.iter().zip(ax.iter()).map(|(b, a)| b - a).collect();
        project_zero_mean(&mut r);
        let beta = norm(&r);
        rel = beta / b_norm;
        if rel <= tol {
            return GmresOutcome {
                solution: x,
                iterations: total_iters,
                relative_residual: rel,
                converged: true,
            };
        }

        let m = restart;
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|t| t / beta).collect());
        let mut h = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut k_used = 0;

        for k in 0..m {
            total_iters += 1;
            let mut w = apply_deflated(&v[k]);
            for i in 0..=k {
                h[i][k] = dot(&w, &v[i]);
                for (wj, vj) in w.iter_mut().zip(v[i].iter()) {
                    *wj -= h[i][k] * vj;
                }
            }
            h[k + 1][k] = norm(&w);
            if h[k + 1][k] > 1e-300 {
                v.push(w.iter().map(|t| t / h[k + 1][k]).collect());
            } else {
                v.push(vec![0.0; n]);
            }
            // apply accumulated Givens rotations to the new column
            for i in 0..k {
                let tmp = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = tmp;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom > 1e-300 {
                cs[k] = h[k][k] / denom;
                sn[k] = h[k + 1][k] / denom;
            } else {
                cs[k] = 1.0;
                sn[k] = 0.0;
            }
            h[k][k] = cs[k] * h[k][k] + sn[k] * h[k + 1][k];
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k] * g[k];
            k_used = k + 1;
            rel = g[k + 1].abs() / b_norm;
            if rel <= tol {
                break;
            }
        }

        // back substitution for the Krylov coefficients
        let mut y = vec![0.0f64; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc -= h[i][j] * y[j];
            }
            y[i] = if h[i][i].abs() > 1e-300 { acc / h[i][i] } else { 0.0 };
        }
        for (i, yi) in y.iter().enumerate() {
            for (xj, vj) in x.iter_mut().zip(v[i].iter()) {
                *xj += yi * vj;
            }
        }
        project_zero_mean(&mut x);
        if rel <= tol {
            return GmresOutcome {
                solution: x,
                iterations: total_iters,
                relative_residual: rel,
                converged: true,
            };
        }
    }

    GmresOutcome {
        solution: x,
        iterations: total_iters,
        relative_residual: rel,
        converged: rel <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_a_dense_spd_like_system_up_to_constants() {
        // A = I - P where P is a random row-stochastic matrix damped toward
        // identity: mirrors the extension-step structure (A 1 = 0)
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = vec![vec![0.0f64; n]; n];
        for row in p.iter_mut() {
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = rng.random::<f64>();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let damp = 0.9;
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let px: f64 = (0..n).map(|j| p[i][j] * x[j]).sum();
                    x[i] - (damp * px + (1.0 - damp) * x[i])
                })
                .collect()
        };
        // manufactured zero-mean solution
        let mut x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        project_zero_mean(&mut x_true);
        let b = apply(&x_true);
        let out = gmres(apply, &b, 30, 20, 1e-12);
        assert!(out.converged, "rel residual {}", out.relative_residual);
        for (a, t) in out.solution.iter().zip(x_true.iter()) {
            assert!((a - t).abs() < 1e-8, "{a} vs {t}");
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let apply = |x: &[f64]| x.to_vec();
        let out = gmres(apply, &vec![0.0; 10], 5, 3, 1e-10);
        assert!(out.converged);
        assert!(out.solution.iter().all(|&v| v.abs() < 1e-14));
    }
}
