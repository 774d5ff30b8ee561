//! The learned band-to-band update.
//!
//! Given a query point in a patch's local frame, the operator attends over
//! the patch's band stencil: three small MLPs encode the query, the band
//! nodes and the surface features; the pooled feature descriptor modulates
//! the query embedding; logits combine the embedding dot product with a
//! learnable distance penalty; and the output is the softmax-weighted sum of
//! the current band values. The output is therefore always a convex
//! combination of the inputs - constants are exact fixed points.

mod io;
mod mlp;

pub use io::{load_params, load_params_bytes, save_params, save_params_bytes};
pub use mlp::{Mlp, MlpCache, MlpGrads, MlpTangent};

use crate::patches::Patch;
use crate::{Error, Result, Vec3};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

/// How the pooled surface descriptor conditions the query embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Modulation {
    /// query embedding + descriptor
    #[default]
    Additive,
    /// query embedding (element-wise) * descriptor
    Multiplicative,
}

#[derive(Debug, Clone)]
pub struct OperatorParams {
    /// Query encoder, R^3 -> R^d.
    pub theta1: Mlp,
    /// Band-node encoder, R^3 -> R^d.
    pub theta2: Mlp,
    /// Surface-feature encoder, R^6 -> R^d.
    pub theta3: Mlp,
    /// Distance-penalty strength; learnable, initialized to 1.
    pub lambda: f64,
    pub modulation: Modulation,
    /// Coordinate normalization applied to every local position before
    /// encoding (typically 1 / patch radius), so encoder inputs and the
    /// distance penalty are O(1) regardless of grid spacing. Set at
    /// training time and persisted with the weights.
    pub input_scale: f64,
}

impl OperatorParams {
    /// Fresh parameters: `hidden_depth` rectifier layers of width `d` per
    /// encoder, embedding width `d`, lambda = 1.
    pub fn new(d: usize, hidden_depth: usize, seed: u64, modulation: Modulation) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = |input: usize| {
            let mut v = vec![input];
            v.extend(std::iter::repeat(d).take(hidden_depth));
            v.push(d);
            v
        };
        OperatorParams {
            theta1: Mlp::new(&dims(3), &mut rng),
            theta2: Mlp::new(&dims(3), &mut rng),
            theta3: Mlp::new(&dims(6), &mut rng),
            lambda: 1.0,
            modulation,
            input_scale: 1.0,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.theta1.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta1.output_dim() != self.theta2.output_dim() {
            return Err(Error::Config(
                "query and band encoders must share an output width".into(),
            ));
        }
        if self.theta3.output_dim() != self.theta1.output_dim() {
            return Err(Error::Config(
                "feature encoder output width must match the embedding".into(),
            ));
        }
        if self.theta1.input_dim() != 3 || self.theta2.input_dim() != 3 {
            return Err(Error::Config("query/band encoders take R^3".into()));
        }
        if self.theta3.input_dim() != 6 {
            return Err(Error::Config("feature encoder takes R^6".into()));
        }
        if !self.lambda.is_finite() {
            return Err(Error::NonFinite("lambda"));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::Config("input_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.theta1.param_count() + self.theta2.param_count() + self.theta3.param_count() + 1
    }
}

pub fn points_matrix(points: &[Vec3]) -> DMatrix<f64> {
    DMatrix::from_fn(3, points.len(), |r, c| points[c][r])
}

pub fn feats_matrix(feats: &[[f64; 6]]) -> DMatrix<f64> {
    DMatrix::from_fn(6, feats.len(), |r, c| feats[c][r])
}

/// Mean-pooled surface descriptor: permutation-invariant by construction.
pub fn encode_surface(theta3: &Mlp, feat_local: &[[f64; 6]]) -> Result<DVector<f64>> {
    if feat_local.is_empty() {
        return Err(Error::Geometry("cannot encode an empty feature set".into()));
    }
    let cache = theta3.forward(&feats_matrix(feat_local));
    let out = cache.output();
    Ok(out.column_mean())
}

/// Everything the forward pass computes that does not depend on the field
/// values: encoder caches, logits and softmax weights. Reused by training
/// backprop and by the solver's cached extension.
pub struct ForwardTrace {
    pub q_cache: MlpCache,
    pub b_cache: MlpCache,
    pub f_cache: MlpCache,
    /// Pooled descriptor.
    pub s: DVector<f64>,
    /// Modulated query embeddings, d x m.
    pub q_mod: DMatrix<f64>,
    /// Squared query-to-node distances, m x k.
    pub dist2: DMatrix<f64>,
    /// Attention logits, m x k.
    pub logits: DMatrix<f64>,
    /// Row-stochastic attention weights, m x k.
    pub weights: DMatrix<f64>,
}

pub fn forward_traced(
    params: &OperatorParams,
    patch: &Patch,
    queries: &[Vec3],
) -> Result<ForwardTrace> {
    params.validate()?;
    if queries.is_empty() {
        return Err(Error::Config("no queries".into()));
    }
    let d = params.embedding_dim();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let sc = params.input_scale;

    let feats_scaled: Vec<[f64; 6]> = patch
        .feat_local
        .iter()
        .map(|f| [f[0] * sc, f[1] * sc, f[2] * sc, f[3], f[4], f[5]])
        .collect();
    let band_scaled: Vec<Vec3> = patch.band_local.iter().map(|p| p * sc).collect();
    let queries_scaled: Vec<Vec3> = queries.iter().map(|q| q * sc).collect();

    let f_cache = params.theta3.forward(&feats_matrix(&feats_scaled));
    let s = f_cache.output().column_mean();
    let b_cache = params.theta2.forward(&points_matrix(&band_scaled));
    let q_cache = params.theta1.forward(&points_matrix(&queries_scaled));

    let mut q_mod = q_cache.output().clone();
    match params.modulation {
        Modulation::Additive => {
            for mut col in q_mod.column_iter_mut() {
                col += &s;
            }
        }
        Modulation::Multiplicative => {
            for mut col in q_mod.column_iter_mut() {
                col.component_mul_assign(&s);
            }
        }
    }

    // distances in scaled coordinates, matching the encoder inputs
    let m = queries.len();
    let k = patch.k();
    let mut dist2 = DMatrix::zeros(m, k);
    for (i, q) in queries_scaled.iter().enumerate() {
        for (j, b) in band_scaled.iter().enumerate() {
            dist2[(i, j)] = (q - b).norm_squared();
        }
    }

    // logits = (q_mod^T Eb) / sqrt(d) - lambda * dist2
    let mut logits = q_mod.transpose() * b_cache.output();
    logits *= inv_sqrt_d;
    logits.zip_apply(&dist2, |l, d2| *l -= params.lambda * d2);

    let mut weights = logits.clone();
    for mut row in weights.row_iter_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row /= sum;
    }

    Ok(ForwardTrace {
        q_cache,
        b_cache,
        f_cache,
        s,
        q_mod,
        dist2,
        logits,
        weights,
    })
}

fn check_field(patch: &Patch, u: &[f64]) -> Result<()> {
    if u.len() != patch.k() {
        return Err(Error::Config(format!(
            "field length {} does not match patch k = {}",
            u.len(),
            patch.k()
        )));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("band values"));
    }
    Ok(())
}

/// Re-extended values at `queries`: softmax-weighted convex combinations of
/// the patch's current band values.
pub fn forward(
    params: &OperatorParams,
    patch: &Patch,
    u: &[f64],
    queries: &[Vec3],
) -> Result<Vec<f64>> {
    check_field(patch, u)?;
    let trace = forward_traced(params, patch, queries)?;
    let uv = DVector::from_column_slice(u);
    Ok((&trace.weights * uv).iter().copied().collect())
}

/// Exact gradient of [`forward`] with respect to the query location, all
/// other inputs held constant. Derivation: with w the softmax weights and
/// a_j the logits, grad = sum_j w_j u_j grad(a_j) - (sum_j w_j u_j)(sum_l
/// w_l grad(a_l)), where grad(a_j) flows through the query encoder Jacobian
/// and the distance penalty.
pub fn query_gradient(
    params: &OperatorParams,
    patch: &Patch,
    u: &[f64],
    q: &Vec3,
) -> Result<Vec3> {
    check_field(patch, u)?;
    let trace = forward_traced(params, patch, std::slice::from_ref(q))?;
    Ok(query_gradient_from_trace(params, patch, u, q, &trace, 0))
}

/// Query gradient using a precomputed trace (row `row` corresponds to `q`).
pub fn query_gradient_from_trace(
    params: &OperatorParams,
    patch: &Patch,
    u: &[f64],
    q: &Vec3,
    trace: &ForwardTrace,
    row: usize,
) -> Vec3 {
    let d = params.embedding_dim();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let sc = params.input_scale;
    let eb = trace.b_cache.output();

    // Jacobian of the query encoder at the scaled query via tangent passes
    let q_scaled = q * sc;
    let q_mat = points_matrix(std::slice::from_ref(&q_scaled));
    let q_cache = params.theta1.forward(&q_mat);
    let mut jac = DMatrix::zeros(d, 3);
    for axis in 0..3 {
        let mut t = DMatrix::zeros(3, 1);
        t[(axis, 0)] = 1.0;
        let tangent = params.theta1.jvp(&q_cache, &t);
        jac.set_column(axis, &tangent.output().column(0));
    }

    // in scaled coordinates grad(a_j) = J^T m_j / sqrt(d) - 2 lambda
    // (q^ - b^_j); the physical gradient carries one extra input_scale
    let w = trace.weights.row(row);
    let mut mean_grad = Vec3::zeros();
    let mut weighted_grad = Vec3::zeros();
    let mut mean_u = 0.0;
    for j in 0..patch.k() {
        let e_j = eb.column(j);
        let m_j = match params.modulation {
            Modulation::Additive => e_j.clone_owned(),
            Modulation::Multiplicative => e_j.component_mul(&trace.s),
        };
        let jt = jac.transpose() * m_j * inv_sqrt_d;
        let grad_a = (Vec3::new(jt[0], jt[1], jt[2])
            - (q - patch.band_local[j]) * (2.0 * params.lambda * sc))
            * sc;
        let wj = w[j];
        mean_grad += grad_a * wj;
        weighted_grad += grad_a * (wj * u[j]);
        mean_u += wj * u[j];
    }
    weighted_grad - mean_grad * mean_u
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::patches::LocalFrame;
    use crate::Mat3;
    use rand::prelude::*;

    /// Synthetic patch: band nodes scattered in a box around the origin.
    pub(crate) fn synthetic_patch(k: usize, n_feats: usize, seed: u64) -> Patch {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_vec =
            |scale: f64| Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * scale;
        let band_local: Vec<Vec3> = (0..k).map(|_| rand_vec(0.4)).collect();
        let feat_local: Vec<[f64; 6]> = (0..n_feats)
            .map(|_| {
                let p = rand_vec(0.5);
                let n = rand_vec(1.0).normalize();
                [p.x, p.y, p.z, n.x, n.y, n.z]
            })
            .collect();
        Patch {
            frame: LocalFrame {
                center: Vec3::zeros(),
                axes: Mat3::identity(),
            },
            band_idx: (0..k as u32).collect(),
            band_local,
            feat_local,
        }
    }

    fn random_field(k: usize, seed: u64) -> Vec<f64> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn constant_field_is_fixed_point() {
        let params = OperatorParams::new(32, 2, 1, Modulation::Additive);
        let patch = synthetic_patch(50, 20, 2);
        let u = vec![3.75; 50];
        let queries: Vec<Vec3> = patch.band_local.iter().take(10).copied().collect();
        let out = forward(&params, &patch, &u, &queries).unwrap();
        for v in out {
            assert!((v - 3.75).abs() < 1e-12, "constant preserved: {v}");
        }
    }

    #[test]
    fn output_within_field_bounds() {
        // untrained params, random patches: convexity bound
        for seed in 0..5 {
            let params = OperatorParams::new(24, 2, seed, Modulation::Additive);
            let patch = synthetic_patch(40, 15, seed + 10);
            let u = random_field(40, seed + 20);
            let lo = u.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let queries: Vec<Vec3> = patch.band_local.iter().take(25).copied().collect();
            for v in forward(&params, &patch, &u, &queries).unwrap() {
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let params = OperatorParams::new(16, 2, 3, Modulation::Additive);
        let patch = synthetic_patch(30, 12, 4);
        let u = random_field(30, 5);
        let queries = vec![Vec3::new(0.05, -0.1, 0.02)];
        let base = forward(&params, &patch, &u, &queries).unwrap();

        // permute band nodes together with u
        let perm: Vec<usize> = (0..30).rev().collect();
        let patch2 = Patch {
            frame: patch.frame.clone(),
            band_idx: perm.iter().map(|&i| patch.band_idx[i]).collect(),
            band_local: perm.iter().map(|&i| patch.band_local[i]).collect(),
            feat_local: patch.feat_local.clone(),
        };
        let u2: Vec<f64> = perm.iter().map(|&i| u[i]).collect();
        let out = forward(&params, &patch2, &u2, &queries).unwrap();
        assert!((base[0] - out[0]).abs() < 1e-12);
    }

    #[test]
    fn feature_row_permutation_and_duplication_invariance() {
        let params = OperatorParams::new(16, 2, 6, Modulation::Additive);
        let patch = synthetic_patch(20, 9, 7);
        let s0 = encode_surface(&params.theta3, &patch.feat_local).unwrap();
        let mut reversed = patch.feat_local.clone();
        reversed.reverse();
        let s1 = encode_surface(&params.theta3, &reversed).unwrap();
        assert!((s0.clone() - s1).norm() < 1e-12);
        // duplicating every row leaves the mean unchanged
        let mut doubled = patch.feat_local.clone();
        doubled.extend(patch.feat_local.iter().copied());
        let s2 = encode_surface(&params.theta3, &doubled).unwrap();
        assert!((s0 - s2).norm() < 1e-12);
        // single row: descriptor equals that row's embedding
        let single = vec![patch.feat_local[0]];
        let s3 = encode_surface(&params.theta3, &single).unwrap();
        let direct = params.theta3.forward(&feats_matrix(&single));
        assert!((s3 - direct.output().column(0)).norm() < 1e-12);
        assert!(encode_surface(&params.theta3, &[]).is_err());
    }

    #[test]
    fn large_lambda_selects_nearest_node() {
        let mut params = OperatorParams::new(16, 2, 8, Modulation::Additive);
        params.lambda = 1e6;
        let patch = synthetic_patch(35, 10, 9);
        let u = random_field(35, 10);
        let q = Vec3::new(0.07, 0.03, -0.12);
        let nearest = patch
            .band_local
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                ((*a - q).norm_squared())
                    .partial_cmp(&(*b - q).norm_squared())
                    .unwrap()
            })
            .unwrap()
            .0;
        let out = forward(&params, &patch, &u, &[q]).unwrap();
        assert!(
            (out[0] - u[nearest]).abs() < 1e-9,
            "lambda -> inf gives nearest-node sampling"
        );
    }

    #[test]
    fn rejects_bad_fields() {
        let params = OperatorParams::new(16, 2, 11, Modulation::Additive);
        let patch = synthetic_patch(10, 5, 12);
        let queries = vec![Vec3::zeros()];
        let mut u = random_field(10, 13);
        u[3] = f64::NAN;
        assert!(forward(&params, &patch, &u, &queries).is_err());
        let short = vec![1.0; 9];
        assert!(forward(&params, &patch, &short, &queries).is_err());
    }

    #[test]
    fn gradient_zero_for_constant_field() {
        let params = OperatorParams::new(24, 2, 14, Modulation::Additive);
        let patch = synthetic_patch(30, 10, 15);
        let u = vec![-2.2; 30];
        let g = query_gradient(&params, &patch, &u, &Vec3::new(0.1, 0.0, -0.05)).unwrap();
        assert!(g.norm() < 1e-12, "gradient for constant field: {g:?}");
    }

    /// finite-difference oracle for the query gradient, run only at
    /// kink-free query points (no pre-activation within 1e-6 of zero)
    #[test]
    fn gradient_matches_central_differences() {
        for (seed, modulation, input_scale) in [
            (16, Modulation::Additive, 1.0),
            (17, Modulation::Additive, 2.4),
            (18, Modulation::Multiplicative, 1.0),
        ] {
            let mut params = OperatorParams::new(24, 2, seed, modulation);
            params.input_scale = input_scale;
            let patch = synthetic_patch(40, 14, seed + 1);
            let u = random_field(40, seed + 2);
            let mut checked = 0;
            for trial in 0..12 {
                let q = Vec3::new(
                    0.03 * trial as f64 - 0.15,
                    0.11 - 0.02 * trial as f64,
                    0.05,
                );
                // kink exclusion (at the scaled query the encoder sees)
                let cache = params.theta1.forward(&points_matrix(&[q * input_scale]));
                let near_kink = cache
                    .zs
                    .iter()
                    .take(params.theta1.layers.len() - 1)
                    .any(|z| z.iter().any(|&v| v.abs() < 1e-6));
                if near_kink {
                    continue;
                }
                checked += 1;
                let g = query_gradient(&params, &patch, &u, &q).unwrap();
                let h = 1e-4;
                let mut fd = Vec3::zeros();
                for axis in 0..3 {
                    let mut qp = q;
                    qp[axis] += h;
                    let mut qm = q;
                    qm[axis] -= h;
                    let fp = forward(&params, &patch, &u, &[qp]).unwrap()[0];
                    let fm = forward(&params, &patch, &u, &[qm]).unwrap()[0];
                    fd[axis] = (fp - fm) / (2.0 * h);
                }
                let rel = (g - fd).norm() / fd.norm().max(1e-8);
                assert!(rel < 1e-4, "seed {seed} trial {trial}: rel err {rel}");
            }
            assert!(checked >= 8, "enough kink-free trials");
        }
    }

    #[test]
    fn continuity_in_query() {
        let params = OperatorParams::new(16, 2, 19, Modulation::Additive);
        let patch = synthetic_patch(25, 8, 20);
        let u = random_field(25, 21);
        let q = Vec3::new(0.02, -0.04, 0.06);
        let base = forward(&params, &patch, &u, &[q]).unwrap()[0];
        for h in [1e-3, 1e-5, 1e-7] {
            let v = forward(&params, &patch, &u, &[q + Vec3::new(h, -h, h)]).unwrap()[0];
            assert!(
                (v - base).abs() < 50.0 * h,
                "h = {h}: jump {}",
                (v - base).abs()
            );
        }
    }

    #[test]
    fn multiplicative_modulation_differs_from_additive() {
        let params_a = OperatorParams::new(16, 2, 22, Modulation::Additive);
        let mut params_m = params_a.clone();
        params_m.modulation = Modulation::Multiplicative;
        let patch = synthetic_patch(20, 8, 23);
        let u = random_field(20, 24);
        let q = [Vec3::new(0.05, 0.02, -0.03)];
        let a = forward(&params_a, &patch, &u, &q).unwrap()[0];
        let m = forward(&params_m, &patch, &u, &q).unwrap()[0];
        assert!((a - m).abs() > 1e-9, "modulation modes are distinct paths");
    }
}
