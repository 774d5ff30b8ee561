//! Losses and their exact parameter gradients.
//!
//! The reconstruction loss is the mean squared error between operator
//! predictions at band-node queries and the probe values at those nodes'
//! closest points. The normal-consistency loss penalizes the component of
//! the query gradient along the surface normal at the query's closest point;
//! its parameter gradient is exact (normals and field values are constants,
//! rectifier masks frozen at kinks), including the second-order path through
//! the query encoder's input Jacobian.

use crate::operator::{forward_traced, MlpGrads, Modulation, OperatorParams};
use crate::patches::Patch;
use crate::{Result, Vec3};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct Grads {
    pub g1: MlpGrads,
    pub g2: MlpGrads,
    pub g3: MlpGrads,
    pub lambda: f64,
}

impl Grads {
    pub fn zeros_like(params: &OperatorParams) -> Self {
        Grads {
            g1: MlpGrads::zeros_like(&params.theta1),
            g2: MlpGrads::zeros_like(&params.theta2),
            g3: MlpGrads::zeros_like(&params.theta3),
            lambda: 0.0,
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.g1.w.iter_mut().zip(other.g1.w.iter()) {
            *a += b;
        }
        for (a, b) in self.g1.b.iter_mut().zip(other.g1.b.iter()) {
            *a += b;
        }
        for (a, b) in self.g2.w.iter_mut().zip(other.g2.w.iter()) {
            *a += b;
        }
        for (a, b) in self.g2.b.iter_mut().zip(other.g2.b.iter()) {
            *a += b;
        }
        for (a, b) in self.g3.w.iter_mut().zip(other.g3.w.iter()) {
            *a += b;
        }
        for (a, b) in self.g3.b.iter_mut().zip(other.g3.b.iter()) {
            *a += b;
        }
        self.lambda += other.lambda;
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.g1.flat();
        out.extend(self.g2.flat());
        out.extend(self.g3.flat());
        out.push(self.lambda);
        out
    }
}

/// Inputs for one patch's contribution to a batch.
pub struct PatchBatch<'a> {
    /// The (possibly rotation-augmented) patch.
    pub patch: &'a Patch,
    /// Probe values at the stencil nodes, one column per pair (k x p).
    pub g_in: &'a DMatrix<f64>,
    /// Probe targets at the query rows (m x p).
    pub g_target: &'a DMatrix<f64>,
    /// Indices into the patch stencil used as queries (length m).
    pub query_idx: &'a [usize],
    /// How many leading queries also serve the normal-consistency term.
    pub nc_count: usize,
    /// Local-frame surface normals at the closest points of the nc queries.
    pub nc_normals: &'a [Vec3],
}

pub struct PatchLoss {
    pub l_mse: f64,
    pub l_nc: f64,
    pub grads: Option<Grads>,
}

/// Loss (and optionally exact gradients) for one patch group.
pub fn patch_loss(
    params: &OperatorParams,
    batch: &PatchBatch,
    alpha: f64,
    want_grads: bool,
) -> Result<PatchLoss> {
    let k = batch.patch.k();
    let m = batch.query_idx.len();
    let p = batch.g_in.ncols();
    assert_eq!(batch.g_in.nrows(), k);
    assert_eq!(batch.g_target.nrows(), m);
    assert_eq!(batch.g_target.ncols(), p);
    let r_n = batch.nc_count.min(m);
    assert_eq!(batch.nc_normals.len(), r_n);

    let queries: Vec<Vec3> = batch
        .query_idx
        .iter()
        .map(|&i| batch.patch.band_local[i])
        .collect();
    let trace = forward_traced(params, batch.patch, &queries)?;
    let d = params.embedding_dim();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    let w = &trace.weights;
    let pred = w * batch.g_in;
    let err = &pred - batch.g_target;
    let mse_norm = 1.0 / (m * p) as f64;
    let l_mse = err.iter().map(|e| e * e).sum::<f64>() * mse_norm;

    // normal-consistency pieces at the leading r_n query rows
    let mut l_nc = 0.0;
    let mut nc_cache = None;
    let mut nc_tangent = None;
    let mut cj = DMatrix::zeros(r_n, k);
    let mut g_nc = DMatrix::zeros(r_n, p);
    let mut beta = DVector::zeros(r_n);
    let eb = trace.b_cache.output();
    // modulated band embeddings seen by the query-gradient path
    let m_mat = match params.modulation {
        Modulation::Additive => eb.clone(),
        Modulation::Multiplicative => {
            let mut m2 = eb.clone();
            for mut col in m2.column_iter_mut() {
                col.component_mul_assign(&trace.s);
            }
            m2
        }
    };
    let sc = params.input_scale;
    if r_n > 0 && alpha != 0.0 {
        let nc_queries_scaled: Vec<Vec3> = queries[..r_n].iter().map(|q| q * sc).collect();
        let q_mat = crate::operator::points_matrix(&nc_queries_scaled);
        let cache = params.theta1.forward(&q_mat);
        let n_mat = crate::operator::points_matrix(batch.nc_normals);
        let tangent = params.theta1.jvp(&cache, &n_mat);
        let v = tangent.output(); // d x r_n

        // physical-gradient projection: cj[r, j] = sc * (v_r . m_j / sqrt(d))
        // - 2 lambda sc^2 (q_r - b_j) . n_r
        cj = v.transpose() * &m_mat * (inv_sqrt_d * sc);
        for r in 0..r_n {
            let q = queries[r];
            let n = batch.nc_normals[r];
            for j in 0..k {
                cj[(r, j)] -=
                    2.0 * params.lambda * sc * sc * (q - batch.patch.band_local[j]).dot(&n);
            }
        }
        for r in 0..r_n {
            beta[r] = w.row(r).dot(&cj.row(r));
        }
        // g[r, c] = sum_j w[r,j] cj[r,j] G[j,c] - pred[r,c] * beta[r]
        let wc = {
            let mut wc = cj.clone();
            for r in 0..r_n {
                for j in 0..k {
                    wc[(r, j)] *= w[(r, j)];
                }
            }
            wc
        };
        g_nc = &wc * batch.g_in;
        for r in 0..r_n {
            for c in 0..p {
                g_nc[(r, c)] -= pred[(r, c)] * beta[r];
            }
        }
        l_nc = g_nc.iter().map(|v| v.abs()).sum::<f64>() / (r_n * p) as f64;
        nc_cache = Some(cache);
        nc_tangent = Some(tangent);
    }

    if !want_grads {
        return Ok(PatchLoss {
            l_mse,
            l_nc,
            grads: None,
        });
    }

    let mut grads = Grads::zeros_like(params);

    // dL/dW from the reconstruction term
    let dpred = err * (2.0 * mse_norm);
    let mut dw = &dpred * batch.g_in.transpose(); // m x k

    // dL/dW and dL/dcj from the normal-consistency term
    let mut dcj = DMatrix::zeros(r_n, k);
    if r_n > 0 && alpha != 0.0 {
        let nc_norm = alpha / (r_n * p) as f64;
        let s_mat = g_nc.map(|v| if v >= 0.0 { nc_norm } else { -nc_norm });
        let a_mat = &s_mat * batch.g_in.transpose(); // r_n x k
        let mut rho = DVector::zeros(r_n);
        for r in 0..r_n {
            rho[r] = s_mat.row(r).dot(&pred.row(r));
        }
        for r in 0..r_n {
            for j in 0..k {
                let a = a_mat[(r, j)];
                let c = cj[(r, j)];
                dw[(r, j)] += a * c - a * beta[r] - rho[r] * c;
                dcj[(r, j)] = w[(r, j)] * (a - rho[r]);
            }
        }
        // lambda path inside cj
        for r in 0..r_n {
            let q = queries[r];
            let n = batch.nc_normals[r];
            for j in 0..k {
                grads.lambda +=
                    dcj[(r, j)] * (-2.0 * sc * sc * (q - batch.patch.band_local[j]).dot(&n));
            }
        }
        // v path: dV = sc * M dcj^T / sqrt(d), through the query encoder
        // Jacobian at the scaled queries
        let dv = &m_mat * dcj.transpose() * (inv_sqrt_d * sc); // d x r_n
        params.theta1.jvp_param_backward(
            nc_cache.as_ref().unwrap(),
            nc_tangent.as_ref().unwrap(),
            &dv,
            &mut grads.g1,
        );
    }

    // softmax backward: dlogits = W .* (dW - rowsum(W .* dW))
    let mut dlogits = dw;
    for r in 0..m {
        let dot = trace.weights.row(r).dot(&dlogits.row(r));
        for j in 0..k {
            dlogits[(r, j)] = trace.weights[(r, j)] * (dlogits[(r, j)] - dot);
        }
    }

    // lambda path inside the logits
    for r in 0..m {
        for j in 0..k {
            grads.lambda -= dlogits[(r, j)] * trace.dist2[(r, j)];
        }
    }

    // embedding paths
    let mut deb = &trace.q_mod * &dlogits * inv_sqrt_d; // d x k
    let dq_mod = eb * dlogits.transpose() * inv_sqrt_d; // d x m

    // the nc cj term also reads the (modulated) band embeddings
    let mut ds = DVector::zeros(d);
    if r_n > 0 && alpha != 0.0 {
        let v = nc_tangent.as_ref().unwrap().output();
        let dm = v * &dcj * (inv_sqrt_d * sc); // d x k
        match params.modulation {
            Modulation::Additive => deb += dm,
            Modulation::Multiplicative => {
                for j in 0..k {
                    for r in 0..d {
                        deb[(r, j)] += dm[(r, j)] * trace.s[r];
                        ds[r] += dm[(r, j)] * eb[(r, j)];
                    }
                }
            }
        }
    }

    // modulation backward
    let dq = match params.modulation {
        Modulation::Additive => {
            for col in dq_mod.column_iter() {
                ds += col;
            }
            dq_mod.clone()
        }
        Modulation::Multiplicative => {
            let eq = trace.q_cache.output();
            let mut dq = dq_mod.clone();
            for (i, mut col) in dq.column_iter_mut().enumerate() {
                col.component_mul_assign(&trace.s);
                for r in 0..d {
                    ds[r] += dq_mod[(r, i)] * eq[(r, i)];
                }
            }
            dq
        }
    };

    params.theta1.backward(&trace.q_cache, &dq, &mut grads.g1);
    params.theta2.backward(&trace.b_cache, &deb, &mut grads.g2);

    // mean pooling spreads ds uniformly over feature columns
    let n_feat = batch.patch.feature_count();
    let df = {
        let scale = 1.0 / n_feat as f64;
        let mut df = DMatrix::zeros(d, n_feat);
        for mut col in df.column_iter_mut() {
            col.axpy(scale, &ds, 1.0);
        }
        df
    };
    params.theta3.backward(&trace.f_cache, &df, &mut grads.g3);

    Ok(PatchLoss {
        l_mse,
        l_nc,
        grads: Some(grads),
    })
}

/// The displayed reconstruction loss over the given pairs: queries are all k
/// stencil nodes, so the normalization is the mean over k * |pairs| terms
/// (equivalently 1/(k |D| |M|) on a full dataset).
pub fn loss_mse(
    params: &OperatorParams,
    patches: &[Patch],
    pairs: &[super::TrainingPair],
) -> Result<f64> {
    let mut total = 0.0;
    let mut terms = 0usize;
    let mut by_patch: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, pair) in pairs.iter().enumerate() {
        by_patch.entry(pair.patch).or_default().push(i);
    }
    for (patch_idx, pair_ids) in by_patch {
        let patch = &patches[patch_idx];
        let trace = forward_traced(params, patch, &patch.band_local)?;
        for pid in pair_ids {
            let pair = &pairs[pid];
            let pred = &trace.weights * &pair.g_in;
            total += (&pred - &pair.g_target).iter().map(|e| e * e).sum::<f64>();
            terms += pair.g_target.len();
        }
    }
    Ok(total / terms.max(1) as f64)
}

/// Mean |<grad_q, n(cp(q))>| over `n_query` band-node queries per pair,
/// sampled deterministically from `seed`. Normals come from the band's
/// closest-point map, expressed in each patch's local frame.
pub fn loss_nc(
    params: &OperatorParams,
    band: &crate::band::NarrowBand,
    patches: &[Patch],
    pairs: &[super::TrainingPair],
    n_query: usize,
    seed: u64,
) -> Result<f64> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for pair in pairs {
        let patch = &patches[pair.patch];
        let k = patch.k();
        let n_q = n_query.min(k);
        let mut idx: Vec<usize> = (0..k).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n_q);
        let u_slice: Vec<f64> = pair.g_in.iter().copied().collect();
        for &qi in &idx {
            let q = patch.band_local[qi];
            let band_node = patch.band_idx[qi] as usize;
            let n_local = patch
                .frame
                .to_local_vector(&band.cp_normal[band_node]);
            let grad = crate::operator::query_gradient(params, patch, &u_slice, &q)?;
            total += grad.dot(&n_local).abs();
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Total loss l_mse + alpha * l_nc over one deterministic patch group;
/// used by the finite-difference gradient check.
pub fn total_loss_for_check(
    params: &OperatorParams,
    batch: &PatchBatch,
    alpha: f64,
) -> Result<f64> {
    let out = patch_loss(params, batch, alpha, false)?;
    Ok(out.l_mse + alpha * out.l_nc)
}

pub(crate) fn flat_params(params: &OperatorParams) -> Vec<f64> {
    let mut out = params.theta1.flat_params();
    out.extend(params.theta2.flat_params());
    out.extend(params.theta3.flat_params());
    out.push(params.lambda);
    out
}

pub(crate) fn set_flat_params(params: &mut OperatorParams, flat: &[f64]) {
    let n1 = params.theta1.param_count();
    let n2 = params.theta2.param_count();
    let n3 = params.theta3.param_count();
    assert_eq!(flat.len(), n1 + n2 + n3 + 1);
    params.theta1.set_flat_params(&flat[..n1]);
    params.theta2.set_flat_params(&flat[n1..n1 + n2]);
    params.theta3.set_flat_params(&flat[n1 + n2..n1 + n2 + n3]);
    params.lambda = flat[n1 + n2 + n3];
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::tests::synthetic_patch;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn synthetic_batch(
        patch: &Patch,
        m: usize,
        p: usize,
        nc: usize,
        seed: u64,
    ) -> (DMatrix<f64>, DMatrix<f64>, Vec<usize>, Vec<Vec3>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = patch.k();
        let g_in = DMatrix::from_fn(k, p, |_, _| rng.random::<f64>() - 0.5);
        let query_idx: Vec<usize> = (0..m).map(|i| (i * 3) % k).collect();
        let g_target = DMatrix::from_fn(m, p, |_, _| rng.random::<f64>() - 0.5);
        let nc_normals: Vec<Vec3> = (0..nc)
            .map(|_| {
                Vec3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                )
                .normalize()
            })
            .collect();
        (g_in, g_target, query_idx, nc_normals)
    }

    #[test]
    fn perfect_prediction_gives_zero_mse() {
        let params = OperatorParams::new(16, 2, 1, Modulation::Additive);
        let patch = synthetic_patch(30, 10, 2);
        // constant probe: prediction is exact, so target = input constant
        let g_in = DMatrix::from_element(30, 3, 0.4);
        let g_target = DMatrix::from_element(8, 3, 0.4);
        let query_idx: Vec<usize> = (0..8).collect();
        let batch = PatchBatch {
            patch: &patch,
            g_in: &g_in,
            g_target: &g_target,
            query_idx: &query_idx,
            nc_count: 0,
            nc_normals: &[],
        };
        let out = patch_loss(&params, &batch, 0.0, false).unwrap();
        assert!(out.l_mse < 1e-24);
    }

    #[test]
    fn constant_shift_gives_squared_shift() {
        let params = OperatorParams::new(16, 2, 3, Modulation::Additive);
        let patch = synthetic_patch(30, 10, 4);
        let g_in = DMatrix::from_element(30, 2, 1.0);
        // prediction will be exactly 1.0; target 0.9 -> squared error 0.01
        let g_target = DMatrix::from_element(6, 2, 0.9);
        let query_idx: Vec<usize> = (0..6).collect();
        let batch = PatchBatch {
            patch: &patch,
            g_in: &g_in,
            g_target: &g_target,
            query_idx: &query_idx,
            nc_count: 0,
            nc_normals: &[],
        };
        let out = patch_loss(&params, &batch, 0.0, false).unwrap();
        assert!((out.l_mse - 0.01).abs() < 1e-12);
    }

    #[test]
    fn nc_zero_for_constant_field() {
        let params = OperatorParams::new(16, 2, 5, Modulation::Additive);
        let patch = synthetic_patch(25, 8, 6);
        let g_in = DMatrix::from_element(25, 2, 2.5);
        let g_target = DMatrix::from_element(5, 2, 2.5);
        let query_idx: Vec<usize> = (0..5).collect();
        let (_, _, _, nc_normals) = synthetic_batch(&patch, 5, 2, 3, 7);
        let batch = PatchBatch {
            patch: &patch,
            g_in: &g_in,
            g_target: &g_target,
            query_idx: &query_idx,
            nc_count: 3,
            nc_normals: &nc_normals,
        };
        let out = patch_loss(&params, &batch, 1.0, false).unwrap();
        assert!(out.l_nc < 1e-14, "constant field has zero gradient");
        assert!(out.l_nc >= 0.0);
    }

    #[test]
    fn patch_loss_nc_matches_query_gradient_op() {
        // the batched normal-consistency computation agrees with the
        // per-query gradient operator
        let params = OperatorParams::new(20, 2, 8, Modulation::Additive);
        let patch = synthetic_patch(30, 12, 9);
        let (g_in, _, query_idx, nc_normals) = synthetic_batch(&patch, 7, 1, 4, 10);
        let g_target = DMatrix::zeros(7, 1);
        let batch = PatchBatch {
            patch: &patch,
            g_in: &g_in,
            g_target: &g_target,
            query_idx: &query_idx,
            nc_count: 4,
            nc_normals: &nc_normals,
        };
        let out = patch_loss(&params, &batch, 1.0, false).unwrap();
        let u: Vec<f64> = g_in.column(0).iter().copied().collect();
        let mut manual = 0.0;
        for r in 0..4 {
            let q = patch.band_local[query_idx[r]];
            let g = crate::operator::query_gradient(&params, &patch, &u, &q).unwrap();
            manual += g.dot(&nc_normals[r]).abs();
        }
        manual /= 4.0;
        assert!(
            (out.l_nc - manual).abs() < 1e-10,
            "batched {} vs manual {}",
            out.l_nc,
            manual
        );
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        // random 10-parameter subset, both modulation modes, alpha > 0,
        // including a non-unit input scale
        for (seed, modulation, input_scale) in [
            (11u64, Modulation::Additive, 1.0),
            (12, Modulation::Multiplicative, 1.0),
            (13, Modulation::Additive, 3.7),
        ] {
            let mut params = OperatorParams::new(12, 2, seed, modulation);
            params.input_scale = input_scale;
            let patch = synthetic_patch(24, 9, seed + 1);
            let (g_in, g_target, query_idx, nc_normals) =
                synthetic_batch(&patch, 6, 3, 3, seed + 2);
            let alpha = 0.01;
            let batch = PatchBatch {
                patch: &patch,
                g_in: &g_in,
                g_target: &g_target,
                query_idx: &query_idx,
                nc_count: 3,
                nc_normals: &nc_normals,
            };
            let out = patch_loss(&params, &batch, alpha, true).unwrap();
            let grads = out.grads.unwrap().flat();

            let flat = flat_params(&params);
            let total = flat.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
            let mut indices: Vec<usize> = (0..total).collect();
            indices.shuffle(&mut rng);
            indices.truncate(9);
            indices.push(total - 1); // always check lambda
            let h = 1e-6;
            for idx in indices {
                let mut plus = flat.clone();
                plus[idx] += h;
                set_flat_params(&mut params, &plus);
                let lp = total_loss_for_check(&params, &batch, alpha).unwrap();
                let mut minus = flat.clone();
                minus[idx] -= h;
                set_flat_params(&mut params, &minus);
                let lm = total_loss_for_check(&params, &batch, alpha).unwrap();
                set_flat_params(&mut params, &flat);
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - grads[idx]).abs() / (1e-8 + fd.abs().max(grads[idx].abs()));
                assert!(
                    rel < 1e-3,
                    "{modulation:?} param {idx}: fd {fd} vs analytic {} (rel {rel})",
                    grads[idx]
                );
            }
        }
    }

    #[test]
    fn losses_are_nonnegative() {
        let params = OperatorParams::new(12, 2, 20, Modulation::Additive);
        let patch = synthetic_patch(20, 6, 21);
        let (g_in, g_target, query_idx, nc_normals) = synthetic_batch(&patch, 5, 4, 2, 22);
        let batch = PatchBatch {
            patch: &patch,
            g_in: &g_in,
            g_target: &g_target,
            query_idx: &query_idx,
            nc_count: 2,
            nc_normals: &nc_normals,
        };
        let out = patch_loss(&params, &batch, 0.5, false).unwrap();
        assert!(out.l_mse >= 0.0);
        assert!(out.l_nc >= 0.0);
    }
}
