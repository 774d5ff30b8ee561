//! Training: monomial supervision on one shape, reconstruction +
//! normal-consistency objective, adaptive-moment optimization.

mod adam;
mod dataset;
mod loss;
mod monomials;

pub use dataset::{build_dataset, build_dataset_subset, TrainingPair};
pub use loss::{loss_mse, loss_nc, patch_loss, total_loss_for_check, Grads, PatchBatch, PatchLoss};
pub use monomials::{enumerate_monomials, Monomial};

pub(crate) use loss::{flat_params, set_flat_params};

use crate::band::NarrowBand;
use crate::operator::{forward_traced, Modulation, OperatorParams};
use crate::patches::{random_rotation, rotate_patch, PatchSet};
use crate::{Error, Result, Vec3};
use adam::Adam;
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Weight of the normal-consistency term.
    pub alpha: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Patches per optimizer step; each contributes all its monomial pairs.
    pub batch_patches: usize,
    pub seed: u64,
    /// Monomial total degree cap.
    pub max_degree: u32,
    /// Band-node queries sampled per patch per step (unbiased subsample of
    /// the full stencil-query loss).
    pub queries_per_pair: usize,
    /// Leading queries that also feed the normal-consistency term.
    pub nc_queries: usize,
    pub embedding_dim: usize,
    pub hidden_depth: usize,
    pub modulation: Modulation,
    pub learn_lambda: bool,
    /// Fraction of patches held out for validation.
    pub val_fraction: f64,
    /// Cap on training patches (subsampled with the config seed).
    pub max_patches: Option<usize>,
    /// Validation cadence in epochs.
    pub val_every: usize,
    /// Coordinate normalization for the operator; `None` derives
    /// 1 / patch radius from the band and stencil size.
    pub input_scale: Option<f64>,
    /// Initial distance-penalty strength. In normalized coordinates the
    /// node spacing is about 0.22 patch radii, so a value around 1/(2 s^2)
    /// with s of one node spacing starts the attention at interpolation
    /// sharpness.
    pub lambda_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1e-2,
            lr: 1e-3,
            epochs: 100,
            batch_patches: 4,
            seed: 0,
            max_degree: 5,
            queries_per_pair: 128,
            nc_queries: 8,
            embedding_dim: 64,
            hidden_depth: 2,
            modulation: Modulation::Additive,
            learn_lambda: true,
            val_fraction: 0.1,
            max_patches: Some(256),
            val_every: 5,
            input_scale: None,
            lambda_init: 8.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_mse: f64,
    pub l_nc: f64,
    pub l_total: f64,
    pub val_rmse: Option<f64>,
}

pub struct TrainOutcome {
    pub params: OperatorParams,
    pub history: Vec<EpochStats>,
    /// Extension RMSE on held-out patches (normalized probe units) at the
    /// final parameters.
    pub final_val_rmse: f64,
}

/// History CSV: "epoch,L_mse,L_nc,L_total,val_rmse".
pub fn write_history_csv<W: Write>(history: &[EpochStats], out: &mut W) -> Result<()> {
    writeln!(out, "epoch,L_mse,L_nc,L_total,val_rmse")?;
    for e in history {
        match e.val_rmse {
            Some(v) => writeln!(out, "{},{},{},{},{}", e.epoch, e.l_mse, e.l_nc, e.l_total, v)?,
            None => writeln!(out, "{},{},{},{},", e.epoch, e.l_mse, e.l_nc, e.l_total)?,
        }
    }
    Ok(())
}

fn item_rng(seed: u64, epoch: usize, patch: usize) -> ChaCha8Rng {
    let mix = seed
        ^ (epoch as u64).wrapping_mul(0x9E3779B97F4A7C15)
        ^ (patch as u64).wrapping_mul(0x85EBCA6B ^ 0xC2B2AE35_00000001);
    ChaCha8Rng::seed_from_u64(mix)
}

/// Extension RMSE against the exact closest-point oracle on the given
/// patches, full stencil queries, normalized probe units.
pub fn validation_rmse(
    params: &OperatorParams,
    patches: &PatchSet,
    pairs: &[TrainingPair],
    patch_ids: &[usize],
) -> Result<f64> {
    let mut sq = 0.0;
    let mut n = 0usize;
    for &pi in patch_ids {
        let patch = &patches.patches[pi];
        let trace = forward_traced(params, patch, &patch.band_local)?;
        for pair in pairs.iter().filter(|p| p.patch == pi) {
            let pred = &trace.weights * &pair.g_in;
            sq += (&pred - &pair.g_target).iter().map(|e| e * e).sum::<f64>();
            n += pair.g_target.len();
        }
    }
    Ok((sq / n.max(1) as f64).sqrt())
}

/// Optimize operator parameters on a single banded shape.
///
/// Pairs are grouped per patch (all monomials of a patch share one attention
/// computation); each batch draws a fresh random rotation per patch and a
/// random query subsample, giving an unbiased stochastic estimate of the
/// full objective. Deterministic for a fixed config.
pub fn train(band: &NarrowBand, patches: &PatchSet, config: &TrainConfig) -> Result<TrainOutcome> {
    if config.alpha < 0.0 {
        return Err(Error::Config("alpha must be >= 0".into()));
    }
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }
    let n_patches = patches.patches.len();
    if n_patches < 3 {
        return Err(Error::Config("need at least 3 patches to train".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // patch subset
    let mut selected: Vec<usize> = (0..n_patches).collect();
    if let Some(cap) = config.max_patches {
        if cap < n_patches {
            selected.shuffle(&mut rng);
            selected.truncate(cap);
            selected.sort_unstable();
        }
    }
    // train/validation split over patches
    let mut order = selected.clone();
    order.shuffle(&mut rng);
    let n_val = ((order.len() as f64 * config.val_fraction).ceil() as usize)
        .min(order.len() - 1)
        .max(1);
    let val_patches: Vec<usize> = {
        let mut v = order[..n_val].to_vec();
        v.sort_unstable();
        v
    };
    let train_patches: Vec<usize> = {
        let mut v = order[n_val..].to_vec();
        v.sort_unstable();
        v
    };

    let all_ids: Vec<usize> = selected.clone();
    let pairs = dataset::build_dataset_subset(band, patches, &all_ids, config.max_degree)?;
    // contiguous pair range per patch
    let mut pair_range: std::collections::HashMap<usize, (usize, usize)> = Default::default();
    for (i, pair) in pairs.iter().enumerate() {
        let e = pair_range.entry(pair.patch).or_insert((i, i));
        e.1 = i + 1;
    }

    let mut params = OperatorParams::new(
        config.embedding_dim,
        config.hidden_depth,
        config.seed,
        config.modulation,
    );
    params.input_scale = config.input_scale.unwrap_or_else(|| {
        1.0 / crate::band::coverage_max_epsilon(band.grid.spacing, patches.config.k)
    });
    params.lambda = config.lambda_init;
    let n_flat = flat_params(&params).len();
    let mut opt = Adam::new(n_flat, config.lr);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        // cosine decay from lr to lr/20
        let progress = epoch as f64 / config.epochs.max(1) as f64;
        opt.lr = config.lr
            * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));

        let mut epoch_order = train_patches.clone();
        let mut erng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64) << 17);
        epoch_order.shuffle(&mut erng);

        let mut sum_mse = 0.0;
        let mut sum_nc = 0.0;
        let mut n_items = 0usize;

        for chunk in epoch_order.chunks(config.batch_patches.max(1)) {
            let results: Vec<Result<(f64, f64, Grads)>> = chunk
                .par_iter()
                .map(|&pi| {
                    let (lo, hi) = pair_range[&pi];
                    let group = &pairs[lo..hi];
                    let base_patch = &patches.patches[pi];
                    let mut prng = item_rng(config.seed, epoch, pi);
                    let rot = random_rotation(&mut prng);
                    let patch = rotate_patch(base_patch, &rot);
                    let k = patch.k();
                    let m = config.queries_per_pair.clamp(1, k);
                    let mut qidx: Vec<usize> = (0..k).collect();
                    qidx.shuffle(&mut prng);
                    qidx.truncate(m);
                    let nc_count = if config.alpha > 0.0 {
                        config.nc_queries.min(m)
                    } else {
                        0
                    };
                    let nc_normals: Vec<Vec3> = qidx[..nc_count]
                        .iter()
                        .map(|&qi| {
                            let node = patch.band_idx[qi] as usize;
                            patch.frame.to_local_vector(&band.cp_normal[node])
                        })
                        .collect();

                    let p = group.len();
                    let g_in = DMatrix::from_fn(k, p, |r, c| group[c].g_in[r]);
                    let g_target = DMatrix::from_fn(m, p, |r, c| group[c].g_target[qidx[r]]);
                    let batch = PatchBatch {
                        patch: &patch,
                        g_in: &g_in,
                        g_target: &g_target,
                        query_idx: &qidx,
                        nc_count,
                        nc_normals: &nc_normals,
                    };
                    let out = patch_loss(&params, &batch, config.alpha, true)?;
                    Ok((out.l_mse, out.l_nc, out.grads.unwrap()))
                })
                .collect();

            let mut grads = Grads::zeros_like(&params);
            let mut batch_items = 0usize;
            for r in results {
                let (l_mse, l_nc, g) = r?;
                sum_mse += l_mse;
                sum_nc += l_nc;
                grads.add(&g);
                batch_items += 1;
                n_items += 1;
            }
            let mut flat_g = grads.flat();
            let scale = 1.0 / batch_items.max(1) as f64;
            for g in flat_g.iter_mut() {
                *g *= scale;
            }
            if !config.learn_lambda {
                *flat_g.last_mut().unwrap() = 0.0;
            }
            let mut flat = flat_params(&params);
            opt.step(&mut flat, &flat_g);
            set_flat_params(&mut params, &flat);
        }

        let l_mse = sum_mse / n_items.max(1) as f64;
        let l_nc = sum_nc / n_items.max(1) as f64;
        let l_total = l_mse + config.alpha * l_nc;
        if !l_total.is_finite() {
            return Err(Error::Solver(format!(
                "training diverged at epoch {epoch}: L_mse = {l_mse}, L_nc = {l_nc}"
            )));
        }
        let val_rmse = if epoch % config.val_every.max(1) == 0 || epoch + 1 == config.epochs {
            Some(validation_rmse(&params, patches, &pairs, &val_patches)?)
        } else {
            None
        };
        history.push(EpochStats {
            epoch,
            l_mse,
            l_nc,
            l_total,
            val_rmse,
        });
    }

    let final_val_rmse = validation_rmse(&params, patches, &pairs, &val_patches)?;
    Ok(TrainOutcome {
        params,
        history,
        final_val_rmse,
    })
}
