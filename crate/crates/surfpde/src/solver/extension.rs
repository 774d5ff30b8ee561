//! Extension operators: restore normal constancy of a band field.
//!
//! The learned extension evaluates the operator once per patch with all
//! stencil nodes as queries and blends overlapping patch predictions with
//! Gaussian weights in the patch centers. Because the attention weights do
//! not depend on the field values, the whole map is linear and row-stochastic
//! and is cached as per-patch weight stencils plus a per-node aggregation
//! table; applying it is a sparse matvec.

use crate::band::NarrowBand;
use crate::operator::{forward, forward_traced, OperatorParams};
use crate::patches::{Patch, PatchSet};
use crate::{Error, Result, Vec3};
use rayon::prelude::*;

/// A linear band re-extension: `extend` must preserve constants exactly.
/// Field vectors start with the band nodes; implementations may append
/// auxiliary entries (the classical method pads the band for its
/// interpolation stencils).
pub trait ExtensionOp: Sync {
    fn field_len(&self) -> usize;
    fn band_len(&self) -> usize;
    /// Evaluate a surface function at every field entry's closest point.
    fn init_field(&self, band: &NarrowBand, f: &dyn Fn(&Vec3) -> f64) -> Vec<f64>;
    fn extend_into(&self, u: &[f64], out: &mut [f64]);

    fn extend(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.field_len()];
        self.extend_into(u, &mut out);
        out
    }
}

/// Cache policy for the learned extension's weight stencils.
#[derive(Debug, Clone, Copy)]
pub struct CacheConfig {
    /// Keep at most this many weights per query row (largest first), then
    /// renormalize. `None` keeps every weight.
    pub max_row_entries: Option<usize>,
    /// Drop weights below this fraction of the row maximum.
    pub min_weight: f64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            max_row_entries: Some(64),
            min_weight: 1e-12,
        }
    }
}

struct PatchStencil {
    /// Band node ids of this patch's stencil (query rows use the same ids).
    band_idx: Vec<u32>,
    row_ptr: Vec<u32>,
    /// Column index into `band_idx`.
    col: Vec<u16>,
    w: Vec<f64>,
}

/// The learned extension, precomputed for fixed parameters, patches and band.
pub struct LearnedExtension {
    stencils: Vec<PatchStencil>,
    patch_k: Vec<u32>,
    // per-node aggregation over covering patches
    agg_ptr: Vec<u32>,
    agg_patch: Vec<u32>,
    agg_row: Vec<u32>,
    agg_w: Vec<f64>,
    band_len: usize,
}

impl LearnedExtension {
    pub fn build(
        params: &OperatorParams,
        patches: &PatchSet,
        band: &NarrowBand,
        temperature: f64,
        cache: CacheConfig,
    ) -> Result<Self> {
        if temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if patches.cover_count.iter().any(|&c| c == 0) {
            return Err(Error::Solver(
                "band node covered by zero patches; coverage violated".into(),
            ));
        }

        let stencils: Vec<PatchStencil> = patches
            .patches
            .par_iter()
            .map(|patch| build_stencil(params, patch, &cache))
            .collect::<Result<_>>()?;

        // node -> (patch, row) with normalized Gaussian weights in the
        // patch-center distance; the temperature lives in patch-radius
        // units so the blend locality is resolution-independent
        let r_patch = crate::band::coverage_max_epsilon(band.grid.spacing, patches.config.k);
        let t_world = temperature * r_patch * r_patch;
        let mut lists: Vec<Vec<(u32, u32, f64)>> = vec![Vec::new(); band.len()];
        for (pi, patch) in patches.patches.iter().enumerate() {
            for (row, &node) in patch.band_idx.iter().enumerate() {
                let d2 = (band.node_positions[node as usize] - patch.frame.center).norm_squared();
                let w = (-d2 / t_world).exp();
                lists[node as usize].push((pi as u32, row as u32, w));
            }
        }
        let mut agg_ptr = Vec::with_capacity(band.len() + 1);
        let mut agg_patch = Vec::new();
        let mut agg_row = Vec::new();
        let mut agg_w = Vec::new();
        agg_ptr.push(0u32);
        for list in &mut lists {
            let total: f64 = list.iter().map(|e| e.2).sum();
            for &(p, r, w) in list.iter() {
                agg_patch.push(p);
                agg_row.push(r);
                agg_w.push(w / total);
            }
            agg_ptr.push(agg_patch.len() as u32);
        }

        Ok(LearnedExtension {
            patch_k: stencils.iter().map(|s| s.band_idx.len() as u32).collect(),
            stencils,
            agg_ptr,
            agg_patch,
            agg_row,
            agg_w,
            band_len: band.len(),
        })
    }

    pub fn stencil_nnz(&self) -> usize {
        self.stencils.iter().map(|s| s.w.len()).sum()
    }
}

fn build_stencil(
    params: &OperatorParams,
    patch: &Patch,
    cache: &CacheConfig,
) -> Result<PatchStencil> {
    let k = patch.k();
    let trace = forward_traced(params, patch, &patch.band_local)?;
    let w = &trace.weights;
    let cap = cache.max_row_entries.unwrap_or(k).max(1).min(k);
    let mut row_ptr = Vec::with_capacity(k + 1);
    let mut col: Vec<u16> = Vec::with_capacity(k * cap.min(64));
    let mut values: Vec<f64> = Vec::with_capacity(k * cap.min(64));
    row_ptr.push(0u32);
    let mut scratch: Vec<(f64, u16)> = Vec::with_capacity(k);
    for r in 0..k {
        scratch.clear();
        let row_max = w.row(r).iter().fold(0.0f64, |a, &b| a.max(b));
        let floor = row_max * cache.min_weight;
        for j in 0..k {
            let v = w[(r, j)];
            if v > floor {
                scratch.push((v, j as u16));
            }
        }
        if scratch.len() > cap {
            scratch.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            scratch.truncate(cap);
        }
        scratch.sort_by_key(|e| e.1);
        let sum: f64 = scratch.iter().map(|e| e.0).sum();
        for &(v, j) in &scratch {
            col.push(j);
            values.push(v / sum);
        }
        row_ptr.push(col.len() as u32);
    }
    Ok(PatchStencil {
        band_idx: patch.band_idx.clone(),
        row_ptr,
        col,
        w: values,
    })
}

impl LearnedExtension {
    fn patch_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.stencils.len() + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for k in &self.patch_k {
            acc += *k as usize;
            offsets.push(acc);
        }
        offsets
    }
}

impl ExtensionOp for LearnedExtension {
    fn field_len(&self) -> usize {
        self.band_len
    }

    fn band_len(&self) -> usize {
        self.band_len
    }

    fn init_field(&self, band: &NarrowBand, f: &dyn Fn(&Vec3) -> f64) -> Vec<f64> {
        band.field_from_cp(f)
    }

    fn extend_into(&self, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.band_len);
        assert_eq!(out.len(), self.band_len);
        let offsets = self.patch_offsets();
        let total: usize = *offsets.last().unwrap();
        let mut preds = vec![0.0f64; total];

        // patch-local predictions
        let chunks: Vec<(usize, &PatchStencil)> = self.stencils.iter().enumerate().collect();
        let pieces: Vec<(usize, Vec<f64>)> = chunks
            .par_iter()
            .map(|&(pi, st)| {
                let k = st.band_idx.len();
                let mut local = vec![0.0f64; k];
                for r in 0..k {
                    let lo = st.row_ptr[r] as usize;
                    let hi = st.row_ptr[r + 1] as usize;
                    let mut acc = 0.0;
                    for e in lo..hi {
                        acc += st.w[e] * u[st.band_idx[st.col[e] as usize] as usize];
                    }
                    local[r] = acc;
                }
                (pi, local)
            })
            .collect();
        for (pi, local) in pieces {
            preds[offsets[pi]..offsets[pi] + local.len()].copy_from_slice(&local);
        }

        // proximity-weighted blending per node
        out.par_iter_mut().enumerate().for_each(|(n, o)| {
            let lo = self.agg_ptr[n] as usize;
            let hi = self.agg_ptr[n + 1] as usize;
            let mut acc = 0.0;
            for e in lo..hi {
                let p = self.agg_patch[e] as usize;
                let r = self.agg_row[e] as usize;
                acc += self.agg_w[e] * preds[offsets[p] + r];
            }
            *o = acc;
        });
    }
}

/// Reference path for the learned extension: per patch, normalize the local
/// field affinely into [-0.5, 0.5], run the operator with the stencil nodes
/// as queries, denormalize, then blend with Gaussian weights. The cached
/// [`LearnedExtension`] matches this map (the affine normalization commutes
/// with convex combinations and cancels exactly).
pub fn extend(
    params: &OperatorParams,
    patches: &PatchSet,
    band: &NarrowBand,
    u: &[f64],
    temperature: f64,
) -> Result<Vec<f64>> {
    if patches.cover_count.iter().any(|&c| c == 0) {
        return Err(Error::Solver(
            "band node covered by zero patches; coverage violated".into(),
        ));
    }
    let preds: Vec<Vec<f64>> = patches
        .patches
        .par_iter()
        .map(|patch| {
            let local_u: Vec<f64> = patch
                .band_idx
                .iter()
                .map(|&i| u[i as usize])
                .collect();
            let lo = local_u.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = local_u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let offset = 0.5 * (lo + hi);
            let scale = if hi - lo > 1e-300 { hi - lo } else { 1.0 };
            let normalized: Vec<f64> = local_u.iter().map(|v| (v - offset) / scale).collect();
            let out = forward(params, patch, &normalized, &patch.band_local)?;
            Ok(out.iter().map(|v| v * scale + offset).collect())
        })
        .collect::<Result<_>>()?;

    let r_patch = crate::band::coverage_max_epsilon(band.grid.spacing, patches.config.k);
    let t_world = temperature * r_patch * r_patch;
    let mut out = vec![0.0; band.len()];
    let mut weight_sum = vec![0.0; band.len()];
    for (pi, patch) in patches.patches.iter().enumerate() {
        for (row, &node) in patch.band_idx.iter().enumerate() {
            let d2 = (band.node_positions[node as usize] - patch.frame.center).norm_squared();
            let w = (-d2 / t_world).exp();
            out[node as usize] += w * preds[pi][row];
            weight_sum[node as usize] += w;
        }
    }
    for (o, w) in out.iter_mut().zip(weight_sum.iter()) {
        *o /= w;
    }
    Ok(out)
}
