//! Monomial supervision pairs: probe values at band nodes (input) against
//! probe values at their closest surface points (target).

use super::monomials::{enumerate_monomials, Monomial};
use crate::band::NarrowBand;
use crate::patches::PatchSet;
use crate::Result;
use nalgebra::DVector;

/// One supervised pair for one patch: the probe evaluated on the stencil and
/// on the stencil's closest points, both mapped by the same affine
/// normalization taking the input range to [-0.5, 0.5].
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub patch: usize,
    pub monomial: Monomial,
    pub g_in: DVector<f64>,
    pub g_target: DVector<f64>,
    /// normalized = (raw - offset) / scale
    pub offset: f64,
    pub scale: f64,
}

impl TrainingPair {
    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.scale + self.offset
    }
}

/// Build the full dataset: every patch paired with every monomial of total
/// degree <= `max_deg`.
pub fn build_dataset(
    band: &NarrowBand,
    patches: &PatchSet,
    max_deg: u32,
) -> Result<Vec<TrainingPair>> {
    let all: Vec<usize> = (0..patches.patches.len()).collect();
    build_dataset_subset(band, patches, &all, max_deg)
}

/// Dataset restricted to the given patch indices (used by training to cap
/// memory on dense patch covers).
pub fn build_dataset_subset(
    band: &NarrowBand,
    patches: &PatchSet,
    patch_ids: &[usize],
    max_deg: u32,
) -> Result<Vec<TrainingPair>> {
    let monomials = enumerate_monomials(max_deg);
    let mut out = Vec::with_capacity(patch_ids.len() * monomials.len());
    for &pi in patch_ids {
        let patch = &patches.patches[pi];
        for &monomial in &monomials {
            let raw_in: Vec<f64> = patch
                .band_idx
                .iter()
                .map(|&i| monomial.eval(&band.node_positions[i as usize]))
                .collect();
            let raw_tgt: Vec<f64> = patch
                .band_idx
                .iter()
                .map(|&i| monomial.eval(&band.cp[i as usize]))
                .collect();
            let lo = raw_in.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = raw_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let offset = 0.5 * (lo + hi);
            let scale = if hi - lo > 1e-12 { hi - lo } else { 1.0 };
            let norm = |v: f64| (v - offset) / scale;
            out.push(TrainingPair {
                patch: pi,
                monomial,
                g_in: DVector::from_iterator(raw_in.len(), raw_in.iter().map(|&v| norm(v))),
                g_target: DVector::from_iterator(raw_tgt.len(), raw_tgt.iter().map(|&v| norm(v))),
                offset,
                scale,
            });
        }
    }
    Ok(out)
}
