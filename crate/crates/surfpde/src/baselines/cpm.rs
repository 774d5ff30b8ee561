//! Classical closest-point re-extension: overwrite each node with the
//! tricubic interpolation of the field at its closest surface point.
//!
//! Interpolation stencils near the band rim reach up to 2*sqrt(3) dx from
//! the surface, past the epsilon band, so the field vector is padded with a
//! shell of nodes out to epsilon + 2 dx. Padding nodes are re-extended by
//! the same interpolation pass and are initialized exactly from the initial
//! surface data, which keeps every stencil read meaningful from step one.

use super::tricubic::InterpStencil;
use crate::band::NarrowBand;
use crate::geometry::{Surface, SurfaceSample};
use crate::solver::ExtensionOp;
use crate::{Error, Result, Vec3};
use rayon::prelude::*;
use std::collections::HashMap;

pub struct CpmExtension {
    band_len: usize,
    /// Closest points and grid positions for the padding shell (band nodes
    /// keep theirs in the band itself).
    pad_cp: Vec<Vec3>,
    pub pad_positions: Vec<Vec3>,
    // CSR over field slots: each row interpolates the field at that slot's cp
    row_ptr: Vec<u32>,
    col: Vec<u32>,
    w: Vec<f64>,
}

impl CpmExtension {
    pub fn build(
        band: &NarrowBand,
        surface: &Surface,
        samples: &[SurfaceSample],
    ) -> Result<Self> {
        let grid = &band.grid;
        let dx = grid.spacing;
        let eps_pad = band.epsilon + 2.0 * dx;

        // padding shell: nodes with epsilon < dist <= epsilon + 2 dx, found
        // by the same scatter-and-confirm as the band itself
        let reach = eps_pad + dx;
        let mut marked = vec![false; grid.node_count()];
        for s in samples {
            let p = s.position;
            let lo: Vec<i32> = (0..3)
                .map(|a| ((p[a] - reach - grid.origin[a]) / dx).ceil() as i32)
                .collect();
            let hi: Vec<i32> = (0..3)
                .map(|a| ((p[a] + reach - grid.origin[a]) / dx).floor() as i32)
                .collect();
            for i in lo[0].max(0)..=hi[0].min(grid.dims[0] as i32 - 1) {
                for j in lo[1].max(0)..=hi[1].min(grid.dims[1] as i32 - 1) {
                    for k in lo[2].max(0)..=hi[2].min(grid.dims[2] as i32 - 1) {
                        marked[grid.linear([i, j, k])] = true;
                    }
                }
            }
        }
        let mut pad_nodes: Vec<[i32; 3]> = Vec::new();
        for i in 0..grid.dims[0] as i32 {
            for j in 0..grid.dims[1] as i32 {
                for k in 0..grid.dims[2] as i32 {
                    let idx = [i, j, k];
                    if marked[grid.linear(idx)] && band.index_of(idx).is_none() {
                        pad_nodes.push(idx);
                    }
                }
            }
        }
        drop(marked);
        let pad_confirmed: Vec<Option<([i32; 3], Vec3)>> = pad_nodes
            .par_iter()
            .map(|&idx| {
                let pos = grid.node_position(idx);
                match surface.closest_point(&pos) {
                    Ok((cp, _)) => {
                        let dist = (pos - cp).norm();
                        (dist <= eps_pad).then_some((idx, cp))
                    }
                    Err(_) => None,
                }
            })
            .collect();

        let mut slot_of: HashMap<[i32; 3], u32> = HashMap::new();
        for (i, &idx) in band.nodes.iter().enumerate() {
            slot_of.insert(idx, i as u32);
        }
        let mut pad_cp = Vec::new();
        let mut pad_positions = Vec::new();
        let mut next = band.len() as u32;
        for entry in pad_confirmed.into_iter().flatten() {
            slot_of.insert(entry.0, next);
            pad_positions.push(grid.node_position(entry.0));
            pad_cp.push(entry.1);
            next += 1;
        }

        let field_len = band.len() + pad_cp.len();
        let cp_of = |slot: usize| -> Vec3 {
            if slot < band.len() {
                band.cp[slot]
            } else {
                pad_cp[slot - band.len()]
            }
        };

        let mut row_ptr = Vec::with_capacity(field_len + 1);
        let mut col = Vec::with_capacity(field_len * 64);
        let mut w = Vec::with_capacity(field_len * 64);
        row_ptr.push(0u32);
        for slot in 0..field_len {
            let stencil = InterpStencil::at(grid, &cp_of(slot));
            let mut sum = 0.0;
            let start = col.len();
            for (idx, weight) in stencil.entries() {
                let s = slot_of.get(&idx).copied().ok_or_else(|| {
                    Error::Solver(format!(
                        "interpolation stencil for node {:?} escapes the padded band at {:?}",
                        if slot < band.len() {
                            band.nodes[slot]
                        } else {
                            [-1, -1, -1]
                        },
                        idx
                    ))
                })?;
                col.push(s);
                w.push(weight);
                sum += weight;
            }
            // renormalize the tensor weights (sum is 1 up to rounding) so
            // constants are exact fixed points
            for v in &mut w[start..] {
                *v /= sum;
            }
            row_ptr.push(col.len() as u32);
        }

        Ok(CpmExtension {
            band_len: band.len(),
            pad_cp,
            pad_positions,
            row_ptr,
            col,
            w,
        })
    }

    pub fn padding_len(&self) -> usize {
        self.pad_cp.len()
    }
}

impl ExtensionOp for CpmExtension {
    fn field_len(&self) -> usize {
        self.band_len + self.pad_cp.len()
    }

    fn band_len(&self) -> usize {
        self.band_len
    }

    fn init_field(&self, band: &NarrowBand, f: &dyn Fn(&Vec3) -> f64) -> Vec<f64> {
        let mut field = band.field_from_cp(f);
        field.extend(self.pad_cp.iter().map(f));
        field
    }

    fn extend_into(&self, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.field_len());
        assert_eq!(out.len(), self.field_len());
        out.par_iter_mut().enumerate().for_each(|(r, o)| {
            let lo = self.row_ptr[r] as usize;
            let hi = self.row_ptr[r + 1] as usize;
            let mut acc = 0.0;
            for e in lo..hi {
                acc += self.w[e] * u[self.col[e] as usize];
            }
            *o = acc;
        });
    }
}

/// One re-extension pass (the classical method's core operation).
pub fn cpm_reextend(ext: &CpmExtension, field: &[f64]) -> Vec<f64> {
    ext.extend(field)
}
