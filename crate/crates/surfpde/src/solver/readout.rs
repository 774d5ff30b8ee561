//! Surface readout: Gaussian-kernel interpolation of band values at surface
//! points.

use crate::band::NarrowBand;
use crate::kdtree::KdTree;
use crate::{Error, Result, Vec3};
use rayon::prelude::*;

/// Normalized Gaussian-weighted average of band values within 2 epsilon of
/// each surface point; `width` is the kernel length scale (defaults to
/// epsilon at the call sites).
pub fn readout_surface(
    band: &NarrowBand,
    field: &[f64],
    points: &[Vec3],
    width: f64,
) -> Result<Vec<f64>> {
    assert!(field.len() >= band.len());
    if width <= 0.0 {
        return Err(Error::Config("readout width must be positive".into()));
    }
    let tree = KdTree::build(&band.node_positions);
    let radius = 2.0 * band.epsilon;
    let inv_w2 = 1.0 / (width * width);
    let out: Vec<Result<f64>> = points
        .par_iter()
        .map(|p| {
            let mut nodes = tree.within_radius(p, radius);
            if nodes.is_empty() {
                return Err(Error::Solver(format!(
                    "surface point ({}, {}, {}) has no band node within 2 epsilon",
                    p.x, p.y, p.z
                )));
            }
            nodes.sort_unstable();
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for i in nodes {
                let d2 = (band.node_positions[i] - p).norm_squared();
                let w = (-d2 * inv_w2).exp();
                acc += w * field[i];
                wsum += w;
            }
            Ok(acc / wsum)
        })
        .collect();
    out.into_iter().collect()
}
