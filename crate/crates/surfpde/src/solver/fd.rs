//! Finite differences on the band: 7-point Laplacian and forward Euler.

use crate::band::{BoundaryTags, NarrowBand, NO_NEIGHBOR};
use crate::{Error, Result};
use rayon::prelude::*;

/// 7-point stencil (sum of axis neighbors - 6 center) / dx^2 on interior
/// nodes; non-interior entries are 0 (they carry no full stencil and are
/// refreshed by re-extension instead).
pub fn laplacian_fd(band: &NarrowBand, field: &[f64]) -> Vec<f64> {
    assert!(field.len() >= band.len());
    let inv_dx2 = 1.0 / (band.grid.spacing * band.grid.spacing);
    let mut out = vec![0.0; field.len()];
    out[..band.len()]
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, o)| {
            if !band.interior_mask[i] {
                return;
            }
            let nb = &band.neighbor_table[i];
            let mut acc = 0.0;
            for &n in nb {
                debug_assert_ne!(n, NO_NEIGHBOR);
                acc += field[n as usize];
            }
            *o = (acc - 6.0 * field[i]) * inv_dx2;
        });
    out
}

/// Stability limit for the explicit 3D step.
pub fn max_stable_dt(spacing: f64) -> f64 {
    spacing * spacing / 6.0
}

/// Forward-Euler heat step on interior nodes; everything else (band rim and
/// any auxiliary field entries) copies the extended value. Dirichlet tags
/// are re-clamped after the step.
pub fn heat_step(
    band: &NarrowBand,
    extended: &[f64],
    dt: f64,
    tags: Option<&BoundaryTags>,
) -> Result<Vec<f64>> {
    if dt > max_stable_dt(band.grid.spacing) + 1e-15 {
        return Err(Error::Config(format!(
            "dt = {dt} exceeds the explicit stability bound dx^2/6 = {}",
            max_stable_dt(band.grid.spacing)
        )));
    }
    let lap = laplacian_fd(band, extended);
    let mut next: Vec<f64> = extended.to_vec();
    next[..band.len()]
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, v)| {
            if band.interior_mask[i] {
                *v += dt * lap[i];
            }
        });
    if let Some(tags) = tags {
        tags.apply(&mut next);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band::{build_grid, extract_band};
    use crate::geometry::{sample_surface, AnalyticSphere, Surface};

    fn sphere_band() -> NarrowBand {
        let surf = Surface::Sphere(AnalyticSphere::unit());
        let grid = build_grid(&surf.bbox(), 0.1, 0.3).unwrap();
        let samples = sample_surface(&surf, 8_000, 1).unwrap();
        extract_band(&grid, &surf, &samples, 0.25).unwrap()
    }

    #[test]
    fn quadratics_are_exact() {
        let band = sphere_band();
        // x^2 -> 2, linear -> 0, r^2 -> 6, all exact on interior nodes
        let fx2: Vec<f64> = band.node_positions.iter().map(|p| p.x * p.x).collect();
        let linear: Vec<f64> = band
            .node_positions
            .iter()
            .map(|p| 1.7 * p.x - 0.3 * p.y + 0.9 * p.z + 4.0)
            .collect();
        let r2: Vec<f64> = band.node_positions.iter().map(|p| p.norm_squared()).collect();
        let lx2 = laplacian_fd(&band, &fx2);
        let llin = laplacian_fd(&band, &linear);
        let lr2 = laplacian_fd(&band, &r2);
        let mut interior = 0;
        for i in 0..band.len() {
            if band.interior_mask[i] {
                assert!((lx2[i] - 2.0).abs() < 1e-9, "x^2: {}", lx2[i]);
                assert!(llin[i].abs() < 1e-10, "linear: {}", llin[i]);
                assert!((lr2[i] - 6.0).abs() < 1e-9, "r^2: {}", lr2[i]);
                interior += 1;
            } else {
                assert_eq!(lx2[i], 0.0, "non-interior flagged as zero");
            }
        }
        assert!(interior > 0);
    }

    #[test]
    fn constant_field_unchanged_by_step() {
        let band = sphere_band();
        let u = vec![5.0; band.len()];
        let mut field = u.clone();
        let dt = band.grid.spacing * band.grid.spacing / 8.0;
        for _ in 0..100 {
            field = heat_step(&band, &field, dt, None).unwrap();
        }
        for v in &field {
            assert!((v - 5.0).abs() < 1e-8, "constant drift: {}", (v - 5.0).abs());
        }
    }

    #[test]
    fn linear_field_stationary() {
        let band = sphere_band();
        let u: Vec<f64> = band
            .node_positions
            .iter()
            .map(|p| 0.2 * p.x + 0.5 * p.y - p.z)
            .collect();
        let dt = band.grid.spacing * band.grid.spacing / 8.0;
        let next = heat_step(&band, &u, dt, None).unwrap();
        for (a, b) in u.iter().zip(next.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn dt_bound_enforced() {
        let band = sphere_band();
        let u = vec![0.0; band.len()];
        let dx = band.grid.spacing;
        assert!(heat_step(&band, &u, dx * dx / 5.0, None).is_err());
        assert!(heat_step(&band, &u, dx * dx / 6.5, None).is_ok());
    }

    #[test]
    fn dirichlet_clamp_applied_after_step() {
        use crate::band::{BoundarySpec, BoundaryValue};
        let band = sphere_band();
        let spec = BoundarySpec {
            axis: 2,
            plane_value: 0.0,
            keep_positive: true,
            value: BoundaryValue::Const(1.0),
            tol: None,
        };
        let tags = crate::band::boundary_tag(&band, &spec);
        let u = vec![0.0; band.len()];
        let dt = band.grid.spacing * band.grid.spacing / 8.0;
        let next = heat_step(&band, &u, dt, Some(&tags)).unwrap();
        for &i in &tags.indices {
            assert_eq!(next[i as usize], 1.0, "tagged node clamped exactly");
        }
    }
}
