//! Tricubic Lagrange interpolation on the regular grid: degree-3 tensor
//! stencils reproduce all polynomials up to cubics, the interpolation order
//! classical closest-point re-extension relies on.

use crate::band::Grid;
use crate::Vec3;

/// 4x4x4 interpolation stencil: base node and per-axis Lagrange weights.
/// Per-axis weights sum to 1 (partition of unity).
#[derive(Debug, Clone)]
pub struct InterpStencil {
    /// Grid index of the axis-wise second stencil node (offset -1 .. +2).
    pub base: [i32; 3],
    pub weights: [[f64; 4]; 3],
}

/// Cubic Lagrange basis over nodes at offsets {-1, 0, 1, 2}, local
/// coordinate t in [0, 1] between nodes 0 and 1.
pub fn lagrange_cubic(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

impl InterpStencil {
    pub fn at(grid: &Grid, p: &Vec3) -> Self {
        let mut base = [0i32; 3];
        let mut weights = [[0.0; 4]; 3];
        for a in 0..3 {
            let s = (p[a] - grid.origin[a]) / grid.spacing;
            let cell = s.floor();
            let t = s - cell;
            base[a] = cell as i32;
            weights[a] = lagrange_cubic(t);
        }
        InterpStencil { base, weights }
    }

    /// The 64 (grid index, weight) pairs of the tensor-product stencil.
    pub fn entries(&self) -> impl Iterator<Item = ([i32; 3], f64)> + '_ {
        (0..4).flat_map(move |i| {
            (0..4).flat_map(move |j| {
                (0..4).map(move |k| {
                    (
                        [
                            self.base[0] + i as i32 - 1,
                            self.base[1] + j as i32 - 1,
                            self.base[2] + k as i32 - 1,
                        ],
                        self.weights[0][i] * self.weights[1][j] * self.weights[2][k],
                    )
                })
            })
        })
    }

    pub fn interpolate<F: Fn([i32; 3]) -> f64>(&self, value_at: F) -> f64 {
        self.entries().map(|(idx, w)| w * value_at(idx)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_grid() -> Grid {
        Grid {
            origin: Vec3::new(-1.0, -1.0, -1.0),
            spacing: 0.25,
            dims: [12, 12, 12],
        }
    }

    #[test]
    fn per_axis_weights_sum_to_one() {
        for t in [0.0, 0.1, 0.5, 0.77, 1.0] {
            let w = lagrange_cubic(t);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14, "t = {t}");
        }
    }

    #[test]
    fn reproduces_random_cubics_exactly() {
        // property: any trivariate polynomial of per-axis degree <= 3 is
        // reproduced to machine precision
        let grid = test_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let coef: Vec<f64> = (0..20).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let poly = |p: Vec3| -> f64 {
                let mut acc = 0.0;
                let mut c = coef.iter();
                for (i, j, k) in [
                    (0, 0, 0),
                    (1, 0, 0),
                    (0, 1, 0),
                    (0, 0, 1),
                    (2, 0, 0),
                    (0, 2, 0),
                    (0, 0, 2),
                    (1, 1, 0),
                    (1, 0, 1),
                    (0, 1, 1),
                    (3, 0, 0),
                    (0, 3, 0),
                    (0, 0, 3),
                    (2, 1, 0),
                    (1, 2, 0),
                    (2, 0, 1),
                    (1, 0, 2),
                    (0, 2, 1),
                    (0, 1, 2),
                    (1, 1, 1),
                ] {
                    acc += c.next().unwrap()
                        * p.x.powi(i)
                        * p.y.powi(j)
                        * p.z.powi(k);
                }
                acc
            };
            let q = Vec3::new(
                rng.random::<f64>() * 0.8 - 0.4,
                rng.random::<f64>() * 0.8 - 0.4,
                rng.random::<f64>() * 0.8 - 0.4,
            );
            let stencil = InterpStencil::at(&grid, &q);
            let got = stencil.interpolate(|idx| poly(grid.node_position(idx)));
            let want = poly(q);
            assert!(
                (got - want).abs() < 1e-9 * (1.0 + want.abs()),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn constant_reproduced() {
        let grid = test_grid();
        let stencil = InterpStencil::at(&grid, &Vec3::new(0.321, -0.04, 0.17));
        let got = stencil.interpolate(|_| 9.5);
        assert!((got - 9.5).abs() < 1e-13);
    }

    #[test]
    fn stencil_brackets_the_point() {
        let grid = test_grid();
        let p = Vec3::new(0.1, 0.2, -0.3);
        let st = InterpStencil::at(&grid, &p);
        for a in 0..3 {
            let lo = grid.origin[a] + st.base[a] as f64 * grid.spacing;
            assert!(p[a] >= lo - 1e-12 && p[a] <= lo + grid.spacing + 1e-12);
        }
        // 64 entries, total weight 1
        let total: f64 = st.entries().map(|(_, w)| w).sum();
        assert_eq!(st.entries().count(), 64);
        assert!((total - 1.0).abs() < 1e-13);
    }
}
