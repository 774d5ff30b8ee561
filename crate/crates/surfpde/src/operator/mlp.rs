//! Dense feed-forward network with rectifier hidden layers, identity output.
//!
//! Batches are matrix columns. Besides the usual forward/backward pair there
//! is a forward-mode tangent (Jacobian-vector product with respect to the
//! input) and the parameter gradient of that tangent under the frozen-mask
//! convention, which the normal-consistency loss needs: the rectifier masks
//! are treated as locally constant, exact almost everywhere.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// (out, in) weight matrix.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Forward cache: layer inputs and pre-activations, reused by every backward
/// and tangent pass.
pub struct MlpCache {
    /// acts[0] is the input; acts[l+1] the output of layer l.
    pub acts: Vec<DMatrix<f64>>,
    /// Pre-activations per layer.
    pub zs: Vec<DMatrix<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().unwrap()
    }
}

/// Tangent cache from a forward-mode pass.
pub struct MlpTangent {
    /// ts[0] is the input tangent; ts[l+1] the (masked) tangent after layer l.
    pub ts: Vec<DMatrix<f64>>,
}

impl MlpTangent {
    pub fn output(&self) -> &DMatrix<f64> {
        self.ts.last().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            w: mlp
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols()))
                .collect(),
            b: mlp.layers.iter().map(|l| DVector::zeros(l.b.len())).collect(),
        }
    }
}

impl Mlp {
    /// He-initialized network with the given layer widths, e.g. [3, 64, 64, 64].
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (nin, nout) = (w[0], w[1]);
                let std = (2.0 / nin as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(nout, nin, |_, _| {
                        rng.sample::<f64, _>(StandardNormal) * std
                    }),
                    b: DVector::zeros(nout),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.w.nrows()));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> MlpCache {
        let n_layers = self.layers.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        let mut zs = Vec::with_capacity(n_layers);
        acts.push(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            let a = if l + 1 < n_layers {
                z.map(|v| v.max(0.0))
            } else {
                z.clone()
            };
            zs.push(z);
            acts.push(a);
        }
        MlpCache { acts, zs }
    }

    /// Standard backprop; accumulates into `grads`, returns the input gradient.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: &DMatrix<f64>,
        grads: &mut MlpGrads,
    ) -> DMatrix<f64> {
        let n_layers = self.layers.len();
        let mut delta = grad_out.clone();
        for l in (0..n_layers).rev() {
            grads.w[l] += &delta * cache.acts[l].transpose();
            for col in delta.column_iter() {
                grads.b[l] += col;
            }
            let mut prev = self.layers[l].w.transpose() * &delta;
            if l > 0 {
                prev.zip_apply(&cache.zs[l - 1], |g, z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            delta = prev;
        }
        delta
    }

    /// Forward-mode directional derivative: output tangent for input tangent
    /// `t` at the point captured by `cache`.
    pub fn jvp(&self, cache: &MlpCache, t: &DMatrix<f64>) -> MlpTangent {
        let n_layers = self.layers.len();
        let mut ts = Vec::with_capacity(n_layers + 1);
        ts.push(t.clone());
        for l in 0..n_layers {
            let mut tz = &self.layers[l].w * ts.last().unwrap();
            if l + 1 < n_layers {
                tz.zip_apply(&cache.zs[l], |g, z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            ts.push(tz);
        }
        MlpTangent { ts }
    }

    /// Parameter gradient of `sum_ij R_ij * jvp_out_ij` with rectifier masks
    /// frozen. Biases get no gradient along this path (the tangent never
    /// touches them).
    pub fn jvp_param_backward(
        &self,
        cache: &MlpCache,
        tangent: &MlpTangent,
        grad_v: &DMatrix<f64>,
        grads: &mut MlpGrads,
    ) {
        let n_layers = self.layers.len();
        let mut rho = grad_v.clone();
        for l in (0..n_layers).rev() {
            // tangent at layer l: t_{l+1} = mask_l (W_l t_l); output layer has
            // no mask
            if l + 1 < n_layers {
                rho.zip_apply(&cache.zs[l], |g, z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            grads.w[l] += &rho * tangent.ts[l].transpose();
            rho = self.layers[l].w.transpose() * rho;
        }
    }

    /// Flatten parameters for optimizer updates and testing.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut i = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = flat[i];
                i += 1;
            }
            for v in l.b.iter_mut() {
                *v = flat[i];
                i += 1;
            }
        }
        assert_eq!(i, flat.len());
    }
}

impl MlpGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(self.b.iter()) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_mlp(seed: u64, dims: &[usize]) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::new(dims, &mut rng)
    }

    /// A point is "safe" for finite differences when no pre-activation sits
    /// near a rectifier kink.
    fn kink_free(mlp: &Mlp, x: &DMatrix<f64>, tol: f64) -> bool {
        let cache = mlp.forward(x);
        cache
            .zs
            .iter()
            .take(mlp.layers.len() - 1)
            .all(|z| z.iter().all(|&v| v.abs() > tol))
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut mlp = test_mlp(1, &[3, 8, 8, 4]);
        let x = DMatrix::from_column_slice(3, 2, &[0.3, -0.2, 0.9, 0.5, 0.1, -0.7]);
        assert!(kink_free(&mlp, &x, 1e-6));
        // scalar loss: weighted sum of outputs
        let r = DMatrix::from_fn(4, 2, |i, j| 0.3 + 0.1 * i as f64 - 0.2 * j as f64);
        let loss = |m: &Mlp| (m.forward(&x).output().component_mul(&r)).sum();

        let mut grads = MlpGrads::zeros_like(&mlp);
        let cache = mlp.forward(&x);
        mlp.backward(&cache, &r, &mut grads);
        let analytic = grads.flat();

        let flat = mlp.flat_params();
        let h = 1e-6;
        for idx in [0usize, 5, 23, 40, 60, flat.len() - 1] {
            let mut plus = flat.clone();
            plus[idx] += h;
            mlp.set_flat_params(&plus);
            let lp = loss(&mlp);
            let mut minus = flat.clone();
            minus[idx] -= h;
            mlp.set_flat_params(&minus);
            let lm = loss(&mlp);
            mlp.set_flat_params(&flat);
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - analytic[idx]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param {idx}: fd {fd} vs analytic {}",
                analytic[idx]
            );
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mlp = test_mlp(2, &[3, 10, 5]);
        let x = DMatrix::from_column_slice(3, 1, &[0.4, 0.2, -0.3]);
        assert!(kink_free(&mlp, &x, 1e-6));
        let r = DMatrix::from_fn(5, 1, |i, _| (i as f64 + 1.0) * 0.2);
        let cache = mlp.forward(&x);
        let mut grads = MlpGrads::zeros_like(&mlp);
        let gx = mlp.backward(&cache, &r, &mut grads);
        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x.clone();
            xp[(i, 0)] += h;
            let mut xm = x.clone();
            xm[(i, 0)] -= h;
            let fd = ((mlp.forward(&xp).output().component_mul(&r)).sum()
                - (mlp.forward(&xm).output().component_mul(&r)).sum())
                / (2.0 * h);
            assert!((fd - gx[(i, 0)]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn jvp_matches_directional_finite_difference() {
        let mlp = test_mlp(3, &[3, 12, 12, 6]);
        let x = DMatrix::from_column_slice(3, 1, &[0.1, 0.6, -0.4]);
        assert!(kink_free(&mlp, &x, 1e-6));
        let dir = DMatrix::from_column_slice(3, 1, &[0.3, -0.5, 0.8]);
        let cache = mlp.forward(&x);
        let tangent = mlp.jvp(&cache, &dir);
        let h = 1e-6;
        let plus = mlp.forward(&(&x + &dir * h));
        let minus = mlp.forward(&(&x - &dir * h));
        let fd = (plus.output() - minus.output()) / (2.0 * h);
        let err = (tangent.output() - &fd).norm() / fd.norm().max(1.0);
        assert!(err < 1e-6, "jvp error {err}");
    }

    #[test]
    fn jvp_param_backward_matches_finite_differences() {
        // d/dtheta of r . (J(x) n) with frozen masks equals the true
        // derivative away from kinks
        let mut mlp = test_mlp(4, &[3, 8, 8, 4]);
        let x = DMatrix::from_column_slice(3, 1, &[0.25, -0.15, 0.65]);
        assert!(kink_free(&mlp, &x, 1e-5));
        let n = DMatrix::from_column_slice(3, 1, &[0.6, 0.64, -0.48]);
        let r = DMatrix::from_column_slice(4, 1, &[0.2, -0.4, 0.1, 0.5]);

        let scalar = |m: &Mlp| {
            let cache = m.forward(&x);
            let t = m.jvp(&cache, &n);
            t.output().component_mul(&r).sum()
        };

        let cache = mlp.forward(&x);
        let tangent = mlp.jvp(&cache, &n);
        let mut grads = MlpGrads::zeros_like(&mlp);
        mlp.jvp_param_backward(&cache, &tangent, &r, &mut grads);
        let analytic = grads.flat();

        let flat = mlp.flat_params();
        let h = 1e-6;
        for idx in [0usize, 7, 30, 55, flat.len() - 5] {
            let mut plus = flat.clone();
            plus[idx] += h;
            mlp.set_flat_params(&plus);
            let lp = scalar(&mlp);
            let mut minus = flat.clone();
            minus[idx] -= h;
            mlp.set_flat_params(&minus);
            let lm = scalar(&mlp);
            mlp.set_flat_params(&flat);
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - analytic[idx]).abs() <= 1e-5 * (1.0 + fd.abs()),
                "param {idx}: fd {fd} vs analytic {}",
                analytic[idx]
            );
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let mut mlp = test_mlp(5, &[6, 16, 8]);
        let flat = mlp.flat_params();
        assert_eq!(flat.len(), mlp.param_count());
        let copy = flat.clone();
        mlp.set_flat_params(&copy);
        assert_eq!(mlp.flat_params(), flat);
    }
}
