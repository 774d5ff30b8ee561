//! Real spherical harmonics and the closed-form sphere solutions built on
//! them: Y_l^m are Laplace-Beltrami eigenfunctions on the unit sphere with
//! eigenvalue -l(l+1), so heat decays each mode by e^(-l(l+1)t) and Poisson
//! with forcing Y_l^m has solution -Y_l^m / (l(l+1)).

use crate::{Error, Result, Vec3};

/// Orthonormal real spherical harmonic Y_l^m evaluated at a direction
/// (normalized internally). Sign convention without the Condon-Shortley
/// phase: Y_1^1 is positive along +x.
pub fn real_sh(l: u32, m: i32, p: &Vec3) -> f64 {
    assert!(m.unsigned_abs() <= l, "|m| must not exceed l");
    let r = p.norm();
    assert!(r > 0.0, "direction must be nonzero");
    let ct = (p.z / r).clamp(-1.0, 1.0);
    let phi = p.y.atan2(p.x);
    let am = m.unsigned_abs();
    let norm = sh_norm(l, am);
    let plm = assoc_legendre(l, am, ct);
    if m > 0 {
        std::f64::consts::SQRT_2 * norm * plm * (am as f64 * phi).cos()
    } else if m < 0 {
        std::f64::consts::SQRT_2 * norm * plm * (am as f64 * phi).sin()
    } else {
        norm * plm
    }
}

/// sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!)
fn sh_norm(l: u32, m: u32) -> f64 {
    let mut ratio = 1.0f64;
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2.0 * l as f64 + 1.0) / (4.0 * std::f64::consts::PI) * ratio).sqrt()
}

/// Associated Legendre P_l^m(x) without the Condon-Shortley phase.
fn assoc_legendre(l: u32, m: u32, x: f64) -> f64 {
    let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    // P_m^m = (2m-1)!! (1-x^2)^{m/2}
    let mut pmm = 1.0f64;
    let mut fact = 1.0f64;
    for _ in 0..m {
        pmm *= fact * somx2;
        fact += 2.0;
    }
    if l == m {
        return pmm;
    }
    // P_{m+1}^m = x (2m+1) P_m^m
    let mut pmmp1 = x * (2.0 * m as f64 + 1.0) * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = (x * (2.0 * ll as f64 - 1.0) * pmmp1 - (ll + m - 1) as f64 * pmm)
            / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SphereProblem {
    Heat,
    Poisson,
}

/// Closed-form unit-sphere solution field.
///
/// Heat with u0 = Y_l^m at time t: e^(-l(l+1)t) Y_l^m. Poisson with
/// f = Y_l^m: u = -Y_l^m / (l(l+1)); l = 0 has no zero-mean solution.
pub fn sphere_analytic(
    kind: SphereProblem,
    l: u32,
    m: i32,
    t: Option<f64>,
) -> Result<Box<dyn Fn(&Vec3) -> f64 + Sync + Send>> {
    match kind {
        SphereProblem::Heat => {
            let t = t.ok_or_else(|| Error::Config("heat solution needs a time".into()))?;
            let decay = (-(l as f64) * (l as f64 + 1.0) * t).exp();
            Ok(Box::new(move |p| decay * real_sh(l, m, p)))
        }
        SphereProblem::Poisson => {
            if l == 0 {
                return Err(Error::Config(
                    "Poisson with l = 0 forcing violates the zero-mean gauge".into(),
                ));
            }
            let scale = -1.0 / (l as f64 * (l as f64 + 1.0));
            Ok(Box::new(move |p| scale * real_sh(l, m, p)))
        }
    }
}
