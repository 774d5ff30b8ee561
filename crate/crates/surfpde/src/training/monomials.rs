//! Monomial probe functions x^i y^j z^k.

use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Monomial {
    pub i: u8,
    pub j: u8,
    pub k: u8,
}

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.i as u32 + self.j as u32 + self.k as u32
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        p.x.powi(self.i as i32) * p.y.powi(self.j as i32) * p.z.powi(self.k as i32)
    }
}

impl std::fmt::Display for Monomial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "x^{}y^{}z^{}", self.i, self.j, self.k)
    }
}

/// All exponent triples with total degree <= `max_deg`, in graded
/// lexicographic order.
pub fn enumerate_monomials(max_deg: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for deg in 0..=max_deg {
        for i in (0..=deg).rev() {
            for j in (0..=(deg - i)).rev() {
                let k = deg - i - j;
                out.push(Monomial {
                    i: i as u8,
                    j: j as u8,
                    k: k as u8,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_is_the_constant() {
        let m = enumerate_monomials(0);
        assert_eq!(m, vec![Monomial { i: 0, j: 0, k: 0 }]);
        assert_eq!(m[0].eval(&Vec3::new(3.0, -2.0, 5.0)), 1.0);
    }

    #[test]
    fn degree_one_has_four() {
        let m = enumerate_monomials(1);
        assert_eq!(m.len(), 4);
        assert_eq!(m[1], Monomial { i: 1, j: 0, k: 0 });
    }

    #[test]
    fn degree_five_count_matches_binomial_oracle() {
        // C(5+3, 3) = 56 by direct enumeration
        let mut count = 0u32;
        for i in 0..=5u32 {
            for j in 0..=5 - i {
                for _k in 0..=5 - i - j {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 56);
        assert_eq!(enumerate_monomials(5).len(), 56);
    }

    #[test]
    fn order_is_graded_and_deterministic() {
        let m = enumerate_monomials(3);
        for w in m.windows(2) {
            assert!(w[0].degree() <= w[1].degree());
        }
        assert_eq!(m, enumerate_monomials(3));
        // no duplicates
        let set: std::collections::HashSet<_> = m.iter().collect();
        assert_eq!(set.len(), m.len());
    }

    #[test]
    fn eval_values() {
        let m = Monomial { i: 2, j: 1, k: 0 };
        assert_eq!(m.eval(&Vec3::new(3.0, 4.0, 9.0)), 36.0);
        let c = Monomial { i: 0, j: 0, k: 0 };
        assert_eq!(c.eval(&Vec3::new(0.0, 0.0, 0.0)), 1.0);
    }
}
