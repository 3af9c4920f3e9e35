//! Exact rank of 0/1 circulant matrices.
//!
//! A circulant with first-row offsets `O` has rank `N - deg gcd(f, x^N - 1)`
//! where `f(x) = Σ_{o ∈ O} x^o`. The gcd is taken over ℚ[x] with a primitive
//! pseudo-remainder sequence on big integers, so the degree is exact.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::{Error, Result};

/// Dense polynomial, coefficient of `x^i` at index `i`, no trailing zeros.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poly(Vec<BigInt>);

impl Poly {
    pub fn from_coefficients<I: Into<BigInt>>(coeffs: impl IntoIterator<Item = I>) -> Self {
        let mut p = Poly(coeffs.into_iter().map(Into::into).collect());
        p.trim();
        p
    }

    /// `x^n - 1`
    pub fn cyclic(n: usize) -> Self {
        let mut c = vec![BigInt::zero(); n + 1];
        c[0] = -BigInt::one();
        c[n] = BigInt::one();
        Poly(c)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    /// Degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.0.len().checked_sub(1)
    }

    pub fn coefficients(&self) -> &[BigInt] {
        &self.0
    }

    fn trim(&mut self) {
        while self.0.last().is_some_and(Zero::is_zero) {
            self.0.pop();
        }
    }

    fn lead(&self) -> &BigInt {
        self.0.last().expect("non-zero polynomial")
    }

    /// Divides out the content and makes the leading coefficient positive.
    fn primitive(mut self) -> Self {
        let Some(content) = self.0.iter().filter(|c| !c.is_zero()).fold(None::<BigInt>, |acc, c| {
            Some(match acc {
                None => c.abs(),
                Some(a) => a.gcd(c),
            })
        }) else {
            return self;
        };
        let sign = if self.lead().is_negative() { -BigInt::one() } else { BigInt::one() };
        let div = content * sign;
        for c in &mut self.0 {
            *c = &*c / &div;
        }
        self
    }

    /// A positive multiple of the remainder of `self` by `divisor`.
    fn pseudo_rem(&self, divisor: &Poly) -> Poly {
        let db = divisor.degree().expect("non-zero divisor");
        let lb = divisor.lead().clone();
        let mut r = self.clone();
        while let Some(dr) = r.degree() {
            if dr < db {
                break;
            }
            let lr = r.lead().clone();
            let shift = dr - db;
            for c in &mut r.0 {
                *c *= &lb;
            }
            for (j, c) in divisor.0.iter().enumerate() {
                r.0[j + shift] -= &lr * c;
            }
            r.trim();
            r = r.primitive();
        }
        r
    }
}

/// Greatest common divisor over ℚ[x], returned primitive with positive
/// leading coefficient.
pub fn poly_gcd(a: &Poly, b: &Poly) -> Poly {
    let (mut a, mut b) = (a.clone().primitive(), b.clone().primitive());
    if a.degree() < b.degree() {
        std::mem::swap(&mut a, &mut b);
    }
    while !b.is_zero() {
        let r = a.pseudo_rem(&b).primitive();
        a = b;
        b = r;
    }
    a
}

/// Rank of the `n × n` circulant whose first-row pattern places one unit per
/// listed offset. Repeated offsets accumulate into the same coefficient.
pub fn circulant_rank(offsets: &[usize], n: usize) -> Result<usize> {
    if offsets.is_empty() {
        return Err(Error::EmptyOffsets);
    }
    let mut coeffs = vec![0i64; n];
    for &o in offsets {
        if o >= n {
            return Err(Error::IndexOutOfRange { index: o, len: n });
        }
        coeffs[o] += 1;
    }
    let f = Poly::from_coefficients(coeffs);
    let g = poly_gcd(&f, &Poly::cyclic(n));
    Ok(n - g.degree().unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_full_rank() {
        assert_eq!(circulant_rank(&[0], 8).unwrap(), 8);
    }

    #[test]
    fn consecutive_run_loses_three() {
        // gcd(1 + x + x² + x³, x^16 - 1) = (x + 1)(x² + 1)
        let f = Poly::from_coefficients([1, 1, 1, 1]);
        let g = poly_gcd(&f, &Poly::cyclic(16));
        assert_eq!(g, Poly::from_coefficients([1, 1, 1, 1]));
        assert_eq!(circulant_rank(&[0, 1, 2, 3], 16).unwrap(), 13);
    }

    #[test]
    fn chord_pattern_is_full_rank() {
        assert_eq!(circulant_rank(&[0, 1, 2, 4, 8], 16).unwrap(), 16);
    }

    #[test]
    fn all_ones_has_rank_one() {
        let all: Vec<usize> = (0..12).collect();
        assert_eq!(circulant_rank(&all, 12).unwrap(), 1);
    }

    #[test]
    fn duplicates_accumulate() {
        // 1 + x^8 divides x^16 - 1, 1 + 2x^8 does not
        assert_eq!(circulant_rank(&[0, 8], 16).unwrap(), 8);
        assert_eq!(circulant_rank(&[0, 8, 8], 16).unwrap(), 16);
    }

    #[test]
    fn errors() {
        assert!(matches!(circulant_rank(&[], 4), Err(Error::EmptyOffsets)));
        assert!(matches!(circulant_rank(&[4], 4), Err(Error::IndexOutOfRange { index: 4, len: 4 })));
    }

    #[test]
    fn gcd_of_multiples() {
        // (x - 1)(x + 2) and (x - 1)(x - 3)
        let a = Poly::from_coefficients([-2, 1, 1]);
        let b = Poly::from_coefficients([3, -4, 1]);
        assert_eq!(poly_gcd(&a, &b), Poly::from_coefficients([-1, 1]));
    }
}
