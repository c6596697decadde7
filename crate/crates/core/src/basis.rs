//! Orthonormal Legendre bases on bounded intervals.

use serde::{Deserialize, Serialize};

use crate::error::{FhtwError, Result};
use crate::quadrature::gauss_legendre_on;

/// Default relative margin added when inferring a variable's support.
pub const DEFAULT_SUPPORT_MARGIN: f64 = 0.1;

/// A bounded interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(FhtwError::invalid(format!(
                "interval bounds must be finite, got [{lo}, {hi}]"
            )));
        }
        if lo >= hi {
            return Err(FhtwError::invalid(format!(
                "interval must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Interval { lo, hi })
    }

    pub fn symmetric(a: f64) -> Result<Self> {
        Interval::new(-a, a)
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Rescaled Legendre polynomials `psi_0 .. psi_{size-1}`, orthonormal in
/// `L2(interval)`. Function `i` has degree exactly `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub interval: Interval,
    pub size: usize,
}

pub fn build_legendre_basis(interval: Interval, size: usize) -> Result<BasisSpec> {
    // re-validate: the struct fields are public
    let interval = Interval::new(interval.lo, interval.hi)?;
    if size == 0 {
        return Err(FhtwError::invalid("basis size must be at least 1"));
    }
    Ok(BasisSpec { interval, size })
}

impl BasisSpec {
    /// Evaluates all basis functions at `x`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() {
            return Err(FhtwError::invalid(format!("cannot evaluate basis at {x}")));
        }
        let mut out = vec![0.0; self.size];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into `out`, which may be shorter than `size`
    /// (only the leading functions are computed).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let len = self.interval.length();
        let t = (2.0 * x - (self.interval.lo + self.interval.hi)) / len;
        let inv_len = 1.0 / len;
        let m = out.len().min(self.size);
        let mut p_prev = 0.0;
        let mut p = 1.0;
        for (i, slot) in out.iter_mut().take(m).enumerate() {
            if i > 0 {
                let k = i as f64;
                let next = ((2.0 * k - 1.0) * t * p - (k - 1.0) * p_prev) / k;
                p_prev = p;
                p = next;
            }
            *slot = ((2.0 * i as f64 + 1.0) * inv_len).sqrt() * p;
        }
    }

    /// `∫ x^power psi_i(x) dx` over the interval, for `power` in {0, 1, 2}.
    pub fn moments(&self, power: u32) -> Result<Vec<f64>> {
        if power > 2 {
            return Err(FhtwError::invalid(format!(
                "basis moments support powers 0, 1, 2; got {power}"
            )));
        }
        let (nodes, weights) =
            gauss_legendre_on(2 * self.size, self.interval.lo, self.interval.hi);
        let mut acc = vec![0.0; self.size];
        let mut buf = vec![0.0; self.size];
        for (&x, &w) in nodes.iter().zip(&weights) {
            self.eval_into(x, &mut buf);
            let xp = w * x.powi(power as i32);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += xp * b;
            }
        }
        Ok(acc)
    }
}

pub fn eval_basis(spec: &BasisSpec, x: f64) -> Result<Vec<f64>> {
    spec.eval(x)
}

pub fn basis_moments(spec: &BasisSpec, power: u32) -> Result<Vec<f64>> {
    spec.moments(power)
}

/// Symmetric support `[-a, a]` with `a = (1 + margin) * max |x|`.
pub fn infer_support(column: &[f64], margin: f64) -> Result<Interval> {
    if column.is_empty() {
        return Err(FhtwError::invalid("cannot infer support of an empty column"));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(FhtwError::invalid(format!("support margin must be >= 0, got {margin}")));
    }
    let mut max = 0.0f64;
    for &x in column {
        if !x.is_finite() {
            return Err(FhtwError::invalid("column contains non-finite values"));
        }
        max = max.max(x.abs());
    }
    if max == 0.0 {
        return Err(FhtwError::invalid("column is identically zero; support is degenerate"));
    }
    Interval::symmetric((1.0 + margin) * max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre_on;
    use proptest::prelude::*;

    fn unit() -> Interval {
        Interval::new(-1.0, 1.0).unwrap()
    }

    #[test]
    fn rejects_bad_intervals() {
        assert!(Interval::new(1.0, 1.0).is_err());
        assert!(Interval::new(2.0, 1.0).is_err());
        assert!(Interval::new(f64::NEG_INFINITY, 1.0).is_err());
        assert!(Interval::new(0.0, f64::NAN).is_err());
        let bad = Interval { lo: 3.0, hi: -3.0 };
        assert!(build_legendre_basis(bad, 3).is_err());
        assert!(build_legendre_basis(unit(), 0).is_err());
    }

    #[test]
    fn small_values() {
        let b = build_legendre_basis(unit(), 2).unwrap();
        let v = b.eval(0.0).unwrap();
        assert!((v[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(v[1], 0.0);

        let b = build_legendre_basis(unit(), 1).unwrap();
        assert!((b.eval(0.37).unwrap()[0] - 0.707_106_781_186_547_6).abs() < 1e-15);

        let b = build_legendre_basis(unit(), 3).unwrap();
        let v = b.eval(1.0).unwrap();
        let expect = [0.5f64.sqrt(), 1.5f64.sqrt(), 2.5f64.sqrt()];
        for (a, e) in v.iter().zip(expect) {
            assert!((a - e).abs() < 1e-14);
        }

        let b = build_legendre_basis(Interval::new(-3.0, 3.0).unwrap(), 1).unwrap();
        assert!((b.eval(2.0).unwrap()[0] - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!(b.eval(f64::NAN).is_err());
    }

    #[test]
    fn gram_matrix_identity_size_51() {
        let b = build_legendre_basis(Interval::new(-0.8, 0.8).unwrap(), 51).unwrap();
        let (x, w) = gauss_legendre_on(200, -0.8, 0.8);
        let evals: Vec<Vec<f64>> = x.iter().map(|&x| b.eval(x).unwrap()).collect();
        for i in 0..51 {
            for j in 0..51 {
                let g: f64 = evals.iter().zip(&w).map(|(e, w)| w * e[i] * e[j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((g - target).abs() < 1e-10, "G[{i},{j}] = {g}");
            }
        }
    }

    #[test]
    fn moments_match_quadrature_oracle() {
        let b = build_legendre_basis(unit(), 4).unwrap();
        let m0 = b.moments(0).unwrap();
        assert!((m0[0] - 2f64.sqrt()).abs() < 1e-14);
        assert!(m0[1..].iter().all(|v| v.abs() < 1e-14));
        // ∫ x * sqrt(3/2) x dx = sqrt(3/2) * 2/3
        let m1 = b.moments(1).unwrap();
        assert!((m1[1] - (2.0f64 / 3.0).sqrt()).abs() < 1e-14);
        // ∫ x^2 / sqrt(2) dx = sqrt(2)/3
        let m2 = b.moments(2).unwrap();
        assert!((m2[0] - 2f64.sqrt() / 3.0).abs() < 1e-14);
        assert!(b.moments(3).is_err());
    }

    #[test]
    fn legendre_sign_changes() {
        let b = build_legendre_basis(Interval::new(-2.0, 5.0).unwrap(), 11).unwrap();
        let grid: Vec<f64> = (1..4000).map(|k| -2.0 + 7.0 * k as f64 / 4000.0).collect();
        for i in 0..=10 {
            let vals: Vec<f64> = grid.iter().map(|&x| b.eval(x).unwrap()[i]).collect();
            let changes = vals.windows(2).filter(|p| p[0].signum() != p[1].signum()).count();
            assert_eq!(changes, i, "degree {i}");
        }
    }

    #[test]
    fn support_inference() {
        let s = infer_support(&[0.5, -0.7, 0.2], 0.0).unwrap();
        assert_eq!((s.lo, s.hi), (-0.7, 0.7));
        let s = infer_support(&[1.0, -1.0], 0.1).unwrap();
        assert!((s.hi - 1.1).abs() < 1e-15 && (s.lo + 1.1).abs() < 1e-15);
        assert!(infer_support(&[], 0.1).is_err());
        assert!(infer_support(&[1.0, f64::INFINITY], 0.1).is_err());
    }

    #[test]
    fn support_of_normal_draws() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let col: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = infer_support(&col, 0.1).unwrap();
        assert!(s.hi >= 4.0 && s.hi <= 5.5, "a = {}", s.hi);
    }

    proptest! {
        #[test]
        fn affine_consistency(a in 0.1f64..20.0, u in -1.5f64..1.5) {
            let x = u * a;
            let scaled = build_legendre_basis(Interval::symmetric(a).unwrap(), 8).unwrap();
            let unit = build_legendre_basis(unit(), 8).unwrap();
            let lhs = scaled.eval(x).unwrap();
            let rhs = unit.eval(x / a).unwrap();
            for (l, r) in lhs.iter().zip(&rhs) {
                prop_assert!((l - r / a.sqrt()).abs() < 1e-12 * (1.0 + r.abs()));
            }
        }

        #[test]
        fn zeroth_moments_vanish_beyond_first(lo in -5.0f64..0.0, len in 0.1f64..8.0, size in 1usize..30) {
            let b = build_legendre_basis(Interval::new(lo, lo + len).unwrap(), size).unwrap();
            let m = b.moments(0).unwrap();
            prop_assert!((m[0] - len.sqrt()).abs() < 1e-12 * len.sqrt().max(1.0));
            for v in &m[1..] {
                prop_assert!(v.abs() < 1e-12 * len.sqrt().max(1.0));
            }
        }
    }
}
