//! Probit log-likelihood pieces: `log Φ`, the inverse Mills ratio, the
//! per-observation losses `g_i(x) = -log Φ(r_i h_iᵀx / σ)` and their
//! tangent-plane cuts.

use crate::model::RealInstance;
use crate::{Error, Result};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// `0.5 * ln(2π)`
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument `log Φ` and the inverse Mills ratio switch from the
/// `erfc` form to the continued fraction for the Mills ratio.
pub const ASYMPTOTIC_THRESHOLD: f64 = -8.0;

const CF_DEPTH: usize = 120;

/// `x + 1/(x + 2/(x + 3/(x + ...)))`, the reciprocal of the Mills ratio
/// `(1 - Φ(x)) / φ(x)`, for `x >= 8`.
fn mills_reciprocal(x: f64) -> f64 {
    let mut t = x;
    for k in (1..=CF_DEPTH).rev() {
        t = x + k as f64 / t;
    }
    t
}

#[inline]
pub fn log_npdf(z: f64) -> f64 {
    -0.5 * z * z - HALF_LN_2PI
}

/// `log Φ(z)` for the standard normal CDF.
pub fn log_ncdf(z: f64) -> f64 {
    if z < ASYMPTOTIC_THRESHOLD {
        log_npdf(z) - mills_reciprocal(-z).ln()
    } else if z < 0.0 {
        (0.5 * libm::erfc(-z * FRAC_1_SQRT_2)).ln()
    } else {
        (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    }
}

/// Inverse Mills ratio `φ(z) / Φ(z)`.
pub fn inv_mills(z: f64) -> f64 {
    if z < ASYMPTOTIC_THRESHOLD {
        mills_reciprocal(-z)
    } else {
        (log_npdf(z) - log_ncdf(z)).exp()
    }
}

/// Tangent plane `w_row >= grad·x + offset` of `g_row` at `point`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub row: usize,
    pub point: Vec<f64>,
    pub grad: Vec<f64>,
    pub offset: f64,
}

impl Cut {
    #[inline]
    pub fn value_at(&self, x: &[f64]) -> f64 {
        dot(&self.grad, x) + self.offset
    }
}

/// Rows `r_i h_iᵀ / σ`, precomputed once per instance.
#[derive(Debug, Clone)]
pub struct LossContext {
    n: usize,
    k: usize,
    rows: Vec<f64>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LossContext {
    pub fn new(inst: &RealInstance) -> Self {
        let (n, k) = inst.h.shape();
        let mut rows = Vec::with_capacity(n * k);
        for i in 0..n {
            let s = f64::from(inst.r[i]) / inst.sigma;
            rows.extend((0..k).map(|j| s * inst.h[(i, j)]));
        }
        LossContext { n, k, rows }
    }

    /// Direct construction from already scaled rows (row-major, `n * k`).
    pub fn from_rows(n: usize, k: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != n * k {
            return Err(Error::Dimension(format!("expected {} row entries, got {}", n * k, rows.len())));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("loss rows".into()));
        }
        Ok(LossContext { n, k, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.k..(i + 1) * self.k]
    }

    fn check(&self, i: usize, x: &[f64]) -> Result<()> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, len: self.n });
        }
        if x.len() != self.k {
            return Err(Error::Dimension(format!("x has length {}, expected {}", x.len(), self.k)));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn loss(&self, i: usize, x: &[f64]) -> f64 {
        -log_ncdf(dot(self.row(i), x))
    }

    pub fn g_eval(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check(i, x)?;
        Ok(self.loss(i, x))
    }

    pub fn g_grad(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check(i, x)?;
        let row = self.row(i);
        let scale = -inv_mills(dot(row, x));
        Ok(row.iter().map(|v| scale * v).collect())
    }

    /// Negative log-likelihood `Σ_i g_i(x)`.
    pub fn f_obj(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.k, "f_obj: x has wrong length");
        (0..self.n).map(|i| self.loss(i, x)).sum()
    }

    pub fn f_obj_signs(&self, x: &[i8]) -> f64 {
        self.f_obj(&crate::model::signs_to_real(x))
    }

    pub fn make_cut(&self, i: usize, point: &[f64]) -> Result<Cut> {
        self.check(i, point)?;
        if point.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cut linearization point".into()));
        }
        let row = self.row(i);
        let u = dot(row, point);
        let g = -log_ncdf(u);
        let scale = -inv_mills(u);
        let grad: Vec<f64> = row.iter().map(|v| scale * v).collect();
        // grad·point = scale * u exactly up to rounding; use it to keep tangency tight
        let offset = g - scale * u;
        Ok(Cut { row: i, point: point.to_vec(), grad, offset })
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_2;
    use super::*;
    use proptest::prelude::*;

    /// Asymptotic series `Φ(-x) ≈ φ(x)/x · Σ (-1)^k (2k-1)!! / x^{2k}`,
    /// summed until terms start growing.
    fn asymptotic_log_phi_neg(x: f64) -> f64 {
        let mut sum = 1.0;
        let mut term = 1.0;
        let x2 = x * x;
        for k in 1..60 {
            let next = -term * (2 * k - 1) as f64 / x2;
            if next.abs() >= term.abs() {
                break;
            }
            term = next;
            sum += term;
        }
        log_npdf(x) - x.ln() + sum.ln()
    }

    #[test]
    fn log_ncdf_reference_points() {
        assert!((log_ncdf(0.0) + LN_2).abs() < 1e-15);
        let v = log_ncdf(-10.0);
        assert!((v - asymptotic_log_phi_neg(10.0)).abs() < 1e-10);
        assert!((v + 53.2312).abs() < 1e-3);
        // 1 - Φ(10) from the same series
        let tail = asymptotic_log_phi_neg(10.0).exp();
        let hi = log_ncdf(10.0);
        assert!(hi < 0.0);
        assert!((hi + tail).abs() < 1e-12 * tail);
        assert!((hi + 7.62e-24).abs() < 0.01e-24);
    }

    #[test]
    fn log_ncdf_continuous_across_threshold() {
        let t = ASYMPTOTIC_THRESHOLD;
        let cf = log_npdf(t) - mills_reciprocal(-t).ln();
        let direct = (0.5 * libm::erfc(-t * FRAC_1_SQRT_2)).ln();
        assert!((cf - direct).abs() < 1e-10, "{cf} vs {direct}");
        for z in [-8.5, -9.0, -12.0, -20.0] {
            let direct = (0.5 * libm::erfc(-z * FRAC_1_SQRT_2)).ln();
            assert!((log_ncdf(z) - direct).abs() < 1e-10 * direct.abs());
        }
    }

    #[test]
    fn log_ncdf_finite_far_left() {
        for z in [-40.0, -100.0, -400.0] {
            let v = log_ncdf(z);
            assert!(v.is_finite());
            assert!((v - asymptotic_log_phi_neg(-z)).abs() < 1e-12 * v.abs());
        }
    }

    #[test]
    fn complementarity() {
        for i in 0..=1000 {
            let z = -8.0 + 16.0 * i as f64 / 1000.0;
            let s = log_ncdf(z).exp() + log_ncdf(-z).exp();
            assert!((s - 1.0).abs() <= 1e-10, "z = {z}: {s}");
        }
    }

    #[test]
    fn inv_mills_reference_points() {
        assert!((inv_mills(0.0) - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!((inv_mills(0.0) - 0.797_884_6).abs() < 1e-7);
        let x = 40.0f64;
        let oracle = x + 1.0 / x - 2.0 / x.powi(3);
        assert!((inv_mills(-40.0) - oracle).abs() < 1e-6);
        assert!((inv_mills(-40.0) - 40.0250).abs() < 1e-3);
        let phi10 = log_npdf(10.0).exp();
        assert!((inv_mills(10.0) / phi10 - 1.0).abs() < 1e-12);
        assert!((inv_mills(10.0) - 7.695e-23).abs() < 0.001e-23);
        // the two-term asymptote is off by about 2/z⁴ relative, so it only
        // reaches 1e-6 below z ≈ -37.6; the three-term form is checked from -30
        for z in [-30.0, -38.0, -50.0, -100.0] {
            let x: f64 = -z;
            let three = x + 1.0 / x - 2.0 / x.powi(3);
            assert!((inv_mills(z) / three - 1.0).abs() < 1e-6);
            if x >= 38.0 {
                assert!((inv_mills(z) / (x + 1.0 / x) - 1.0).abs() < 1e-6);
            }
        }
        assert!(inv_mills(-400.0).is_finite());
    }

    #[test]
    fn inv_mills_continuous_across_threshold() {
        let t = ASYMPTOTIC_THRESHOLD;
        let direct = (log_npdf(t) - (0.5 * libm::erfc(-t * FRAC_1_SQRT_2)).ln()).exp();
        assert!((mills_reciprocal(-t) - direct).abs() < 1e-10 * direct);
    }

    fn ctx_1d(h: f64, r: i8, sigma: f64) -> LossContext {
        let inst = RealInstance::new(nalgebra::DMatrix::from_element(1, 1, h), vec![r], sigma, None).unwrap();
        LossContext::new(&inst)
    }

    #[test]
    fn loss_reference_points() {
        let ctx = ctx_1d(1.0, 1, 1.0);
        assert!((ctx.g_eval(0, &[0.0]).unwrap() - LN_2).abs() < 1e-15);
        // -log Φ(2) = -log(1 - erfc(√2)/2)
        let oracle2 = -(1.0 - 0.5 * libm::erfc(2.0 * FRAC_1_SQRT_2)).ln();
        assert!((ctx.g_eval(0, &[2.0]).unwrap() - oracle2).abs() < 1e-15);
        assert!((oracle2 - 0.023013).abs() < 1e-6);
        let oracle_m2 = -(0.5 * libm::erfc(2.0 * FRAC_1_SQRT_2)).ln();
        assert!((ctx.g_eval(0, &[-2.0]).unwrap() - oracle_m2).abs() < 1e-14);
        assert!((oracle_m2 - 3.78318).abs() < 1e-5);
        assert!(ctx.g_eval(1, &[0.0]).is_err());
        assert!(ctx.g_eval(0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn objective_one_dimensional() {
        let ctx = ctx_1d(2.0, 1, 1.0);
        let plus = ctx.f_obj(&[1.0]);
        let minus = ctx.f_obj(&[-1.0]);
        assert!((plus - 0.023013).abs() < 1e-6);
        assert!((minus - 3.78318).abs() < 1e-5);
        assert!(plus < minus);
    }

    #[test]
    fn objective_orthogonal_rows() {
        let ctx = LossContext::from_rows(3, 2, vec![1.0, 1.0, -2.0, -2.0, 0.5, 0.5]).unwrap();
        assert!((ctx.f_obj(&[1.0, -1.0]) - 3.0 * LN_2).abs() < 1e-14);
    }

    #[test]
    fn gradient_at_zero_and_direction() {
        let ctx = LossContext::from_rows(1, 2, vec![1.0, -1.0]).unwrap();
        let g = ctx.g_grad(0, &[0.3, 0.3]).unwrap();
        assert!((g[0] + 0.797_884_560_802_865_4).abs() < 1e-12);
        assert!((g[1] - 0.797_884_560_802_865_4).abs() < 1e-12);
        let g = ctx.g_grad(0, &[0.9, -0.2]).unwrap();
        assert!(g[0] < 0.0 && (g[0] + g[1]).abs() < 1e-15);
    }

    #[test]
    fn cut_tangent_at_orthogonal_point() {
        let ctx = LossContext::from_rows(1, 2, vec![1.0, 1.0]).unwrap();
        let cut = ctx.make_cut(0, &[1.0, -1.0]).unwrap();
        assert!((cut.offset - LN_2).abs() < 1e-15);
        assert!((cut.value_at(&[1.0, -1.0]) - LN_2).abs() < 1e-15);
        assert!(ctx.make_cut(0, &[f64::NAN, 0.0]).is_err());
        assert!(ctx.make_cut(2, &[0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn log_ncdf_is_increasing(a in -45.0f64..45.0, d in 1e-3f64..5.0) {
            prop_assert!(log_ncdf(a) <= log_ncdf(a + d));
            prop_assert!(log_ncdf(a) <= 0.0);
        }

        #[test]
        fn inv_mills_is_decreasing(a in -400.0f64..30.0, d in 1e-3f64..5.0) {
            prop_assert!(inv_mills(a) > 0.0);
            prop_assert!(inv_mills(a + d) < inv_mills(a));
        }

        #[test]
        fn loss_is_convex_along_segments(
            row in proptest::collection::vec(-3.0f64..3.0, 3),
            x1 in proptest::collection::vec(-1.0f64..1.0, 3),
            x2 in proptest::collection::vec(-1.0f64..1.0, 3),
            lam in 0.0f64..1.0,
        ) {
            let ctx = LossContext::from_rows(1, 3, row).unwrap();
            let mid: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
            let lhs = ctx.g_eval(0, &mid).unwrap();
            let rhs = lam * ctx.g_eval(0, &x1).unwrap() + (1.0 - lam) * ctx.g_eval(0, &x2).unwrap();
            prop_assert!(lhs <= rhs + 1e-10);
            prop_assert!(lhs > 0.0);
        }
    }
}
