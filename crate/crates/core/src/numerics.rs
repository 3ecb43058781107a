//! Special functions behind the rotational rank formulas.
//!
//! Everything here is self-contained: log-gamma, log-beta, the regularized
//! incomplete beta function, the relative area of a hyperspherical cap and
//! the Student t upper tail. The cap and the t tail are two views of the same
//! quantity and are kept on separate floating-point paths so that they can be
//! checked against each other.

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Convergence controls for the continued fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel_eps: f64,
    pub max_iter: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel_eps: 1e-12,
            max_iter: 300,
        }
    }
}

impl Tolerance {
    pub fn new(rel_eps: f64, max_iter: usize) -> Result<Self> {
        if !(rel_eps > 0.0 && rel_eps <= 1e-6) {
            return Err(Error::Domain(format!("rel_eps {rel_eps} not in (0, 1e-6]")));
        }
        if max_iter < 50 {
            return Err(Error::Domain(format!("max_iter {max_iter} < 50")));
        }
        Ok(Self { rel_eps, max_iter })
    }
}

// Lanczos approximation, g = 7, nine terms.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // reflection keeps the series in its accurate range
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    if x >= 10.0 {
        return (x - 0.5) * x.ln() - x + LN_SQRT_2PI + stirling_correction(x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Remainder of Stirling's series, `ln Γ(x) - [(x-1/2) ln x - x + ln √(2π)]`, for x ≥ 10.
fn stirling_correction(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    inv * (1.0 / 12.0
        + inv2
            * (-1.0 / 360.0
                + inv2
                    * (1.0 / 1260.0
                        + inv2
                            * (-1.0 / 1680.0
                                + inv2
                                    * (1.0 / 1188.0
                                        + inv2 * (-691.0 / 360_360.0 + inv2 / 156.0))))))
}

/// `ln B(a, b)`, arranged so the large terms of the three log-gammas cancel
/// analytically when an argument is big (the cap regime has `a = (m-1)/2`).
pub fn ln_beta(a: f64, b: f64) -> f64 {
    let (small, large) = if a < b { (a, b) } else { (b, a) };
    let sum = small + large;
    if large < 10.0 {
        ln_gamma(small) + ln_gamma(large) - ln_gamma(sum)
    } else if small < 10.0 {
        // ln Γ(large) - ln Γ(large + small) via Stirling with the
        // (x - 1/2) ln x terms combined through ln1p.
        let ratio = -(large - 0.5) * (small / large).ln_1p() - small * sum.ln()
            + small
            + stirling_correction(large)
            - stirling_correction(sum);
        ln_gamma(small) + ratio
    } else {
        LN_SQRT_2PI + (small - 0.5) * (small / sum).ln() + (large - 0.5) * (large / sum).ln()
            - 0.5 * sum.ln()
            + stirling_correction(small)
            + stirling_correction(large)
            - stirling_correction(sum)
    }
}

/// Regularized incomplete beta function `I_x(a, b)` with default tolerance.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    reg_inc_beta_with(x, a, b, &Tolerance::default())
}

pub fn reg_inc_beta_with(x: f64, a: f64, b: f64, tol: &Tolerance) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "I_x(a, b) needs a, b > 0 (a = {a}, b = {b})"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "I_x(a, b) needs x in [0, 1] (x = {x})"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        Ok(1.0 - beta_fraction(1.0 - x, b, a, tol)?)
    } else {
        beta_fraction(x, a, b, tol)
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction,
/// valid (fast) for `x <= (a+1)/(a+b+2)`.
fn beta_fraction(x: f64, a: f64, b: f64, tol: &Tolerance) -> Result<f64> {
    const TINY: f64 = 1e-300;
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    let front = ln_front.exp() / a;
    if front == 0.0 {
        return Ok(0.0);
    }

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=tol.max_iter {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;

        if (del - 1.0).abs() < tol.rel_eps {
            return Ok((front * h).clamp(0.0, 1.0));
        }
    }
    Err(Error::NoConvergence {
        routine: "reg_inc_beta",
        x,
        a,
        b,
    })
}

/// Signature shared by incomplete-beta implementations; lets the self-check
/// run its identities against a substituted routine.
pub type BetaFn = fn(f64, f64, f64) -> Result<f64>;

/// Relative surface area of the cap `{u ∈ S^{m-1} : u_1 > c}` of the unit
/// sphere in `R^m`.
///
/// `m = 1` is the two-point sphere `{-1, 1}`; the formula is continued by its
/// `a -> 0` limit there, giving 1/2 strictly inside `(-1, 1)`.
pub fn cap_measure(c: f64, m: usize) -> Result<f64> {
    cap_measure_with(reg_inc_beta, c, m)
}

pub fn cap_measure_with(beta: BetaFn, c: f64, m: usize) -> Result<f64> {
    if !(-1.0..=1.0).contains(&c) {
        return Err(Error::Domain(format!("cap threshold {c} outside [-1, 1]")));
    }
    // (1 - c)(1 + c) keeps precision near the poles
    cap_from_parts_with(beta, c >= 0.0, (1.0 - c) * (1.0 + c), m)
}

/// Cap measure from the sign of the threshold and `sin²φ = 1 - c²`, supplied
/// directly by callers that can form it without cancellation.
pub fn cap_from_parts(upper_hemisphere: bool, sin2: f64, m: usize) -> Result<f64> {
    cap_from_parts_with(reg_inc_beta, upper_hemisphere, sin2, m)
}

fn cap_from_parts_with(beta: BetaFn, upper_hemisphere: bool, sin2: f64, m: usize) -> Result<f64> {
    if m < 1 {
        return Err(Error::Domain(
            "cap measure needs sphere dimension m >= 1".into(),
        ));
    }
    let sin2 = sin2.clamp(0.0, 1.0);
    let half_area = if m == 1 {
        if sin2 > 0.0 {
            0.5
        } else {
            0.0
        }
    } else {
        0.5 * beta(sin2, (m as f64 - 1.0) / 2.0, 0.5)?
    };
    Ok(if upper_hemisphere {
        half_area
    } else {
        1.0 - half_area
    })
}

/// Upper tail `P(T > t)` of Student's t with `nu` degrees of freedom.
pub fn t_upper_tail(t: f64, nu: usize) -> Result<f64> {
    if nu < 1 {
        return Err(Error::Domain("t distribution needs nu >= 1".into()));
    }
    if t.is_nan() {
        return Err(Error::Domain("t statistic is NaN".into()));
    }
    let nu_f = nu as f64;
    let x = if t.is_infinite() {
        0.0
    } else {
        nu_f / (nu_f + t * t)
    };
    let half = 0.5 * reg_inc_beta(x, nu_f / 2.0, 0.5)?;
    Ok(if t >= 0.0 { half } else { 1.0 - half })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(close(ln_gamma(1.0), 0.0, 1e-14));
        assert!(close(ln_gamma(2.0), 0.0, 1e-14));
        assert!(close(ln_gamma(0.5), 0.5 * PI.ln(), 1e-14));
        // 10! = 3628800
        assert!(close(ln_gamma(11.0), 3_628_800f64.ln(), 1e-13));
        assert!(close(ln_gamma(5.0), 24f64.ln(), 1e-14));
        // both sides of the Stirling switch agree with the recurrence
        let below = ln_gamma(9.5) + 9.5f64.ln();
        assert!(close(below, ln_gamma(10.5), 1e-13));
    }

    #[test]
    fn ln_beta_matches_product_form() {
        // B(a, 1/2) for integer a: B(a,1/2) = 2^{2a} ((a-1)!)^2 / (2a-1)! * 2 / ... use the recurrence
        // B(a+1, b) = B(a, b) * a / (a + b)
        let b = 0.5;
        let mut lb = ln_beta(1.0, b); // = ln 2
        assert!(close(lb, 2f64.ln(), 1e-14));
        for a in 1..4000 {
            let a = a as f64;
            lb += (a / (a + b)).ln();
            let direct = ln_beta(a + 1.0, b);
            assert!(
                close(lb, direct, 1e-11 * lb.abs().max(1.0)),
                "a = {a}: {lb} vs {direct}"
            );
        }
    }

    #[test]
    fn reg_inc_beta_edges_and_closed_forms() {
        for x in [0.0, 0.3, 1.0] {
            assert!(close(reg_inc_beta(x, 1.0, 1.0).unwrap(), x, 1e-15));
        }
        for a in [0.5, 2.0, 7.5] {
            assert!(close(reg_inc_beta(0.5, a, a).unwrap(), 0.5, 1e-13));
        }
        assert!(close(
            reg_inc_beta(0.25, 2.0, 2.0).unwrap(),
            0.156_25,
            1e-14
        ));
        assert_eq!(reg_inc_beta(0.0, 3.0, 4.0).unwrap(), 0.0);
        assert_eq!(reg_inc_beta(1.0, 3.0, 4.0).unwrap(), 1.0);
    }

    #[test]
    fn reg_inc_beta_rejects_bad_domain() {
        assert!(matches!(
            reg_inc_beta(-0.1, 1.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(reg_inc_beta(0.5, 0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(
            reg_inc_beta(0.5, 1.0, f64::NAN),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn reg_inc_beta_reports_non_convergence() {
        let tol = Tolerance::new(1e-12, 50).unwrap();
        let err = reg_inc_beta_with(0.4999, 1e6, 1e6, &tol).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }

    #[test]
    fn tolerance_validation() {
        assert!(Tolerance::new(1e-3, 300).is_err());
        assert!(Tolerance::new(1e-12, 10).is_err());
        assert!(Tolerance::new(1e-10, 50).is_ok());
    }

    #[test]
    fn cap_measure_anchor_values() {
        for m in 1..20 {
            assert!(close(cap_measure(0.0, m).unwrap(), 0.5, 1e-15));
            assert_eq!(cap_measure(1.0, m).unwrap(), 0.0);
            assert_eq!(cap_measure(-1.0, m).unwrap(), 1.0);
        }
        assert!(close(cap_measure(0.5f64.sqrt(), 2).unwrap(), 0.25, 1e-14));
        assert!(cap_measure(1.5, 3).is_err());
        assert!(cap_measure(0.2, 0).is_err());
    }

    #[test]
    fn cap_measure_is_decreasing() {
        for m in [2, 3, 10, 200] {
            let mut prev = 1.0;
            for i in -99..100 {
                let c = i as f64 / 100.0;
                let v = cap_measure(c, m).unwrap();
                assert!(v <= prev, "m = {m}, c = {c}");
                if v > 1e-300 && v < 1.0 - 1e-12 {
                    assert!(v < prev, "m = {m}, c = {c}");
                }
                prev = v;
            }
        }
    }

    #[test]
    fn t_tail_closed_forms() {
        for nu in [1, 2, 7, 100] {
            assert!(close(t_upper_tail(0.0, nu).unwrap(), 0.5, 1e-15));
        }
        let cauchy = 1.0 - (0.5 + 1f64.atan() / PI);
        assert!(close(t_upper_tail(1.0, 1).unwrap(), cauchy, 1e-14));
        let t2 = 1.0 - (0.5 + 1.0 / (2.0 * 3f64.sqrt()));
        assert!(close(t_upper_tail(1.0, 2).unwrap(), t2, 1e-14));
        assert!(close(t2, 0.211_324_865, 1e-9));
        assert_eq!(t_upper_tail(f64::INFINITY, 3).unwrap(), 0.0);
        assert_eq!(t_upper_tail(f64::NEG_INFINITY, 3).unwrap(), 1.0);
        assert!(t_upper_tail(1.0, 0).is_err());
    }

    #[test]
    fn large_dimension_cap_converges() {
        // n up to 10^4 drives a = (m-1)/2 into the thousands
        for m in [1000, 5000, 10_000] {
            for c in [-0.3, -0.01, 0.0, 0.001, 0.02, 0.05, 0.2] {
                let v = cap_measure(c, m).unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
