//! Special functions not provided by `libm`.

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[inline]
pub fn lgamma(x: f64) -> f64 {
    libm::lgamma(x)
}

#[inline]
pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Digamma function for `x > 0`: upward recurrence into the asymptotic
/// regime, then the Bernoulli series.
pub fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    acc + libm::log(x) - 0.5 * inv - series
}

/// Numerically stable `ln(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        libm::exp(x)
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `arcosh(1 + t)` for `t >= 0`, avoiding cancellation near zero.
#[inline]
pub fn arcosh1p(t: f64) -> f64 {
    libm::log1p(t + libm::sqrt(t * (t + 2.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digamma_known_values() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-12);
        assert!((digamma(0.5) - (-EULER_GAMMA - 2.0 * core::f64::consts::LN_2)).abs() < 1e-12);
        // ψ(x+1) = ψ(x) + 1/x
        for &x in &[0.01, 0.3, 2.5, 17.0] {
            assert!((digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-10);
        }
    }

    #[test]
    fn digamma_is_derivative_of_lgamma() {
        for &x in &[0.05f64, 0.7, 1.9, 9.0, 40.0] {
            let h = 1e-6 * x.max(1.0);
            let fd = (lgamma(x + h) - lgamma(x - h)) / (2.0 * h);
            assert!((fd - digamma(x)).abs() < 1e-6 * digamma(x).abs().max(1.0));
        }
    }

    #[test]
    fn softplus_extremes() {
        assert_eq!(softplus(100.0), 100.0);
        assert!((softplus(0.0) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(-100.0) > 0.0);
    }

    #[test]
    fn arcosh1p_matches_definition() {
        for &t in &[1e-3f64, 0.5, 10.0] {
            let z = 1.0 + t;
            let direct = libm::log(z + libm::sqrt(z * z - 1.0));
            assert!((arcosh1p(t) - direct).abs() < 1e-12 * direct);
        }
        // arcosh(1 + t) = sqrt(2t)·(1 − t/12 + O(t²))
        let t = 1e-12f64;
        let series = libm::sqrt(2.0 * t) * (1.0 - t / 12.0);
        assert!((arcosh1p(t) - series).abs() < 1e-12 * series);
    }
}
