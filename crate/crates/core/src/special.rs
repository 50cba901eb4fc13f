//! Error function and its inverse, accurate to roughly machine precision.

use std::f64::consts::PI;

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Positive-term series `erf(x) = 2/√π · e^{-x²} Σ 2ⁿ x^{2n+1} / (2n+1)!!`,
/// free of cancellation for moderate |x|.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term.abs() <= sum.abs() * 1e-17 || n > 500.0 {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

/// Continued fraction for erfc, used for x >= 2 (modified Lentz).
fn erfc_cf(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    // erfc(x) = e^{-x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + 2/(x + ...)))))
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = x + a / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (PI.sqrt() * f)
}

pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return -erf(-x);
    }
    if x < 2.0 {
        erf_series(x)
    } else {
        1.0 - erfc_cf(x)
    }
}

pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.0 {
        1.0 - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

/// Inverse error function on (-1, 1); returns ±∞ at ±1 and NaN outside.
///
/// A closed-form initial guess is refined by Halley steps. For |y| > 0.5 the
/// residual is taken on the complementary side so accuracy holds in the tails.
pub fn erfinv(y: f64) -> f64 {
    if y.is_nan() || !(-1.0..=1.0).contains(&y) {
        return f64::NAN;
    }
    if y == 1.0 {
        return f64::INFINITY;
    }
    if y == -1.0 {
        return f64::NEG_INFINITY;
    }
    if y == 0.0 {
        return 0.0;
    }
    if y < 0.0 {
        return -erfinv(-y);
    }
    erfcinv_from(y, 1.0 - y)
}

/// Inverse of erfc on (0, 2).
pub fn erfcinv(q: f64) -> f64 {
    if q.is_nan() || !(0.0..=2.0).contains(&q) {
        return f64::NAN;
    }
    if q == 0.0 {
        return f64::INFINITY;
    }
    if q == 2.0 {
        return f64::NEG_INFINITY;
    }
    if q > 1.0 {
        return -erfcinv(2.0 - q);
    }
    erfcinv_from(1.0 - q, q)
}

/// Solve for x >= 0 with erf(x) = y, where `q = 1 - y` is supplied exactly.
fn erfcinv_from(y: f64, q: f64) -> f64 {
    // Winitzki-style starting point.
    let a = 0.147;
    let ln = (q * (2.0 - q)).ln();
    let t = 2.0 / (PI * a) + ln / 2.0;
    let mut x = ((t * t - ln / a).sqrt() - t).sqrt();
    for _ in 0..100 {
        let r = if y > 0.5 { q - erfc(x) } else { erf(x) - y };
        let deriv = FRAC_2_SQRT_PI * (-x * x).exp();
        if deriv == 0.0 {
            break;
        }
        let newton = r / deriv;
        let step = newton / (1.0 + x * newton);
        x -= step;
        if step.abs() <= 1e-16 * x.abs().max(1e-300) {
            break;
        }
    }
    x
}
