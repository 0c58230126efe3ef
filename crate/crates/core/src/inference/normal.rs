//! Standard normal tail probabilities in log space.

use std::f64::consts::{LN_2, PI, SQRT_2};

/// ln(sqrt(2π))
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this the complementary error function underflows well before
/// reaching its accuracy limit, so the tail switches to an asymptotic series.
const SERIES_BELOW: f64 = -20.0;

/// ln Φ(z) for the standard normal CDF Φ, accurate to near machine
/// precision across the whole real line.
pub fn log_ndtr(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z >= 0.0 {
        (-0.5 * libm::erfc(z / SQRT_2)).ln_1p()
    } else if z >= SERIES_BELOW {
        libm::erfc(-z / SQRT_2).ln() - LN_2
    } else {
        // Φ(z) = φ(z)/|z| · (1 − 1/z² + 3/z⁴ − 15/z⁶ + 105/z⁸ − …)
        let inv = 1.0 / (z * z);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..=6 {
            term *= -((2 * k - 1) as f64) * inv;
            sum += term;
        }
        -0.5 * z * z - LN_SQRT_2PI - (-z).ln() + sum.ln()
    }
}

/// ln(1 − Φ(z)).
pub fn log_ndtr_upper(z: f64) -> f64 {
    log_ndtr(-z)
}

/// Leading-order tail approximation ln(1 − Φ(|z|)) ≈ −z²/2 − ln(|z|·√(2π)).
pub fn asymptotic_log_tail(z: f64) -> f64 {
    let a = z.abs();
    -0.5 * a * a - (a * (2.0 * PI).sqrt()).ln()
}
