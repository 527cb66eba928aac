//! Standard normal density and distribution function.
//!
//! `cdf` and `sf` go through the complementary error function from `statrs`,
//! a rational-approximation implementation accurate to well below 1e-7
//! absolute error over the real line.

use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn cdf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

pub fn sf(z: f64) -> f64 {
    cdf(-z)
}

/// `P(za < Z <= zb)` without cancellation in either tail.
pub fn mass(za: f64, zb: f64) -> f64 {
    if zb <= za {
        0.0
    } else if za >= 0.0 {
        sf(za) - sf(zb)
    } else if zb <= 0.0 {
        cdf(zb) - cdf(za)
    } else {
        1.0 - cdf(za) - sf(zb)
    }
}
