use crate::error::{Error, Result};

/// Capacity of `D`-dimensional balls of radius `R` in random orientations,
///
/// ```text
/// 1/alpha = ∫_{-∞}^{R√D} Dt0 (R√D - t0)^2 / (R^2 + 1)
/// ```
///
/// where `Dt0` is the standard Gaussian measure. The Gaussian integral of
/// `(a - t)^2` over `t < a` has the closed form `(a^2 + 1) Φ(a) + a φ(a)`,
/// which is evaluated here in place of a quadrature rule.
pub fn alpha_ball(radius: f64, dim: f64) -> Result<f64> {
    if !(radius >= 0.0 && dim >= 0.0) || !radius.is_finite() || !dim.is_finite() {
        return Err(Error::InvalidInput(format!(
            "alpha_ball needs finite R >= 0 and D >= 0, got R={radius}, D={dim}"
        )));
    }
    let a = radius * dim.sqrt();
    let cdf = 0.5 * libm::erfc(-a / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let inv = ((a * a + 1.0) * cdf + a * pdf) / (radius * radius + 1.0);
    Ok(1.0 / inv)
}
