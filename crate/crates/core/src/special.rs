//! Euler Gamma and modified Bessel functions of the first kind.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `Γ(x)` for `x > 0` (Lanczos, g = 7).
///
/// Arguments below 1 are shifted up with `Γ(x) = Γ(x+1)/x`, so no reflection
/// through the negative axis is needed.
pub fn gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("gamma requires x > 0, got {x}")));
    }
    if x < 1.0 {
        return Ok(lanczos(x + 1.0) / x);
    }
    Ok(lanczos(x))
}

fn lanczos(x: f64) -> f64 {
    let z = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
}

/// Modified Bessel function `I_ν(x)` for `ν ∈ {0, 1}` and `x ≥ 0`, by its
/// power series `Σ (x/2)^{2k+ν} / (k! Γ(k+ν+1))`.
pub fn bessel_i(order: u32, x: f64) -> Result<f64> {
    if order > 1 {
        return Err(Error::Domain(format!("bessel_i supports orders 0 and 1, got {order}")));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("bessel_i requires x >= 0, got {x}")));
    }
    let half = 0.5 * x;
    let q = half * half;
    let nu = order as f64;
    let mut term = if order == 0 { 1.0 } else { half };
    let mut sum = term;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + nu));
        sum += term;
        if term <= 1e-16 * sum || k > 500.0 {
            break;
        }
    }
    Ok(sum)
}

pub fn bessel_i0(x: f64) -> Result<f64> {
    bessel_i(0, x)
}

pub fn bessel_i1(x: f64) -> Result<f64> {
    bessel_i(1, x)
}
