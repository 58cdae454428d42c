//! L1 discretization of left/right Caputo derivatives on a non-uniform grid.
//!
//! For steps `τ_0..τ_{M-1}` (node `t_{i+1} = t_i + τ_i`) the memory
//! coefficients are
//!
//! ```text
//! a_{l,j} = τ_l^γ / τ_j · [ (τ_j + … + τ_l)^{1-γ} − (τ_{j+1} + … + τ_l)^{1-γ} ],   j ≤ l
//! b_{j,l} = τ_l^γ / τ_j · [ (τ_l + … + τ_j)^{1-γ} − (τ_l + … + τ_{j-1})^{1-γ} ],   j ≥ l
//! ```
//!
//! with empty sums equal to zero. On an equidistant grid both reduce to
//! `(d+1)^{1-γ} − d^{1-γ}` with `d` the index separation.

use crate::error::{invalid, Error, Result};
use crate::special::gamma;

/// Smallest admissible step in a [`TauGrid`].
pub const MIN_TAU: f64 = 1e-10;

/// Strictly positive step sizes of a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TauGrid {
    taus: Vec<f64>,
}

impl TauGrid {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if let Some(t) = taus.iter().find(|t| !(**t >= MIN_TAU) || !t.is_finite()) {
            return Err(Error::Invariant(format!(
                "grid step {t} below the minimum {MIN_TAU}"
            )));
        }
        Ok(Self { taus })
    }

    pub fn uniform(tau: f64, len: usize) -> Result<Self> {
        Self::new(vec![tau; len])
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    fn check(&self, idx: &[usize]) -> Result<()> {
        match idx.iter().find(|&&i| i >= self.len()) {
            Some(i) => Err(invalid(format!("index {i} out of range for grid of length {}", self.len()))),
            None => Ok(()),
        }
    }

    pub fn coeff_a(&self, l: usize, j: usize, gamma: f64) -> Result<f64> {
        check_gamma(gamma)?;
        self.check(&[l, j])?;
        if j > l {
            return Err(invalid(format!("coeff_a needs j <= l, got j = {j}, l = {l}")));
        }
        Ok(coeff_a(&self.taus, l, j, gamma))
    }

    pub fn coeff_b(&self, j: usize, l: usize, gamma: f64) -> Result<f64> {
        check_gamma(gamma)?;
        self.check(&[l, j])?;
        if j < l {
            return Err(invalid(format!("coeff_b needs j >= l, got j = {j}, l = {l}")));
        }
        Ok(coeff_b(&self.taus, j, l, gamma))
    }

    /// `∂ a_{k,j} / ∂ τ_l`.
    pub fn dcoeff_a_dtau(&self, k: usize, j: usize, l: usize, gamma: f64) -> Result<f64> {
        check_gamma(gamma)?;
        self.check(&[k, j, l])?;
        if j > k {
            return Err(invalid(format!("dcoeff_a_dtau needs j <= k, got j = {j}, k = {k}")));
        }
        Ok(dcoeff_a_dtau(&self.taus, k, j, l, gamma))
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("fractional order must lie in (0, 1), got {gamma}")))
    }
}

#[inline]
fn span(taus: &[f64], from: usize, to_inclusive: usize) -> f64 {
    if from > to_inclusive {
        0.0
    } else {
        taus[from..=to_inclusive].iter().sum()
    }
}

/// Unchecked `a_{l,j}`; requires `j <= l < taus.len()`.
pub(crate) fn coeff_a(taus: &[f64], l: usize, j: usize, gamma: f64) -> f64 {
    let e = 1.0 - gamma;
    let upper = span(taus, j, l);
    let lower = span(taus, j + 1, l);
    taus[l].powf(gamma) / taus[j] * (upper.powf(e) - lower.powf(e))
}

/// Unchecked `b_{j,l}`; requires `l <= j < taus.len()`.
pub(crate) fn coeff_b(taus: &[f64], j: usize, l: usize, gamma: f64) -> f64 {
    let e = 1.0 - gamma;
    let upper = span(taus, l, j);
    let lower = if j == 0 { 0.0 } else { span(taus, l, j - 1) };
    taus[l].powf(gamma) / taus[j] * (upper.powf(e) - lower.powf(e))
}

/// Unchecked `∂ a_{k,j} / ∂ τ_l`; requires `j <= k`.
///
/// `a_{k,j}` contains `τ_j..τ_k` only; three closed forms cover the
/// remaining positions of `l` inside `[j, k]`.
pub(crate) fn dcoeff_a_dtau(taus: &[f64], k: usize, j: usize, l: usize, gamma: f64) -> f64 {
    if j == k || l < j || l > k {
        return 0.0;
    }
    let e = 1.0 - gamma;
    let upper = span(taus, j, k);
    let lower = span(taus, j + 1, k);
    let tk_g = taus[k].powf(gamma);
    if l == k {
        // product rule on τ_k^γ and the bracket, j < k
        e * tk_g / taus[j] * (upper.powf(-gamma) - lower.powf(-gamma))
            + gamma * taus[k].powf(gamma - 1.0) / taus[j] * (upper.powf(e) - lower.powf(e))
    } else if l > j {
        // j < l < k: τ_l only inside both partial sums
        e * tk_g / taus[j] * (upper.powf(-gamma) - lower.powf(-gamma))
    } else {
        // l == j < k: τ_j in the prefactor and the first sum
        let tj = taus[j];
        tk_g / (tj * tj) * (lower.powf(e) - upper.powf(e)) + e * tk_g / tj * upper.powf(-gamma)
    }
}

/// Which Caputo derivative the L1 sum approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// History from `t_0`, evaluated at `t_1..t_M`.
    Left,
    /// Future up to `t_M`, evaluated at `t_0..t_{M-1}`.
    Right,
}

/// L1 approximation of the Caputo derivative of nodal values
/// `y(t_0), …, y(t_M)` on `grid`.
pub fn caputo_l1(values: &[f64], grid: &TauGrid, gamma: f64, side: Side) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let m = grid.len();
    if values.len() != m + 1 {
        return Err(invalid(format!(
            "{} nodal values for a grid with {m} steps",
            values.len()
        )));
    }
    let taus = grid.taus();
    let scale = 1.0 / self::gamma(2.0 - gamma)?;
    let e = 1.0 - gamma;
    let diff = |j: usize| values[j + 1] - values[j];
    let mut out = Vec::with_capacity(m);
    match side {
        Side::Left => {
            for l in 0..m {
                let mut acc = 0.0;
                let mut lower = 0.0;
                for j in (0..=l).rev() {
                    let upper = lower + taus[j];
                    acc += (upper.powf(e) - lower.powf(e)) / taus[j] * diff(j);
                    lower = upper;
                }
                out.push(scale * acc);
            }
        }
        Side::Right => {
            for l in 0..m {
                let mut acc = 0.0;
                let mut lower = 0.0;
                for j in l..m {
                    let upper = lower + taus[j];
                    acc += (upper.powf(e) - lower.powf(e)) / taus[j] * diff(j);
                    lower = upper;
                }
                out.push(-scale * acc);
            }
        }
    }
    Ok(out)
}

/// Precomputed `a_{k,j}` and their τ-derivatives for one step vector.
#[derive(Debug, Clone)]
pub(crate) struct CoeffTable {
    len: usize,
    a: Vec<f64>,
}

impl CoeffTable {
    pub(crate) fn new(taus: &[f64], gamma: f64) -> Self {
        let len = taus.len();
        let mut a = vec![0.0; len * len];
        for k in 0..len {
            for j in 0..=k {
                a[k * len + j] = coeff_a(taus, k, j, gamma);
            }
        }
        Self { len, a }
    }

    #[inline]
    pub(crate) fn a(&self, k: usize, j: usize) -> f64 {
        debug_assert!(j <= k && k < self.len);
        self.a[k * self.len + j]
    }
}
