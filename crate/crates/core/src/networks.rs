//! Forward propagation with per-layer step sizes.
//!
//! Hidden layers `ℓ = 1..L-1` are computed from `z = W^[ℓ-1] y^[ℓ-1] + b^[ℓ-1]`:
//!
//! ```text
//! feedforward  y^[ℓ] = τ^[ℓ-1] σ(z)
//! resnet       y^[ℓ] = P y^[ℓ-1] + τ^[ℓ-1] σ(z)                  (no skip into y^[1])
//! densenet     y^[ℓ] = Σ_{i<ℓ} P y^[i] + τ^[ℓ-1] σ(z)
//! fractional   y^[ℓ] = P y^[ℓ-1] − Σ_{j≤ℓ-2} a_{ℓ-1,j} (P y^[j+1] − P y^[j])
//!                      + (τ^[ℓ-1])^γ Γ(2−γ) σ(z)
//! ```
//!
//! and the output layer is the plain linear map `y^[L] = W^[L-1] y^[L-1]`.
//! `P` is [`project`](crate::linalg::project) onto the receiving width.

use std::fmt;
use std::str::FromStr;

use crate::activation::{smooth_relu, DEFAULT_ETA};
use crate::error::{invalid, shape, Error, Result};
use crate::fractional::{check_gamma, CoeffTable};
use crate::linalg::{add_projected, Matrix, Vector};
use crate::special::gamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    FeedForward,
    ResNet,
    DenseNet,
    FractionalDnn,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Self::FeedForward => "feedforward",
            Self::ResNet => "resnet",
            Self::DenseNet => "densenet",
            Self::FractionalDnn => "fracdnn",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "feedforward" | "ff" => Ok(Self::FeedForward),
            "resnet" => Ok(Self::ResNet),
            "densenet" => Ok(Self::DenseNet),
            "fracdnn" | "fractional" | "fractionaldnn" => Ok(Self::FractionalDnn),
            other => Err(invalid(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Architecture, layer widths `n_0..n_L`, fractional order and activation
/// smoothing width.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    arch: Architecture,
    widths: Vec<usize>,
    gamma: Option<f64>,
    eta: f64,
    /// `Γ(2−γ)` for fractional networks, 1 otherwise.
    step_factor: f64,
}

impl NetworkSpec {
    pub fn new(arch: Architecture, widths: Vec<usize>, gamma: Option<f64>, eta: f64) -> Result<Self> {
        if widths.len() < 3 {
            return Err(invalid(format!(
                "need at least one hidden layer (L >= 2), got {} widths",
                widths.len()
            )));
        }
        if widths.contains(&0) {
            return Err(invalid("layer widths must be >= 1"));
        }
        if !(eta > 0.0) {
            return Err(invalid(format!("eta must be positive, got {eta}")));
        }
        let step_factor = match (arch, gamma) {
            (Architecture::FractionalDnn, Some(g)) => {
                check_gamma(g)?;
                self::gamma(2.0 - g)?
            }
            (Architecture::FractionalDnn, None) => {
                return Err(invalid("fractional network needs gamma"))
            }
            (_, Some(_)) => return Err(invalid(format!("gamma is only meaningful for fracdnn, not {arch}"))),
            (_, None) => 1.0,
        };
        Ok(Self {
            arch,
            widths,
            gamma,
            eta,
            step_factor,
        })
    }

    /// Spec with the default smoothing width.
    pub fn with_default_eta(arch: Architecture, widths: Vec<usize>, gamma: Option<f64>) -> Result<Self> {
        Self::new(arch, widths, gamma, DEFAULT_ETA)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub(crate) fn gamma_or_zero(&self) -> f64 {
        self.gamma.unwrap_or(0.0)
    }

    /// Scale in front of `σ` in layer `ℓ+1`: `τ` or `τ^γ Γ(2−γ)`.
    #[inline]
    pub fn step_scale(&self, tau: f64) -> f64 {
        match self.gamma {
            Some(g) => tau.powf(g) * self.step_factor,
            None => tau,
        }
    }

    /// `d step_scale / dτ`.
    #[inline]
    pub fn step_scale_prime(&self, tau: f64) -> f64 {
        match self.gamma {
            Some(g) => g * tau.powf(g - 1.0) * self.step_factor,
            None => 1.0,
        }
    }

    /// Same widths and order under another architecture.
    pub fn with_arch(&self, arch: Architecture) -> Result<Self> {
        let gamma = if arch == Architecture::FractionalDnn { self.gamma } else { None };
        Self::new(arch, self.widths.clone(), gamma, self.eta)
    }

    pub(crate) fn with_widths(&self, widths: Vec<usize>) -> Result<Self> {
        Self::new(self.arch, widths, self.gamma, self.eta)
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    /// `W^[ℓ]`, shape `n_{ℓ+1} × n_ℓ`, `ℓ = 0..L-1`.
    pub weights: Vec<Matrix>,
    /// `b^[ℓ]`, length `n_{ℓ+1}`, `ℓ = 0..L-2`.
    pub biases: Vec<Vector>,
    /// `τ^[ℓ]`, `ℓ = 0..L-2`.
    pub taus: Vec<f64>,
}

impl Theta {
    /// All-zero weights and biases with the given constant step.
    pub fn zeros(spec: &NetworkSpec, tau: f64) -> Self {
        let w = spec.widths();
        let l = spec.depth();
        Self {
            weights: (0..l).map(|i| Matrix::zeros(w[i + 1], w[i])).collect(),
            biases: (0..l - 1).map(|i| Vector::zeros(w[i + 1])).collect(),
            taus: vec![tau; l - 1],
        }
    }

    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let w = spec.widths();
        let l = spec.depth();
        if self.weights.len() != l || self.biases.len() != l - 1 || self.taus.len() != l - 1 {
            return Err(shape(format!(
                "theta has {}/{}/{} weight/bias/tau blocks, depth {l} needs {l}/{}/{}",
                self.weights.len(),
                self.biases.len(),
                self.taus.len(),
                l - 1,
                l - 1
            )));
        }
        for (i, m) in self.weights.iter().enumerate() {
            if m.shape() != (w[i + 1], w[i]) {
                return Err(shape(format!("W^[{i}] is {:?}, expected {:?}", m.shape(), (w[i + 1], w[i]))));
            }
        }
        for (i, b) in self.biases.iter().enumerate() {
            if b.len() != w[i + 1] {
                return Err(shape(format!("b^[{i}] has length {}, expected {}", b.len(), w[i + 1])));
            }
        }
        if spec.arch() == Architecture::FractionalDnn {
            if let Some(t) = self.taus.iter().find(|t| !(**t > 0.0)) {
                return Err(Error::Invariant(format!("fractional step sizes must be positive, got {t}")));
            }
        } else if let Some(t) = self.taus.iter().find(|t| !(**t >= 0.0)) {
            return Err(Error::Invariant(format!("step sizes must be non-negative, got {t}")));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|m| m.as_slice().len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
            + self.taus.len()
    }

    /// Flattened parameters: every `W` row-major, then every `b`, then `τ`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for m in &self.weights {
            out.extend_from_slice(m.as_slice());
        }
        for b in &self.biases {
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.taus);
        out
    }

    /// Inverse of [`Theta::to_flat`]; `self` supplies the shapes.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut off = 0;
        for m in &mut self.weights {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        for b in &mut self.biases {
            let n = b.len();
            b.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        self.taus.copy_from_slice(&flat[off..]);
    }
}

/// Feature vectors `y^[0..L]` of one sample plus the hidden pre-activations
/// `z^[ℓ] = W^[ℓ] y^[ℓ] + b^[ℓ]`, `ℓ = 0..L-2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub preacts: Vec<Vector>,
}

impl Trajectory {
    pub fn output(&self) -> &Vector {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Forward pass for `spec.arch()`.
pub fn forward(spec: &NetworkSpec, theta: &Theta, u: &[f64]) -> Result<Trajectory> {
    theta.check(spec)?;
    if u.len() != spec.widths()[0] {
        return Err(shape(format!("input has length {}, expected {}", u.len(), spec.widths()[0])));
    }
    let table = match spec.arch() {
        Architecture::FractionalDnn => Some(CoeffTable::new(&theta.taus, spec.gamma_or_zero())),
        _ => None,
    };
    Ok(propagate(spec, theta, table.as_ref(), u))
}

fn require(spec: &NetworkSpec, arch: Architecture) -> Result<()> {
    if spec.arch() == arch {
        Ok(())
    } else {
        Err(invalid(format!("spec describes a {}, not a {arch}", spec.arch())))
    }
}

pub fn forward_feedforward(spec: &NetworkSpec, theta: &Theta, u: &[f64]) -> Result<Trajectory> {
    require(spec, Architecture::FeedForward)?;
    forward(spec, theta, u)
}

pub fn forward_resnet(spec: &NetworkSpec, theta: &Theta, u: &[f64]) -> Result<Trajectory> {
    require(spec, Architecture::ResNet)?;
    forward(spec, theta, u)
}

pub fn forward_densenet(spec: &NetworkSpec, theta: &Theta, u: &[f64]) -> Result<Trajectory> {
    require(spec, Architecture::DenseNet)?;
    forward(spec, theta, u)
}

pub fn forward_fracdnn(spec: &NetworkSpec, theta: &Theta, u: &[f64]) -> Result<Trajectory> {
    require(spec, Architecture::FractionalDnn)?;
    forward(spec, theta, u)
}

/// Forward pass on pre-validated inputs. `table` must hold the memory
/// coefficients of `theta.taus` for fractional networks.
pub(crate) fn propagate(
    spec: &NetworkSpec,
    theta: &Theta,
    table: Option<&CoeffTable>,
    u: &[f64],
) -> Trajectory {
    let widths = spec.widths();
    let depth = spec.depth();
    let eta = spec.eta();
    let mut states: Vec<Vector> = Vec::with_capacity(depth + 1);
    let mut preacts: Vec<Vector> = Vec::with_capacity(depth - 1);
    states.push(Vector::from(u));
    for l in 1..depth {
        let n = widths[l];
        let prev = &states[l - 1];
        let mut z = theta.weights[l - 1].matvec(prev);
        z.axpy(1.0, &theta.biases[l - 1]);
        let scale = spec.step_scale(theta.taus[l - 1]);
        let mut y = Vector::zeros(n);
        match spec.arch() {
            Architecture::FeedForward => {}
            Architecture::ResNet => {
                if l > 1 {
                    add_projected(&mut y, 1.0, prev);
                }
            }
            Architecture::DenseNet => {
                for s in &states {
                    add_projected(&mut y, 1.0, s);
                }
            }
            Architecture::FractionalDnn => {
                let table = table.expect("coefficient table for fractional network");
                add_projected(&mut y, 1.0, prev);
                for j in 0..l.saturating_sub(1) {
                    let a = table.a(l - 1, j);
                    add_projected(&mut y, -a, &states[j + 1]);
                    add_projected(&mut y, a, &states[j]);
                }
            }
        }
        for (yi, zi) in y.iter_mut().zip(z.iter()) {
            *yi += scale * smooth_relu(*zi, eta);
        }
        preacts.push(z);
        states.push(y);
    }
    let out = theta.weights[depth - 1].matvec(&states[depth - 1]);
    states.push(out);
    Trajectory { states, preacts }
}
