//! Gradient-flow diagnostics and τ-driven layer removal.
//!
//! [`layer_derivative`] assembles the Jacobian `d y^[l] / d θ^[j]` column
//! block by column block with the layer recursion of each architecture.
//! Writing `A_i = diag(σ'(z^[i])) W^[i]` and `s_i` for the step scale, the
//! recursions are
//!
//! ```text
//! feedforward  D^[k+1] = s_k A_k D^[k]
//! resnet       D^[k+1] = P D^[k] + s_k A_k D^[k]
//! densenet     D^[k+1] = Σ_{i≤k} P D^[i] + s_k A_k D^[k]
//! fractional   D^[k+1] = P D^[k] − Σ_{i<k} a_{k,i} (P D^[i+1] − P D^[i]) + s_k A_k D^[k]
//! ```
//!
//! started from the direct partial `∂_{θ^[j]} (s_j σ(z^[j]))` in layer `j+1`.
//! For the fractional network the memory coefficients themselves depend on
//! `τ^[j]`, which adds a term to the `τ` column of every later layer.

use std::fmt;
use std::io::Write;

use crate::activation::{smooth_relu, smooth_relu_prime};
use crate::error::{invalid, Error, Result};
use crate::fractional::{coeff_a, dcoeff_a_dtau};
use crate::linalg::{project, Matrix};
use crate::networks::{forward, Architecture, NetworkSpec, Theta, Trajectory};

fn add_rows(out: &mut Matrix, alpha: f64, m: &Matrix) {
    let rows = out.rows().min(m.rows());
    for i in 0..rows {
        for (o, x) in out.row_mut(i).iter_mut().zip(m.row(i)) {
            *o += alpha * x;
        }
    }
}

/// Columns of `θ^[j] = (W^[j] row-major, b^[j], τ^[j])`.
fn block_width(spec: &NetworkSpec, j: usize) -> usize {
    let w = spec.widths();
    w[j + 1] * w[j] + w[j + 1] + 1
}

/// `diag(σ'(z^[i])) W^[i]`.
fn act_jacobian(spec: &NetworkSpec, theta: &Theta, traj: &Trajectory, i: usize) -> Matrix {
    let w = &theta.weights[i];
    let z = &traj.preacts[i];
    Matrix::from_fn(w.rows(), w.cols(), |r, c| smooth_relu_prime(z[r], spec.eta()) * w[(r, c)])
}

/// `∂_{θ^[j]} (s_j σ(z^[j]))`, an `n_{j+1} × |θ^[j]|` matrix.
fn direct_partial(spec: &NetworkSpec, theta: &Theta, traj: &Trajectory, j: usize) -> Matrix {
    let w = spec.widths();
    let (rows, cols) = (w[j + 1], w[j]);
    let eta = spec.eta();
    let tau = theta.taus[j];
    let s = spec.step_scale(tau);
    let z = &traj.preacts[j];
    let y = &traj.states[j];
    let mut out = Matrix::zeros(rows, block_width(spec, j));
    for r in 0..rows {
        let d = s * smooth_relu_prime(z[r], eta);
        for c in 0..cols {
            out[(r, r * cols + c)] = d * y[c];
        }
        out[(r, rows * cols + r)] = d;
        out[(r, rows * cols + rows)] = spec.step_scale_prime(tau) * smooth_relu(z[r], eta);
    }
    out
}

fn check_layers(spec: &NetworkSpec, j: usize, l: usize) -> Result<()> {
    let depth = spec.depth();
    if !(j < l && l < depth) {
        return Err(invalid(format!("need j < l <= L-1 = {}, got j = {j}, l = {l}", depth - 1)));
    }
    Ok(())
}

/// Jacobian `d y^[l] / d θ^[j]` for `j < l ≤ L−1`.
pub fn layer_derivative(spec: &NetworkSpec, theta: &Theta, u: &[f64], j: usize, l: usize) -> Result<Matrix> {
    check_layers(spec, j, l)?;
    let traj = forward(spec, theta, u)?;
    Ok(derivative_from(spec, theta, &traj, j, l))
}

fn derivative_from(spec: &NetworkSpec, theta: &Theta, traj: &Trajectory, j: usize, l: usize) -> Matrix {
    let widths = spec.widths();
    let p = block_width(spec, j);
    let tau_col = p - 1;
    let g = spec.gamma_or_zero();
    let mut d: Vec<Matrix> = (0..=j).map(|k| Matrix::zeros(widths[k], p)).collect();
    for k in j..l {
        let n = widths[k + 1];
        let mut next = Matrix::zeros(n, p);
        match spec.arch() {
            Architecture::FeedForward => {}
            Architecture::ResNet => add_rows(&mut next, 1.0, &d[k]),
            Architecture::DenseNet => {
                for di in &d {
                    add_rows(&mut next, 1.0, di);
                }
            }
            Architecture::FractionalDnn => {
                add_rows(&mut next, 1.0, &d[k]);
                for i in 0..k {
                    let a = coeff_a(&theta.taus, k, i, g);
                    add_rows(&mut next, -a, &d[i + 1]);
                    add_rows(&mut next, a, &d[i]);
                    let da = dcoeff_a_dtau(&theta.taus, k, i, j, g);
                    if da != 0.0 {
                        let diff = project(&traj.states[i + 1], n);
                        let base = project(&traj.states[i], n);
                        for r in 0..n {
                            next[(r, tau_col)] -= da * (diff[r] - base[r]);
                        }
                    }
                }
            }
        }
        if k == j {
            next.axpy(1.0, &direct_partial(spec, theta, traj, j));
        } else {
            let mut a = act_jacobian(spec, theta, traj, k).matmul(&d[k]);
            a.scale(spec.step_scale(theta.taus[k]));
            next.axpy(1.0, &a);
        }
        d.push(next);
    }
    d.pop().expect("l > j")
}

/// The displayed closed forms of `d y^[3] / d θ^[0]` for networks with at
/// least four weight layers and equal widths `n_1 = n_2 = n_3`.
///
/// With `D = ∂_{θ^[0]} (s_0 σ(z^[0]))`, `A_i` as in the module docs and
/// `c_i` the step scale of layer `i`:
///
/// ```text
/// feedforward  c_2 A_2 c_1 A_1 D
/// resnet       (I + c_1 A_1 + c_2 A_2 + c_1 c_2 A_2 A_1) D
/// densenet     (2 I + c_1 A_1 + c_2 A_2 + c_1 c_2 A_2 A_1) D
/// fractional   ((1 − a_{1,0} − a_{2,0} + a_{1,0} a_{2,1}) I + (1 − a_{2,1}) c_1 A_1
///               + (1 − a_{1,0}) c_2 A_2 + c_1 c_2 A_2 A_1) D
/// ```
///
/// The fractional expression treats the memory coefficients as constants.
/// Since `a_{1,0}` and `a_{2,0}` contain `τ^[0]`, the τ column also receives
/// `((1 − a_{2,1}) I + c_2 A_2) e − ∂a_{2,0} (y^[1] − P y^[0])` with
/// `e = −∂a_{1,0} (y^[1] − P y^[0])`, where `∂` is the derivative by `τ^[0]`.
/// The result is therefore the exact Jacobian.
pub fn closed_form_d3_theta0(spec: &NetworkSpec, theta: &Theta, u: &[f64]) -> Result<Matrix> {
    let w = spec.widths();
    if spec.depth() < 4 {
        return Err(invalid("closed form needs at least four weight layers"));
    }
    if !(w[1] == w[2] && w[2] == w[3]) {
        return Err(invalid("closed form needs n_1 = n_2 = n_3"));
    }
    let traj = forward(spec, theta, u)?;
    let dmat = direct_partial(spec, theta, &traj, 0);
    let a1 = act_jacobian(spec, theta, &traj, 1);
    let a2 = act_jacobian(spec, theta, &traj, 2);
    let c1 = spec.step_scale(theta.taus[1]);
    let c2 = spec.step_scale(theta.taus[2]);
    let n = w[1];
    let a2a1 = a2.matmul(&a1);
    let combine = |id: f64, k1: f64, k2: f64, k12: f64| {
        let mut m = Matrix::identity(n);
        m.scale(id);
        let mut t1 = a1.clone();
        t1.scale(k1);
        let mut t2 = a2.clone();
        t2.scale(k2);
        let mut t12 = a2a1.clone();
        t12.scale(k12);
        m.axpy(1.0, &t1);
        m.axpy(1.0, &t2);
        m.axpy(1.0, &t12);
        m
    };
    let out = match spec.arch() {
        Architecture::FeedForward => combine(0.0, 0.0, 0.0, c1 * c2).matmul(&dmat),
        Architecture::ResNet => combine(1.0, c1, c2, c1 * c2).matmul(&dmat),
        Architecture::DenseNet => combine(2.0, c1, c2, c1 * c2).matmul(&dmat),
        Architecture::FractionalDnn => {
            let g = spec.gamma_or_zero();
            let t = &theta.taus;
            let (a10, a20, a21) = (coeff_a(t, 1, 0, g), coeff_a(t, 2, 0, g), coeff_a(t, 2, 1, g));
            let lead = 1.0 - a10 - a20 + a10 * a21;
            let mut out = combine(lead, (1.0 - a21) * c1, (1.0 - a10) * c2, c1 * c2).matmul(&dmat);
            let y0 = project(&traj.states[0], n);
            let diff: Vec<f64> = traj.states[1].iter().zip(y0.iter()).map(|(a, b)| a - b).collect();
            let (da10, da20) = (dcoeff_a_dtau(t, 1, 0, 0, g), dcoeff_a_dtau(t, 2, 0, 0, g));
            let e: Vec<f64> = diff.iter().map(|x| -da10 * x).collect();
            let a2e = a2.matvec(&e);
            let tau_col = out.cols() - 1;
            for r in 0..n {
                out[(r, tau_col)] += (1.0 - a21) * e[r] + c2 * a2e[r] - da20 * diff[r];
            }
            out
        }
    };
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowClass {
    Ok,
    Vanishing,
    Exploding,
}

impl fmt::Display for FlowClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ok => "ok",
            Self::Vanishing => "vanishing",
            Self::Exploding => "exploding",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFlow {
    pub layer: usize,
    pub norm: f64,
    pub class: FlowClass,
}

/// Mean spectral norm of `d y^[L-1] / d θ^[ℓ]` per parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradFlowReport {
    pub layers: Vec<LayerFlow>,
    pub eps_vanish: f64,
    pub eps_explode: f64,
}

pub const DEFAULT_EPS_VANISH: f64 = 1e-8;
pub const DEFAULT_EPS_EXPLODE: f64 = 1e8;

impl GradFlowReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "layer,norm,classification")?;
        for l in &self.layers {
            writeln!(w, "{},{:e},{}", l.layer, l.norm, l.class)?;
        }
        Ok(())
    }
}

pub fn gradflow_report(
    spec: &NetworkSpec,
    theta: &Theta,
    samples: &[Vec<f64>],
    eps_vanish: f64,
    eps_explode: f64,
) -> Result<GradFlowReport> {
    if samples.is_empty() {
        return Err(invalid("gradient-flow report needs at least one sample"));
    }
    if !(eps_vanish > 0.0 && eps_explode > eps_vanish) {
        return Err(invalid("need 0 < eps_vanish < eps_explode"));
    }
    let last = spec.depth() - 1;
    let mut sums = vec![0.0; last];
    for u in samples {
        let traj = forward(spec, theta, u)?;
        for (j, s) in sums.iter_mut().enumerate() {
            *s += derivative_from(spec, theta, &traj, j, last).spectral_norm();
        }
    }
    let layers = sums
        .into_iter()
        .enumerate()
        .map(|(layer, s)| {
            let norm = s / samples.len() as f64;
            let class = if norm < eps_vanish {
                FlowClass::Vanishing
            } else if norm > eps_explode {
                FlowClass::Exploding
            } else {
                FlowClass::Ok
            };
            LayerFlow { layer, norm, class }
        })
        .collect();
    Ok(GradFlowReport {
        layers,
        eps_vanish,
        eps_explode,
    })
}

/// Result of [`prune`]: the reduced network and the removed hidden layers
/// (1-based indices in the original network).
#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub spec: NetworkSpec,
    pub theta: Theta,
    pub removed: Vec<usize>,
}

/// Deletes every hidden layer `ℓ ≥ 2` with `τ^[ℓ-1] < threshold` whose width
/// equals the width before it.
///
/// For ResNet such a layer is the identity when the step is exactly zero, so
/// the reduced network reproduces the original one. For the fractional
/// network the memory coefficients of the later layers change, so the result
/// is only close. The first hidden layer has no skip connection and is kept.
pub fn prune(spec: &NetworkSpec, theta: &Theta, threshold: f64) -> Result<Pruned> {
    theta.check(spec)?;
    if !(threshold >= 0.0) {
        return Err(invalid("threshold must be non-negative"));
    }
    match spec.arch() {
        Architecture::ResNet | Architecture::FractionalDnn => {}
        other => return Err(Error::Unsupported(format!("pruning needs skip connections, not {other}"))),
    }
    let depth = spec.depth();
    if theta.taus.iter().all(|t| *t < threshold) {
        return Err(Error::EmptyNetwork);
    }
    let widths = spec.widths();
    let removed: Vec<usize> = (2..depth)
        .filter(|&l| theta.taus[l - 1] < threshold && widths[l] == widths[l - 1])
        .collect();
    let keep_layer = |l: usize| !removed.contains(&l);
    let new_widths: Vec<usize> = (0..=depth).filter(|&l| keep_layer(l)).map(|l| widths[l]).collect();
    // hidden layer l is produced by block l-1
    let keep_block = |b: usize| keep_layer(b + 1);
    let reduced = Theta {
        weights: theta.weights.iter().enumerate().filter(|(b, _)| keep_block(*b)).map(|(_, m)| m.clone()).collect(),
        biases: theta.biases.iter().enumerate().filter(|(b, _)| keep_block(*b)).map(|(_, v)| v.clone()).collect(),
        taus: theta.taus.iter().enumerate().filter(|(b, _)| keep_block(*b)).map(|(_, t)| *t).collect(),
    };
    let spec = spec.with_widths(new_widths)?;
    reduced.check(&spec)?;
    Ok(Pruned { spec, theta: reduced, removed })
}
