//! Discrete adjoint recursions and parameter gradients.
//!
//! With the Lagrangian `J − Σ ⟨y^[ℓ] − F_ℓ(y, θ), φ^[ℓ]⟩`, the multipliers are
//! swept backwards from `φ^[L] = ∂J/∂y^[L]` and `φ^[L-1] = (W^[L-1])ᵀ φ^[L]`.
//! Hidden layers `ℓ = L-2..1` combine a skip/history part with
//! `s_ℓ (W^[ℓ])ᵀ (φ^[ℓ+1] ⊙ σ'(z^[ℓ]))`, where `s_ℓ` is the step scale of the
//! architecture (see [`NetworkSpec::step_scale`]).
//!
//! For the fractional network two backward sweeps are provided. The
//! discretize-then-optimize sweep is the exact derivative of the discrete
//! forward pass and is what training uses. The optimize-then-discretize sweep
//! discretizes the continuous adjoint with the right-sided `b_{j,ℓ}`
//! coefficients; it does not reproduce finite differences on general grids
//! and is kept for comparison only.

use crate::activation::{smooth_relu, smooth_relu_prime};
use crate::error::{shape, Error, Result};
use crate::fractional::{coeff_b, dcoeff_a_dtau, CoeffTable};
use crate::linalg::{add_projected, dot, Matrix, Vector};
use crate::networks::{forward, Architecture, NetworkSpec, Theta, Trajectory};

/// `φ^[0..L]`; entry 0 is unused and left empty.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub phis: Vec<Vector>,
}

impl AdjointTrajectory {
    pub fn phi(&self, l: usize) -> &Vector {
        &self.phis[l]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FracAdjoint {
    /// Discretize-then-optimize (exact discrete gradient).
    Dto,
    /// Optimize-then-discretize (comparison only).
    Otd,
}

/// Gradient with the same block layout as [`Theta`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub dw: Vec<Matrix>,
    pub db: Vec<Vector>,
    pub dtau: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(theta: &Theta) -> Self {
        Self {
            dw: theta.weights.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            db: theta.biases.iter().map(|b| Vector::zeros(b.len())).collect(),
            dtau: vec![0.0; theta.taus.len()],
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Gradient) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            a.axpy(alpha, b);
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            a.axpy(alpha, b);
        }
        for (a, b) in self.dtau.iter_mut().zip(&other.dtau) {
            *a += alpha * b;
        }
    }

    pub fn norm_w(&self) -> f64 {
        self.dw.iter().map(|m| m.frobenius_norm().powi(2)).sum::<f64>().sqrt()
    }

    pub fn norm_b(&self) -> f64 {
        self.db.iter().map(|b| b.dot(b)).sum::<f64>().sqrt()
    }

    pub fn norm_tau(&self) -> f64 {
        self.dtau.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_w().powi(2) + self.norm_b().powi(2) + self.norm_tau().powi(2)
    }

    /// Same layout as [`Theta::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in &self.dw {
            out.extend_from_slice(m.as_slice());
        }
        for b in &self.db {
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.dtau);
        out
    }

    pub fn flat_w(&self) -> Vec<f64> {
        self.dw.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }

    pub fn flat_b(&self) -> Vec<f64> {
        self.db.iter().flat_map(|b| b.iter().copied()).collect()
    }
}

/// Per-θ data shared by every sample: memory coefficients and their
/// τ-derivatives for fractional networks.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub(crate) table: Option<CoeffTable>,
    /// `∂ a_{k,j} / ∂ τ_l` at `[(l * n + k) * n + j]`.
    dtable: Vec<f64>,
    n: usize,
}

impl Prepared {
    pub(crate) fn new(spec: &NetworkSpec, theta: &Theta) -> Self {
        match spec.arch() {
            Architecture::FractionalDnn => {
                let g = spec.gamma_or_zero();
                let n = theta.taus.len();
                let mut dtable = vec![0.0; n * n * n];
                for l in 0..n {
                    for k in l..n {
                        for j in 0..=k.min(l) {
                            dtable[(l * n + k) * n + j] = dcoeff_a_dtau(&theta.taus, k, j, l, g);
                        }
                    }
                }
                Self {
                    table: Some(CoeffTable::new(&theta.taus, g)),
                    dtable,
                    n,
                }
            }
            _ => Self {
                table: None,
                dtable: Vec::new(),
                n: 0,
            },
        }
    }

    fn table(&self) -> &CoeffTable {
        self.table.as_ref().expect("fractional coefficient table")
    }

    #[inline]
    fn da(&self, l: usize, k: usize, j: usize) -> f64 {
        self.dtable[(l * self.n + k) * self.n + j]
    }
}

fn check_inputs(spec: &NetworkSpec, theta: &Theta, traj: &Trajectory, phi_out: &[f64]) -> Result<()> {
    theta.check(spec)?;
    let widths = spec.widths();
    if traj.states.len() != widths.len() || traj.preacts.len() != spec.depth() - 1 {
        return Err(shape("trajectory does not match the network depth"));
    }
    for (s, w) in traj.states.iter().zip(widths) {
        if s.len() != *w {
            return Err(shape("trajectory state width mismatch"));
        }
    }
    if phi_out.len() != *widths.last().unwrap() {
        return Err(shape(format!(
            "output adjoint has length {}, expected {}",
            phi_out.len(),
            widths.last().unwrap()
        )));
    }
    Ok(())
}

/// Backward sweep for the network described by `spec`. DenseNet has no
/// adjoint here.
pub fn adjoint(
    spec: &NetworkSpec,
    theta: &Theta,
    traj: &Trajectory,
    phi_out: &[f64],
    variant: FracAdjoint,
) -> Result<AdjointTrajectory> {
    check_inputs(spec, theta, traj, phi_out)?;
    if spec.arch() == Architecture::DenseNet {
        return Err(Error::Unsupported("DenseNet has no adjoint; it is forward/diagnostics only".into()));
    }
    let prep = Prepared::new(spec, theta);
    Ok(sweep(spec, theta, &prep, traj, phi_out, variant))
}

pub fn adjoint_resnet(spec: &NetworkSpec, theta: &Theta, traj: &Trajectory, phi_out: &[f64]) -> Result<AdjointTrajectory> {
    require(spec, Architecture::ResNet)?;
    adjoint(spec, theta, traj, phi_out, FracAdjoint::Dto)
}

pub fn adjoint_feedforward(spec: &NetworkSpec, theta: &Theta, traj: &Trajectory, phi_out: &[f64]) -> Result<AdjointTrajectory> {
    require(spec, Architecture::FeedForward)?;
    adjoint(spec, theta, traj, phi_out, FracAdjoint::Dto)
}

pub fn adjoint_fracdnn_dto(spec: &NetworkSpec, theta: &Theta, traj: &Trajectory, phi_out: &[f64]) -> Result<AdjointTrajectory> {
    require(spec, Architecture::FractionalDnn)?;
    adjoint(spec, theta, traj, phi_out, FracAdjoint::Dto)
}

pub fn adjoint_fracdnn_otd(spec: &NetworkSpec, theta: &Theta, traj: &Trajectory, phi_out: &[f64]) -> Result<AdjointTrajectory> {
    require(spec, Architecture::FractionalDnn)?;
    adjoint(spec, theta, traj, phi_out, FracAdjoint::Otd)
}

fn require(spec: &NetworkSpec, arch: Architecture) -> Result<()> {
    if spec.arch() == arch {
        Ok(())
    } else {
        Err(crate::error::invalid(format!("spec describes a {}, not a {arch}", spec.arch())))
    }
}

/// Skip/memory contribution to `φ^[l]` from the already known `φ^[l+1..L-1]`
/// of a fractional network (everything except the activation term).
pub fn fracdnn_history_term(
    spec: &NetworkSpec,
    theta: &Theta,
    adj: &AdjointTrajectory,
    l: usize,
    variant: FracAdjoint,
) -> Result<Vector> {
    require(spec, Architecture::FractionalDnn)?;
    let depth = spec.depth();
    if l == 0 || l + 2 > depth {
        return Err(crate::error::invalid(format!("history term defined for 1 <= l <= L-2, got {l}")));
    }
    let prep = Prepared::new(spec, theta);
    Ok(frac_history(spec, theta, &prep, &adj.phis, l, variant))
}

fn frac_history(
    spec: &NetworkSpec,
    theta: &Theta,
    prep: &Prepared,
    phis: &[Vector],
    l: usize,
    variant: FracAdjoint,
) -> Vector {
    let depth = spec.depth();
    let n = spec.widths()[l];
    let mut p = Vector::zeros(n);
    match variant {
        FracAdjoint::Dto => {
            let t = prep.table();
            add_projected(&mut p, 1.0 - t.a(l, l - 1), &phis[l + 1]);
            for j in (l + 2)..depth {
                add_projected(&mut p, t.a(j - 1, l) - t.a(j - 1, l - 1), &phis[j]);
            }
        }
        FracAdjoint::Otd => {
            let g = spec.gamma_or_zero();
            add_projected(&mut p, 1.0, &phis[l + 1]);
            for j in (l + 1)..(depth - 1) {
                let b = coeff_b(&theta.taus, j, l, g);
                add_projected(&mut p, b, &phis[j + 1]);
                add_projected(&mut p, -b, &phis[j]);
            }
        }
    }
    p
}

/// Backward sweep on validated inputs.
pub(crate) fn sweep(
    spec: &NetworkSpec,
    theta: &Theta,
    prep: &Prepared,
    traj: &Trajectory,
    phi_out: &[f64],
    variant: FracAdjoint,
) -> AdjointTrajectory {
    let depth = spec.depth();
    let widths = spec.widths();
    let eta = spec.eta();
    let mut phis = vec![Vector::default(); depth + 1];
    phis[depth] = Vector::from(phi_out);
    phis[depth - 1] = theta.weights[depth - 1].matvec_t(phi_out);
    for l in (1..depth - 1).rev() {
        let mut p = match spec.arch() {
            Architecture::FeedForward => Vector::zeros(widths[l]),
            Architecture::ResNet => {
                let mut p = Vector::zeros(widths[l]);
                add_projected(&mut p, 1.0, &phis[l + 1]);
                p
            }
            Architecture::FractionalDnn => frac_history(spec, theta, prep, &phis, l, variant),
            Architecture::DenseNet => unreachable!("rejected before the sweep"),
        };
        let scale = spec.step_scale(theta.taus[l]);
        let delta: Vec<f64> = phis[l + 1]
            .iter()
            .zip(traj.preacts[l].iter())
            .map(|(ph, z)| scale * ph * smooth_relu_prime(*z, eta))
            .collect();
        let back = theta.weights[l].matvec_t(&delta);
        p.axpy(1.0, &back);
        phis[l] = p;
    }
    AdjointTrajectory { phis }
}

/// Parameter gradient of one sample from its trajectory and adjoints
/// (regularization excluded).
pub fn grads(spec: &NetworkSpec, theta: &Theta, traj: &Trajectory, adj: &AdjointTrajectory) -> Result<Gradient> {
    theta.check(spec)?;
    if adj.phis.len() != spec.depth() + 1 {
        return Err(shape("adjoint trajectory does not match the network depth"));
    }
    if spec.arch() == Architecture::DenseNet {
        return Err(Error::Unsupported("DenseNet has no adjoint gradient".into()));
    }
    let prep = Prepared::new(spec, theta);
    let mut g = Gradient::zeros_like(theta);
    accumulate(spec, theta, &prep, traj, adj, &mut g);
    Ok(g)
}

pub fn grads_resnet(spec: &NetworkSpec, theta: &Theta, traj: &Trajectory, adj: &AdjointTrajectory) -> Result<Gradient> {
    require(spec, Architecture::ResNet)?;
    grads(spec, theta, traj, adj)
}

pub fn grads_fracdnn(spec: &NetworkSpec, theta: &Theta, traj: &Trajectory, adj: &AdjointTrajectory) -> Result<Gradient> {
    require(spec, Architecture::FractionalDnn)?;
    grads(spec, theta, traj, adj)
}

/// Adds one sample's gradient contribution into `g`.
pub(crate) fn accumulate(
    spec: &NetworkSpec,
    theta: &Theta,
    prep: &Prepared,
    traj: &Trajectory,
    adj: &AdjointTrajectory,
    g: &mut Gradient,
) {
    let depth = spec.depth();
    let eta = spec.eta();
    let phis = &adj.phis;
    let y = &traj.states;
    g.dw[depth - 1].add_outer(1.0, &phis[depth], &y[depth - 1]);
    let mut delta = Vec::new();
    for l in 0..depth - 1 {
        let tau = theta.taus[l];
        let scale = spec.step_scale(tau);
        let z = &traj.preacts[l];
        let phi = &phis[l + 1];
        delta.clear();
        delta.extend(phi.iter().zip(z.iter()).map(|(p, zi)| scale * p * smooth_relu_prime(*zi, eta)));
        g.dw[l].add_outer(1.0, &delta, &y[l]);
        g.db[l].axpy(1.0, &delta);
        let act: f64 = phi.iter().zip(z.iter()).map(|(p, zi)| p * smooth_relu(*zi, eta)).sum();
        g.dtau[l] += spec.step_scale_prime(tau) * act;
    }
    if spec.arch() == Architecture::FractionalDnn {
        // memory coefficients a_{k,j} feed y^[k+1] and contain τ_j..τ_k
        let n = depth - 1;
        for k in 1..n {
            let phi = &phis[k + 1];
            for j in 0..k {
                let inner = projected_dot(&y[j + 1], phi) - projected_dot(&y[j], phi);
                if inner == 0.0 {
                    continue;
                }
                for l in j..=k {
                    g.dtau[l] -= prep.da(l, k, j) * inner;
                }
            }
        }
    }
}

/// `⟨P v, w⟩` with `P` the projection onto `w`'s width.
#[inline]
fn projected_dot(v: &[f64], w: &[f64]) -> f64 {
    let n = v.len().min(w.len());
    dot(&v[..n], &w[..n])
}

/// Central-difference gradient of `objective`; the step for coordinate `θ_i`
/// is `h_rel · max(1, |θ_i|)`, and τ steps are capped at `τ/2` so the
/// perturbed step stays positive.
pub fn fd_gradient<F>(objective: F, theta: &Theta, h_rel: f64) -> Result<Gradient>
where
    F: Fn(&Theta) -> Result<f64>,
{
    let eval = |t: &Theta| -> Result<f64> {
        let v = objective(t)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(v))
        }
    };
    let base = theta.to_flat();
    let n_tau = theta.taus.len();
    let first_tau = base.len() - n_tau;
    let mut work = theta.clone();
    let mut flat_grad = vec![0.0; base.len()];
    let mut x = base.clone();
    for i in 0..base.len() {
        let xi = base[i];
        let mut h = h_rel * xi.abs().max(1.0);
        let mut one_sided = false;
        if i >= first_tau {
            if xi > 0.0 {
                h = h.min(0.5 * xi);
            } else {
                one_sided = true;
            }
        }
        x[i] = xi + h;
        work.set_flat(&x);
        let fp = eval(&work)?;
        if one_sided {
            x[i] = xi;
            work.set_flat(&x);
            let f0 = eval(&work)?;
            flat_grad[i] = (fp - f0) / h;
        } else {
            x[i] = xi - h;
            work.set_flat(&x);
            let fm = eval(&work)?;
            flat_grad[i] = (fp - fm) / (2.0 * h);
        }
        x[i] = xi;
    }
    let mut g = Gradient::zeros_like(theta);
    let mut off = 0;
    for m in &mut g.dw {
        let n = m.as_slice().len();
        m.as_mut_slice().copy_from_slice(&flat_grad[off..off + n]);
        off += n;
    }
    for b in &mut g.db {
        let n = b.len();
        b.copy_from_slice(&flat_grad[off..off + n]);
        off += n;
    }
    g.dtau.copy_from_slice(&flat_grad[off..]);
    Ok(g)
}

/// Relative ℓ∞ distance `‖a − b‖∞ / ‖b‖∞` (absolute when `b` vanishes).
pub fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Per-block relative ℓ∞ errors `(W, b, τ)` of `analytic` against `reference`.
pub fn block_errors(analytic: &Gradient, reference: &Gradient) -> (f64, f64, f64) {
    (
        rel_linf(&analytic.flat_w(), &reference.flat_w()),
        rel_linf(&analytic.flat_b(), &reference.flat_b()),
        rel_linf(&analytic.dtau, &reference.dtau),
    )
}

/// Half squared distance of one sample's output to `target`, and its
/// analytic gradient. Convenience for checks on single samples.
pub fn sample_loss_and_grad(
    spec: &NetworkSpec,
    theta: &Theta,
    u: &[f64],
    target: &[f64],
    variant: FracAdjoint,
) -> Result<(f64, Gradient)> {
    let traj = forward(spec, theta, u)?;
    let out = traj.output();
    if out.len() != target.len() {
        return Err(shape("target width mismatch"));
    }
    let resid: Vec<f64> = out.iter().zip(target).map(|(a, b)| a - b).collect();
    let loss = 0.5 * dot(&resid, &resid);
    let adj = adjoint(spec, theta, &traj, &resid, variant)?;
    Ok((loss, grads(spec, theta, &traj, &adj)?))
}
