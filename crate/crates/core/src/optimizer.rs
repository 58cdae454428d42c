//! Full-batch projected steepest descent with Armijo backtracking.
//!
//! A trial point is `θ′ = clip(θ − α g)`, where the clip keeps every `τ` in
//! `[tau_min, tau_max]`. It is accepted when
//! `J(θ′) ≤ J(θ) − c ⟨g, θ − θ′⟩`; without active bounds the right-hand side
//! is the textbook `J(θ) − c α ‖g‖²`.

use crate::adjoint::Gradient;
use crate::error::{invalid, Error, Result};
use crate::linalg::{Matrix, RngState};
use crate::networks::{Architecture, NetworkSpec, Theta};
use crate::objective::{objective_value, total_objective, Dataset, ObjectiveConfig, ObjectiveValue};

/// Most halvings tried before a step is declared stagnant.
pub const MAX_HALVINGS: usize = 60;

/// How weights are drawn at initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScale {
    /// `U(−s, s)` with `s = √(2 / n_in)`.
    HeUniform,
    /// `U(−s, s)` with a fixed `s`.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_steps: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub init_step: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub seed: u64,
    pub init_weight_scale: InitScale,
    /// Initial value of every `τ`.
    pub init_tau: f64,
    /// When false the steps stay at their initial value.
    pub learn_tau: bool,
}

impl TrainConfig {
    /// Defaults for `arch`; only `tau_min` depends on the architecture.
    pub fn for_arch(arch: Architecture) -> Self {
        Self {
            max_steps: 1000,
            armijo_c: 1e-4,
            shrink: 0.5,
            init_step: 1.0,
            tau_min: if arch == Architecture::FractionalDnn { 1e-6 } else { 0.0 },
            tau_max: 10.0,
            seed: 0,
            init_weight_scale: InitScale::HeUniform,
            init_tau: 1.0,
            learn_tau: true,
        }
    }

    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(invalid(format!("shrink must lie in (0, 1), got {}", self.shrink)));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(invalid(format!("armijo_c must lie in (0, 1), got {}", self.armijo_c)));
        }
        if !(self.init_step > 0.0) {
            return Err(invalid("init_step must be positive"));
        }
        if !(self.tau_min >= 0.0) || !(self.tau_max >= self.tau_min) {
            return Err(invalid(format!("need 0 <= tau_min <= tau_max, got [{}, {}]", self.tau_min, self.tau_max)));
        }
        if spec.arch() == Architecture::FractionalDnn && self.tau_min <= 0.0 {
            return Err(invalid("fractional networks need tau_min > 0"));
        }
        if !(self.init_tau >= self.tau_min && self.init_tau <= self.tau_max) {
            return Err(invalid("init_tau outside [tau_min, tau_max]"));
        }
        if let InitScale::Uniform(s) = self.init_weight_scale {
            if !(s >= 0.0) {
                return Err(invalid("init weight scale must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Random weights, zero biases, constant steps.
pub fn init_theta(spec: &NetworkSpec, cfg: &TrainConfig, rng: &mut RngState) -> Theta {
    let mut theta = Theta::zeros(spec, cfg.init_tau);
    for m in &mut theta.weights {
        let s = match cfg.init_weight_scale {
            InitScale::HeUniform => (2.0 / m.cols() as f64).sqrt(),
            InitScale::Uniform(s) => s,
        };
        if s > 0.0 {
            let (r, c) = m.shape();
            *m = Matrix::from_fn(r, c, |_, _| rng.uniform(-s, s).expect("s > 0"));
        }
    }
    theta
}

/// Outcome of one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub alpha: f64,
    pub halvings: usize,
    /// Objective at the new point.
    pub value: ObjectiveValue,
    /// Gradient norms at the old point, per block.
    pub gnorm_w: f64,
    pub gnorm_b: f64,
    pub gnorm_tau: f64,
}

fn trial(theta: &Theta, g: &Gradient, alpha: f64, cfg: &TrainConfig) -> Theta {
    let mut t = theta.clone();
    for (w, dw) in t.weights.iter_mut().zip(&g.dw) {
        w.axpy(-alpha, dw);
    }
    for (b, db) in t.biases.iter_mut().zip(&g.db) {
        b.axpy(-alpha, db);
    }
    for (tau, dt) in t.taus.iter_mut().zip(&g.dtau) {
        *tau = (*tau - alpha * dt).clamp(cfg.tau_min, cfg.tau_max);
    }
    t
}

/// `⟨g, θ − θ′⟩`.
fn decrease(theta: &Theta, next: &Theta, g: &Gradient) -> f64 {
    let a = theta.to_flat();
    let b = next.to_flat();
    g.to_flat().iter().zip(a.iter().zip(&b)).map(|(gi, (x, y))| gi * (x - y)).sum()
}

/// One line-search step from `theta` given its value and gradient.
pub fn line_search(
    spec: &NetworkSpec,
    theta: &Theta,
    value: ObjectiveValue,
    grad: &Gradient,
    data: &Dataset,
    cfg: &TrainConfig,
    objcfg: &ObjectiveConfig,
) -> Result<(Theta, StepInfo)> {
    let info = |alpha, halvings, value| StepInfo {
        alpha,
        halvings,
        value,
        gnorm_w: grad.norm_w(),
        gnorm_b: grad.norm_b(),
        gnorm_tau: grad.norm_tau(),
    };
    if grad.norm_sq() == 0.0 {
        return Ok((theta.clone(), info(cfg.init_step, 0, value)));
    }
    let mut alpha = cfg.init_step;
    for halvings in 0..=MAX_HALVINGS {
        let next = trial(theta, grad, alpha, cfg);
        let dec = decrease(theta, &next, grad);
        match objective_value(spec, &next, data, objcfg) {
            Ok(v) if v.total <= value.total - cfg.armijo_c * dec => {
                return Ok((next, info(alpha, halvings, v)));
            }
            Ok(_) | Err(Error::NonFinite(_)) => {}
            Err(e) => return Err(e),
        }
        alpha *= cfg.shrink;
    }
    Err(Error::Stagnation {
        halvings: MAX_HALVINGS,
        objective: value.total,
        theta: Box::new(theta.clone()),
    })
}

/// Gradient evaluation followed by [`line_search`].
pub fn descent_step(
    spec: &NetworkSpec,
    theta: &Theta,
    data: &Dataset,
    cfg: &TrainConfig,
    objcfg: &ObjectiveConfig,
) -> Result<(Theta, StepInfo)> {
    let (value, mut grad) = total_objective(spec, theta, data, objcfg)?;
    if !cfg.learn_tau {
        grad.dtau.iter_mut().for_each(|d| *d = 0.0);
    }
    line_search(spec, theta, value, &grad, data, cfg, objcfg)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub objective: f64,
    pub mse: f64,
    pub alpha: f64,
    pub taus: Vec<f64>,
    pub gnorm_w: f64,
    pub gnorm_b: f64,
    pub gnorm_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainRecord {
    pub rows: Vec<StepRecord>,
    /// Objective at the initial point.
    pub initial: Option<ObjectiveValue>,
    /// Set when the loop ended early because no step was accepted.
    pub stagnated: bool,
}

impl TrainRecord {
    pub fn final_mse(&self) -> Option<f64> {
        self.rows.last().map(|r| r.mse).or(self.initial.map(|v| v.mse))
    }
}

/// Runs up to `cfg.max_steps` descent steps from a seeded initialization.
pub fn train(spec: &NetworkSpec, data: &Dataset, cfg: &TrainConfig, objcfg: &ObjectiveConfig) -> Result<(Theta, TrainRecord)> {
    cfg.validate(spec)?;
    let mut rng = RngState::from_seed(cfg.seed);
    let theta = init_theta(spec, cfg, &mut rng);
    train_from(spec, theta, data, cfg, objcfg)
}

/// Like [`train`] but starting from a given `theta`.
pub fn train_from(
    spec: &NetworkSpec,
    mut theta: Theta,
    data: &Dataset,
    cfg: &TrainConfig,
    objcfg: &ObjectiveConfig,
) -> Result<(Theta, TrainRecord)> {
    cfg.validate(spec)?;
    objcfg.validate()?;
    let mut record = TrainRecord {
        initial: Some(objective_value(spec, &theta, data, objcfg)?),
        ..Default::default()
    };
    for step in 1..=cfg.max_steps {
        match descent_step(spec, &theta, data, cfg, objcfg) {
            Ok((next, info)) => {
                theta = next;
                record.rows.push(StepRecord {
                    step,
                    objective: info.value.total,
                    mse: info.value.mse,
                    alpha: info.alpha,
                    taus: theta.taus.clone(),
                    gnorm_w: info.gnorm_w,
                    gnorm_b: info.gnorm_b,
                    gnorm_tau: info.gnorm_tau,
                });
            }
            Err(Error::Stagnation { .. }) => {
                record.stagnated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((theta, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;

    fn spec(arch: Architecture, widths: Vec<usize>, gamma: Option<f64>) -> NetworkSpec {
        NetworkSpec::with_default_eta(arch, widths, gamma).unwrap()
    }

    fn linear_data(n: usize, seed: u64) -> Dataset {
        let mut rng = RngState::from_seed(seed);
        let inputs = Matrix::from_fn(n, 2, |_, _| rng.uniform(-1.0, 1.0).unwrap());
        let targets = Matrix::from_fn(n, 1, |i, _| 0.7 * inputs[(i, 0)] - 0.2 * inputs[(i, 1)] + 0.05 * rng.uniform(-1.0, 1.0).unwrap());
        Dataset::new(inputs, targets).unwrap()
    }

    #[test]
    fn init_rules() {
        let s = spec(Architecture::ResNet, vec![4, 6, 6, 2], None);
        let cfg = TrainConfig::for_arch(Architecture::ResNet);
        let a = init_theta(&s, &cfg, &mut RngState::from_seed(5));
        let b = init_theta(&s, &cfg, &mut RngState::from_seed(5));
        assert_eq!(a, b);
        assert!(a.taus.iter().all(|t| *t == 1.0));
        assert!(a.biases.iter().all(|b| b.iter().all(|x| *x == 0.0)));
        for m in &a.weights {
            let bound = (2.0 / m.cols() as f64).sqrt();
            assert!(m.as_slice().iter().all(|x| x.abs() <= bound));
        }
    }

    #[test]
    fn clipping_to_tau_bounds() {
        let s = spec(Architecture::FractionalDnn, vec![1, 1, 1], Some(0.5));
        let cfg = TrainConfig::for_arch(Architecture::FractionalDnn);
        let theta = Theta::zeros(&s, 0.1);
        let mut g = Gradient::zeros_like(&theta);
        g.dtau[0] = 0.2;
        let t = trial(&theta, &g, 1.0, &cfg);
        assert_eq!(t.taus[0], 1e-6);
        g.dtau[0] = -100.0;
        assert_eq!(trial(&theta, &g, 1.0, &cfg).taus[0], 10.0);
    }

    #[test]
    fn zero_gradient_keeps_theta() {
        let s = spec(Architecture::ResNet, vec![2, 2, 1], None);
        let cfg = TrainConfig::for_arch(Architecture::ResNet);
        let theta = Theta::zeros(&s, 1.0);
        // all-zero weights and biases with τ = 0: every output is 0 and targets are 0
        let mut theta0 = theta.clone();
        theta0.taus[0] = 0.0;
        let data = Dataset::new(Matrix::zeros(3, 2), Matrix::zeros(3, 1)).unwrap();
        let (next, info) = descent_step(&s, &theta0, &data, &cfg, &ObjectiveConfig::default()).unwrap();
        assert_eq!(next, theta0);
        assert_eq!(info.alpha, cfg.init_step);
    }

    #[test]
    fn step_decreases_objective() {
        let s = spec(Architecture::ResNet, vec![2, 3, 3, 1], None);
        let cfg = TrainConfig::for_arch(Architecture::ResNet);
        let data = linear_data(50, 1);
        let theta = init_theta(&s, &cfg, &mut RngState::from_seed(2));
        let objcfg = ObjectiveConfig::default();
        let before = objective_value(&s, &theta, &data, &objcfg).unwrap().total;
        let (_, info) = descent_step(&s, &theta, &data, &cfg, &objcfg).unwrap();
        assert!(info.value.total < before);
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let s = spec(Architecture::ResNet, vec![2, 3, 1], None);
        let mut cfg = TrainConfig::for_arch(Architecture::ResNet);
        cfg.max_steps = 0;
        cfg.seed = 9;
        let (theta, rec) = train(&s, &linear_data(10, 3), &cfg, &ObjectiveConfig::default()).unwrap();
        assert_eq!(theta, init_theta(&s, &cfg, &mut RngState::from_seed(9)));
        assert!(rec.rows.is_empty());
    }

    #[test]
    fn monotone_and_feasible() {
        let s = spec(Architecture::FractionalDnn, vec![2, 4, 4, 4, 1], Some(0.5));
        let mut cfg = TrainConfig::for_arch(Architecture::FractionalDnn);
        cfg.max_steps = 40;
        let objcfg = ObjectiveConfig { bias_ordering: true, ..Default::default() };
        let (_, rec) = train(&s, &linear_data(60, 4), &cfg, &objcfg).unwrap();
        let mut prev = rec.initial.unwrap().total;
        for r in &rec.rows {
            assert!(r.objective <= prev);
            assert!(r.taus.iter().all(|t| (cfg.tau_min..=cfg.tau_max).contains(t)));
            prev = r.objective;
        }
    }

    #[test]
    fn least_squares_recovery() {
        // one hidden unit kept in the linear branch of σ by a large bias:
        // the network output is affine in u, so training must approach the
        // least-squares fit of the affine model
        let s = spec(Architecture::FeedForward, vec![2, 1, 1], None);
        let n = 80;
        let mut rng = RngState::from_seed(7);
        let inputs = Matrix::from_fn(n, 2, |_, _| rng.uniform(-1.0, 1.0).unwrap());
        let targets = Matrix::from_fn(n, 1, |i, _| 3.0 + 0.5 * inputs[(i, 0)] - 0.25 * inputs[(i, 1)]);
        let data = Dataset::new(inputs, targets).unwrap();
        let mut theta = Theta::zeros(&s, 1.0);
        theta.biases[0] = Vector::from(vec![2.0]);
        theta.weights[1][(0, 0)] = 1.0;
        let mut cfg = TrainConfig::for_arch(Architecture::FeedForward);
        cfg.max_steps = 3000;
        cfg.learn_tau = false;
        let (theta, rec) = train_from(&s, theta, &data, &cfg, &ObjectiveConfig::default()).unwrap();
        assert!(rec.final_mse().unwrap() < 1e-8, "mse {}", rec.final_mse().unwrap());
        assert_eq!(theta.taus[0], 1.0);
    }

    #[test]
    fn stagnation_is_reported() {
        // y1 = σ(1) = 1, output W^[1] y1 = 1, target 0; a flipped gradient is
        // an ascent direction and a mild shrink never gets α down to round-off
        let s = spec(Architecture::ResNet, vec![1, 1, 1], None);
        let mut theta = Theta::zeros(&s, 1.0);
        theta.weights[0][(0, 0)] = 1.0;
        theta.weights[1][(0, 0)] = 1.0;
        let data = Dataset::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), Matrix::from_rows(&[vec![0.0]]).unwrap()).unwrap();
        let objcfg = ObjectiveConfig::default();
        let (value, mut g) = total_objective(&s, &theta, &data, &objcfg).unwrap();
        assert!(g.dw[1][(0, 0)] > 0.0);
        let flipped = g.clone();
        g.axpy(-2.0, &flipped);
        let mut cfg = TrainConfig::for_arch(Architecture::ResNet);
        cfg.shrink = 0.9;
        let res = line_search(&s, &theta, value, &g, &data, &cfg, &objcfg);
        match res {
            Err(Error::Stagnation { halvings, theta: t, .. }) => {
                assert_eq!(halvings, MAX_HALVINGS);
                assert_eq!(*t, theta);
            }
            other => panic!("expected stagnation, got {other:?}"),
        }
    }
}
