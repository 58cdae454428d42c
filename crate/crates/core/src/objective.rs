//! Training objective `J_λ`: mean squared error, elastic-net penalties on
//! `W`, `b` and `τ`, and the soft bias-ordering penalty.
//!
//! Batch evaluation splits the samples into fixed chunks of [`CHUNK`] rows,
//! evaluates the chunks in parallel and sums the partial results in chunk
//! order. The reduction order therefore does not depend on the thread count.

use rayon::prelude::*;

use crate::adjoint::{accumulate, sweep, FracAdjoint, Gradient, Prepared};
use crate::error::{invalid, shape, Error, Result};
use crate::linalg::Matrix;
use crate::networks::{propagate, Architecture, NetworkSpec, Theta};

/// Rows per reduction chunk.
pub const CHUNK: usize = 128;

/// Inputs and targets stored row-wise, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    targets: Matrix,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(shape(format!(
                "{} input rows but {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn input_width(&self) -> usize {
        self.inputs.cols()
    }

    pub fn target_width(&self) -> usize {
        self.targets.cols()
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        let pick = |m: &Matrix| {
            let rows: Vec<Vec<f64>> = range.clone().map(|i| m.row(i).to_vec()).collect();
            Matrix::from_vec(rows.len(), m.cols(), rows.concat()).expect("consistent slice")
        };
        Dataset {
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
        }
    }

    fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let w = spec.widths();
        if self.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        if self.input_width() != w[0] || self.target_width() != *w.last().unwrap() {
            return Err(shape(format!(
                "dataset is {}→{}, network is {}→{}",
                self.input_width(),
                self.target_width(),
                w[0],
                w.last().unwrap()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    pub bias_ordering: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            beta: 10.0,
            bias_ordering: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("beta", self.beta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// `(1/2N) Σ_i ‖p_i − t_i‖²`.
pub fn mse(preds: &Matrix, targets: &Matrix) -> Result<f64> {
    if preds.shape() != targets.shape() {
        return Err(shape(format!("preds {:?} vs targets {:?}", preds.shape(), targets.shape())));
    }
    if preds.rows() == 0 {
        return Err(invalid("mse of zero samples"));
    }
    let ss: f64 = preds
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(ss / (2.0 * preds.rows() as f64))
}

#[inline]
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Elastic-net value and subgradient (sign(0) = 0).
pub fn elastic_reg(theta: &Theta, cfg: &ObjectiveConfig) -> (f64, Gradient) {
    let mut g = Gradient::zeros_like(theta);
    let mut value = 0.0;
    let term = |lambda: f64, x: f64| -> (f64, f64) {
        if lambda == 0.0 {
            return (0.0, 0.0);
        }
        (0.5 * lambda * (x * x + x.abs()), 0.5 * lambda * (2.0 * x + sign0(x)))
    };
    for (m, dm) in theta.weights.iter().zip(g.dw.iter_mut()) {
        for (x, dx) in m.as_slice().iter().zip(dm.as_mut_slice()) {
            let (v, d) = term(cfg.lambda1, *x);
            value += v;
            *dx = d;
        }
    }
    for (b, db) in theta.biases.iter().zip(g.db.iter_mut()) {
        for (x, dx) in b.iter().zip(db.iter_mut()) {
            let (v, d) = term(cfg.lambda1, *x);
            value += v;
            *dx = d;
        }
    }
    for (t, dt) in theta.taus.iter().zip(g.dtau.iter_mut()) {
        let (v, d) = term(cfg.lambda2, *t);
        value += v;
        *dt = d;
    }
    (value, g)
}

/// `(β/2) Σ_ℓ Σ_j max(0, b_j − b_{j+1})²` and its gradient.
pub fn bias_order_penalty(theta: &Theta, beta: f64) -> (f64, Gradient) {
    let mut g = Gradient::zeros_like(theta);
    let mut value = 0.0;
    for (b, db) in theta.biases.iter().zip(g.db.iter_mut()) {
        for j in 0..b.len().saturating_sub(1) {
            let v = b[j] - b[j + 1];
            if v > 0.0 {
                value += 0.5 * beta * v * v;
                db[j] += beta * v;
                db[j + 1] -= beta * v;
            }
        }
    }
    (value, g)
}

/// Objective value split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub mse: f64,
}

fn regularization(theta: &Theta, cfg: &ObjectiveConfig, with_grad: bool) -> (f64, Option<Gradient>) {
    let (mut v, mut g) = elastic_reg(theta, cfg);
    if cfg.bias_ordering {
        let (pv, pg) = bias_order_penalty(theta, cfg.beta);
        v += pv;
        g.axpy(1.0, &pg);
    }
    (v, with_grad.then_some(g))
}

fn chunks(n: usize) -> Vec<std::ops::Range<usize>> {
    (0..n).step_by(CHUNK).map(|s| s..(s + CHUNK).min(n)).collect()
}

fn squared_error(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum()
}

/// Network predictions for every row of `inputs`.
pub fn predict(spec: &NetworkSpec, theta: &Theta, inputs: &Matrix) -> Result<Matrix> {
    theta.check(spec)?;
    if inputs.cols() != spec.widths()[0] {
        return Err(shape(format!("inputs have {} columns, network expects {}", inputs.cols(), spec.widths()[0])));
    }
    let prep = Prepared::new(spec, theta);
    let out_w = *spec.widths().last().unwrap();
    let rows: Vec<Vec<f64>> = chunks(inputs.rows())
        .into_par_iter()
        .map(|r| {
            r.flat_map(|i| propagate(spec, theta, prep.table.as_ref(), inputs.row(i)).output().to_vec())
                .collect::<Vec<f64>>()
        })
        .collect();
    Matrix::from_vec(inputs.rows(), out_w, rows.concat())
}

/// `J_λ(θ)` without its gradient (forward passes only).
pub fn objective_value(spec: &NetworkSpec, theta: &Theta, data: &Dataset, cfg: &ObjectiveConfig) -> Result<ObjectiveValue> {
    theta.check(spec)?;
    data.check_against(spec)?;
    let prep = Prepared::new(spec, theta);
    let partial: Vec<f64> = chunks(data.len())
        .into_par_iter()
        .map(|r| {
            r.map(|i| {
                let tr = propagate(spec, theta, prep.table.as_ref(), data.inputs.row(i));
                squared_error(tr.output(), data.targets.row(i))
            })
            .sum::<f64>()
        })
        .collect();
    let mse = partial.iter().sum::<f64>() / (2.0 * data.len() as f64);
    let (reg, _) = regularization(theta, cfg, false);
    finite(ObjectiveValue { total: mse + reg, mse })
}

fn finite(v: ObjectiveValue) -> Result<ObjectiveValue> {
    if v.total.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(v.total))
    }
}

/// `J_λ(θ)` and its gradient; the data part uses the discretize-then-optimize
/// adjoint.
pub fn total_objective(
    spec: &NetworkSpec,
    theta: &Theta,
    data: &Dataset,
    cfg: &ObjectiveConfig,
) -> Result<(ObjectiveValue, Gradient)> {
    total_objective_with(spec, theta, data, cfg, FracAdjoint::Dto)
}

/// [`total_objective`] with a selectable fractional adjoint.
pub fn total_objective_with(
    spec: &NetworkSpec,
    theta: &Theta,
    data: &Dataset,
    cfg: &ObjectiveConfig,
    variant: FracAdjoint,
) -> Result<(ObjectiveValue, Gradient)> {
    theta.check(spec)?;
    data.check_against(spec)?;
    cfg.validate()?;
    if spec.arch() == Architecture::DenseNet {
        return Err(Error::Unsupported("DenseNet cannot be trained (no adjoint)".into()));
    }
    let prep = Prepared::new(spec, theta);
    let inv_n = 1.0 / data.len() as f64;
    let partial: Vec<(f64, Gradient)> = chunks(data.len())
        .into_par_iter()
        .map(|r| {
            let mut g = Gradient::zeros_like(theta);
            let mut ss = 0.0;
            for i in r {
                let tr = propagate(spec, theta, prep.table.as_ref(), data.inputs.row(i));
                let target = data.targets.row(i);
                let phi: Vec<f64> = tr.output().iter().zip(target).map(|(p, t)| (p - t) * inv_n).collect();
                ss += squared_error(tr.output(), target);
                let adj = sweep(spec, theta, &prep, &tr, &phi, variant);
                accumulate(spec, theta, &prep, &tr, &adj, &mut g);
            }
            (ss, g)
        })
        .collect();
    let mut grad = Gradient::zeros_like(theta);
    let mut ss = 0.0;
    for (s, g) in &partial {
        ss += s;
        grad.axpy(1.0, g);
    }
    let mse = ss / (2.0 * data.len() as f64);
    let (reg, reg_grad) = regularization(theta, cfg, true);
    grad.axpy(1.0, &reg_grad.expect("requested"));
    Ok((finite(ObjectiveValue { total: mse + reg, mse })?, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{block_errors, fd_gradient};
    use crate::linalg::{RngState, Vector};

    fn random_problem(arch: Architecture, widths: Vec<usize>, gamma: Option<f64>, n: usize, seed: u64) -> (NetworkSpec, Theta, Dataset) {
        let spec = NetworkSpec::with_default_eta(arch, widths, gamma).unwrap();
        let mut rng = RngState::from_seed(seed);
        let mut theta = Theta::zeros(&spec, 1.0);
        for m in &mut theta.weights {
            m.as_mut_slice().iter_mut().for_each(|x| *x = rng.uniform(-1.0, 1.0).unwrap());
        }
        for b in &mut theta.biases {
            b.iter_mut().for_each(|x| *x = rng.uniform(-0.5, 0.5).unwrap());
        }
        for t in &mut theta.taus {
            *t = rng.uniform(0.3, 1.2).unwrap();
        }
        let w = spec.widths().to_vec();
        let inputs = Matrix::from_fn(n, w[0], |_, _| rng.uniform(-1.0, 1.0).unwrap());
        let targets = Matrix::from_fn(n, *w.last().unwrap(), |_, _| rng.uniform(-1.0, 1.0).unwrap());
        (spec, theta, Dataset::new(inputs, targets).unwrap())
    }

    #[test]
    fn mse_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let p = Matrix::from_rows(&[vec![3.0]]).unwrap();
        let t = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert_eq!(mse(&p, &t).unwrap(), 2.0);
        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = Matrix::zeros(2, 2);
        assert_eq!(mse(&p, &t).unwrap(), 0.5);
        assert!(mse(&p, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn elastic_reg_examples() {
        let spec = NetworkSpec::with_default_eta(Architecture::ResNet, vec![1, 1, 1], None).unwrap();
        let mut theta = Theta::zeros(&spec, 1.0);
        let (v, g) = elastic_reg(&theta, &ObjectiveConfig { lambda1: 0.0, lambda2: 0.0, ..Default::default() });
        assert_eq!(v, 0.0);
        assert!(g.to_flat().iter().all(|x| *x == 0.0));

        theta.taus[0] = 0.0;
        theta.weights[0][(0, 0)] = 2.0;
        let (v, g) = elastic_reg(&theta, &ObjectiveConfig { lambda1: 1.0, ..Default::default() });
        assert_eq!(v, 3.0);
        assert_eq!(g.dw[0][(0, 0)], 2.5);
        assert_eq!(g.dw[1][(0, 0)], 0.0);

        theta.taus[0] = 1.0;
        let (v, g) = elastic_reg(&theta, &ObjectiveConfig { lambda2: 2.0, ..Default::default() });
        assert_eq!(v, 2.0);
        assert_eq!(g.dtau[0], 3.0);
    }

    #[test]
    fn bias_penalty_examples() {
        let spec = NetworkSpec::with_default_eta(Architecture::ResNet, vec![1, 2, 1], None).unwrap();
        let mut theta = Theta::zeros(&spec, 1.0);
        theta.biases[0] = Vector::from(vec![0.0, 1.0]);
        assert_eq!(bias_order_penalty(&theta, 10.0).0, 0.0);
        theta.biases[0] = Vector::from(vec![1.0, 0.0]);
        let (v, g) = bias_order_penalty(&theta, 10.0);
        assert_eq!(v, 5.0);
        assert_eq!(&*g.db[0], &[10.0, -10.0]);
    }

    #[test]
    fn zero_residual_gives_zero() {
        let (spec, theta, data) = random_problem(Architecture::ResNet, vec![2, 3, 3, 2], None, 7, 1);
        let preds = predict(&spec, &theta, data.inputs()).unwrap();
        let exact = Dataset::new(data.inputs().clone(), preds).unwrap();
        let cfg = ObjectiveConfig::default();
        let (v, g) = total_objective(&spec, &theta, &exact, &cfg).unwrap();
        assert_eq!(v.total, 0.0);
        assert!(g.to_flat().iter().all(|x| *x == 0.0));

        // regularization only
        let cfg = ObjectiveConfig { lambda1: 0.3, lambda2: 0.7, beta: 10.0, bias_ordering: true };
        let (_, g) = total_objective(&spec, &theta, &exact, &cfg).unwrap();
        let (_, mut expect) = elastic_reg(&theta, &cfg);
        expect.axpy(1.0, &bias_order_penalty(&theta, 10.0).1);
        assert_eq!(g, expect);
    }

    #[test]
    fn gradient_matches_fd_with_regularization() {
        for (arch, gamma) in [(Architecture::ResNet, None), (Architecture::FractionalDnn, Some(0.5))] {
            let (spec, theta, data) = random_problem(arch, vec![3, 4, 4, 4, 2], gamma, 5, 2);
            let cfg = ObjectiveConfig { lambda1: 0.01, lambda2: 0.02, beta: 10.0, bias_ordering: true };
            let (_, g) = total_objective(&spec, &theta, &data, &cfg).unwrap();
            let fd = fd_gradient(|t| Ok(objective_value(&spec, t, &data, &cfg)?.total), &theta, 1e-6).unwrap();
            let (ew, eb, et) = block_errors(&g, &fd);
            assert!(ew < 1e-6 && eb < 1e-6 && et < 1e-6, "{arch}: {ew:e} {eb:e} {et:e}");
        }
    }

    #[test]
    fn value_and_gradient_paths_agree() {
        let (spec, theta, data) = random_problem(Architecture::FractionalDnn, vec![3, 5, 5, 2], Some(0.3), 300, 3);
        let cfg = ObjectiveConfig::default();
        let (v, _) = total_objective(&spec, &theta, &data, &cfg).unwrap();
        let v2 = objective_value(&spec, &theta, &data, &cfg).unwrap();
        assert_eq!(v, v2);
        let preds = predict(&spec, &theta, data.inputs()).unwrap();
        assert!((mse(&preds, data.targets()).unwrap() - v.mse).abs() < 1e-14);
    }

    #[test]
    fn reordering_invariance() {
        let (spec, theta, data) = random_problem(Architecture::ResNet, vec![3, 4, 2], None, 40, 4);
        let n = data.len();
        let perm: Vec<usize> = (0..n).rev().collect();
        let pick = |m: &Matrix| Matrix::from_fn(n, m.cols(), |i, j| m[(perm[i], j)]);
        let shuffled = Dataset::new(pick(data.inputs()), pick(data.targets())).unwrap();
        let cfg = ObjectiveConfig::default();
        let a = objective_value(&spec, &theta, &data, &cfg).unwrap().total;
        let b = objective_value(&spec, &theta, &shuffled, &cfg).unwrap().total;
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        let (_, g1) = total_objective(&spec, &theta, &data, &cfg).unwrap();
        let (_, g2) = total_objective(&spec, &theta, &data, &cfg).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn densenet_training_unsupported() {
        let (spec, theta, data) = random_problem(Architecture::DenseNet, vec![2, 3, 3, 2], None, 3, 5);
        assert!(matches!(
            total_objective(&spec, &theta, &data, &ObjectiveConfig::default()),
            Err(Error::Unsupported(_))
        ));
    }
}
