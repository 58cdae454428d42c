//! Python bindings: networks with trainable step sizes, training, pruning and
//! the Maxwell data generator. Samples cross the boundary as lists of rows.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use taudnn::adjoint::{block_errors, fd_gradient};
use taudnn::diagnostics;
use taudnn::io::{checkpoint_from_str, checkpoint_to_string, relative_error};
use taudnn::maxwell::{self, MaxwellSet};
use taudnn::objective::{self, Dataset, ObjectiveConfig};
use taudnn::optimizer::{self, TrainConfig};
use taudnn::{Architecture, Matrix, NetworkSpec, RngState, Theta};

fn to_py(e: taudnn::Error) -> PyErr {
    match e {
        taudnn::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>], cols: usize, what: &str) -> PyResult<Matrix> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("every {what} row needs {cols} values")));
    }
    Matrix::from_vec(rows.len(), cols, rows.concat()).map_err(to_py)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// A network specification together with its parameters.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
pub struct Network {
    spec: NetworkSpec,
    theta: Theta,
}

impl Network {
    fn dataset(&self, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<Dataset> {
        let w = self.spec.widths();
        Dataset::new(matrix(&inputs, w[0], "input")?, matrix(&targets, *w.last().unwrap(), "target")?).map_err(to_py)
    }
}

#[pymethods]
impl Network {
    /// Randomly initialized network (uniform weights, zero biases, unit steps).
    #[new]
    #[pyo3(signature = (arch, widths, gamma=None, seed=0))]
    fn new(arch: &str, widths: Vec<usize>, gamma: Option<f64>, seed: u64) -> PyResult<Self> {
        let arch: Architecture = arch.parse().map_err(to_py)?;
        let spec = NetworkSpec::with_default_eta(arch, widths, gamma).map_err(to_py)?;
        let cfg = TrainConfig::for_arch(arch);
        let theta = optimizer::init_theta(&spec, &cfg, &mut RngState::from_seed(seed));
        Ok(Self { spec, theta })
    }

    #[getter]
    fn arch(&self) -> String {
        self.spec.arch().to_string()
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.spec.widths().to_vec()
    }

    #[getter]
    fn taus(&self) -> Vec<f64> {
        self.theta.taus.clone()
    }

    #[setter]
    fn set_taus(&mut self, taus: Vec<f64>) -> PyResult<()> {
        let mut theta = self.theta.clone();
        theta.taus = taus;
        theta.check(&self.spec).map_err(to_py)?;
        self.theta = theta;
        Ok(())
    }

    fn num_params(&self) -> usize {
        self.theta.num_params()
    }

    /// Flattened parameters: all W row-major, then all b, then τ.
    fn parameters(&self) -> Vec<f64> {
        self.theta.to_flat()
    }

    /// Feature vectors y^[0..L] of one input.
    fn forward(&self, u: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let traj = taudnn::forward(&self.spec, &self.theta, &u).map_err(to_py)?;
        Ok(traj.states.iter().map(|s| s.to_vec()).collect())
    }

    fn predict(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let m = matrix(&inputs, self.spec.widths()[0], "input")?;
        Ok(rows(&objective::predict(&self.spec, &self.theta, &m).map_err(to_py)?))
    }

    /// Objective value and flat gradient on the given samples.
    #[pyo3(signature = (inputs, targets, bias_ordering=false, beta=10.0))]
    fn objective(&self, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, bias_ordering: bool, beta: f64) -> PyResult<(f64, Vec<f64>)> {
        let data = self.dataset(inputs, targets)?;
        let cfg = ObjectiveConfig { bias_ordering, beta, ..Default::default() };
        let (v, g) = objective::total_objective(&self.spec, &self.theta, &data, &cfg).map_err(to_py)?;
        Ok((v.total, g.to_flat()))
    }

    /// Steepest-descent training in place; returns the MSE after every step.
    #[pyo3(signature = (inputs, targets, max_steps=100, bias_ordering=false, beta=10.0, learn_tau=true))]
    fn train(
        &mut self,
        py: Python<'_>,
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        max_steps: usize,
        bias_ordering: bool,
        beta: f64,
        learn_tau: bool,
    ) -> PyResult<Vec<f64>> {
        let data = self.dataset(inputs, targets)?;
        let mut cfg = TrainConfig::for_arch(self.spec.arch());
        cfg.max_steps = max_steps;
        cfg.learn_tau = learn_tau;
        let objcfg = ObjectiveConfig { bias_ordering, beta, ..Default::default() };
        let (spec, start) = (self.spec.clone(), self.theta.clone());
        let (theta, record) = py
            .detach(move || optimizer::train_from(&spec, start, &data, &cfg, &objcfg))
            .map_err(to_py)?;
        self.theta = theta;
        Ok(record.rows.iter().map(|r| r.mse).collect())
    }

    /// Global relative error ‖P − T‖ / ‖T‖.
    fn relative_error(&self, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<f64> {
        let data = self.dataset(inputs, targets)?;
        let p = objective::predict(&self.spec, &self.theta, data.inputs()).map_err(to_py)?;
        Ok(relative_error(&p, data.targets()).map_err(to_py)?.global)
    }

    /// Reduced copy and the removed hidden-layer indices.
    fn prune(&self, threshold: f64) -> PyResult<(Network, Vec<usize>)> {
        let p = diagnostics::prune(&self.spec, &self.theta, threshold).map_err(to_py)?;
        Ok((Network { spec: p.spec, theta: p.theta }, p.removed))
    }

    /// Jacobian d y^[l] / d θ^[j] as a list of rows.
    fn layer_derivative(&self, u: Vec<f64>, j: usize, l: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&diagnostics::layer_derivative(&self.spec, &self.theta, &u, j, l).map_err(to_py)?))
    }

    fn to_checkpoint(&self) -> String {
        checkpoint_to_string(&self.spec, &self.theta)
    }

    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<Network> {
        let (spec, theta) = checkpoint_from_str(text).map_err(to_py)?;
        Ok(Network { spec, theta })
    }

    fn __repr__(&self) -> String {
        format!("Network(arch={}, widths={:?})", self.spec.arch(), self.spec.widths())
    }
}

/// `(train_inputs, train_targets, test_inputs, test_targets)` of the Maxwell problem.
#[pyfunction]
#[pyo3(signature = (n, seed=1, split=0.8))]
#[allow(clippy::type_complexity)]
fn gen_dataset(n: usize, seed: u64, split: f64) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (train, test) = maxwell::gen_dataset(n, seed, split).map_err(to_py)?;
    let parts = |s: &MaxwellSet| {
        let d = s.to_dataset();
        (rows(d.inputs()), rows(d.targets()))
    };
    let (a, b) = parts(&train);
    let (c, d) = parts(&test);
    Ok((a, b, c, d))
}

#[pyfunction]
fn exact_u(x: [f64; 3]) -> [f64; 3] {
    maxwell::exact_u(x)
}

#[pyfunction]
fn gamma(x: f64) -> PyResult<f64> {
    taudnn::special::gamma(x).map_err(to_py)
}

#[pyfunction]
fn bessel_i(order: u32, x: f64) -> PyResult<f64> {
    taudnn::special::bessel_i(order, x).map_err(to_py)
}

/// Memory coefficient a_{l,j} on the grid `taus`.
#[pyfunction]
fn coeff_a(taus: Vec<f64>, l: usize, j: usize, gamma: f64) -> PyResult<f64> {
    let grid = taudnn::fractional::TauGrid::new(taus).map_err(to_py)?;
    grid.coeff_a(l, j, gamma).map_err(to_py)
}

/// Relative ℓ∞ errors (W, b, τ) of the analytic gradient against central
/// differences for a network on the given samples.
#[pyfunction]
fn gradcheck(net: &Network, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<(f64, f64, f64)> {
    let data = net.dataset(inputs, targets)?;
    let cfg = ObjectiveConfig::default();
    let (_, g) = objective::total_objective(&net.spec, &net.theta, &data, &cfg).map_err(to_py)?;
    let fd = fd_gradient(|t| Ok(objective::objective_value(&net.spec, t, &data, &cfg)?.total), &net.theta, 1e-6).map_err(to_py)?;
    Ok(block_errors(&g, &fd))
}

#[pymodule]
fn pytaudnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(gen_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(exact_u, m)?)?;
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(bessel_i, m)?)?;
    m.add_function(wrap_pyfunction!(coeff_a, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
