//! Command-line interface. [`run`] parses arguments and writes its report to
//! the given sink so the commands can be exercised in-process.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::adjoint::{block_errors, fd_gradient, FracAdjoint};
use crate::diagnostics::{closed_form_d3_theta0, gradflow_report, layer_derivative, prune, DEFAULT_EPS_EXPLODE, DEFAULT_EPS_VANISH};
use crate::error::{invalid, Error, Result};
use crate::io::{load_checkpoint, relative_error, save_checkpoint, write_metrics, RunConfig};
use crate::linalg::{Matrix, RngState};
use crate::maxwell::{exact_u, extrapolation_grid, in_cylinder, MaxwellSample, MaxwellSet};
use crate::networks::{Architecture, NetworkSpec, Theta};
use crate::objective::{objective_value, predict, total_objective_with, Dataset, ObjectiveConfig};
use crate::optimizer::train;

/// Tolerance used by `gradcheck`.
pub const GRADCHECK_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "taudnn", version, about = "Train and analyse networks with learnable per-layer step sizes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the cylinder and write the Maxwell dataset CSV.
    GenData {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a random instance.
    Gradcheck {
        #[arg(long, default_value = "resnet")]
        arch: Architecture,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the optimize-then-discretize adjoint (fractional networks).
        #[arg(long)]
        otd: bool,
        /// Layer widths n_0..n_L.
        #[arg(long, value_delimiter = ',', default_value = "3,5,4,6,5,2")]
        widths: Vec<usize>,
    },
    /// Remove hidden layers whose step size is below a threshold.
    Prune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        /// Reduced checkpoint path (default: `<checkpoint>.pruned`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient-flow report and closed-form cross-check.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Number of samples averaged in the report.
        #[arg(long, default_value_t = 16)]
        samples: usize,
        /// Write the report CSV here instead of the output stream.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relative test error, optionally with a pointwise error grid.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        /// Resolution of the extrapolation grid on [-1,1]^2 x {0.5}.
        #[arg(long)]
        grid: Option<usize>,
        /// Grid CSV path (default: `grid_error.csv` next to the checkpoint).
        #[arg(long)]
        grid_out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, clap::Args)]
pub struct SplitArgs {
    /// Train fraction; the remaining rows form the test set.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Evaluate on every row of the data file.
    #[arg(long)]
    pub whole: bool,
}

impl SplitArgs {
    fn test_set(&self, data: &Path) -> Result<MaxwellSet> {
        let all = MaxwellSet::load(data)?;
        if self.whole {
            Ok(all)
        } else {
            Ok(all.split(self.split)?.1)
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code; help and version requests print and return 0.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<i32>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}")?;
            return Ok(0);
        }
        Err(e) => return Err(Error::InvalidArgument(e.to_string())),
    };
    match cli.command {
        Command::GenData { n, seed, out: path } => gen_data(n as usize, seed, &path, out),
        Command::Train { config, out_dir } => train_cmd(&config, out_dir, out),
        Command::Gradcheck { arch, gamma, seed, otd, widths } => gradcheck(arch, gamma, seed, otd, widths, out),
        Command::Prune { checkpoint, threshold, data, split, out: dst } => prune_cmd(&checkpoint, threshold, &data, &split, dst, out),
        Command::Diagnose { checkpoint, data, samples, out: dst } => diagnose(&checkpoint, &data, samples, dst, out),
        Command::Eval { checkpoint, data, split, grid, grid_out } => eval(&checkpoint, &data, &split, grid, grid_out, out),
    }
}

fn gen_data(n: usize, seed: u64, path: &Path, out: &mut dyn Write) -> Result<i32> {
    let set = MaxwellSet::from_points(&crate::maxwell::sample_cylinder(n, seed)?);
    set.save(path)?;
    writeln!(out, "wrote {n} samples to {}", path.display())?;
    Ok(0)
}

fn train_cmd(config: &Path, out_dir: Option<PathBuf>, out: &mut dyn Write) -> Result<i32> {
    let run = RunConfig::load(config)?;
    let dir = out_dir
        .or(run.output_dir.clone())
        .ok_or_else(|| invalid("no output directory: pass --out-dir or set output_dir"))?;
    let (train_set, test_set) = MaxwellSet::load(&run.dataset)?.split(run.split)?;
    let train_data = train_set.to_dataset();
    let (theta, record) = train(&run.spec, &train_data, &run.train, &run.objective)?;
    std::fs::create_dir_all(&dir)?;
    save_checkpoint(&dir.join("checkpoint.txt"), &run.spec, &theta)?;
    let metrics = std::fs::File::create(dir.join("metrics.csv"))?;
    write_metrics(std::io::BufWriter::new(metrics), theta.taus.len(), &record)?;
    let train_mse = objective_value(&run.spec, &theta, &train_data, &ObjectiveConfig::default())?.mse;
    let test = test_set.to_dataset();
    let err = relative_error(&predict(&run.spec, &theta, test.inputs())?, test.targets())?;
    let taus: Vec<String> = theta.taus.iter().map(|t| format!("{t:.4}")).collect();
    writeln!(
        out,
        "steps {} stagnated {} train_mse {:.6e} test_rel_error {:.6} test_rel_error_mean {:.6} taus [{}]",
        record.rows.len(),
        record.stagnated,
        train_mse,
        err.global,
        err.mean_per_sample,
        taus.join(", ")
    )?;
    Ok(0)
}

fn random_problem(arch: Architecture, gamma: Option<f64>, seed: u64, widths: Vec<usize>) -> Result<(NetworkSpec, Theta, Dataset)> {
    let gamma = match (arch, gamma) {
        (Architecture::FractionalDnn, None) => Some(0.5),
        (_, g) => g,
    };
    let spec = NetworkSpec::with_default_eta(arch, widths, gamma)?;
    let mut rng = RngState::from_seed(seed);
    let mut theta = Theta::zeros(&spec, 1.0);
    for m in &mut theta.weights {
        m.as_mut_slice().iter_mut().try_for_each(|x| rng.uniform(-1.0, 1.0).map(|v| *x = v))?;
    }
    for b in &mut theta.biases {
        b.iter_mut().try_for_each(|x| rng.uniform(-0.5, 0.5).map(|v| *x = v))?;
    }
    for t in &mut theta.taus {
        *t = rng.uniform(0.2, 1.5)?;
    }
    let w = spec.widths().to_vec();
    let n = 3;
    let inputs = Matrix::from_fn(n, w[0], |_, _| rng.next_unit() * 2.0 - 1.0);
    let targets = Matrix::from_fn(n, *w.last().unwrap(), |_, _| rng.next_unit() * 2.0 - 1.0);
    Ok((spec, theta, Dataset::new(inputs, targets)?))
}

fn gradcheck(arch: Architecture, gamma: Option<f64>, seed: u64, otd: bool, widths: Vec<usize>, out: &mut dyn Write) -> Result<i32> {
    if otd && arch != Architecture::FractionalDnn {
        return Err(invalid("--otd applies to fracdnn only"));
    }
    let (spec, theta, data) = random_problem(arch, gamma, seed, widths)?;
    let cfg = ObjectiveConfig::default();
    let variant = if otd { FracAdjoint::Otd } else { FracAdjoint::Dto };
    let (_, g) = total_objective_with(&spec, &theta, &data, &cfg, variant)?;
    let fd = fd_gradient(|t| Ok(objective_value(&spec, t, &data, &cfg)?.total), &theta, 1e-6)?;
    let (ew, eb, et) = block_errors(&g, &fd);
    let pass = ew.max(eb).max(et) <= GRADCHECK_TOL;
    let label = if otd { "otd" } else { "dto" };
    writeln!(out, "gradcheck {arch} ({label}) widths {:?}", spec.widths())?;
    writeln!(out, "W   {ew:.3e}\nb   {eb:.3e}\ntau {et:.3e}")?;
    writeln!(out, "{}", if pass { "PASS" } else { "FAIL" })?;
    Ok(if pass { 0 } else { 1 })
}

fn prune_cmd(checkpoint: &Path, threshold: f64, data: &Path, split: &SplitArgs, dst: Option<PathBuf>, out: &mut dyn Write) -> Result<i32> {
    let (spec, theta) = load_checkpoint(checkpoint)?;
    let test = split.test_set(data)?.to_dataset();
    let pruned = prune(&spec, &theta, threshold)?;
    let before = relative_error(&predict(&spec, &theta, test.inputs())?, test.targets())?.global;
    let after = relative_error(&predict(&pruned.spec, &pruned.theta, test.inputs())?, test.targets())?.global;
    let dst = dst.unwrap_or_else(|| {
        let mut p = checkpoint.as_os_str().to_owned();
        p.push(".pruned");
        PathBuf::from(p)
    });
    save_checkpoint(&dst, &pruned.spec, &pruned.theta)?;
    writeln!(out, "removed hidden layers {:?}", pruned.removed)?;
    writeln!(out, "widths {:?} -> {:?}", spec.widths(), pruned.spec.widths())?;
    writeln!(out, "test_rel_error before {before:.6} after {after:.6} delta {:.6}", after - before)?;
    writeln!(out, "wrote {}", dst.display())?;
    Ok(0)
}

fn diagnose(checkpoint: &Path, data: &Path, samples: usize, dst: Option<PathBuf>, out: &mut dyn Write) -> Result<i32> {
    let (spec, theta) = load_checkpoint(checkpoint)?;
    let set = MaxwellSet::load(data)?;
    let inputs: Vec<Vec<f64>> = set.samples.iter().take(samples.max(1)).map(|s| s.input().to_vec()).collect();
    let report = gradflow_report(&spec, &theta, &inputs, DEFAULT_EPS_VANISH, DEFAULT_EPS_EXPLODE)?;
    match dst {
        Some(p) => {
            report.write_csv(std::io::BufWriter::new(std::fs::File::create(&p)?))?;
            writeln!(out, "wrote {}", p.display())?;
        }
        None => report.write_csv(&mut *out)?,
    }
    let w = spec.widths();
    if spec.depth() >= 4 && w[1] == w[2] && w[2] == w[3] {
        let u = &inputs[0];
        let closed = closed_form_d3_theta0(&spec, &theta, u)?;
        let rec = layer_derivative(&spec, &theta, u, 0, 3)?;
        let diff = closed.as_slice().iter().zip(rec.as_slice()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let rel = diff / rec.max_abs().max(f64::MIN_POSITIVE);
        let status = if rel <= 1e-12 { "PASS" } else { "FAIL" };
        writeln!(out, "closed-form check d y^[3]/d theta^[0]: rel {rel:.3e} {status}")?;
    } else {
        writeln!(out, "closed-form check skipped (needs L >= 4 and n_1 = n_2 = n_3)")?;
    }
    Ok(0)
}

fn eval(checkpoint: &Path, data: &Path, split: &SplitArgs, grid: Option<usize>, grid_out: Option<PathBuf>, out: &mut dyn Write) -> Result<i32> {
    let (spec, theta) = load_checkpoint(checkpoint)?;
    let test_set = split.test_set(data)?;
    let test = test_set.to_dataset();
    let preds = predict(&spec, &theta, test.inputs())?;
    let err = relative_error(&preds, test.targets())?;
    writeln!(out, "test_rel_error {:.6} test_rel_error_mean {:.6} rows {}", err.global, err.mean_per_sample, test.len())?;
    let mut u3 = (f64::INFINITY, f64::NEG_INFINITY);
    let mut track = |v: f64| u3 = (u3.0.min(v), u3.1.max(v));
    (0..preds.rows()).for_each(|i| track(preds[(i, 2)]));
    if let Some(res) = grid {
        let points = extrapolation_grid(res)?;
        let samples: Vec<MaxwellSample> = points.iter().map(|x| MaxwellSample::at(*x)).collect();
        let inputs = Matrix::from_fn(samples.len(), 7, |i, j| samples[i].input()[j]);
        let gp = predict(&spec, &theta, &inputs)?;
        let path = grid_out.unwrap_or_else(|| checkpoint.with_file_name("grid_error.csv"));
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(w, "x1,x2,x3,err")?;
        for (i, x) in points.iter().enumerate() {
            let u = exact_u(*x);
            let e = (gp[(i, 0)] - u[0]).hypot(gp[(i, 1)] - u[1]);
            writeln!(w, "{:e},{:e},{:e},{:e}", x[0], x[1], x[2], e)?;
            if in_cylinder(*x) {
                track(gp[(i, 2)]);
            }
        }
        w.flush()?;
        writeln!(out, "wrote {} grid points to {}", points.len(), path.display())?;
    }
    writeln!(
        out,
        "u3_nn inside cylinder: min {:.6e} max {:.6e} max_abs {:.6e}",
        u3.0,
        u3.1,
        u3.0.abs().max(u3.1.abs())
    )?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (Result<i32>, String) {
        let mut buf = Vec::new();
        let code = run(std::iter::once("taudnn").chain(args.iter().copied()), &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn gradcheck_pass_and_expected_fail() {
        let (code, text) = run_str(&["gradcheck", "--arch", "resnet"]);
        assert_eq!(code.unwrap(), 0, "{text}");
        assert!(text.contains("PASS"));
        let (code, _) = run_str(&["gradcheck", "--arch", "fracdnn", "--gamma", "0.5"]);
        assert_eq!(code.unwrap(), 0);
        let (code, text) = run_str(&["gradcheck", "--arch", "fracdnn", "--gamma", "0.5", "--otd"]);
        assert_eq!(code.unwrap(), 1);
        assert!(text.contains("FAIL"));
    }

    #[test]
    fn usage_errors() {
        assert!(run_str(&["gen-data", "--n", "0", "--out", "/tmp/never.csv"]).0.is_err());
        assert!(run_str(&["bogus"]).0.is_err());
        assert_eq!(run_str(&["--help"]).0.unwrap(), 0);
    }
}
