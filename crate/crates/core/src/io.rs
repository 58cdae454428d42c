//! Text formats shared by the command line: checkpoints, run configs and the
//! training metrics table.
//!
//! A checkpoint is line oriented:
//!
//! ```text
//! TAUDNN-CKPT v1
//! arch resnet
//! widths 7 10 10 3
//! gamma none
//! eta 1e-4
//! W 0 10 7
//! <one matrix row per line>
//! ...
//! b 0 10
//! <values>
//! ...
//! tau <values>
//! end
//! ```
//!
//! Numbers use Rust's shortest round-trip formatting, so loading and saving
//! again reproduces the file byte for byte.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::networks::{Architecture, NetworkSpec, Theta};
use crate::objective::ObjectiveConfig;
use crate::optimizer::{TrainConfig, TrainRecord};

pub const CHECKPOINT_MAGIC: &str = "TAUDNN-CKPT v1";

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:e}").expect("writing to a String");
    }
    s
}

pub fn checkpoint_to_string(spec: &NetworkSpec, theta: &Theta) -> String {
    let mut s = String::new();
    let widths: Vec<String> = spec.widths().iter().map(|w| w.to_string()).collect();
    let gamma = spec.gamma().map_or("none".to_string(), |g| format!("{g:e}"));
    writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
    writeln!(s, "arch {}", spec.arch()).unwrap();
    writeln!(s, "widths {}", widths.join(" ")).unwrap();
    writeln!(s, "gamma {gamma}").unwrap();
    writeln!(s, "eta {:e}", spec.eta()).unwrap();
    for (i, m) in theta.weights.iter().enumerate() {
        writeln!(s, "W {i} {} {}", m.rows(), m.cols()).unwrap();
        for r in 0..m.rows() {
            writeln!(s, "{}", join(m.row(r))).unwrap();
        }
    }
    for (i, b) in theta.biases.iter().enumerate() {
        writeln!(s, "b {i} {}", b.len()).unwrap();
        writeln!(s, "{}", join(b)).unwrap();
    }
    writeln!(s, "tau {}", join(&theta.taus)).unwrap();
    writeln!(s, "end").unwrap();
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Parse(format!("checkpoint ended before {what}")))
    }

    /// Next line split as `keyword rest...`, checking the keyword.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self.next(key)?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok((n, parts.collect())),
            _ => Err(Error::Parse(format!("line {n}: expected '{key}', got '{line}'"))),
        }
    }
}

fn parse_f64s(line_no: usize, parts: &[&str]) -> Result<Vec<f64>> {
    parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|e| Error::Parse(format!("line {line_no}: '{p}': {e}"))))
        .collect()
}

fn parse_usize(line_no: usize, p: &str) -> Result<usize> {
    p.parse().map_err(|e| Error::Parse(format!("line {line_no}: '{p}': {e}")))
}

pub fn checkpoint_from_str(text: &str) -> Result<(NetworkSpec, Theta)> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let (_, magic) = lines.next("magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Parse(format!("not a checkpoint (expected '{CHECKPOINT_MAGIC}')")));
    }
    let (n, arch) = lines.keyed("arch")?;
    let arch: Architecture = arch.first().ok_or_else(|| Error::Parse(format!("line {n}: missing architecture")))?.parse()?;
    let (n, w) = lines.keyed("widths")?;
    let widths = w.iter().map(|p| parse_usize(n, p)).collect::<Result<Vec<_>>>()?;
    let (n, g) = lines.keyed("gamma")?;
    let gamma = match g.as_slice() {
        ["none"] => None,
        [v] => Some(parse_f64s(n, &[v])?[0]),
        _ => return Err(Error::Parse(format!("line {n}: bad gamma"))),
    };
    let (n, e) = lines.keyed("eta")?;
    let eta = *parse_f64s(n, &e)?.first().ok_or_else(|| Error::Parse(format!("line {n}: missing eta")))?;
    let spec = NetworkSpec::new(arch, widths, gamma, eta)?;
    let mut theta = Theta::zeros(&spec, 0.0);
    for i in 0..spec.depth() {
        let (n, head) = lines.keyed("W")?;
        let dims = head.iter().map(|p| parse_usize(n, p)).collect::<Result<Vec<_>>>()?;
        let expect = theta.weights[i].shape();
        if dims != [i, expect.0, expect.1] {
            return Err(Error::Parse(format!("line {n}: expected W {i} {} {}", expect.0, expect.1)));
        }
        let mut data = Vec::with_capacity(expect.0 * expect.1);
        for _ in 0..expect.0 {
            let (n, row) = lines.next("weight row")?;
            let vals = parse_f64s(n, &row.split_whitespace().collect::<Vec<_>>())?;
            if vals.len() != expect.1 {
                return Err(Error::Parse(format!("line {n}: expected {} values", expect.1)));
            }
            data.extend(vals);
        }
        theta.weights[i] = Matrix::from_vec(expect.0, expect.1, data)?;
    }
    for i in 0..spec.depth() - 1 {
        let (n, head) = lines.keyed("b")?;
        let dims = head.iter().map(|p| parse_usize(n, p)).collect::<Result<Vec<_>>>()?;
        let len = theta.biases[i].len();
        if dims != [i, len] {
            return Err(Error::Parse(format!("line {n}: expected b {i} {len}")));
        }
        let (n, row) = lines.next("bias values")?;
        let vals = parse_f64s(n, &row.split_whitespace().collect::<Vec<_>>())?;
        if vals.len() != len {
            return Err(Error::Parse(format!("line {n}: expected {len} values")));
        }
        theta.biases[i] = Vector::from(vals);
    }
    let (n, taus) = lines.keyed("tau")?;
    let taus = parse_f64s(n, &taus)?;
    if taus.len() != theta.taus.len() {
        return Err(Error::Parse(format!("line {n}: expected {} step sizes", theta.taus.len())));
    }
    theta.taus = taus;
    lines.keyed("end")?;
    theta.check(&spec)?;
    Ok((spec, theta))
}

pub fn save_checkpoint(path: &Path, spec: &NetworkSpec, theta: &Theta) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(spec, theta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkSpec, Theta)> {
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}

/// Header of the metrics table for `n_tau` step sizes.
pub fn metrics_header(n_tau: usize) -> String {
    let mut cols = vec!["step".to_string(), "J".into(), "mse".into(), "alpha".into()];
    cols.extend((0..n_tau).map(|i| format!("tau_{i}")));
    cols.extend(["gnorm_W".to_string(), "gnorm_b".into(), "gnorm_tau".into()]);
    cols.join(",")
}

pub fn write_metrics<W: Write>(mut w: W, n_tau: usize, record: &TrainRecord) -> Result<()> {
    writeln!(w, "{}", metrics_header(n_tau))?;
    for r in &record.rows {
        let mut line = format!("{},{:e},{:e},{:e}", r.step, r.objective, r.mse, r.alpha);
        for t in &r.taus {
            write!(line, ",{t:e}").unwrap();
        }
        write!(line, ",{:e},{:e},{:e}", r.gnorm_w, r.gnorm_b, r.gnorm_tau).unwrap();
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Training run description read from a TOML file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub architecture: String,
    /// All layer widths `n_0..n_L`, input and output included.
    pub widths: Vec<usize>,
    pub gamma: Option<f64>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub lambda1: f64,
    #[serde(default)]
    pub lambda2: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub bias_ordering: bool,
    #[serde(default = "default_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub seed: u64,
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    #[serde(default = "default_true")]
    pub learn_tau: bool,
    /// Dataset CSV; relative paths resolve against the config file.
    pub dataset: PathBuf,
    /// Fraction of the dataset rows used for training.
    #[serde(default = "default_split")]
    pub split: f64,
    pub output_dir: Option<PathBuf>,
}

fn default_eta() -> f64 {
    crate::activation::DEFAULT_ETA
}
fn default_beta() -> f64 {
    10.0
}
fn default_steps() -> usize {
    1000
}
fn default_true() -> bool {
    true
}
fn default_split() -> f64 {
    0.8
}

/// Validated pieces of a [`RunConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub spec: NetworkSpec,
    pub train: TrainConfig,
    pub objective: ObjectiveConfig,
    pub dataset: PathBuf,
    pub split: f64,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ResolvedRun> {
        let cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base)
    }

    pub fn resolve(&self, base: &Path) -> Result<ResolvedRun> {
        let arch: Architecture = self.architecture.parse()?;
        let spec = NetworkSpec::new(arch, self.widths.clone(), self.gamma, self.eta)?;
        let mut train = TrainConfig::for_arch(arch);
        train.max_steps = self.max_steps;
        train.seed = self.seed;
        train.learn_tau = self.learn_tau;
        if let Some(t) = self.tau_min {
            train.tau_min = t;
        }
        if let Some(t) = self.tau_max {
            train.tau_max = t;
        }
        train.validate(&spec)?;
        let objective = ObjectiveConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            beta: self.beta,
            bias_ordering: self.bias_ordering,
        };
        objective.validate()?;
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(crate::error::invalid("split must lie in (0, 1)"));
        }
        let rel = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        Ok(ResolvedRun {
            spec,
            train,
            objective,
            dataset: rel(&self.dataset),
            split: self.split,
            output_dir: self.output_dir.as_deref().map(rel),
        })
    }
}

/// Global and per-sample relative errors of predictions against targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeError {
    /// `‖P − T‖_F / ‖T‖_F` over the whole matrix.
    pub global: f64,
    /// Mean of `‖p_i − t_i‖ / ‖t_i‖` over rows with nonzero target.
    pub mean_per_sample: f64,
}

pub fn relative_error(preds: &Matrix, targets: &Matrix) -> Result<RelativeError> {
    if preds.shape() != targets.shape() {
        return Err(crate::error::shape("prediction/target shape mismatch"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut per = 0.0;
    let mut count = 0usize;
    for i in 0..preds.rows() {
        let d: f64 = preds.row(i).iter().zip(targets.row(i)).map(|(p, t)| (p - t) * (p - t)).sum();
        let t: f64 = targets.row(i).iter().map(|t| t * t).sum();
        num += d;
        den += t;
        if t > 0.0 {
            per += (d / t).sqrt();
            count += 1;
        }
    }
    Ok(RelativeError {
        global: if den > 0.0 { (num / den).sqrt() } else { num.sqrt() },
        mean_per_sample: if count > 0 { per / count as f64 } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RngState;
    use crate::optimizer::StepRecord;

    fn random_theta(spec: &NetworkSpec, seed: u64) -> Theta {
        let mut rng = RngState::from_seed(seed);
        let mut t = Theta::zeros(spec, 1.0);
        for m in &mut t.weights {
            m.as_mut_slice().iter_mut().for_each(|x| *x = rng.uniform(-1.0, 1.0).unwrap() / 3.0);
        }
        for b in &mut t.biases {
            b.iter_mut().for_each(|x| *x = rng.uniform(-1.0, 1.0).unwrap() * 1e-7);
        }
        for x in &mut t.taus {
            *x = rng.uniform(1e-3, 2.0).unwrap();
        }
        t
    }

    #[test]
    fn checkpoint_roundtrip_bytes() {
        for (arch, gamma) in [(Architecture::ResNet, None), (Architecture::FractionalDnn, Some(0.3))] {
            let spec = NetworkSpec::with_default_eta(arch, vec![7, 5, 4, 3], gamma).unwrap();
            let theta = random_theta(&spec, 1);
            let text = checkpoint_to_string(&spec, &theta);
            assert!(text.starts_with("TAUDNN-CKPT v1\n"));
            let (s2, t2) = checkpoint_from_str(&text).unwrap();
            assert_eq!(s2, spec);
            assert_eq!(t2, theta);
            assert_eq!(checkpoint_to_string(&s2, &t2), text);
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(checkpoint_from_str("hello").is_err());
        let spec = NetworkSpec::with_default_eta(Architecture::ResNet, vec![2, 3, 1], None).unwrap();
        let text = checkpoint_to_string(&spec, &Theta::zeros(&spec, 1.0));
        assert!(checkpoint_from_str(&text.replace("tau 1e0", "tau 1e0 2e0")).is_err());
        assert!(checkpoint_from_str(&text.replace("\nend\n", "\n")).is_err());
    }

    #[test]
    fn metrics_layout() {
        assert_eq!(metrics_header(2), "step,J,mse,alpha,tau_0,tau_1,gnorm_W,gnorm_b,gnorm_tau");
        let rec = TrainRecord {
            rows: vec![StepRecord {
                step: 1,
                objective: 0.5,
                mse: 0.25,
                alpha: 1.0,
                taus: vec![1.0, 0.5],
                gnorm_w: 2.0,
                gnorm_b: 3.0,
                gnorm_tau: 4.0,
            }],
            ..Default::default()
        };
        let mut out = Vec::new();
        write_metrics(&mut out, 2, &rec).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "1,5e-1,2.5e-1,1e0,1e0,5e-1,2e0,3e0,4e0");
    }

    #[test]
    fn run_config_parsing() {
        let text = r#"
architecture = "resnet"
widths = [7, 10, 10, 3]
bias_ordering = true
max_steps = 5
dataset = "data.csv"
"#;
        let run = RunConfig::from_toml(text).unwrap().resolve(Path::new("/tmp/x")).unwrap();
        assert_eq!(run.spec.widths(), &[7, 10, 10, 3]);
        assert_eq!(run.objective.beta, 10.0);
        assert!(run.objective.bias_ordering);
        assert_eq!(run.train.max_steps, 5);
        assert_eq!(run.dataset, Path::new("/tmp/x/data.csv"));
        assert!(RunConfig::from_toml("architecture = \"resnet\"\nwidths=[1,2,1]\ndataset=\"d\"\nbogus=1").is_err());
        let bad = RunConfig::from_toml("architecture = \"fracdnn\"\nwidths=[1,2,1]\ndataset=\"d\"").unwrap();
        assert!(bad.resolve(Path::new(".")).is_err());
        let neg = RunConfig::from_toml("architecture = \"resnet\"\nwidths=[1,2,1]\ndataset=\"d\"\nlambda1=-1").unwrap();
        assert!(neg.resolve(Path::new(".")).is_err());
    }

    #[test]
    fn relative_error_definitions() {
        let t = Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 1.0]]).unwrap();
        let p = Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 2.0]]).unwrap();
        let e = relative_error(&p, &t).unwrap();
        assert!((e.global - (1.0f64 / 26.0).sqrt()).abs() < 1e-15);
        assert!((e.mean_per_sample - 0.5).abs() < 1e-15);
    }
}
