//! Closed-form Maxwell test problem on the cylinder
//! `Ω = {x1² + x2² ≤ 1, 0 ≤ x3 ≤ 1}`.
//!
//! With `r = √(x1² + x2²)` and `e_θ = (−x2, x1, 0)/r` the exact field is
//! `u = I₁(r) e_θ`, the coefficient is `φ = (r² + 1)/2` and the source is
//! `f = −(r I₀(r) + φ I₁(r)) e_θ`. Both vector fields are set to zero on the
//! axis `r = 0`, where they vanish in the limit.
//!
//! The regression task maps the 7-vector `(x, f(x), φ(x))` to `u(x)`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::linalg::{Matrix, RngState};
use crate::objective::Dataset;
use crate::special::{bessel_i0, bessel_i1};

pub type Point = [f64; 3];

/// Header of the dataset CSV.
pub const CSV_HEADER: [&str; 10] = ["x1", "x2", "x3", "f1", "f2", "f3", "phi", "u1", "u2", "u3"];

pub const INPUT_WIDTH: usize = 7;
pub const TARGET_WIDTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxwellSample {
    pub x: Point,
    pub f: Point,
    pub phi: f64,
    pub u: Point,
}

impl MaxwellSample {
    pub fn at(x: Point) -> Self {
        Self {
            x,
            f: exact_f(x),
            phi: exact_phi(x),
            u: exact_u(x),
        }
    }

    pub fn input(&self) -> [f64; INPUT_WIDTH] {
        [self.x[0], self.x[1], self.x[2], self.f[0], self.f[1], self.f[2], self.phi]
    }
}

/// `s · e_θ`, zero on the axis.
fn azimuthal(x: Point, s: impl Fn(f64) -> f64) -> Point {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return [0.0; 3];
    }
    let k = s(r) / r;
    [-x[1] * k, x[0] * k, 0.0]
}

pub fn exact_u(x: Point) -> Point {
    azimuthal(x, |r| bessel_i1(r).expect("r >= 0"))
}

pub fn exact_phi(x: Point) -> f64 {
    0.5 * (x[0] * x[0] + x[1] * x[1] + 1.0)
}

pub fn exact_f(x: Point) -> Point {
    let phi = exact_phi(x);
    azimuthal(x, |r| -(r * bessel_i0(r).expect("r >= 0") + phi * bessel_i1(r).expect("r >= 0")))
}

pub fn in_cylinder(x: Point) -> bool {
    x[0] * x[0] + x[1] * x[1] <= 1.0 && (0.0..=1.0).contains(&x[2])
}

/// `n` points uniform in the cylinder; `(x1, x2)` by rejection from
/// `[−1, 1]²`.
pub fn sample_cylinder(n: usize, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(invalid("need at least one sample"));
    }
    let mut rng = RngState::from_seed(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x1 = rng.uniform(-1.0, 1.0)?;
        let x2 = rng.uniform(-1.0, 1.0)?;
        if x1 * x1 + x2 * x2 > 1.0 {
            continue;
        }
        let x3 = rng.next_unit();
        out.push([x1, x2, x3]);
    }
    Ok(out)
}

/// Samples with their exact fields, in sampling order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxwellSet {
    pub samples: Vec<MaxwellSample>,
}

impl MaxwellSet {
    pub fn from_points(points: &[Point]) -> Self {
        Self {
            samples: points.iter().map(|x| MaxwellSample::at(*x)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_dataset(&self) -> Dataset {
        let n = self.len();
        let inputs = Matrix::from_fn(n, INPUT_WIDTH, |i, j| self.samples[i].input()[j]);
        let targets = Matrix::from_fn(n, TARGET_WIDTH, |i, j| self.samples[i].u[j]);
        Dataset::new(inputs, targets).expect("consistent rows")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(CSV_HEADER).map_err(csv_err)?;
        for s in &self.samples {
            let row = s.input().into_iter().chain(s.u).map(|v| format!("{v:.16e}"));
            wr.write_record(row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::Parse(format!("unexpected dataset header '{}'", header.iter().collect::<Vec<_>>().join(","))));
        }
        let mut samples = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse(format!("dataset row {}: {e}", line + 1)))?;
            if vals.len() != CSV_HEADER.len() {
                return Err(Error::Parse(format!("dataset row {} has {} fields", line + 1, vals.len())));
            }
            samples.push(MaxwellSample {
                x: [vals[0], vals[1], vals[2]],
                f: [vals[3], vals[4], vals[5]],
                phi: vals[6],
                u: [vals[7], vals[8], vals[9]],
            });
        }
        Ok(Self { samples })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    /// First `round(split·n)` samples and the rest.
    pub fn split(&self, split: f64) -> Result<(MaxwellSet, MaxwellSet)> {
        if !(split > 0.0 && split < 1.0) {
            return Err(invalid(format!("split must lie in (0, 1), got {split}")));
        }
        let k = (split * self.len() as f64).round() as usize;
        Ok((
            MaxwellSet { samples: self.samples[..k].to_vec() },
            MaxwellSet { samples: self.samples[k..].to_vec() },
        ))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Train/test split of `n` cylinder samples.
pub fn gen_dataset(n: usize, seed: u64, split: f64) -> Result<(MaxwellSet, MaxwellSet)> {
    MaxwellSet::from_points(&sample_cylinder(n, seed)?).split(split)
}

fn linspace(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if i + 1 == n {
        hi
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// `resolution²` points on `[−1, 1]² × {0.5}`, `x1` fastest.
pub fn extrapolation_grid(resolution: usize) -> Result<Vec<Point>> {
    if resolution < 2 {
        return Err(invalid("grid resolution must be >= 2"));
    }
    Ok((0..resolution)
        .flat_map(|i2| (0..resolution).map(move |i1| [linspace(-1.0, 1.0, resolution, i1), linspace(-1.0, 1.0, resolution, i2), 0.5]))
        .collect())
}

/// `resolution³` points on the unit cube `[0, 1]³`, `x1` fastest.
pub fn cube_grid(resolution: usize) -> Result<Vec<Point>> {
    if resolution < 2 {
        return Err(invalid("grid resolution must be >= 2"));
    }
    let n = resolution;
    Ok((0..n)
        .flat_map(|i3| {
            (0..n).flat_map(move |i2| (0..n).map(move |i1| [linspace(0.0, 1.0, n, i1), linspace(0.0, 1.0, n, i2), linspace(0.0, 1.0, n, i3)]))
        })
        .collect())
}
