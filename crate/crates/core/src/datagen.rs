//! Friedman's random function generator and comma-delimited table IO.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::data::{default_names, DataError, Dataset};

/// One Gaussian bump over a subset of the inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub a: f64,
    /// Input indices, distinct.
    pub vars: Vec<usize>,
    pub mu: Vec<f64>,
    /// Orthogonal rotation, `vars.len()` square.
    pub rotation: DMatrix<f64>,
    /// Diagonal of the dilation matrix.
    pub dilation: Vec<f64>,
}

impl Kernel {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let k = self.vars.len();
        let mut quad = 0.0;
        for c in 0..k {
            // w_c = (U^T z)_c
            let mut w = 0.0;
            for r in 0..k {
                w += self.rotation[(r, c)] * (x[self.vars[r]] - self.mu[r]);
            }
            quad += w * w / self.dilation[c];
        }
        (-0.5 * quad).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FriedmanSpec {
    pub d: usize,
    pub kernels: Vec<Kernel>,
}

impl FriedmanSpec {
    /// Noiseless value at `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.kernels.iter().map(|k| k.a * k.eval(x)).sum()
    }
}

/// Draws a generator with `q` kernels over `d` inputs. Subset sizes are
/// `min(d, floor(1.5 + r))` with `r` exponential of mean 2, unless fixed by
/// `subset_size`.
pub fn gen_spec_with<R: Rng + ?Sized>(d: usize, q: usize, subset_size: Option<usize>, rng: &mut R) -> FriedmanSpec {
    assert!(d >= 1 && q >= 1);
    let exp = Exp::<f64>::new(0.5).expect("positive rate");
    let kernels = (0..q)
        .map(|_| {
            let a = rng.random_range(-1.0..=1.0);
            let size = match subset_size {
                Some(s) => s.clamp(1, d),
                None => ((1.5 + exp.sample(rng)).floor() as usize).clamp(1, d),
            };
            let vars = sample(rng, d, size).into_vec();
            let mu = (0..size).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let dilation = (0..size)
                .map(|_| {
                    let s: f64 = rng.random_range(0.1..=2.0);
                    s * s
                })
                .collect();
            let z = DMatrix::<f64>::from_fn(size, size, |_, _| StandardNormal.sample(rng));
            let rotation = z.qr().q();
            Kernel { a, vars, mu, rotation, dilation }
        })
        .collect();
    FriedmanSpec { d, kernels }
}

pub fn gen_spec<R: Rng + ?Sized>(d: usize, q: usize, rng: &mut R) -> FriedmanSpec {
    gen_spec_with(d, q, None, rng)
}

pub fn eval_friedman(spec: &FriedmanSpec, x: &[f64]) -> f64 {
    spec.eval(x)
}

/// Inputs i.i.d. uniform on `[-1, 1]`, response `f + N(0, sigma_noise^2)`.
/// Returns the dataset and the noiseless `f`.
pub fn gen_dataset<R: Rng + ?Sized>(spec: &FriedmanSpec, n: usize, sigma_noise: f64, rng: &mut R) -> (Dataset, Vec<f64>) {
    let d = spec.d;
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    for _ in 0..n {
        let start = x.len();
        x.extend((0..d).map(|_| rng.random_range(-1.0..=1.0)));
        let fi = spec.eval(&x[start..]);
        let e: f64 = StandardNormal.sample(rng);
        f.push(fi);
        y.push(fi + sigma_noise * e);
    }
    (Dataset::from_rows(d, x, y).expect("consistent shape"), f)
}

/// Spec and dataset from one seed: the spec is drawn first, then the rows.
pub fn generate(d: usize, kernels: usize, n: usize, sigma_noise: f64, seed: u64) -> (FriedmanSpec, Dataset, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = gen_spec(d, kernels, &mut rng);
    let (data, f) = gen_dataset(&spec, n, sigma_noise, &mut rng);
    (spec, data, f)
}

/// Writes a header (`names`, then `response`) and one line per row.
pub fn write_table<W: Write>(w: W, names: &[String], response: &str, x: &[f64], y: &[f64]) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "{},{}", names.join(","), response)?;
    let d = names.len();
    for (row, yi) in x.chunks_exact(d).zip(y) {
        for v in row {
            write!(w, "{v},")?;
        }
        writeln!(w, "{yi}")?;
    }
    w.flush()
}

/// Writes a single-column table.
pub fn write_column<W: Write>(w: W, name: &str, values: &[f64]) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "{name}")?;
    for v in values {
        writeln!(w, "{v}")?;
    }
    w.flush()
}

fn io_err(path: &str) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_string(),
        source,
    }
}

/// Streams a table one line at a time. `f` gets the zero-based row index,
/// the predictor values and the response. Returns predictor names and the
/// row count. When `response` is `None` every column is a predictor and
/// `f` sees a response of 0.
pub fn for_each_row<B: BufRead>(
    mut reader: B,
    response: Option<&str>,
    source: &str,
    mut f: impl FnMut(usize, &[f64], f64) -> Result<(), DataError>,
) -> Result<(Vec<String>, usize), DataError> {
    let mut line = String::new();
    if reader.read_line(&mut line).map_err(io_err(source))? == 0 {
        return Err(DataError::NoHeader);
    }
    let header: Vec<String> = line.trim_end().split(',').map(|s| s.trim().to_string()).collect();
    let y_col = match response {
        Some(r) => Some(
            header
                .iter()
                .position(|h| h == r)
                .ok_or_else(|| DataError::MissingResponse(r.to_string()))?,
        ),
        None => None,
    };
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != y_col)
        .map(|(_, h)| h.clone())
        .collect();
    let mut row = vec![0.0; names.len()];
    let mut rows = 0;
    let mut lineno = 1;
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(io_err(source))? == 0 {
            break;
        }
        lineno += 1;
        let text = line.trim_end();
        if text.is_empty() {
            continue;
        }
        let mut y = 0.0;
        let mut k = 0;
        let mut fields = 0;
        for (i, cell) in text.split(',').enumerate() {
            fields += 1;
            if i >= header.len() {
                continue;
            }
            let cell = cell.trim();
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| DataError::NonNumeric {
                line: lineno,
                column: header[i].clone(),
                value: cell.to_string(),
            })?;
            if Some(i) == y_col {
                y = v;
            } else {
                row[k] = v;
                k += 1;
            }
        }
        if fields != header.len() {
            return Err(DataError::Ragged {
                line: lineno,
                expected: header.len(),
                found: fields,
            });
        }
        f(rows, &row, y)?;
        rows += 1;
    }
    Ok((names, rows))
}

/// Reads the rows whose index lies in `keep` (all rows when `None`).
pub fn read_table<B: BufRead>(
    reader: B,
    response: &str,
    keep: Option<std::ops::Range<usize>>,
    source: &str,
) -> Result<Dataset, DataError> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let (names, _) = for_each_row(reader, Some(response), source, |i, row, yi| {
        if keep.as_ref().is_none_or(|r| r.contains(&i)) {
            x.extend_from_slice(row);
            y.push(yi);
        }
        Ok(())
    })?;
    if y.is_empty() {
        return Err(DataError::Empty);
    }
    Dataset::new(names, x, y)
}

pub fn read_table_path(path: &Path, response: &str, keep: Option<std::ops::Range<usize>>) -> Result<Dataset, DataError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(io_err(&name))?;
    read_table(BufReader::new(file), response, keep, &name)
}

/// Reads a predictor-only table (e.g. inputs for prediction).
pub fn read_inputs(path: &Path) -> Result<(Vec<String>, Vec<f64>), DataError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(io_err(&name))?;
    let mut x = Vec::new();
    let (names, _) = for_each_row(BufReader::new(file), None, &name, |_, row, _| {
        x.extend_from_slice(row);
        Ok(())
    })?;
    Ok((names, x))
}

/// Counts data rows without storing them.
pub fn count_rows(path: &Path, response: &str) -> Result<usize, DataError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(io_err(&name))?;
    Ok(for_each_row(BufReader::new(file), Some(response), &name, |_, _, _| Ok(()))?.1)
}

pub fn write_dataset(path: &Path, data: &Dataset, response: &str) -> Result<(), DataError> {
    let name = path.display().to_string();
    let file = File::create(path).map_err(io_err(&name))?;
    write_table(file, data.names(), response, data.x(), data.y()).map_err(io_err(&name))
}

pub fn names_for(d: usize) -> Vec<String> {
    default_names(d)
}
