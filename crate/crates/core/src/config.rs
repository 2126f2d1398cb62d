//! Flat `key=value` run configuration. Command-line pairs override file
//! pairs, which override defaults.

use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fit::FitConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Serial,
    Master,
    Worker,
}

/// Input domain used by sensitivity analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// `[-1, 1]` for every input.
    Unit,
    /// Observed training ranges.
    Data,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub role: Role,
    pub listen: Option<String>,
    pub connect: Option<String>,
    pub rank: Option<u32>,
    pub workers: Option<usize>,
    pub data: Option<PathBuf>,
    pub response: String,
    pub output: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub fit: FitConfig,
    // generate
    pub n: usize,
    pub d: usize,
    pub kernels: usize,
    pub noise: f64,
    pub truth: Option<PathBuf>,
    // predict and sensitivity
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub n_s: usize,
    pub parts: usize,
    pub grid_points: usize,
    pub n_mc: usize,
    pub domain: Domain,
    // bench
    pub bench_n: Vec<usize>,
    pub bench_m: Vec<usize>,
    pub bench_p: Vec<usize>,
    pub iterations: usize,
    pub records: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            role: Role::Serial,
            listen: None,
            connect: None,
            rank: None,
            workers: None,
            data: None,
            response: "y".into(),
            output: None,
            log: None,
            fit: FitConfig::default(),
            n: 1000,
            d: 10,
            kernels: 20,
            noise: 1.0,
            truth: None,
            model: None,
            input: None,
            n_s: 10_000,
            parts: 1,
            grid_points: 21,
            n_mc: 1000,
            domain: Domain::Unit,
            bench_n: vec![2000, 4000],
            bench_m: vec![20],
            bench_p: vec![1, 2, 3],
            iterations: 100,
            records: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "role",
    "listen",
    "connect",
    "rank",
    "workers",
    "data",
    "response",
    "output",
    "log",
    "m",
    "kfac",
    "alpha",
    "beta",
    "nu",
    "q",
    "numcut",
    "min_leaf",
    "draws",
    "burn",
    "thin",
    "seed",
    "reduction_blocks",
    "verify",
    "n",
    "d",
    "kernels",
    "noise",
    "truth",
    "model",
    "input",
    "n_s",
    "parts",
    "grid_points",
    "n_mc",
    "domain",
    "bench_n",
    "bench_m",
    "bench_p",
    "iterations",
    "records",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("`{v}` is not a valid number")))
}

fn positive(key: &str, v: &str) -> Result<usize> {
    let x: usize = num(key, v)?;
    if x == 0 {
        return Err(Error::config(key, "must be at least 1"));
    }
    Ok(x)
}

fn list(key: &str, v: &str) -> Result<Vec<usize>> {
    let out = v.split(',').map(|s| positive(key, s.trim())).collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(Error::config(key, "empty list"));
    }
    Ok(out)
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, ToString::to_string)
}

fn opt_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

impl RunConfig {
    /// Sets one key from its text value, checking only the value itself.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let f = &mut self.fit;
        match key {
            "role" => {
                self.role = match v {
                    "serial" => Role::Serial,
                    "master" => Role::Master,
                    "worker" => Role::Worker,
                    _ => return Err(Error::config(key, "expected serial, master or worker")),
                }
            }
            "listen" => self.listen = Some(v.to_string()),
            "connect" => self.connect = Some(v.to_string()),
            "rank" => self.rank = Some(positive(key, v)? as u32),
            "workers" => self.workers = Some(positive(key, v)?),
            "data" => self.data = Some(v.into()),
            "response" => {
                if v.is_empty() {
                    return Err(Error::config(key, "empty column name"));
                }
                self.response = v.to_string()
            }
            "output" => self.output = Some(v.into()),
            "log" => self.log = Some(v.into()),
            "m" => f.m = num(key, v)?,
            "kfac" => f.kfac = num(key, v)?,
            "alpha" => f.alpha = num(key, v)?,
            "beta" => f.beta = num(key, v)?,
            "nu" => f.nu = num(key, v)?,
            "q" => f.q = num(key, v)?,
            "numcut" => f.numcut = num(key, v)?,
            "min_leaf" => f.min_leaf = num(key, v)?,
            "draws" => f.draws = num(key, v)?,
            "burn" => f.burn = num(key, v)?,
            "thin" => f.thin = num(key, v)?,
            "seed" => f.seed = num(key, v)?,
            "reduction_blocks" => f.reduction_blocks = Some(positive(key, v)?),
            "verify" => {
                f.verify = v
                    .parse()
                    .map_err(|_| Error::config(key, "expected true or false"))?
            }
            "n" => self.n = positive(key, v)?,
            "d" => self.d = positive(key, v)?,
            "kernels" => self.kernels = positive(key, v)?,
            "noise" => {
                self.noise = num(key, v)?;
                if !(self.noise >= 0.0 && self.noise.is_finite()) {
                    return Err(Error::config(key, "must be finite and non-negative"));
                }
            }
            "truth" => self.truth = Some(v.into()),
            "model" => self.model = Some(v.into()),
            "input" => self.input = Some(v.into()),
            "n_s" => {
                self.n_s = num(key, v)?;
                if self.n_s < 2 {
                    return Err(Error::config(key, "must be at least 2"));
                }
            }
            "parts" => self.parts = positive(key, v)?,
            "grid_points" => {
                self.grid_points = num(key, v)?;
                if self.grid_points < 2 {
                    return Err(Error::config(key, "must be at least 2"));
                }
            }
            "n_mc" => self.n_mc = positive(key, v)?,
            "domain" => {
                self.domain = match v {
                    "unit" => Domain::Unit,
                    "data" => Domain::Data,
                    _ => return Err(Error::config(key, "expected unit or data")),
                }
            }
            "bench_n" => self.bench_n = list(key, v)?,
            "bench_m" => self.bench_m = list(key, v)?,
            "bench_p" => self.bench_p = list(key, v)?,
            "iterations" => {
                self.iterations = num(key, v)?;
                if self.iterations < 2 {
                    return Err(Error::config(key, "must be at least 2"));
                }
            }
            "records" => self.records = Some(v.into()),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Text form of one key's current value (empty when unset).
    pub fn get(&self, key: &str) -> Option<String> {
        let f = &self.fit;
        Some(match key {
            "role" => match self.role {
                Role::Serial => "serial",
                Role::Master => "master",
                Role::Worker => "worker",
            }
            .to_string(),
            "listen" => opt(&self.listen),
            "connect" => opt(&self.connect),
            "rank" => opt(&self.rank),
            "workers" => opt(&self.workers),
            "data" => opt_path(&self.data),
            "response" => self.response.clone(),
            "output" => opt_path(&self.output),
            "log" => opt_path(&self.log),
            "m" => f.m.to_string(),
            "kfac" => f.kfac.to_string(),
            "alpha" => f.alpha.to_string(),
            "beta" => f.beta.to_string(),
            "nu" => f.nu.to_string(),
            "q" => f.q.to_string(),
            "numcut" => f.numcut.to_string(),
            "min_leaf" => f.min_leaf.to_string(),
            "draws" => f.draws.to_string(),
            "burn" => f.burn.to_string(),
            "thin" => f.thin.to_string(),
            "seed" => f.seed.to_string(),
            "reduction_blocks" => opt(&f.reduction_blocks),
            "verify" => f.verify.to_string(),
            "n" => self.n.to_string(),
            "d" => self.d.to_string(),
            "kernels" => self.kernels.to_string(),
            "noise" => self.noise.to_string(),
            "truth" => opt_path(&self.truth),
            "model" => opt_path(&self.model),
            "input" => opt_path(&self.input),
            "n_s" => self.n_s.to_string(),
            "parts" => self.parts.to_string(),
            "grid_points" => self.grid_points.to_string(),
            "n_mc" => self.n_mc.to_string(),
            "domain" => match self.domain {
                Domain::Unit => "unit",
                Domain::Data => "data",
            }
            .to_string(),
            "bench_n" => join(&self.bench_n),
            "bench_m" => join(&self.bench_m),
            "bench_p" => join(&self.bench_p),
            "iterations" => self.iterations.to_string(),
            "records" => opt_path(&self.records),
            _ => return None,
        })
    }

    /// Keys each role cannot run without.
    pub fn check_role(&self) -> Result<()> {
        let need = |present: bool, key: &str, role: &str| {
            if present {
                Ok(())
            } else {
                Err(Error::config(key, format!("required when role={role}")))
            }
        };
        match self.role {
            Role::Serial => Ok(()),
            Role::Master => {
                need(self.listen.is_some(), "listen", "master")?;
                need(self.workers.is_some(), "workers", "master")
            }
            Role::Worker => {
                need(self.connect.is_some(), "connect", "worker")?;
                need(self.rank.is_some(), "rank", "worker")?;
                need(self.workers.is_some(), "workers", "worker")?;
                need(self.data.is_some(), "data", "worker")?;
                match (self.rank, self.workers) {
                    (Some(r), Some(p)) if r as usize > p => Err(Error::config("rank", format!("exceeds workers = {p}"))),
                    _ => Ok(()),
                }
            }
        }
    }
}

/// Splits config text into `(line, key, value)`. Blank lines and `#`
/// comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", i + 1), "expected key=value"))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Applies defaults, then `file` pairs, then `flags` (each `key=value`),
/// and validates every value. Role requirements are not checked.
pub fn merge_config(flags: &[String], file: Option<&str>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(text) = file {
        for (_, k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
    }
    for flag in flags {
        let (k, v) = flag
            .split_once('=')
            .ok_or_else(|| Error::config(flag.as_str(), "expected key=value"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.fit.validate()?;
    Ok(cfg)
}

/// [`merge_config`] plus role requirements.
pub fn parse_config(flags: &[String], file: Option<&str>) -> Result<RunConfig> {
    let cfg = merge_config(flags, file)?;
    cfg.check_role()?;
    Ok(cfg)
}
