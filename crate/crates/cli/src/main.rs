use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::thread::sleep;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use parbart::cluster::{accept_workers, Tcp};
use parbart::config::{parse_config, Domain, Role, RunConfig};
use parbart::data::DataError;
use parbart::datagen::{count_rows, generate, read_inputs, read_table_path, write_column, write_dataset};
use parbart::fit::shard_ranges;
use parbart::perf::{bench_report, bench_run, fit_runtime_model, write_records, BenchCell, BenchSettings, Target};
use parbart::{fit_serial, load_model, run_master, run_worker, save_model, sensitivity, FitResult, IterationLog};

/// Distributed Bayesian additive regression trees.
///
/// Settings are `key=value` pairs, given on the command line or in a
/// config file (one pair per line, `#` comments). Command-line pairs win.
#[derive(Parser)]
#[command(name = "parbart", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Settings {
    /// Config file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value overrides.
    pairs: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a Friedman random function and a dataset from it.
    Generate(Settings),
    /// Run the sampler as serial, master or worker.
    Fit(Settings),
    /// Posterior-mean predictions from a saved model.
    Predict(Settings),
    /// Sobol indices and main effects of a saved model.
    Sensitivity(Settings),
    /// Time fits over a grid of sizes and worker counts.
    Bench(Settings),
}

fn load(s: &Settings) -> Result<RunConfig> {
    let file = match &s.config {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    Ok(parse_config(&s.pairs, file.as_deref())?)
}

fn need<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T> {
    v.as_ref().with_context(|| format!("missing required key `{key}`"))
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Generate(s) => cmd_generate(&load(s)?),
        Cmd::Fit(s) => cmd_fit(&load(s)?),
        Cmd::Predict(s) => cmd_predict(&load(s)?),
        Cmd::Sensitivity(s) => cmd_sensitivity(&load(s)?),
        Cmd::Bench(s) => cmd_bench(&load(s)?),
    }
}

fn cmd_generate(c: &RunConfig) -> Result<()> {
    let out = need(&c.output, "output")?;
    let (_, data, f) = generate(c.d, c.kernels, c.n, c.noise, c.fit.seed);
    write_dataset(out, &data, &c.response)?;
    let truth = c.truth.clone().unwrap_or_else(|| with_suffix(out, ".truth.csv"));
    write_column(File::create(&truth)?, "f", &f)?;
    eprintln!("wrote {} rows to {} and {}", data.n(), out.display(), truth.display());
    Ok(())
}

fn write_fit(c: &RunConfig, fit: &FitResult) -> Result<()> {
    let out = need(&c.output, "output")?;
    save_model(out, &fit.sample)?;
    let log = c.log.clone().unwrap_or_else(|| with_suffix(out, ".log.csv"));
    let mut w = BufWriter::new(File::create(&log)?);
    writeln!(w, "{}", IterationLog::HEADER)?;
    for l in &fit.log {
        writeln!(w, "{}", l.to_csv())?;
    }
    w.flush()?;
    eprintln!(
        "saved {} draws of {} trees to {}; chain log {}",
        fit.sample.draws.len(),
        fit.sample.m(),
        out.display(),
        log.display()
    );
    Ok(())
}

fn cmd_fit(c: &RunConfig) -> Result<()> {
    match c.role {
        Role::Serial => {
            let path = need(&c.data, "data")?;
            need(&c.output, "output")?;
            let data = read_table_path(path, &c.response, None)?;
            let fit = fit_serial(&data, &c.fit)?;
            write_fit(c, &fit)
        }
        Role::Master => {
            need(&c.output, "output")?;
            let addr = need(&c.listen, "listen")?;
            let p = *need(&c.workers, "workers")?;
            let listener = TcpListener::bind(addr).with_context(|| format!("listening on {addr}"))?;
            eprintln!("master listening on {}; waiting for {p} workers", listener.local_addr()?);
            let links = accept_workers(&listener, p)?;
            let fit = run_master(&c.fit, links)?;
            write_fit(c, &fit)
        }
        Role::Worker => {
            let path = need(&c.data, "data")?;
            let rank = *need(&c.rank, "rank")?;
            let p = *need(&c.workers, "workers")?;
            let addr = need(&c.connect, "connect")?;
            let n = count_rows(path, &c.response)?;
            let range = shard_ranges(n, p)?[rank as usize - 1].clone();
            let shard = read_table_path(path, &c.response, Some(range.clone()))?;
            let mut link = connect_retry(addr, Duration::from_secs(30))?;
            run_worker(rank, range.start as u64, &shard, &mut link)?;
            Ok(())
        }
    }
}

fn connect_retry(addr: &str, patience: Duration) -> Result<Tcp> {
    let start = Instant::now();
    loop {
        match Tcp::connect(addr) {
            Ok(t) => return Ok(t),
            Err(e) if start.elapsed() > patience => return Err(e).with_context(|| format!("connecting to {addr}")),
            Err(_) => sleep(Duration::from_millis(100)),
        }
    }
}

fn cmd_predict(c: &RunConfig) -> Result<()> {
    let model = load_model(need(&c.model, "model")?)?;
    let input = c.input.as_ref().or(c.data.as_ref()).context("missing required key `input`")?;
    let out = need(&c.output, "output")?;
    // The response column is dropped when present.
    let x = match read_table_path(input, &c.response, None) {
        Ok(d) => d.x().to_vec(),
        Err(DataError::MissingResponse(_)) => read_inputs(input)?.1,
        Err(e) => return Err(e.into()),
    };
    let yhat = model.predict_mean_parts(&x, rayon_parts())?;
    write_column(File::create(out)?, "yhat", &yhat)?;
    eprintln!("wrote {} predictions to {}", yhat.len(), out.display());
    Ok(())
}

fn rayon_parts() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn cmd_sensitivity(c: &RunConfig) -> Result<()> {
    let model = load_model(need(&c.model, "model")?)?;
    let out = need(&c.output, "output")?;
    let domain = match c.domain {
        Domain::Unit => vec![(-1.0, 1.0); model.d()],
        Domain::Data => model.domain.clone(),
    };
    let names = model.names.clone();
    let r = sensitivity(&model, &names, &domain, c.n_s, c.parts, c.grid_points, c.n_mc, c.fit.seed)?;
    let idx = with_suffix(out, ".indices.csv");
    let main = with_suffix(out, ".main.csv");
    r.write_indices(BufWriter::new(File::create(&idx)?))?;
    r.write_main_effects(BufWriter::new(File::create(&main)?))?;
    let top: Vec<&str> = r.ranking().iter().take(3).map(|&k| names[k].as_str()).collect();
    eprintln!("most active inputs: {}; wrote {} and {}", top.join(", "), idx.display(), main.display());
    Ok(())
}

fn cmd_bench(c: &RunConfig) -> Result<()> {
    let mut cells = Vec::new();
    for &n in &c.bench_n {
        for &m in &c.bench_m {
            for &p_plus_1 in &c.bench_p {
                cells.push(BenchCell { n, m, p_plus_1 });
            }
        }
    }
    let settings = BenchSettings {
        cells,
        d: c.d,
        iterations: c.iterations,
        seed: c.fit.seed,
        noise: c.noise,
    };
    let outcome = bench_run(&settings, |r| {
        eprintln!("n={} m={} p+1={}: {:.3}s, mean leaves {:.2}", r.n, r.m, r.p_plus_1, r.seconds, r.b_bar)
    });
    for (cell, e) in &outcome.failures {
        eprintln!("cell n={} m={} p+1={} failed: {e}", cell.n, cell.m, cell.p_plus_1);
    }
    if let Some(path) = c.records.as_ref().or(c.output.as_ref()) {
        fs::write(path, write_records(&outcome.records))?;
        eprintln!("wrote {} timing records to {}", outcome.records.len(), path.display());
    }
    print!("{}", bench_report(&outcome.records));
    for target in [Target::Serial, Target::Parallel] {
        if let Ok(model) = fit_runtime_model(&outcome.records, target) {
            println!("# {target:?} runtime model");
            print!("{}", model.report());
        }
    }
    if outcome.records.is_empty() {
        bail!("no bench cell completed");
    }
    Ok(())
}
