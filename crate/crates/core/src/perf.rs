//! Speedup and efficiency, runtime linear models, expected isoefficiency
//! and a timing harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::fit_local_cluster;
use crate::datagen::{gen_dataset, gen_spec};
use crate::error::{Error, Result};
use crate::fit::{fit_serial, FitConfig};
use crate::sampler::split_prior_prob;
use crate::tree::MAX_DEPTH;

/// `S = t_seq / t_par` and `E = S / (p + 1)`.
pub fn speedup_efficiency(t_seq: f64, t_par: f64, p_plus_1: u32) -> Result<(f64, f64)> {
    if !(t_seq > 0.0) || !(t_par > 0.0) {
        return Err(Error::config("seconds", "times must be positive"));
    }
    if p_plus_1 == 0 {
        return Err(Error::config("p_plus_1", "must be at least 1"));
    }
    let s = t_seq / t_par;
    Ok((s, s / p_plus_1 as f64))
}

/// Per-setting regressors. `p` counts workers only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariates {
    pub n: f64,
    pub m: f64,
    pub p: f64,
    pub b: f64,
}

impl Covariates {
    fn n_tilde(&self) -> f64 {
        self.n / self.p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    M,
    N,
    Mn,
    Mb,
    Nmb,
    Nt,
    P,
    B,
    MNt,
    Mp,
    NtP,
    NtB,
    Pb,
    MNtB,
    Mpb,
    MNtP,
    MNtPb,
}

pub const SERIAL_TERMS: [Term; 5] = [Term::M, Term::N, Term::Mn, Term::Mb, Term::Nmb];

pub const PARALLEL_TERMS: [Term; 14] = [
    Term::M,
    Term::Nt,
    Term::P,
    Term::B,
    Term::MNt,
    Term::Mp,
    Term::Mb,
    Term::NtP,
    Term::NtB,
    Term::Pb,
    Term::MNtB,
    Term::Mpb,
    Term::MNtP,
    Term::MNtPb,
];

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::M => "m",
            Term::N => "n",
            Term::Mn => "m*n",
            Term::Mb => "m*b",
            Term::Nmb => "n*m*b",
            Term::Nt => "nt",
            Term::P => "p",
            Term::B => "b",
            Term::MNt => "m*nt",
            Term::Mp => "m*p",
            Term::NtP => "nt*p",
            Term::NtB => "nt*b",
            Term::Pb => "p*b",
            Term::MNtB => "m*nt*b",
            Term::Mpb => "m*p*b",
            Term::MNtP => "m*nt*p",
            Term::MNtPb => "m*nt*p*b",
        }
    }

    pub fn eval(self, c: &Covariates) -> f64 {
        let Covariates { n, m, p, b } = *c;
        match self {
            Term::M => m,
            Term::N => n,
            Term::Mn => m * n,
            Term::Mb => m * b,
            Term::Nmb => n * m * b,
            Term::Nt => c.n_tilde(),
            Term::P => p,
            Term::B => b,
            Term::MNt => m * c.n_tilde(),
            Term::Mp => m * p,
            Term::NtP => c.n_tilde() * p,
            Term::NtB => c.n_tilde() * b,
            Term::Pb => p * b,
            Term::MNtB => m * c.n_tilde() * b,
            Term::Mpb => m * p * b,
            Term::MNtP => m * c.n_tilde() * p,
            Term::MNtPb => m * c.n_tilde() * p * b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Serial,
    Parallel,
}

impl Target {
    pub fn terms(self) -> &'static [Term] {
        match self {
            Target::Serial => &SERIAL_TERMS,
            Target::Parallel => &PARALLEL_TERMS,
        }
    }
}

/// One timed run. `p_plus_1` counts the master, so a serial run has 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingRecord {
    pub n: u64,
    pub m: u32,
    pub p_plus_1: u32,
    pub iterations: u32,
    pub seconds: f64,
    pub b_bar: f64,
}

impl TimingRecord {
    pub const HEADER: &'static str = "n,m,p_plus_1,iterations,seconds,b_bar";

    pub fn covariates(&self) -> Covariates {
        Covariates {
            n: self.n as f64,
            m: self.m as f64,
            p: self.p_plus_1.saturating_sub(1) as f64,
            b: self.b_bar,
        }
    }

    pub fn target(&self) -> Target {
        if self.p_plus_1 > 1 {
            Target::Parallel
        } else {
            Target::Serial
        }
    }
}

pub fn write_records(records: &[TimingRecord]) -> String {
    let mut out = String::from(TimingRecord::HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.n, r.m, r.p_plus_1, r.iterations, r.seconds, r.b_bar);
    }
    out
}

pub fn read_records<B: BufRead>(reader: B) -> Result<Vec<TimingRecord>> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?;
    match header {
        Some(h) if h.trim() == TimingRecord::HEADER => {}
        _ => return Err(Error::config("records", format!("header must be `{}`", TimingRecord::HEADER))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::config("records", format!("line {}: {what}", i + 2));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let r = TimingRecord {
            n: f[0].parse().map_err(|_| bad("bad n"))?,
            m: f[1].parse().map_err(|_| bad("bad m"))?,
            p_plus_1: f[2].parse().map_err(|_| bad("bad p_plus_1"))?,
            iterations: f[3].parse().map_err(|_| bad("bad iterations"))?,
            seconds: f[4].parse().map_err(|_| bad("bad seconds"))?,
            b_bar: f[5].parse().map_err(|_| bad("bad b_bar"))?,
        };
        if r.n == 0 || r.m == 0 || r.p_plus_1 == 0 || r.iterations == 0 || !(r.seconds > 0.0) || !(r.b_bar >= 1.0) {
            return Err(bad("values must be positive and b_bar at least 1"));
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuntimeModel {
    pub target: Target,
    pub terms: Vec<Term>,
    pub coef: Vec<f64>,
    pub r2: f64,
    /// Residual standard error, `sqrt(SSE / (N - k))`.
    pub rmse: f64,
}

impl RuntimeModel {
    pub fn predict(&self, c: &Covariates) -> f64 {
        self.terms.iter().zip(&self.coef).map(|(t, b)| b * t.eval(c)).sum()
    }

    pub fn coefficient(&self, term: Term) -> Option<f64> {
        self.terms.iter().position(|&t| t == term).map(|i| self.coef[i])
    }

    pub fn report(&self) -> String {
        let mut out = String::from("term,coefficient\n");
        for (t, c) in self.terms.iter().zip(&self.coef) {
            let _ = writeln!(out, "{},{c}", t.name());
        }
        let _ = writeln!(out, "# r2,{}\n# rmse,{}", self.r2, self.rmse);
        out
    }
}

struct Ols {
    coef: Vec<f64>,
    sse: f64,
}

/// Least squares without intercept. Columns are scaled to unit norm before
/// the SVD so that terms of very different magnitude do not hide each other.
fn ols(terms: &[Term], cov: &[Covariates], y: &[f64]) -> Result<Ols> {
    let (rows, k) = (cov.len(), terms.len());
    let mut x = DMatrix::from_fn(rows, k, |i, j| terms[j].eval(&cov[i]));
    let mut norms = vec![0.0; k];
    for j in 0..k {
        norms[j] = x.column(j).norm();
        if norms[j] == 0.0 || !norms[j].is_finite() {
            return Err(Error::RankDeficient(terms[j].name().to_string()));
        }
        x.column_mut(j).scale_mut(1.0 / norms[j]);
    }
    let svd = x.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (imin, smin) = sv.argmin();
    if smin <= sv.max() * 1e-10 {
        let v_t = svd.v_t.as_ref().expect("requested");
        let row = v_t.row(imin);
        let big = row.amax();
        let names: Vec<&str> = terms
            .iter()
            .enumerate()
            .filter(|(j, _)| row[*j].abs() > 1e-3 * big)
            .map(|(_, t)| t.name())
            .collect();
        return Err(Error::RankDeficient(names.join(", ")));
    }
    let yv = DVector::from_column_slice(y);
    let beta = svd.solve(&yv, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))?;
    let resid = &yv - &x * &beta;
    Ok(Ols {
        coef: beta.iter().zip(&norms).map(|(b, n)| b / n).collect(),
        sse: resid.norm_squared(),
    })
}

/// Relative slack on the residual standard error allowed per removal.
pub const ELIMINATION_TOLERANCE: f64 = 0.3;

/// Fits the full term set of `target` to the matching records (serial
/// records have `p_plus_1 == 1`), then removes terms one at a time. Each
/// step drops the term whose removal gives the smallest residual standard
/// error, provided that error stays within `ELIMINATION_TOLERANCE` of the
/// best seen so far.
pub fn fit_runtime_model(records: &[TimingRecord], target: Target) -> Result<RuntimeModel> {
    fit_runtime_model_with(records, target, ELIMINATION_TOLERANCE)
}

pub fn fit_runtime_model_with(records: &[TimingRecord], target: Target, tolerance: f64) -> Result<RuntimeModel> {
    let used: Vec<&TimingRecord> = records.iter().filter(|r| r.target() == target).collect();
    let all = target.terms();
    if used.len() < all.len() + 2 {
        return Err(Error::config(
            "records",
            format!("{} {target:?} records for {} terms; need at least {}", used.len(), all.len(), all.len() + 2),
        ));
    }
    let cov: Vec<Covariates> = used.iter().map(|r| r.covariates()).collect();
    let y: Vec<f64> = used.iter().map(|r| r.seconds).collect();
    let rows = y.len() as f64;
    let rse = |sse: f64, k: usize| (sse / (rows - k as f64)).sqrt();

    let mut terms = all.to_vec();
    let mut fit = ols(&terms, &cov, &y)?;
    let mut best = rse(fit.sse, terms.len());
    // Round-off floor so exact data do not stall elimination.
    let floor = 1e-9 * (y.iter().map(|v| v * v).sum::<f64>() / rows).sqrt();
    while terms.len() > 1 {
        let mut step: Option<(usize, Ols, f64)> = None;
        for drop in 0..terms.len() {
            let sub: Vec<Term> = terms.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, &t)| t).collect();
            let f = ols(&sub, &cov, &y)?;
            let e = rse(f.sse, sub.len());
            if step.as_ref().is_none_or(|s| e < s.2) {
                step = Some((drop, f, e));
            }
        }
        let (drop, f, e) = step.expect("at least one candidate");
        if e > (best * (1.0 + tolerance)).max(floor) {
            break;
        }
        terms.remove(drop);
        fit = f;
        best = best.min(e);
    }
    let mean = y.iter().sum::<f64>() / rows;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r2 = if sst > 0.0 { (1.0 - fit.sse / sst).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RuntimeModel {
        target,
        rmse: rse(fit.sse, terms.len()),
        terms,
        coef: fit.coef,
        r2,
    })
}

/// Terminal-node count of one tree drawn from the depth prior.
pub fn draw_prior_leaves<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> usize {
    let mut open = vec![0usize];
    let mut leaves = 0;
    while let Some(depth) = open.pop() {
        if depth < MAX_DEPTH && rng.random::<f64>() < split_prior_prob(depth, alpha, beta) {
            open.push(depth + 1);
            open.push(depth + 1);
        } else {
            leaves += 1;
        }
    }
    leaves
}

/// Runtime models used for expected efficiency.
#[derive(Clone, Copy, Debug)]
pub enum SpeedupModel<'a> {
    /// Leading terms of the per-iteration order with unit coefficients:
    /// `T_seq = mn + mb`, `T_par = m*nt + mb + mp + mpb`.
    Unit,
    Fitted {
        serial: &'a RuntimeModel,
        parallel: &'a RuntimeModel,
    },
}

impl SpeedupModel<'_> {
    fn ratio(&self, c: &Covariates) -> f64 {
        match self {
            SpeedupModel::Unit => {
                let Covariates { n, m, p, b } = *c;
                (m * n + m * b) / (m * n / p + m * b + m * p + m * p * b)
            }
            SpeedupModel::Fitted { serial, parallel } => serial.predict(c) / parallel.predict(c),
        }
    }
}

/// Mean of `T_seq / ((p+1) T_par)` over the given leaf counts.
pub fn efficiency_over(n: f64, m: f64, p_plus_1: u32, model: SpeedupModel, leaf_counts: &[f64]) -> f64 {
    if p_plus_1 <= 1 {
        return 1.0;
    }
    let p = (p_plus_1 - 1) as f64;
    let sum: f64 = leaf_counts.iter().map(|&b| model.ratio(&Covariates { n, m, p, b })).sum();
    sum / (leaf_counts.len() as f64 * p_plus_1 as f64)
}

pub fn prior_leaf_counts<R: Rng + ?Sized>(alpha: f64, beta: f64, n_draws: usize, rng: &mut R) -> Vec<f64> {
    (0..n_draws).map(|_| draw_prior_leaves(alpha, beta, rng) as f64).collect()
}

/// Monte Carlo expected efficiency with `b` drawn from the tree prior.
pub fn expected_efficiency<R: Rng + ?Sized>(
    n: f64,
    m: f64,
    p_plus_1: u32,
    model: SpeedupModel,
    alpha: f64,
    beta: f64,
    n_draws: usize,
    rng: &mut R,
) -> f64 {
    let bs = prior_leaf_counts(alpha, beta, n_draws.max(1), rng);
    efficiency_over(n, m, p_plus_1, model, &bs)
}

/// Grid ratio between neighbouring candidate sizes.
pub const ISO_GRID_RATIO: f64 = 1.001;

/// Smallest `n` in `[lo, hi]` on a log grid whose expected efficiency
/// reaches `e`. One set of prior draws (from `seed`) is shared by every
/// `n`, which makes the efficiency curve deterministic.
pub fn isoefficiency_solve(
    e: f64,
    p_plus_1: u32,
    m: f64,
    model: SpeedupModel,
    alpha: f64,
    beta: f64,
    bounds: (f64, f64),
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::config("efficiency", "must lie in (0, 1)"));
    }
    let (lo, hi) = bounds;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::config("bounds", "need 0 < lo < hi"));
    }
    let bs = prior_leaf_counts(alpha, beta, n_draws.max(1), &mut ChaCha8Rng::seed_from_u64(seed));
    let eff = |n: f64| efficiency_over(n, m, p_plus_1, model, &bs);
    let steps = ((hi / lo).ln() / ISO_GRID_RATIO.ln()).ceil() as usize;
    let at = |i: usize| if i >= steps { hi } else { lo * ISO_GRID_RATIO.powi(i as i32) };

    // Coarse monotonicity check before trusting bisection.
    let checks = steps.min(256);
    let mut prev = f64::NEG_INFINITY;
    for c in 0..=checks {
        let n = at(c * steps / checks.max(1));
        let v = eff(n);
        if !v.is_finite() || v < prev - 1e-12 {
            return Err(Error::NotMonotone { at: n });
        }
        prev = v;
    }
    if eff(lo) >= e {
        return Ok(lo);
    }
    let top = eff(hi);
    if top < e {
        return Err(Error::Unattainable { target: e, achieved: top });
    }
    let (mut a, mut b) = (0usize, steps);
    while b - a > 1 {
        let mid = (a + b) / 2;
        if eff(at(mid)) >= e {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(at(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct BenchCell {
    pub n: usize,
    pub m: usize,
    pub p_plus_1: usize,
}

#[derive(Clone, Debug)]
pub struct BenchSettings {
    pub cells: Vec<BenchCell>,
    pub d: usize,
    pub iterations: usize,
    pub seed: u64,
    pub noise: f64,
}

#[derive(Debug, Default)]
pub struct BenchOutcome {
    pub records: Vec<TimingRecord>,
    pub failures: Vec<(BenchCell, String)>,
}

/// Times one fit per cell on Friedman data. Half the iterations are burn-in.
/// Data generation is not timed. Failed cells are kept as failures.
pub fn bench_run(settings: &BenchSettings, mut progress: impl FnMut(&TimingRecord)) -> BenchOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let spec = gen_spec(settings.d, 20, &mut rng);
    let mut data_by_n = BTreeMap::new();
    let mut out = BenchOutcome::default();
    for &cell in &settings.cells {
        let data = data_by_n.entry(cell.n).or_insert_with(|| {
            let mut r = ChaCha8Rng::seed_from_u64(settings.seed ^ cell.n as u64);
            gen_dataset(&spec, cell.n, settings.noise, &mut r).0
        });
        let cfg = FitConfig {
            m: cell.m,
            draws: settings.iterations,
            burn: settings.iterations / 2,
            seed: settings.seed,
            ..Default::default()
        };
        let start = Instant::now();
        let fit = if cell.p_plus_1 <= 1 {
            fit_serial(data, &cfg)
        } else {
            fit_local_cluster(data, &cfg, cell.p_plus_1 - 1).map(|r| r.0)
        };
        let seconds = start.elapsed().as_secs_f64();
        match fit {
            Ok(f) => {
                let rec = TimingRecord {
                    n: cell.n as u64,
                    m: cell.m as u32,
                    p_plus_1: cell.p_plus_1 as u32,
                    iterations: settings.iterations as u32,
                    seconds,
                    b_bar: f.mean_leaves().max(1.0),
                };
                progress(&rec);
                out.records.push(rec);
            }
            Err(e) => out.failures.push((cell, e.to_string())),
        }
    }
    out
}

/// Time, speedup and efficiency per record. Speedup is against the serial
/// run with the same `(n, m)`; relative efficiency is against the run with
/// the fewest cores.
pub fn bench_report(records: &[TimingRecord]) -> String {
    let mut groups: BTreeMap<(u64, u32), Vec<&TimingRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.n, r.m)).or_default().push(r);
    }
    let mut out = String::from("n,m,p_plus_1,seconds,speedup,efficiency,relative_efficiency\n");
    for rs in groups.values() {
        let serial = rs.iter().find(|r| r.p_plus_1 == 1);
        let base = rs.iter().min_by_key(|r| r.p_plus_1).expect("non-empty group");
        for r in rs {
            let (s, e) = match serial {
                Some(s) => {
                    let (s, e) = speedup_efficiency(s.seconds, r.seconds, r.p_plus_1).unwrap_or((f64::NAN, f64::NAN));
                    (format!("{s:.4}"), format!("{e:.4}"))
                }
                None => ("NA".into(), "NA".into()),
            };
            let rel = (base.seconds * base.p_plus_1 as f64) / (r.seconds * r.p_plus_1 as f64);
            let _ = writeln!(out, "{},{},{},{:.4},{s},{e},{rel:.4}", r.n, r.m, r.p_plus_1, r.seconds);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn rec(n: u64, m: u32, p1: u32, b: f64, t: f64) -> TimingRecord {
        TimingRecord {
            n,
            m,
            p_plus_1: p1,
            iterations: 100,
            seconds: t,
            b_bar: b,
        }
    }

    #[test]
    fn ideal_speedup_is_unit_efficiency() {
        let (s, e) = speedup_efficiency(120.0, 15.0, 8).unwrap();
        assert_eq!(s, 8.0);
        assert_eq!(e, 1.0);
        assert_eq!(speedup_efficiency(3.0, 3.0, 1).unwrap(), (1.0, 1.0));
        assert!(speedup_efficiency(0.0, 1.0, 2).is_err());
        assert!(speedup_efficiency(1.0, -1.0, 2).is_err());
    }

    #[test]
    fn single_term_recovered_exactly() {
        let rs: Vec<_> = (1..=20).map(|i| rec(1000 * i, 50 + (i as u32 % 3) * 50, 1, 2.0 + (i % 5) as f64, 3e-4 * (1000 * i) as f64)).collect();
        let model = fit_runtime_model(&rs, Target::Serial).unwrap();
        assert_eq!(model.terms, vec![Term::N]);
        assert!((model.coef[0] - 3e-4).abs() < 1e-15);
        assert!((model.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cov: Vec<Covariates> = (0..40)
            .map(|_| Covariates {
                n: rng.random_range(1e3..1e5),
                m: rng.random_range(10.0..300.0),
                p: 0.0,
                b: rng.random_range(1.0..30.0),
            })
            .collect();
        let y: Vec<f64> = cov.iter().map(|_| rng.random_range(1.0..100.0)).collect();
        let fit = ols(&SERIAL_TERMS, &cov, &y).unwrap();
        let x = DMatrix::from_fn(40, 5, |i, j| SERIAL_TERMS[j].eval(&cov[i]));
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * DVector::from_column_slice(&y);
        let oracle = xtx.lu().solve(&xty).unwrap();
        for (a, b) in fit.coef.iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn collinear_terms_named() {
        // b fixed makes m and m*b collinear.
        let rs: Vec<_> = (1..=20).map(|i| rec(500 * i, 10 * (i as u32 % 4 + 1), 1, 3.0, i as f64)).collect();
        match fit_runtime_model(&rs, Target::Serial) {
            Err(Error::RankDeficient(names)) => {
                assert!(names.contains("m*b") && names.contains("m"), "{names}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn too_few_records() {
        let rs: Vec<_> = (1..=6).map(|i| rec(100 * i, 50, 1, 2.0, i as f64)).collect();
        assert!(fit_runtime_model(&rs, Target::Serial).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn elimination_scale_equivariant(seed in any::<u64>(), c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rs: Vec<_> = (0..30).map(|_| {
                let n = rng.random_range(1000u64..100_000);
                let m = rng.random_range(20u32..300);
                let b = rng.random_range(1.0..20.0);
                let t = 1e-6 * (m as f64) * (n as f64) * (1.0 + 0.05 * rng.random::<f64>()) + 0.01 * m as f64 * b;
                rec(n, m, 1, b, t)
            }).collect();
            let scaled: Vec<_> = rs.iter().map(|r| TimingRecord { seconds: r.seconds * c, ..r.clone() }).collect();
            let a = fit_runtime_model(&rs, Target::Serial).unwrap();
            let b = fit_runtime_model(&scaled, Target::Serial).unwrap();
            prop_assert_eq!(&a.terms, &b.terms);
            for (x, y) in a.coef.iter().zip(&b.coef) {
                prop_assert!((x * c - y).abs() <= 1e-6 * y.abs().max(1e-300));
            }
            prop_assert!((0.0..=1.0).contains(&a.r2));
        }

        #[test]
        fn unit_efficiency_finite_positive(n in 10.0f64..1e8, m in 1.0f64..1000.0, p1 in 1u32..64, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = expected_efficiency(n, m, p1, SpeedupModel::Unit, 0.95, 2.0, 50, &mut rng);
            prop_assert!(e.is_finite() && e > 0.0 && e <= 1.0);
        }
    }

    /// `P(b = k)` for a subtree rooted at `depth`, k = 1..=kmax, by recursion
    /// over shapes.
    fn leaf_dist(depth: usize, kmax: usize, alpha: f64, beta: f64) -> Vec<f64> {
        let p = alpha * (1.0 + depth as f64).powf(-beta);
        let mut out = vec![0.0; kmax + 1];
        out[1] = 1.0 - p;
        if kmax >= 2 {
            let child = leaf_dist(depth + 1, kmax - 1, alpha, beta);
            for i in 1..kmax {
                for j in 1..kmax {
                    if i + j <= kmax {
                        out[i + j] += p * child[i] * child[j];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn prior_leaf_counts_match_enumeration() {
        let exact: f64 = leaf_dist(0, 4, 0.95, 2.0).iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let hits = (0..n).filter(|_| draw_prior_leaves(0.95, 2.0, &mut rng) <= 4).count();
        let mc = hits as f64 / n as f64;
        assert!((mc - exact).abs() < 0.01, "{mc} vs {exact}");
        let d1 = leaf_dist(0, 1, 0.95, 2.0);
        assert!((d1[1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn larger_problems_more_efficient() {
        let bs = prior_leaf_counts(0.95, 2.0, 2000, &mut ChaCha8Rng::seed_from_u64(4));
        for p1 in [2, 4, 8, 16, 32] {
            let e: Vec<f64> = [1e3, 1e4, 1e5].iter().map(|&n| efficiency_over(n, 200.0, p1, SpeedupModel::Unit, &bs)).collect();
            assert!(e[0] < e[1] && e[1] < e[2], "p+1 = {p1}: {e:?}");
        }
        assert_eq!(efficiency_over(1e4, 200.0, 1, SpeedupModel::Unit, &bs), 1.0);
    }

    #[test]
    fn isoefficiency_matches_grid_scan() {
        let bs = prior_leaf_counts(0.95, 2.0, 500, &mut ChaCha8Rng::seed_from_u64(11));
        let (lo, hi) = (10.0, 1e7);
        for (e, p1) in [(0.5, 4), (0.7, 8), (0.8, 16)] {
            let got = isoefficiency_solve(e, p1, 100.0, SpeedupModel::Unit, 0.95, 2.0, (lo, hi), 500, 11).unwrap();
            let mut n = lo;
            while efficiency_over(n, 100.0, p1, SpeedupModel::Unit, &bs) < e {
                n *= 1.01;
            }
            assert!((got / n - 1.0).abs() <= 0.011, "e = {e}: {got} vs {n}");
        }
    }

    #[test]
    fn isoefficiency_edges_and_ordering() {
        let solve = |e, p1| isoefficiency_solve(e, p1, 100.0, SpeedupModel::Unit, 0.95, 2.0, (100.0, 1e8), 300, 5);
        assert_eq!(solve(0.01, 4).unwrap(), 100.0);
        assert!(matches!(solve(0.99, 4), Err(Error::Unattainable { .. })));
        let mut last = 0.0;
        for e in [0.3, 0.5, 0.6, 0.7] {
            let n = solve(e, 8).unwrap();
            assert!(n >= last);
            last = n;
        }
        let mut last = 0.0;
        for p1 in [4, 8, 16] {
            let n = solve(0.6, p1).unwrap();
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn records_round_trip() {
        let rs = vec![rec(1000, 50, 1, 3.25, 1.5), rec(2000, 100, 3, 7.125, 0.1 + 0.2)];
        let text = write_records(&rs);
        assert_eq!(read_records(text.as_bytes()).unwrap(), rs);
        assert!(read_records("n,m\n".as_bytes()).is_err());
        let report = bench_report(&rs);
        assert_eq!(report.lines().count(), 3);
    }

    #[test]
    fn one_cell_one_record() {
        let s = BenchSettings {
            cells: vec![BenchCell { n: 200, m: 5, p_plus_1: 3 }],
            d: 3,
            iterations: 10,
            seed: 1,
            noise: 0.1,
        };
        let out = bench_run(&s, |_| {});
        assert_eq!(out.records.len(), 1);
        assert!(out.failures.is_empty());
        assert!(out.records[0].b_bar >= 1.0);
    }
}

#[cfg(test)]
mod recovery {
    use super::*;
    use rand_distr::{Distribution, Normal};

    /// Desk-scale factorial timings from `2.011 b + 1.254e-4 m nt` with 1%
    /// relative noise.
    fn synthetic(seed: u64) -> Vec<TimingRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut out = Vec::new();
        for _ in 0..3 {
            for n in [10_000u64, 20_000, 50_000] {
                for m in [50u32, 100, 200] {
                    for p1 in [3u32, 5, 9] {
                        let b: f64 = rng.random_range(2.0..30.0);
                        let nt = n as f64 / (p1 - 1) as f64;
                        let t = 2.011 * b + 1.254e-4 * m as f64 * nt;
                        out.push(TimingRecord {
                            n,
                            m,
                            p_plus_1: p1,
                            iterations: 1000,
                            seconds: t * (1.0 + noise.sample(&mut rng)),
                            b_bar: b,
                        });
                    }
                }
            }
        }
        out
    }

    #[test]
    fn elimination_usually_exact() {
        let mut exact = 0;
        for seed in 0..50 {
            let m = fit_runtime_model(&synthetic(seed), Target::Parallel).unwrap();
            assert!(m.terms.contains(&Term::B) && m.terms.contains(&Term::MNt), "{:?}", m.terms);
            if m.terms == [Term::B, Term::MNt] {
                exact += 1;
                assert!((m.coef[0] / 2.011 - 1.0).abs() < 0.05);
                assert!((m.coef[1] / 1.254e-4 - 1.0).abs() < 0.05);
            }
        }
        assert!(exact >= 40, "{exact}/50");
    }
}
