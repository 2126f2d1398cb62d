//! Chain driver shared by the serial sampler and the distributed master.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{Draw, PosteriorSample};
use crate::data::{local_blocks, partition, Dataset};
use crate::error::{Error, Result};
use crate::sampler::{
    lambda_for_quantile, sweep, Backend, ChainContext, LocalBackend, MoveStats, PriorParams, Rows, ShardState,
    SuffStats, SweepStats,
};
use crate::tree::{CutpointGrid, Tree};

/// Sampler settings. Iteration counts follow the usual convention: `draws`
/// iterations in total, the first `burn` discarded, then every `thin`-th kept.
#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub m: usize,
    pub kfac: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    /// Prior probability that sigma is below the sample sd of the response.
    pub q: f64,
    pub numcut: usize,
    pub min_leaf: u64,
    pub draws: usize,
    pub burn: usize,
    pub thin: usize,
    pub seed: u64,
    /// Global row blocks fixing the summation order. `None` means one block
    /// per worker (one for serial runs).
    pub reduction_blocks: Option<usize>,
    pub prior_only: bool,
    /// Hold sigma fixed, in scaled response units.
    pub fixed_sigma: Option<f64>,
    /// Compare master and worker forest hashes after every iteration.
    pub verify: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            m: 200,
            kfac: 2.0,
            alpha: 0.95,
            beta: 2.0,
            nu: 3.0,
            q: 0.9,
            numcut: 100,
            min_leaf: 5,
            draws: 1000,
            burn: 100,
            thin: 1,
            seed: 1,
            reduction_blocks: None,
            prior_only: false,
            fixed_sigma: None,
            verify: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior(1.0).validate().map_err(|k| Error::config(k, "out of range"))?;
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::config("q", "must lie in (0, 1)"));
        }
        if self.numcut < 1 {
            return Err(Error::config("numcut", "must be at least 1"));
        }
        if self.draws <= self.burn {
            return Err(Error::config("draws", "empty posterior: draws must exceed burn"));
        }
        if self.thin < 1 {
            return Err(Error::config("thin", "must be at least 1"));
        }
        if self.reduction_blocks == Some(0) {
            return Err(Error::config("reduction_blocks", "must be at least 1"));
        }
        if let Some(s) = self.fixed_sigma {
            if !(s > 0.0) {
                return Err(Error::config("fixed_sigma", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn prior(&self, lambda: f64) -> PriorParams {
        PriorParams {
            m: self.m,
            alpha: self.alpha,
            beta: self.beta,
            kfac: self.kfac,
            nu: self.nu,
            lambda,
            min_leaf: self.min_leaf,
        }
    }

    /// Number of snapshots the chain will keep.
    pub fn kept(&self) -> usize {
        (self.draws - self.burn).div_ceil(self.thin)
    }

    fn keeps(&self, iteration: usize) -> bool {
        iteration >= self.burn && (iteration - self.burn) % self.thin == 0
    }
}

/// Per-shard facts the master needs without seeing the data: raw response
/// stats per reduction block, response range and predictor ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSummary {
    pub names: Vec<String>,
    pub blocks: Vec<SuffStats>,
    pub y_min: f64,
    pub y_max: f64,
    pub col_ranges: Vec<(f64, f64)>,
}

impl DataSummary {
    /// Summarizes rows `x` (row-major, `names.len()` columns) and `y` over
    /// `blocks`, which index into these rows.
    pub fn of(names: &[String], x: &[f64], y: &[f64], blocks: &[Range<usize>]) -> Self {
        let d = names.len();
        let mut col_ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for row in x.chunks_exact(d) {
            for (r, &v) in col_ranges.iter_mut().zip(row) {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
        Self {
            names: names.to_vec(),
            blocks: blocks.iter().map(|b| SuffStats::from_slice(&y[b.clone()])).collect(),
            y_min: y.iter().copied().fold(f64::INFINITY, f64::min),
            y_max: y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            col_ranges,
        }
    }

    /// Combines shard summaries given in rank order.
    pub fn merge(parts: Vec<DataSummary>) -> Result<Self> {
        let mut it = parts.into_iter();
        let mut out = it.next().ok_or_else(|| Error::config("workers", "no shards"))?;
        for p in it {
            if p.names != out.names {
                return Err(Error::config("data", "shards disagree on column names"));
            }
            out.blocks.extend(p.blocks);
            out.y_min = out.y_min.min(p.y_min);
            out.y_max = out.y_max.max(p.y_max);
            for (r, q) in out.col_ranges.iter_mut().zip(p.col_ranges) {
                r.0 = r.0.min(q.0);
                r.1 = r.1.max(q.1);
            }
        }
        Ok(out)
    }

    pub fn n(&self) -> u64 {
        self.blocks.iter().map(|b| b.n).sum()
    }

    /// Response sample standard deviation, summing blocks in order.
    pub fn y_sd(&self) -> f64 {
        let t = self.blocks.iter().fold(SuffStats::default(), |a, &b| a + b);
        let n = t.n as f64;
        ((t.sumsq - t.sum * t.sum / n) / (n - 1.0)).max(0.0).sqrt()
    }
}

/// Affine map of the response onto `[-0.5, 0.5]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaling {
    pub center: f64,
    pub range: f64,
}

impl Scaling {
    pub fn from_range(min: f64, max: f64) -> Self {
        let range = max - min;
        Self {
            center: 0.5 * (min + max),
            range: if range > 0.0 { range } else { 1.0 },
        }
    }

    #[inline]
    pub fn scale(&self, y: f64) -> f64 {
        (y - self.center) / self.range
    }

    #[inline]
    pub fn unscale(&self, f: f64) -> f64 {
        self.center + self.range * f
    }
}

/// What workers need to start sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSetup {
    pub m: u32,
    pub numcut: u32,
    pub center: f64,
    pub range: f64,
    pub col_ranges: Vec<(f64, f64)>,
}

impl ChainSetup {
    pub fn scaling(&self) -> Scaling {
        Scaling {
            center: self.center,
            range: self.range,
        }
    }

    pub fn grid(&self) -> Result<CutpointGrid> {
        Ok(CutpointGrid::from_ranges(&self.col_ranges, self.numcut as usize)?)
    }
}

/// Data side of a chain, serial or remote.
pub trait ChainBackend: Backend {
    /// Merged summary over all shards, blocks in global order.
    fn summarize(&mut self) -> Result<DataSummary>;
    fn setup(&mut self, setup: &ChainSetup) -> Result<()>;
    /// Forest hashes held by the data holders, for replica checks.
    fn forest_hashes(&mut self, iteration: u32) -> Result<Vec<u64>>;
    fn begin_iteration(&mut self, _iteration: u32) -> Result<()> {
        Ok(())
    }
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// One row of the chain log.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Original response units.
    pub sigma: f64,
    pub mean_leaves: f64,
    pub birth_proposed: u32,
    pub birth_accepted: u32,
    pub death_proposed: u32,
    pub death_accepted: u32,
}

impl IterationLog {
    pub const HEADER: &'static str =
        "iteration,sigma,mean_leaves,birth_proposed,birth_accepted,death_proposed,death_accepted";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:?},{:?},{},{},{},{}",
            self.iteration,
            self.sigma,
            self.mean_leaves,
            self.birth_proposed,
            self.birth_accepted,
            self.death_proposed,
            self.death_accepted
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub sample: PosteriorSample,
    pub log: Vec<IterationLog>,
    /// Per-iteration tree traces, kept only when requested.
    pub traces: Vec<SweepStats>,
}

impl FitResult {
    /// Mean terminal-node count over all trees of all kept draws.
    pub fn mean_leaves(&self) -> f64 {
        let (mut total, mut count) = (0usize, 0usize);
        for d in &self.sample.draws {
            total += d.forest.iter().map(Tree::num_leaves).sum::<usize>();
            count += d.forest.len();
        }
        total as f64 / count.max(1) as f64
    }
}

/// FNV-1a over the canonical text of every tree.
pub fn forest_hash(forest: &[Tree]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in forest {
        for line in t.to_lines() {
            for b in line.bytes().chain(std::iter::once(b'\n')) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

/// Runs a full chain against `backend`. All randomness comes from `cfg.seed`.
pub fn run_chain<B: ChainBackend + ?Sized>(cfg: &FitConfig, backend: &mut B, keep_traces: bool) -> Result<FitResult> {
    cfg.validate()?;
    let summary = backend.summarize()?;
    let n_total = summary.n();
    if n_total == 0 {
        return Err(Error::config("data", "no rows"));
    }
    let scaling = Scaling::from_range(summary.y_min, summary.y_max);
    let sigma_hat = summary.y_sd() / scaling.range;
    if !(sigma_hat > 0.0) && cfg.fixed_sigma.is_none() {
        return Err(Error::config("data", "response has zero variance"));
    }
    let lambda = if sigma_hat > 0.0 {
        lambda_for_quantile(sigma_hat, cfg.nu, cfg.q)
    } else {
        1.0
    };
    let setup = ChainSetup {
        m: cfg.m as u32,
        numcut: cfg.numcut as u32,
        center: scaling.center,
        range: scaling.range,
        col_ranges: summary.col_ranges.clone(),
    };
    let grid = setup.grid()?;
    backend.setup(&setup)?;

    let ctx = ChainContext {
        prior: cfg.prior(lambda),
        grid: grid.clone(),
        n_total,
        prior_only: cfg.prior_only,
        fixed_sigma: cfg.fixed_sigma,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut forest = vec![Tree::new(0.0); cfg.m];
    let mut sigma = cfg.fixed_sigma.unwrap_or(sigma_hat);
    let mut draws = Vec::with_capacity(cfg.kept());
    let mut log = Vec::with_capacity(cfg.draws);
    let mut traces = Vec::new();

    for it in 0..cfg.draws {
        backend.begin_iteration(it as u32)?;
        let stats = sweep(&mut forest, &mut sigma, &ctx, backend, &mut rng)?;
        if cfg.verify {
            let want = forest_hash(&forest);
            for (rank, h) in backend.forest_hashes(it as u32)?.into_iter().enumerate() {
                if h != want {
                    return Err(Error::Replica { iteration: it, rank: rank + 1 });
                }
            }
        }
        log.push(IterationLog {
            iteration: it,
            sigma: sigma * scaling.range,
            mean_leaves: stats.mean_leaves(),
            birth_proposed: stats.birth_proposed,
            birth_accepted: stats.birth_accepted,
            death_proposed: stats.death_proposed,
            death_accepted: stats.death_accepted,
        });
        if cfg.keeps(it) {
            draws.push(Draw {
                sigma: sigma * scaling.range,
                forest: forest.clone(),
            });
        }
        if keep_traces {
            traces.push(stats);
        }
    }
    backend.finish()?;
    Ok(FitResult {
        sample: PosteriorSample {
            names: summary.names,
            center: scaling.center,
            range: scaling.range,
            numcut: cfg.numcut,
            grid,
            domain: summary.col_ranges,
            draws,
        },
        log,
        traces,
    })
}

/// Backend over a full in-memory dataset.
pub struct SerialBackend<'a> {
    data: &'a Dataset,
    blocks: Vec<Range<usize>>,
    grid: Option<CutpointGrid>,
    shard: ShardState,
}

impl<'a> SerialBackend<'a> {
    pub fn new(data: &'a Dataset, reduction_blocks: usize) -> Result<Self> {
        let n = data.n();
        let blocks = local_blocks(n, reduction_blocks, &(0..n))
            .ok_or_else(|| Error::config("reduction_blocks", format!("must lie in 1..={n}")))?;
        Ok(Self {
            data,
            blocks,
            grid: None,
            shard: ShardState::default(),
        })
    }

    fn local(&mut self) -> LocalBackend<'_> {
        LocalBackend {
            rows: Rows::new(self.data.x(), self.data.d()),
            grid: self.grid.as_ref().expect("setup before sampling"),
            shard: &mut self.shard,
            blocks: &self.blocks,
        }
    }
}

impl Backend for SerialBackend<'_> {
    fn birth_stats(&mut self, j: usize, tree: &Tree, node: usize, var: u32, cut: u32) -> Result<Vec<MoveStats>> {
        self.local().birth_stats(j, tree, node, var, cut)
    }
    fn death_stats(&mut self, j: usize, tree: &Tree, node: usize) -> Result<Vec<MoveStats>> {
        self.local().death_stats(j, tree, node)
    }
    fn commit_birth(
        &mut self,
        j: usize,
        tree: &Tree,
        node: usize,
        var: u32,
        cut: u32,
        mu_left: f64,
        mu_right: f64,
    ) -> Result<()> {
        self.local().commit_birth(j, tree, node, var, cut, mu_left, mu_right)
    }
    fn commit_death(&mut self, j: usize, tree: &Tree, node: usize, mu: f64) -> Result<()> {
        self.local().commit_death(j, tree, node, mu)
    }
    fn no_change(&mut self, _j: usize) -> Result<()> {
        Ok(())
    }
    fn leaf_stats(&mut self, j: usize, tree: &Tree) -> Result<Vec<Vec<SuffStats>>> {
        self.local().leaf_stats(j, tree)
    }
    fn set_leaf_values(&mut self, j: usize, tree: &Tree, mus: &[f64]) -> Result<()> {
        self.local().set_leaf_values(j, tree, mus)
    }
    fn residual_ss(&mut self) -> Result<Vec<f64>> {
        Ok(self.shard.residual_ss(&self.blocks))
    }
}

impl ChainBackend for SerialBackend<'_> {
    fn summarize(&mut self) -> Result<DataSummary> {
        Ok(DataSummary::of(self.data.names(), self.data.x(), self.data.y(), &self.blocks))
    }

    fn setup(&mut self, setup: &ChainSetup) -> Result<()> {
        let s = setup.scaling();
        self.grid = Some(setup.grid()?);
        self.shard = ShardState::new(self.data.y().iter().map(|&y| s.scale(y)).collect());
        Ok(())
    }

    fn forest_hashes(&mut self, _iteration: u32) -> Result<Vec<u64>> {
        Ok(Vec::new())
    }
}

/// Serial fit. With `reduction_blocks = B` the chain is bit-identical to a
/// distributed run over any shard layout aligned with `B` blocks.
pub fn fit_serial(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    let mut backend = SerialBackend::new(data, cfg.reduction_blocks.unwrap_or(1))?;
    run_chain(cfg, &mut backend, false)
}

/// Shards of `n` rows over `p` workers, contiguous and balanced.
pub fn shard_ranges(n: usize, p: usize) -> Result<Vec<Range<usize>>> {
    if p == 0 {
        return Err(Error::config("workers", "must be at least 1"));
    }
    if p > n {
        return Err(Error::config("workers", "more workers than rows"));
    }
    Ok(partition(n, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| if x[2 * i] > 0.2 { 3.0 } else { 1.0 } + 0.1 * rng.random::<f64>())
            .collect();
        Dataset::from_rows(2, x, y).unwrap()
    }

    #[test]
    fn draws_equal_burn_is_empty_posterior() {
        let cfg = FitConfig { draws: 50, burn: 50, ..Default::default() };
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "draws"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kept_counts() {
        let cfg = FitConfig { draws: 100, burn: 10, thin: 4, ..Default::default() };
        assert_eq!(cfg.kept(), 23);
        assert_eq!((0..100).filter(|&i| cfg.keeps(i)).count(), 23);
    }

    #[test]
    fn summary_merge_matches_whole() {
        let data = toy(100, 1);
        let blocks = partition(100, 4);
        let whole = DataSummary::of(data.names(), data.x(), data.y(), &blocks);
        let parts: Vec<DataSummary> = partition(100, 2)
            .into_iter()
            .map(|r| {
                let local = local_blocks(100, 4, &r).unwrap();
                let s = data.slice(r);
                DataSummary::of(s.names(), s.x(), s.y(), &local)
            })
            .collect();
        assert_eq!(DataSummary::merge(parts).unwrap(), whole);
    }

    #[test]
    fn serial_fit_learns_step() {
        let data = toy(400, 2);
        let cfg = FitConfig { m: 20, draws: 300, burn: 100, seed: 3, ..Default::default() };
        let fit = fit_serial(&data, &cfg).unwrap();
        assert_eq!(fit.sample.draws.len(), 200);
        let lo = fit.sample.predict_mean(&[-0.5, 0.0]).unwrap()[0];
        let hi = fit.sample.predict_mean(&[0.8, 0.0]).unwrap()[0];
        assert!((lo - 1.05).abs() < 0.2, "{lo}");
        assert!((hi - 3.05).abs() < 0.2, "{hi}");
        let s = fit.log.last().unwrap().sigma;
        assert!(s > 0.0 && s < 0.3, "{s}");
    }

    #[test]
    fn block_count_must_fit_rows() {
        let data = toy(10, 3);
        assert!(SerialBackend::new(&data, 11).is_err());
        assert!(shard_ranges(3, 4).is_err());
        assert_eq!(shard_ranges(10, 3).unwrap().len(), 3);
    }

    #[test]
    fn verify_passes_on_serial() {
        let data = toy(50, 4);
        let cfg = FitConfig { m: 3, draws: 5, burn: 1, verify: true, ..Default::default() };
        assert!(fit_serial(&data, &cfg).is_ok());
    }
}
