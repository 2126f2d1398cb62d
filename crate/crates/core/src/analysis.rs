//! Posterior-mean prediction and Monte Carlo sensitivity analysis.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::partition;
use crate::error::{Error, Result};
use crate::tree::{CutpointGrid, Tree};

/// One saved state of the chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    /// Original response units.
    pub sigma: f64,
    pub forest: Vec<Tree>,
}

/// Saved posterior draws plus what is needed to evaluate them.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSample {
    pub names: Vec<String>,
    pub center: f64,
    pub range: f64,
    pub numcut: usize,
    pub grid: CutpointGrid,
    /// Observed `(min, max)` of each input.
    pub domain: Vec<(f64, f64)>,
    pub draws: Vec<Draw>,
}

impl PosteriorSample {
    pub fn d(&self) -> usize {
        self.grid.num_vars()
    }

    pub fn m(&self) -> usize {
        self.draws.first().map_or(0, |d| d.forest.len())
    }

    /// Prediction of one draw at one input row, in response units.
    pub fn predict_draw(&self, draw: usize, x: &[f64]) -> f64 {
        let f: f64 = self.draws[draw].forest.iter().map(|t| t.evaluate(&self.grid, x)).sum();
        self.center + self.range * f
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        let total: f64 = (0..self.draws.len()).map(|k| self.predict_draw(k, x)).sum();
        total / self.draws.len() as f64
    }

    fn check_rows(&self, x: &[f64]) -> Result<()> {
        let d = self.d();
        if x.len() % d != 0 {
            return Err(Error::Dimension {
                expected: d,
                found: x.len() % d,
            });
        }
        Ok(())
    }

    /// Posterior mean at every row of the row-major matrix `x`.
    pub fn predict_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_rows(x)?;
        Ok(x.chunks_exact(self.d()).map(|r| self.predict_row(r)).collect())
    }

    /// Same as [`predict_mean`](Self::predict_mean), with rows split into
    /// `parts` contiguous chunks evaluated in parallel.
    pub fn predict_mean_parts(&self, x: &[f64], parts: usize) -> Result<Vec<f64>> {
        self.check_rows(x)?;
        let d = self.d();
        let n = x.len() / d;
        let chunks: Vec<Vec<f64>> = partition(n, parts.clamp(1, n.max(1)))
            .into_par_iter()
            .map(|r| x[r.start * d..r.end * d].chunks_exact(d).map(|row| self.predict_row(row)).collect())
            .collect();
        Ok(chunks.concat())
    }

    /// Keeps every `step`-th draw.
    pub fn thinned(&self, step: usize) -> PosteriorSample {
        PosteriorSample {
            draws: self.draws.iter().step_by(step.max(1)).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Anything that maps input rows to real outputs.
pub trait Predictor: Sync {
    fn dim(&self) -> usize;
    /// Evaluates every row of row-major `x`.
    fn eval_rows(&self, x: &[f64]) -> Vec<f64>;
}

impl Predictor for PosteriorSample {
    fn dim(&self) -> usize {
        self.d()
    }

    fn eval_rows(&self, x: &[f64]) -> Vec<f64> {
        x.chunks_exact(self.d()).map(|r| self.predict_row(r)).collect()
    }
}

/// Adapts a plain function of one row.
pub struct FnPredictor<F> {
    pub d: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval_rows(&self, x: &[f64]) -> Vec<f64> {
        x.chunks_exact(self.d).map(|r| (self.f)(r)).collect()
    }
}

fn uniform_rows<R: Rng>(n: usize, domain: &[(f64, f64)], rng: &mut R) -> Vec<f64> {
    let mut x = Vec::with_capacity(n * domain.len());
    for _ in 0..n {
        for &(lo, hi) in domain {
            x.push(lo + (hi - lo) * rng.random::<f64>());
        }
    }
    x
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MainEffect {
    pub var: usize,
    pub grid: Vec<f64>,
    pub effect: Vec<f64>,
    /// Monte Carlo standard error at each grid point.
    pub se: Vec<f64>,
}

impl MainEffect {
    pub fn range(&self) -> f64 {
        let max = self.effect.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.effect.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Main effect of variable `k`: the average of the predictor over the
/// other inputs with `x_k` held at each grid value, minus the overall mean.
pub fn main_effect<P: Predictor + ?Sized, R: Rng>(
    pred: &P,
    k: usize,
    grid: &[f64],
    n_mc: usize,
    domain: &[(f64, f64)],
    rng: &mut R,
) -> MainEffect {
    let n_mc = n_mc.max(1);
    let f0_rows = uniform_rows(n_mc, domain, rng);
    let (f0, f0_sd) = mean_sd(&pred.eval_rows(&f0_rows));
    let d = domain.len();
    let mut effect = Vec::with_capacity(grid.len());
    let mut se = Vec::with_capacity(grid.len());
    for &g in grid {
        let mut x = uniform_rows(n_mc, domain, rng);
        for row in x.chunks_exact_mut(d) {
            row[k] = g;
        }
        let (m, sd) = mean_sd(&pred.eval_rows(&x));
        effect.push(m - f0);
        se.push(((sd * sd + f0_sd * f0_sd) / n_mc as f64).sqrt());
    }
    MainEffect {
        var: k,
        grid: grid.to_vec(),
        effect,
        se,
    }
}

/// First-order and total Sobol index of one variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SobolIndex {
    pub first: f64,
    pub first_se: f64,
    pub total: f64,
    pub total_se: f64,
    /// Numerator of `first`.
    pub v_k: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SobolResult {
    pub f0: f64,
    /// Total variance.
    pub v: f64,
    pub n_s: usize,
    pub indices: Vec<SobolIndex>,
}

/// Additive partial sums from one batch of rows.
#[derive(Clone, Debug, Default)]
struct Partial {
    n: f64,
    sum_a: f64,
    sum_b: f64,
    sum_a2: f64,
    /// Per variable: sum of f(A) f(C_k).
    cross: Vec<f64>,
    /// Per variable: sum of (f(B) - f(C_k))^2.
    jansen: Vec<f64>,
}

impl Partial {
    fn add(&mut self, o: &Partial) {
        self.n += o.n;
        self.sum_a += o.sum_a;
        self.sum_b += o.sum_b;
        self.sum_a2 += o.sum_a2;
        if self.cross.is_empty() {
            self.cross = vec![0.0; o.cross.len()];
            self.jansen = vec![0.0; o.jansen.len()];
        }
        for k in 0..o.cross.len() {
            self.cross[k] += o.cross[k];
            self.jansen[k] += o.jansen[k];
        }
    }

    fn f0_v(&self) -> (f64, f64) {
        let f0 = (self.sum_a + self.sum_b) / (2.0 * self.n);
        (f0, self.sum_a2 / self.n - f0 * f0)
    }

    fn first(&self, k: usize) -> (f64, f64) {
        let (f0, v) = self.f0_v();
        let vk = self.cross[k] / self.n - f0 * f0;
        (vk / v, vk)
    }

    fn total(&self, k: usize) -> f64 {
        let (_, v) = self.f0_v();
        self.jansen[k] / (2.0 * self.n) / v
    }
}

/// Batches per part when estimating standard errors.
const BATCHES: usize = 20;

fn part_partials<P: Predictor + ?Sized>(
    pred: &P,
    rows: usize,
    domain: &[(f64, f64)],
    seed: u64,
    part: usize,
    batches: usize,
) -> Vec<Partial> {
    let d = domain.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(part as u64);
    let a = uniform_rows(rows, domain, &mut rng);
    let b = uniform_rows(rows, domain, &mut rng);
    let fa = pred.eval_rows(&a);
    let fb = pred.eval_rows(&b);
    let fc: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let mut c = b.clone();
            for (crow, arow) in c.chunks_exact_mut(d).zip(a.chunks_exact(d)) {
                crow[k] = arow[k];
            }
            pred.eval_rows(&c)
        })
        .collect();
    partition(rows, batches.clamp(1, rows.max(1)))
        .into_iter()
        .map(|r| {
            let mut p = Partial {
                n: r.len() as f64,
                cross: vec![0.0; d],
                jansen: vec![0.0; d],
                ..Default::default()
            };
            for i in r {
                p.sum_a += fa[i];
                p.sum_b += fb[i];
                p.sum_a2 += fa[i] * fa[i];
                for k in 0..d {
                    p.cross[k] += fa[i] * fc[k][i];
                    let diff = fb[i] - fc[k][i];
                    p.jansen[k] += diff * diff;
                }
            }
            p
        })
        .collect()
}

/// First-order and total indices of every variable from `n_s` rows per
/// sample matrix, split over `p_parts` parts with distinct random streams.
/// Parts run in parallel; their sums are combined in part order.
pub fn sobol<P: Predictor + ?Sized>(
    pred: &P,
    n_s: usize,
    p_parts: usize,
    domain: &[(f64, f64)],
    seed: u64,
) -> Result<SobolResult> {
    if n_s < 2 {
        return Err(Error::config("n_s", "must be at least 2"));
    }
    if domain.len() != pred.dim() {
        return Err(Error::Dimension {
            expected: pred.dim(),
            found: domain.len(),
        });
    }
    let parts = p_parts.clamp(1, n_s);
    let per_part = BATCHES.div_ceil(parts);
    let sizes = partition(n_s, parts);
    let batches: Vec<Partial> = sizes
        .into_par_iter()
        .enumerate()
        .map(|(i, r)| part_partials(pred, r.len(), domain, seed, i, per_part))
        .collect::<Vec<_>>()
        .concat();
    let mut total = Partial::default();
    for b in &batches {
        total.add(b);
    }
    let (f0, v) = total.f0_v();
    if !(v > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let nb = batches.len() as f64;
    let se = |vals: Vec<f64>| {
        if vals.len() < 2 {
            return f64::NAN;
        }
        let (_, sd) = mean_sd(&vals);
        sd / nb.sqrt()
    };
    let indices = (0..pred.dim())
        .map(|k| {
            let (first, v_k) = total.first(k);
            SobolIndex {
                first,
                first_se: se(batches.iter().map(|b| b.first(k).0).collect()),
                total: total.total(k),
                total_se: se(batches.iter().map(|b| b.total(k)).collect()),
                v_k,
            }
        })
        .collect();
    Ok(SobolResult { f0, v, n_s, indices })
}

/// `(S_k, V_k, V)` for one variable.
pub fn sobol_first_order<P: Predictor + ?Sized>(
    pred: &P,
    k: usize,
    n_s: usize,
    p_parts: usize,
    domain: &[(f64, f64)],
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let r = sobol(pred, n_s, p_parts, domain, seed)?;
    let ix = r.indices[k];
    Ok((ix.first, ix.v_k, r.v))
}

pub fn sobol_total<P: Predictor + ?Sized>(
    pred: &P,
    k: usize,
    n_s: usize,
    p_parts: usize,
    domain: &[(f64, f64)],
    seed: u64,
) -> Result<f64> {
    Ok(sobol(pred, n_s, p_parts, domain, seed)?.indices[k].total)
}

/// Sensitivity report: Sobol indices plus main-effect curves.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityResult {
    pub names: Vec<String>,
    pub sobol: SobolResult,
    pub main_effects: Vec<MainEffect>,
}

impl SensitivityResult {
    /// Variables ordered by decreasing first-order index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.sobol.indices.len()).collect();
        idx.sort_by(|&a, &b| self.sobol.indices[b].first.total_cmp(&self.sobol.indices[a].first));
        idx
    }

    pub fn write_indices<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "variable,S,S_se,ST,ST_se")?;
        for (name, ix) in self.names.iter().zip(&self.sobol.indices) {
            writeln!(w, "{},{},{},{},{}", name, ix.first, ix.first_se, ix.total, ix.total_se)?;
        }
        Ok(())
    }

    pub fn write_main_effects<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "variable,x,effect")?;
        for me in &self.main_effects {
            for (g, e) in me.grid.iter().zip(&me.effect) {
                writeln!(w, "{},{},{}", self.names[me.var], g, e)?;
            }
        }
        Ok(())
    }
}

/// Full sensitivity analysis over `domain`.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity<P: Predictor + ?Sized>(
    pred: &P,
    names: &[String],
    domain: &[(f64, f64)],
    n_s: usize,
    p_parts: usize,
    grid_points: usize,
    n_mc: usize,
    seed: u64,
) -> Result<SensitivityResult> {
    let sobol = sobol(pred, n_s, p_parts, domain, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let main_effects = (0..domain.len())
        .map(|k| {
            let (lo, hi) = domain[k];
            let g: Vec<f64> = (0..grid_points)
                .map(|i| lo + (hi - lo) * i as f64 / (grid_points.max(2) - 1) as f64)
                .collect();
            main_effect(pred, k, &g, n_mc, domain, &mut rng)
        })
        .collect();
    Ok(SensitivityResult {
        names: names.to_vec(),
        sobol,
        main_effects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(d: usize) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0); d]
    }

    fn one_leaf_sample(c: f64) -> PosteriorSample {
        PosteriorSample {
            names: vec!["x1".into()],
            center: 0.0,
            range: 1.0,
            numcut: 10,
            grid: CutpointGrid::from_ranges(&[(-1.0, 1.0)], 10).unwrap(),
            domain: vec![(-1.0, 1.0)],
            draws: vec![Draw { sigma: 1.0, forest: vec![Tree::new(c)] }],
        }
    }

    #[test]
    fn single_leaf_predicts_constant() {
        let mut s = one_leaf_sample(0.25);
        s.center = 10.0;
        s.range = 4.0;
        let p = s.predict_mean(&[0.3, -0.9, 0.0]).unwrap();
        assert_eq!(p, vec![11.0; 3]);
    }

    #[test]
    fn dimension_mismatch() {
        let mut s = one_leaf_sample(0.0);
        s.grid = CutpointGrid::from_ranges(&[(-1.0, 1.0); 2], 5).unwrap();
        assert!(matches!(s.predict_mean(&[0.0; 3]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn partitioned_prediction_is_identical() {
        let grid = CutpointGrid::from_ranges(&square(2), 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut draws = Vec::new();
        for _ in 0..4 {
            let mut t = Tree::new(0.0);
            t.birth(1, 0, rng.random_range(0..10), rng.random(), rng.random()).unwrap();
            let mut u = Tree::new(0.0);
            u.birth(1, 1, rng.random_range(0..10), rng.random(), rng.random()).unwrap();
            draws.push(Draw { sigma: 1.0, forest: vec![t, u] });
        }
        let s = PosteriorSample { names: vec!["a".into(), "b".into()], center: 0.3, range: 2.0, numcut: 10, grid, domain: square(2), draws };
        let x = uniform_rows(101, &square(2), &mut rng);
        let whole = s.predict_mean(&x).unwrap();
        assert_eq!(whole, s.predict_mean_parts(&x, 4).unwrap());
        // Linearity in draws: mean of per-draw predictions.
        for (i, row) in x.chunks_exact(2).enumerate() {
            let per: Vec<f64> = (0..4).map(|k| s.predict_draw(k, row)).collect();
            assert_eq!(whole[i], per.iter().sum::<f64>() / 4.0);
        }
    }

    #[test]
    fn main_effects_of_linear_and_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lin = FnPredictor { d: 2, f: |x: &[f64]| x[0] };
        let g = [-0.8, 0.0, 0.5];
        let e1 = main_effect(&lin, 0, &g, 4000, &square(2), &mut rng);
        let e2 = main_effect(&lin, 1, &g, 4000, &square(2), &mut rng);
        for i in 0..3 {
            assert!((e1.effect[i] - g[i]).abs() < 3.0 * e1.se[i]);
            assert!(e2.effect[i].abs() < 3.0 * e2.se[i]);
        }
        let prod = FnPredictor { d: 2, f: |x: &[f64]| x[0] * x[1] };
        let e = main_effect(&prod, 0, &g, 4000, &square(2), &mut rng);
        for i in 0..3 {
            assert!(e.effect[i].abs() < 3.0 * e.se[i]);
        }
        let c = FnPredictor { d: 2, f: |_: &[f64]| 4.0 };
        assert!(main_effect(&c, 1, &g, 100, &square(2), &mut rng).effect.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_predictor_has_zero_variance() {
        let c = FnPredictor { d: 2, f: |_: &[f64]| 1.0 };
        assert!(matches!(sobol(&c, 100, 2, &square(2), 1), Err(Error::ZeroVariance)));
    }

    #[test]
    fn additive_indices() {
        let f = FnPredictor { d: 2, f: |x: &[f64]| x[0] + 2.0 * x[1] };
        let r = sobol(&f, 20_000, 4, &square(2), 7).unwrap();
        let [a, b] = [r.indices[0], r.indices[1]];
        assert!((a.first - 0.2).abs() < 3.0 * a.first_se, "{a:?}");
        assert!((b.first - 0.8).abs() < 3.0 * b.first_se, "{b:?}");
        assert!((a.first + b.first - 1.0).abs() < 3.0 * (a.first_se + b.first_se));
        assert!((a.total - a.first).abs() < 3.0 * (a.total_se + a.first_se));
    }

    #[test]
    fn parts_run_anywhere_same_bits() {
        let f = FnPredictor { d: 3, f: |x: &[f64]| x[0] * x[1] + x[2].sin() };
        let a = sobol(&f, 3000, 6, &square(3), 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| sobol(&f, 3000, 6, &square(3), 11).unwrap());
        assert_eq!(a, b);
    }
}
