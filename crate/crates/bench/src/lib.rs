//! Shared fixtures for the benchmarks.

use parbart::{datagen::generate, Dataset, FitConfig, PosteriorSample};

/// Friedman data with `d = 10` inputs and 20 kernels.
pub fn friedman(n: usize, seed: u64) -> Dataset {
    generate(10, 20, n, 0.15, seed).1
}

/// A short fit, enough to grow realistic trees.
pub fn small_posterior(m: usize, draws: usize) -> PosteriorSample {
    let data = friedman(2000, 1);
    let cfg = FitConfig { m, draws: draws + 50, burn: 50, seed: 2, ..Default::default() };
    parbart::fit_serial(&data, &cfg).expect("fit").sample
}
