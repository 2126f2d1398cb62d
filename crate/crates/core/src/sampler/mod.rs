//! Gibbs sampler for the sum-of-trees model.

pub mod moves;
pub mod prior;
pub mod shard;
pub mod stats;
pub mod sweep;

pub use moves::{accept_log_ratio, propose, MoveKind, Proposal};
pub use prior::{lambda_for_quantile, split_prior_prob, PriorParams};
pub use shard::{Rows, ShardState};
pub use stats::{log_marginal_likelihood, MoveStats, SuffStats};
pub use sweep::{one_iteration, sweep, Backend, ChainContext, ChainState, LocalBackend, SweepStats, TreeTrace};
