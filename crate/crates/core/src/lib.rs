//! Bayesian additive regression trees with a master/worker sampler whose
//! chains do not depend on how the data are sharded.

pub mod analysis;
pub mod cluster;
pub mod config;
pub mod data;
pub mod datagen;
pub mod error;
pub mod fit;
pub mod modelfile;
pub mod perf;
pub mod protocol;
pub mod sampler;
pub mod tree;

pub use analysis::{sensitivity, Draw, FnPredictor, PosteriorSample, Predictor, SensitivityResult};
pub use cluster::{fit_local_cluster, run_master, run_worker};
pub use config::{parse_config, RunConfig};
pub use data::{DataError, Dataset};
pub use datagen::{gen_dataset, gen_spec, FriedmanSpec};
pub use error::{Error, Result};
pub use fit::{fit_serial, FitConfig, FitResult, IterationLog};
pub use modelfile::{load_model, save_model, ModelError};
pub use perf::{speedup_efficiency, RuntimeModel, TimingRecord};
pub use sampler::PriorParams;
pub use tree::{CutpointGrid, NodeId, Tree, TreeError};
