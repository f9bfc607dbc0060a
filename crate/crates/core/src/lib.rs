//! Rating prediction for CDN content from access logs.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! 1. [`ingest`] parses delimiter-separated access logs and groups requests
//!    into `(user, item, requests, interaction)` triples, where the
//!    interaction is the request count on a rounded natural-log scale.
//! 2. [`model`] holds plain and biased factor models together with their
//!    prediction and regularized loss.
//! 3. [`train`] splits datasets, fits models with stochastic gradient
//!    descent and reports test RMSE.
//! 4. [`grid`] runs exhaustive hyper-parameter searches.
//! 5. [`cache`] replays request streams through a fixed-capacity cache to
//!    compare eviction policies, including one driven by model scores.
//!
//! [`datagen`] produces synthetic logs and rating datasets with known ground
//! truth, and [`kv`] holds the small `key=value` text format used for run
//! reports and manifests.

pub mod cache;
pub mod datagen;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod kv;
pub mod model;
pub mod train;

mod seed;

pub use cache::{
    item_score, run_simulation, simulate_trace, CacheSimResult, ItemScores, Policy, RequestEvent,
};
pub use datagen::{generate_logs, generate_rated_dataset, SynthConfig};
pub use error::{Error, Result};
pub use grid::{grid_search, Grid, SearchReport, Trial};
pub use ingest::{
    aggregate_interactions, log_scale, parse_log_line, ContentMode, IdMap, InteractionTriple,
    Interactions, LogRecord, LogSchema, Rating,
};
pub use model::{FactorModel, Factors, Hyperparams, Variant};
pub use seed::{mix_seed, rng_from_seed};
pub use train::{evaluate_rmse, split_train_test, train, EvalReport, SplitDataset};
