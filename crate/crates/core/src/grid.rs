//! Exhaustive hyper-parameter search with a single seeded hold-out split.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::Rating;
use crate::kv::KvBlock;
use crate::model::{Hyperparams, Variant};
use crate::seed::mix_seed;
use crate::train::{evaluate_rmse, split_train_test, train};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub k_values: Vec<usize>,
    pub alpha_values: Vec<f64>,
    pub beta_values: Vec<f64>,
    /// Epochs for every trial.
    pub iterations: usize,
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        fn check<T: PartialEq + std::fmt::Debug>(name: &str, v: &[T]) -> Result<()> {
            if v.is_empty() {
                return Err(Error::domain(format!("grid dimension {name} is empty")));
            }
            for (i, x) in v.iter().enumerate() {
                if v[..i].contains(x) {
                    return Err(Error::domain(format!(
                        "grid dimension {name} repeats {x:?}"
                    )));
                }
            }
            Ok(())
        }
        check("k", &self.k_values)?;
        check("alpha", &self.alpha_values)?;
        check("beta", &self.beta_values)?;
        if self.iterations < 1 {
            return Err(Error::domain("grid iterations must be at least 1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.k_values.len() * self.alpha_values.len() * self.beta_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points with K outermost and β innermost. Trial `t` trains with
    /// seed `mix_seed(seed, t)`.
    pub fn points(&self, seed: u64) -> Vec<Hyperparams> {
        let mut out = Vec::with_capacity(self.len());
        for &k in &self.k_values {
            for &alpha in &self.alpha_values {
                for &beta in &self.beta_values {
                    let t = out.len() as u64;
                    out.push(Hyperparams::new(
                        k,
                        alpha,
                        beta,
                        self.iterations,
                        mix_seed(seed, t),
                    ));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub hyper: Hyperparams,
    /// Validation RMSE, `+∞` if training diverged.
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub best: Hyperparams,
    pub best_rmse: f64,
    /// All trials in enumeration order.
    pub trials: Vec<Trial>,
}

impl SearchReport {
    pub const CSV_HEADER: &'static str = "K,alpha,beta,iterations,val_rmse";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for t in &self.trials {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                t.hyper.k, t.hyper.alpha, t.hyper.beta, t.hyper.iterations, t.val_rmse
            ));
        }
        out
    }

    pub fn winner_kv(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.set("k", self.best.k)
            .set("alpha", self.best.alpha)
            .set("beta", self.best.beta)
            .set("iterations", self.best.iterations)
            .set("seed", self.best.seed)
            .set("val_rmse", self.best_rmse)
            .set("trials", self.trials.len());
        kv
    }
}

/// Trains one model per grid point on a `1 − val_ratio` share of `trainset`
/// and picks the lowest validation RMSE, earliest trial on ties.
///
/// Trials run on a pool of `jobs` threads; the report does not depend on it.
pub fn grid_search(
    trainset: &[Rating],
    variant: Variant,
    grid: &Grid,
    val_ratio: f64,
    seed: u64,
    jobs: usize,
) -> Result<SearchReport> {
    grid.validate()?;
    if !(val_ratio > 0.0 && val_ratio < 1.0) {
        return Err(Error::domain(format!(
            "validation ratio must lie in (0, 1), got {val_ratio}"
        )));
    }
    let split = split_train_test(trainset, 1.0 - val_ratio, seed)?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::domain(format!(
            "{} ratings are too few for a {val_ratio} validation split",
            trainset.len()
        )));
    }

    let run = |hyper: &Hyperparams| -> Result<Trial> {
        let val_rmse = match train(&split.train, variant, hyper) {
            Ok(model) => evaluate_rmse(&model, &split.test)?.rmse,
            Err(Error::Diverged { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        Ok(Trial {
            hyper: *hyper,
            val_rmse,
        })
    };

    let points = grid.points(seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    let trials: Vec<Trial> = pool.install(|| points.par_iter().map(run).collect::<Result<_>>())?;

    let mut best = 0;
    for (t, trial) in trials.iter().enumerate() {
        if trial.val_rmse < trials[best].val_rmse {
            best = t;
        }
    }
    Ok(SearchReport {
        best: trials[best].hyper,
        best_rmse: trials[best].val_rmse,
        trials,
    })
}
