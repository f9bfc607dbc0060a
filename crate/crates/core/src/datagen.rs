//! Synthetic CDN logs and rating datasets with known ground truth.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal, Zipf};

use crate::error::{Error, Result};
use crate::ingest::{LogRecord, Rating};
use crate::model::{FactorModel, Factors, Hyperparams};
use crate::seed::{mix_seed, rng_from_seed};

/// Zipf exponent of per-user activity.
pub const USER_ZIPF_S: f64 = 1.2;
/// Global mean of generated ratings before noise.
pub const TRUE_MEAN: f64 = 5.0;
/// Largest generated rating; ratings live on `0..=MAX_RATING`.
pub const MAX_RATING: f64 = 10.0;
/// Epoch second of the first generated request.
pub const START_TIME: f64 = 1_600_000_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Zipf exponent of item popularity.
    pub zipf_s: f64,
    /// Rank of the ground-truth factor model.
    pub k_true: usize,
    /// Standard deviation of Gaussian rating noise.
    pub noise_sigma: f64,
    /// Log records to emit, or distinct rated pairs to sample.
    pub n_events: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 1000,
            n_items: 100,
            zipf_s: 1.1,
            k_true: 2,
            noise_sigma: 0.0,
            n_events: 10_000,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users < 1 || self.n_items < 1 || self.k_true < 1 || self.n_events < 1 {
            return Err(Error::domain(
                "n_users, n_items, k_true and n_events must all be at least 1",
            ));
        }
        if !(self.zipf_s > 0.0 && self.zipf_s.is_finite()) {
            return Err(Error::domain(format!(
                "zipf_s must be positive, got {}",
                self.zipf_s
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::domain(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Zipf-distributed requests: item `ch{i}` / `vod{i}` with rank `i + 1`
/// under `zipf_s`, user `u{j}` with rank `j + 1` under [`USER_ZIPF_S`].
/// Timestamps increase strictly, with exponential gaps averaging 0.1 s.
pub fn generate_logs(config: &SynthConfig) -> Result<Vec<LogRecord>> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let items = Zipf::new(config.n_items as f64, config.zipf_s)
        .map_err(|e| Error::domain(e.to_string()))?;
    let users =
        Zipf::new(config.n_users as f64, USER_ZIPF_S).map_err(|e| Error::domain(e.to_string()))?;
    let gap = Exp::new(10.0).expect("positive rate");

    let mut t = START_TIME;
    let mut out = Vec::with_capacity(config.n_events);
    for _ in 0..config.n_events {
        let item = items.sample(&mut rng) as usize - 1;
        let user = users.sample(&mut rng) as usize - 1;
        // millisecond resolution keeps timestamps exact in text form
        t = ((t + 0.001 + gap.sample(&mut rng)) * 1000.0).round() / 1000.0;
        let mut rec = LogRecord::new(t, format!("u{user}"));
        rec.livechannel = Some(format!("ch{item}"));
        rec.contentpackage = Some(format!("vod{item}"));
        rec.contentlength = Some(rng.random_range(100_000..2_000_000));
        out.push(rec);
    }
    Ok(out)
}

fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (1..=n).map(|rank| (rank as f64).powf(-s)).collect()
}

/// Samples `min(n_events, n_users · n_items)` distinct (user, item) pairs
/// without replacement, weighted by the product of user and item Zipf
/// weights, and rates them with a rank-`k_true` ground truth:
/// `r = clamp(round(TRUE_MEAN + w*_u · h*_i + noise), 0, MAX_RATING)`.
///
/// The returned model is the noise-free generator itself (biased variant
/// with zero biases and `μ = TRUE_MEAN`).
pub fn generate_rated_dataset(config: &SynthConfig) -> Result<(Vec<Rating>, FactorModel)> {
    config.validate()?;
    let (nu, ni, k) = (config.n_users, config.n_items, config.k_true);
    let mut rng = rng_from_seed(mix_seed(config.seed, 1));
    let w = Factors::from_fn(nu, k, |_, _| rng.sample(StandardNormal));
    let h = Factors::from_fn(ni, k, |_, _| rng.sample(StandardNormal));
    let hyper = Hyperparams::new(k, 1.0, 0.0, 1, config.seed);
    let mut truth = FactorModel::biased(w, h, TRUE_MEAN, vec![0.0; nu], vec![0.0; ni], hyper)?;
    truth.rating_bounds = (0.0, MAX_RATING);

    // Efraimidis-Spirakis: keep the n largest ln(U)/weight keys
    let uw = zipf_weights(nu, USER_ZIPF_S);
    let iw = zipf_weights(ni, config.zipf_s);
    let total = nu * ni;
    let n = config.n_events.min(total);
    let mut keyed: Vec<(f64, usize)> = (0..total)
        .map(|p| {
            let weight = uw[p / ni] * iw[p % ni];
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / weight, p)
        })
        .collect();
    if n < total {
        keyed.select_nth_unstable_by(n, |a, b| b.0.total_cmp(&a.0));
        keyed.truncate(n);
    }
    let mut pairs: Vec<usize> = keyed.into_iter().map(|(_, p)| p).collect();
    pairs.sort_unstable();

    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    let ratings = pairs
        .into_iter()
        .map(|p| {
            let (u, i) = (p / ni, p % ni);
            let clean = truth.predict(u, i).expect("indices in range");
            let value = (clean + noise.sample(&mut rng))
                .round()
                .clamp(0.0, MAX_RATING);
            Rating::new(u as u32, i as u32, value)
        })
        .collect();
    Ok((ratings, truth))
}
