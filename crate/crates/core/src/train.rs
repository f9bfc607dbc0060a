//! Seeded train/test splitting, SGD training and RMSE evaluation.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ingest::Rating;
use crate::kv::KvBlock;
use crate::model::{dot, Biases, FactorModel, Factors, Hyperparams, Variant};
use crate::seed::rng_from_seed;

/// Standard deviation of the Gaussian used to initialize latent factors.
pub const INIT_STDDEV: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset<T = Rating> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub ratio: f64,
    pub seed: u64,
}

/// Number of rows assigned to training for `n` rows at `ratio`.
///
/// The held-out share is rounded up, i.e. `train = ⌊ratio · n⌋`; the small
/// slack absorbs representation error in products such as `0.7 · 10`.
pub fn train_size(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Shuffles row indices with the seeded generator and puts the first
/// [`train_size`] of them in the training set.
pub fn split_train_test<T: Clone>(data: &[T], ratio: f64, seed: u64) -> Result<SplitDataset<T>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::domain(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if data.is_empty() {
        return Err(Error::domain("cannot split an empty dataset"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let cut = train_size(data.len(), ratio);
    Ok(SplitDataset {
        train: order[..cut].iter().map(|&i| data[i].clone()).collect(),
        test: order[cut..].iter().map(|&i| data[i].clone()).collect(),
        ratio,
        seed,
    })
}

/// One SGD update on a single observation, returning the residual
/// `r − r̂` computed before the update.
///
/// Every right-hand side uses pre-update values:
/// `w ← w + α(e·h − β·w)`, `h ← h + α(e·w − β·h)` and, for biased models,
/// `b ← b + α(e − β·b)`. The global mean is never updated.
pub fn sgd_step(
    model: &mut FactorModel,
    user: usize,
    item: usize,
    rating: f64,
    alpha: f64,
    beta: f64,
) -> f64 {
    let FactorModel {
        user_factors,
        item_factors,
        biases,
        mean,
        ..
    } = model;
    let w = user_factors.row_mut(user);
    let h = item_factors.row_mut(item);
    let mut pred = dot(w, h);
    if let Some(b) = biases.as_ref() {
        pred += *mean + b.user[user] + b.item[item];
    }
    let e = rating - pred;
    for (wu, hi) in w.iter_mut().zip(h.iter_mut()) {
        let (w0, h0) = (*wu, *hi);
        *wu = w0 + alpha * (e * h0 - beta * w0);
        *hi = h0 + alpha * (e * w0 - beta * h0);
    }
    if let Some(Biases { user: bu, item: bi }) = biases.as_mut() {
        bu[user] += alpha * (e - beta * bu[user]);
        bi[item] += alpha * (e - beta * bi[item]);
    }
    e
}

/// Fits a factor model by SGD for exactly `hyper.iterations` epochs.
///
/// Factors start as seeded `N(0, 0.1²)` draws, biases at zero and the global
/// mean at the training mean. Each epoch visits the samples in a fresh
/// seeded permutation. Rows of users or items with no training rating are
/// reset to zero and marked unseen.
pub fn train(trainset: &[Rating], variant: Variant, hyper: &Hyperparams) -> Result<FactorModel> {
    hyper.validate()?;
    if trainset.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    let n_users = trainset.iter().map(|r| r.user as usize).max().unwrap_or(0) + 1;
    let n_items = trainset.iter().map(|r| r.item as usize).max().unwrap_or(0) + 1;
    let mut user_seen = vec![false; n_users];
    let mut item_seen = vec![false; n_items];
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for r in trainset {
        if !r.value.is_finite() {
            return Err(Error::domain(format!(
                "non-finite rating for ({}, {})",
                r.user, r.item
            )));
        }
        user_seen[r.user as usize] = true;
        item_seen[r.item as usize] = true;
        lo = lo.min(r.value);
        hi = hi.max(r.value);
        sum += r.value;
    }
    let mean = sum / trainset.len() as f64;

    let mut rng = rng_from_seed(hyper.seed);
    let normal = Normal::new(0.0, INIT_STDDEV).expect("valid stddev");
    let w = Factors::from_fn(n_users, hyper.k, |_, _| normal.sample(&mut rng));
    let h = Factors::from_fn(n_items, hyper.k, |_, _| normal.sample(&mut rng));
    let mut model = match variant {
        Variant::Plain => {
            let mut m = FactorModel::plain(w, h, *hyper)?;
            m.mean = mean;
            m
        }
        Variant::Biased => {
            FactorModel::biased(w, h, mean, vec![0.0; n_users], vec![0.0; n_items], *hyper)?
        }
    };

    let mut order: Vec<usize> = (0..trainset.len()).collect();
    for epoch in 1..=hyper.iterations {
        order.shuffle(&mut rng);
        for &s in &order {
            let r = &trainset[s];
            sgd_step(
                &mut model,
                r.user as usize,
                r.item as usize,
                r.value,
                hyper.alpha,
                hyper.beta,
            );
        }
        if !model.is_finite() {
            return Err(Error::Diverged { epoch });
        }
    }

    for (u, _) in user_seen.iter().enumerate().filter(|(_, s)| !**s) {
        model.user_factors.row_mut(u).fill(0.0);
    }
    for (i, _) in item_seen.iter().enumerate().filter(|(_, s)| !**s) {
        model.item_factors.row_mut(i).fill(0.0);
    }
    model.user_seen = user_seen;
    model.item_seen = item_seen;
    model.rating_bounds = (lo, hi);
    model.epochs_run = hyper.iterations;
    model.final_train_loss = model.regularized_loss(trainset)?;
    Ok(model)
}

/// Evaluation-time prediction: clamped to the model's rating bounds, with a
/// fallback for users or items the model never saw. Returns the prediction
/// and whether the pair was cold.
pub fn predict_for_eval(model: &FactorModel, user: usize, item: usize) -> (f64, bool) {
    let user_known = model.user_seen.get(user).copied().unwrap_or(false);
    let item_known = model.item_seen.get(item).copied().unwrap_or(false);
    let (pred, cold) = if user_known && item_known {
        (model.predict(user, item).expect("indices checked"), false)
    } else {
        let mut p = model.mean;
        if let Some(b) = &model.biases {
            if user_known {
                p += b.user[user];
            }
            if item_known {
                p += b.item[item];
            }
        }
        (p, true)
    };
    let (lo, hi) = model.rating_bounds;
    (pred.max(lo).min(hi), cold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse: f64,
    pub n_test: usize,
    /// Test pairs whose user or item had no training rating.
    pub n_coldstart: usize,
    pub epochs_run: usize,
    pub final_train_loss: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "rmse,n_test,n_coldstart,epochs_run,final_train_loss";

    pub fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.set("rmse", self.rmse)
            .set("n_test", self.n_test)
            .set("n_coldstart", self.n_coldstart)
            .set("epochs_run", self.epochs_run)
            .set("final_train_loss", self.final_train_loss);
        kv
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.rmse, self.n_test, self.n_coldstart, self.epochs_run, self.final_train_loss
        )
    }
}

/// Root mean squared error of clamped predictions over `testset`.
pub fn evaluate_rmse(model: &FactorModel, testset: &[Rating]) -> Result<EvalReport> {
    if testset.is_empty() {
        return Err(Error::domain("cannot evaluate on an empty test set"));
    }
    let mut sse = 0.0;
    let mut cold = 0;
    for r in testset {
        let (pred, is_cold) = predict_for_eval(model, r.user as usize, r.item as usize);
        cold += usize::from(is_cold);
        let e = r.value - pred;
        sse += e * e;
    }
    Ok(EvalReport {
        rmse: (sse / testset.len() as f64).sqrt(),
        n_test: testset.len(),
        n_coldstart: cold,
        epochs_run: model.epochs_run,
        final_train_loss: model.final_train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn hyper(k: usize, alpha: f64, beta: f64, iterations: usize) -> Hyperparams {
        Hyperparams::new(k, alpha, beta, iterations, 42)
    }

    #[test]
    fn split_counts() {
        let data: Vec<u32> = (0..10).collect();
        let s = split_train_test(&data, 0.7, 42).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
        let mut all: Vec<u32> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, data);
    }

    #[test]
    fn split_sizes_reproduce_published_tables() {
        assert_eq!(train_size(426_356, 0.7), 298_449);
        assert_eq!(426_356 - train_size(426_356, 0.7), 127_907);
        assert_eq!(train_size(206_334, 0.7), 144_433);
        assert_eq!(206_334 - train_size(206_334, 0.7), 61_901);
    }

    #[test]
    fn split_rejects_bad_input() {
        let data = [1, 2, 3];
        for ratio in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(split_train_test(&data, ratio, 1).is_err());
        }
        let empty: [u8; 0] = [];
        assert!(split_train_test(&empty, 0.7, 1).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let data: Vec<u32> = (0..100).collect();
        assert_eq!(
            split_train_test(&data, 0.7, 42).unwrap(),
            split_train_test(&data, 0.7, 42).unwrap()
        );
        assert_ne!(
            split_train_test(&data, 0.7, 42).unwrap().train,
            split_train_test(&data, 0.7, 43).unwrap().train
        );
    }

    #[test]
    fn single_point_is_interpolated() {
        let m = train(
            &[Rating::new(0, 0, 2.0)],
            Variant::Plain,
            &hyper(1, 0.1, 0.0, 500),
        )
        .unwrap();
        assert!((m.predict_plain(0, 0).unwrap() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn rank_one_data_is_fitted() {
        let a = [1.0, 2.0, 0.5, 1.5, 3.0, 2.5];
        let b = [2.0, 1.0, 0.5, 3.0];
        let data: Vec<Rating> = (0..a.len())
            .flat_map(|u| (0..b.len()).map(move |i| (u, i)))
            .map(|(u, i)| Rating::new(u as u32, i as u32, a[u] * b[i]))
            .collect();
        let m = train(&data, Variant::Plain, &hyper(1, 0.02, 0.0, 2000)).unwrap();
        let rep = evaluate_rmse(&m, &data).unwrap();
        assert!(rep.rmse < 0.05, "rmse {}", rep.rmse);
    }

    #[test]
    fn published_hyperparameters_run_to_completion() {
        let mut rng = rng_from_seed(7);
        let data: Vec<Rating> = (0..400)
            .map(|_| {
                Rating::new(
                    rng.random_range(0..120),
                    rng.random_range(0..12),
                    rng.random_range(0..11) as f64,
                )
            })
            .collect();
        match train(&data, Variant::Plain, &hyper(46, 0.3, 0.02, 100)) {
            Ok(m) => {
                assert_eq!(m.epochs_run, 100);
                assert!(m.is_finite());
            }
            Err(Error::Diverged { epoch }) => assert!(epoch >= 1),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn divergence_names_the_epoch() {
        let data: Vec<Rating> = (0..20).map(|i| Rating::new(i % 4, i % 5, 10.0)).collect();
        let err = train(&data, Variant::Plain, &hyper(8, 5.0, 0.0, 50)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn training_input_validation() {
        assert!(train(&[], Variant::Plain, &hyper(1, 0.1, 0.0, 1)).is_err());
        assert!(train(
            &[Rating::new(0, 0, 1.0)],
            Variant::Plain,
            &hyper(0, 0.1, 0.0, 1)
        )
        .is_err());
    }

    #[test]
    fn model_records_bounds_and_unseen_rows() {
        let data = [Rating::new(0, 0, 2.0), Rating::new(2, 1, 7.0)];
        let m = train(&data, Variant::Biased, &hyper(2, 0.01, 0.0, 3)).unwrap();
        assert_eq!(m.rating_bounds, (2.0, 7.0));
        assert_eq!(m.user_seen, vec![true, false, true]);
        assert_eq!(m.user_factors.row(1), &[0.0, 0.0]);
        assert_eq!(m.mean, 4.5);
        assert_eq!(m.epochs_run, 3);
    }

    #[test]
    fn shrinkage_without_error() {
        let data = [Rating::new(0, 0, 2.0), Rating::new(1, 1, 3.0)];
        let mut m = train(&data, Variant::Biased, &hyper(3, 0.01, 0.0, 5)).unwrap();
        let before = m.clone();
        let (alpha, beta) = (0.05, 0.2);
        let r = m.predict(1, 0).unwrap();
        let e = sgd_step(&mut m, 1, 0, r, alpha, beta);
        assert_eq!(e, 0.0);
        let f = 1.0 - alpha * beta;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-15 * b.abs().max(1e-300);
        for c in 0..3 {
            assert!(close(
                m.user_factors.row(1)[c],
                before.user_factors.row(1)[c] * f
            ));
            assert!(close(
                m.item_factors.row(0)[c],
                before.item_factors.row(0)[c] * f
            ));
        }
        let (b0, b1) = (before.biases.unwrap(), m.biases.unwrap());
        assert!(close(b1.user[1], b0.user[1] * f));
        assert!(close(b1.item[0], b0.item[0] * f));
        // untouched rows stay put
        assert_eq!(m.user_factors.row(0), before.user_factors.row(0));
    }

    #[test]
    fn rmse_examples() {
        let w = Factors::from_rows(&[vec![1.0]]).unwrap();
        let h = Factors::from_rows(&[vec![2.0], vec![3.0]]).unwrap();
        let m = FactorModel::plain(w, h, hyper(1, 0.1, 0.0, 1)).unwrap();
        let perfect = [Rating::new(0, 0, 2.0), Rating::new(0, 1, 3.0)];
        assert_eq!(evaluate_rmse(&m, &perfect).unwrap().rmse, 0.0);

        let pm1 = [Rating::new(0, 0, 3.0), Rating::new(0, 1, 2.0)];
        assert_eq!(evaluate_rmse(&m, &pm1).unwrap().rmse, 1.0);

        let r34 = [Rating::new(0, 0, 5.0), Rating::new(0, 1, 7.0)];
        let rep = evaluate_rmse(&m, &r34).unwrap();
        assert!((rep.rmse - (12.5f64).sqrt()).abs() < 1e-12);
        assert!((rep.rmse - 3.5355).abs() < 1e-4);
        assert_eq!(rep.n_test, 2);
        assert_eq!(rep.n_coldstart, 0);

        assert!(evaluate_rmse(&m, &[]).is_err());
    }

    #[test]
    fn cold_pairs_fall_back_to_mean_and_known_biases() {
        let w = Factors::from_rows(&[vec![1.0]]).unwrap();
        let h = Factors::from_rows(&[vec![1.0]]).unwrap();
        let mut m =
            FactorModel::biased(w, h, 4.0, vec![0.5], vec![-1.0], hyper(1, 0.1, 0.0, 1)).unwrap();
        m.rating_bounds = (0.0, 10.0);
        assert_eq!(predict_for_eval(&m, 0, 7), (4.5, true));
        assert_eq!(predict_for_eval(&m, 9, 0), (3.0, true));
        assert_eq!(predict_for_eval(&m, 9, 9), (4.0, true));
        assert_eq!(predict_for_eval(&m, 0, 0), (4.5, false));
        let rep = evaluate_rmse(&m, &[Rating::new(0, 0, 4.5), Rating::new(3, 3, 4.0)]).unwrap();
        assert_eq!(rep.n_coldstart, 1);
        assert_eq!(rep.rmse, 0.0);
    }

    #[test]
    fn report_rendering() {
        let rep = EvalReport {
            rmse: 0.5,
            n_test: 4,
            n_coldstart: 1,
            epochs_run: 100,
            final_train_loss: 2.25,
        };
        assert_eq!(rep.csv_row(), "0.5,4,1,100,2.25");
        assert_eq!(rep.to_kv().get("n_coldstart"), Some("1"));
    }

    fn random_ratings(seed: u64, users: u32, items: u32, n: usize) -> Vec<Rating> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                Rating::new(
                    rng.random_range(0..users),
                    rng.random_range(0..items),
                    rng.random_range(0..11) as f64,
                )
            })
            .collect()
    }

    #[test]
    fn loss_descends_for_small_steps() {
        let data = random_ratings(5, 20, 20, 200);
        let mut prev = f64::INFINITY;
        for epochs in 1..=10 {
            let m = train(&data, Variant::Plain, &hyper(3, 0.005, 0.0, epochs)).unwrap();
            let loss = m.regularized_loss(&data).unwrap();
            assert!(loss <= prev + 1e-9, "epoch {epochs}: {loss} > {prev}");
            prev = loss;
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = random_ratings(11, 30, 15, 300);
        let a = train(&data, Variant::Biased, &hyper(4, 0.01, 0.05, 20)).unwrap();
        let b = train(&data, Variant::Biased, &hyper(4, 0.01, 0.05, 20)).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }

    proptest! {
        #[test]
        fn split_partitions_the_input(n in 1usize..300, ratio in 0.01f64..0.99, seed in any::<u64>()) {
            let data: Vec<usize> = (0..n).collect();
            let s = split_train_test(&data, ratio, seed).unwrap();
            prop_assert_eq!(s.train.len(), train_size(n, ratio));
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, data);
        }

        #[test]
        fn clamped_predictions_stay_in_bounds(seed in any::<u64>(), u in 0usize..40, i in 0usize..40) {
            let data = random_ratings(seed, 20, 20, 60);
            let m = train(&data, Variant::Biased, &hyper(2, 0.05, 0.01, 5)).unwrap();
            let (p, _) = predict_for_eval(&m, u, i);
            prop_assert!(p >= m.rating_bounds.0 && p <= m.rating_bounds.1);
        }
    }
}
