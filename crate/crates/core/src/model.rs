//! Factor models: plain `r̂ = w_u · h_i` and biased `r̂ = μ + b_u + b_i + w_u · h_i`.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::Rating;
use crate::kv::KvBlock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Plain,
    Biased,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Plain => "plain",
            Variant::Biased => "biased",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" => Ok(Variant::Plain),
            "biased" => Ok(Variant::Biased),
            other => Err(Error::domain(format!(
                "unknown model variant {other:?} (expected plain or biased)"
            ))),
        }
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    /// Number of latent factors.
    pub k: usize,
    /// SGD learning rate.
    pub alpha: f64,
    /// L2 regularization weight.
    pub beta: f64,
    /// Number of full passes over the training set.
    pub iterations: usize,
    pub seed: u64,
}

impl Hyperparams {
    pub fn new(k: usize, alpha: f64, beta: f64, iterations: usize, seed: u64) -> Self {
        Hyperparams {
            k,
            alpha,
            beta,
            iterations,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::domain("k must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::domain(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::domain(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        if self.iterations < 1 {
            return Err(Error::domain("iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Row-major dense matrix with one row of `k` factors per user or item.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    rows: usize,
    k: usize,
    data: Vec<f64>,
}

impl Factors {
    pub fn zeros(rows: usize, k: usize) -> Self {
        Factors {
            rows,
            k,
            data: vec![0.0; rows * k],
        }
    }

    pub fn from_fn(rows: usize, k: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * k);
        for r in 0..rows {
            for c in 0..k {
                data.push(f(r, c));
            }
        }
        Factors { rows, k, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::domain("factor rows have unequal lengths"));
        }
        Ok(Factors {
            rows: rows.len(),
            k,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.k..(r + 1) * self.k]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.k..(r + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        sum_sq(&self.data)
    }
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Dot product summed in ascending factor order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct Biases {
    pub user: Vec<f64>,
    pub item: Vec<f64>,
}

/// A trained (or hand-built) factor model.
///
/// `mean` is the global mean of the training ratings. The biased variant
/// adds it to every prediction; the plain variant only uses it as the
/// cold-start fallback during evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub user_factors: Factors,
    pub item_factors: Factors,
    pub mean: f64,
    pub biases: Option<Biases>,
    pub hyper: Hyperparams,
    /// (min, max) of the training ratings; evaluation clamps into it.
    pub rating_bounds: (f64, f64),
    /// Whether each user index had at least one training rating.
    pub user_seen: Vec<bool>,
    pub item_seen: Vec<bool>,
    pub epochs_run: usize,
    pub final_train_loss: f64,
}

impl FactorModel {
    /// Plain model over the given factors; every index counts as seen.
    pub fn plain(user_factors: Factors, item_factors: Factors, hyper: Hyperparams) -> Result<Self> {
        Self::build(user_factors, item_factors, 0.0, None, hyper)
    }

    pub fn biased(
        user_factors: Factors,
        item_factors: Factors,
        mean: f64,
        user_bias: Vec<f64>,
        item_bias: Vec<f64>,
        hyper: Hyperparams,
    ) -> Result<Self> {
        if user_bias.len() != user_factors.rows() || item_bias.len() != item_factors.rows() {
            return Err(Error::domain(
                "bias vector length does not match factor rows",
            ));
        }
        Self::build(
            user_factors,
            item_factors,
            mean,
            Some(Biases {
                user: user_bias,
                item: item_bias,
            }),
            hyper,
        )
    }

    fn build(
        user_factors: Factors,
        item_factors: Factors,
        mean: f64,
        biases: Option<Biases>,
        hyper: Hyperparams,
    ) -> Result<Self> {
        if user_factors.k() != hyper.k || item_factors.k() != hyper.k {
            return Err(Error::domain(format!(
                "factor width {}/{} does not match k={}",
                user_factors.k(),
                item_factors.k(),
                hyper.k
            )));
        }
        Ok(FactorModel {
            user_seen: vec![true; user_factors.rows()],
            item_seen: vec![true; item_factors.rows()],
            user_factors,
            item_factors,
            mean,
            biases,
            hyper,
            rating_bounds: (f64::NEG_INFINITY, f64::INFINITY),
            epochs_run: 0,
            final_train_loss: 0.0,
        })
    }

    pub fn variant(&self) -> Variant {
        if self.biases.is_some() {
            Variant::Biased
        } else {
            Variant::Plain
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_factors.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_factors.rows()
    }

    pub fn k(&self) -> usize {
        self.hyper.k
    }

    pub(crate) fn check_user(&self, u: usize) -> Result<()> {
        if u < self.num_users() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                kind: "user",
                index: u,
                size: self.num_users(),
            })
        }
    }

    pub(crate) fn check_item(&self, i: usize) -> Result<()> {
        if i < self.num_items() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                kind: "item",
                index: i,
                size: self.num_items(),
            })
        }
    }

    /// `Σ_k w_uk · h_ik`, with no bias terms and no clamping.
    pub fn predict_plain(&self, u: usize, i: usize) -> Result<f64> {
        self.check_user(u)?;
        self.check_item(i)?;
        Ok(dot(self.user_factors.row(u), self.item_factors.row(i)))
    }

    /// `μ + b_u + b_i + Σ_k w_uk · h_ik`. Fails on a plain model.
    pub fn predict_biased(&self, u: usize, i: usize) -> Result<f64> {
        let b = self
            .biases
            .as_ref()
            .ok_or_else(|| Error::domain("predict_biased called on a plain model"))?;
        let interaction = self.predict_plain(u, i)?;
        Ok(self.mean + b.user[u] + b.item[i] + interaction)
    }

    /// Variant-appropriate unclamped prediction.
    pub fn predict(&self, u: usize, i: usize) -> Result<f64> {
        match self.variant() {
            Variant::Plain => self.predict_plain(u, i),
            Variant::Biased => self.predict_biased(u, i),
        }
    }

    /// Sum of squared residuals over `ratings` plus `β` times the squared
    /// norms of all factors (and, for the biased variant, of both bias
    /// vectors).
    pub fn regularized_loss(&self, ratings: &[Rating]) -> Result<f64> {
        let mut sse = 0.0;
        for r in ratings {
            let e = r.value - self.predict(r.user as usize, r.item as usize)?;
            sse += e * e;
        }
        let mut penalty = self.user_factors.norm_sq() + self.item_factors.norm_sq();
        if let Some(b) = &self.biases {
            penalty += sum_sq(&b.user) + sum_sq(&b.item);
        }
        Ok(sse + self.hyper.beta * penalty)
    }

    pub fn is_finite(&self) -> bool {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        finite(self.user_factors.as_slice())
            && finite(self.item_factors.as_slice())
            && self
                .biases
                .as_ref()
                .is_none_or(|b| finite(&b.user) && finite(&b.item))
    }

    /// Serializes to the text model format: a `variant,U,I,K,mu` header, one
    /// line per user row and item row, the bias vectors for the biased
    /// variant, then a `key=value` trailer.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{},{},{},{},{}",
            self.variant(),
            self.num_users(),
            self.num_items(),
            self.k(),
            fmt_f64(self.mean)
        )?;
        for m in [&self.user_factors, &self.item_factors] {
            for r in 0..m.rows() {
                writeln!(w, "{}", join_f64(m.row(r)))?;
            }
        }
        if let Some(b) = &self.biases {
            writeln!(w, "{}", join_f64(&b.user))?;
            writeln!(w, "{}", join_f64(&b.item))?;
        }
        let unseen = |seen: &[bool]| {
            seen.iter()
                .enumerate()
                .filter(|(_, s)| !**s)
                .map(|(i, _)| i.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut kv = KvBlock::new();
        kv.set("rating_min", fmt_f64(self.rating_bounds.0))
            .set("rating_max", fmt_f64(self.rating_bounds.1))
            .set("k", self.hyper.k)
            .set("alpha", fmt_f64(self.hyper.alpha))
            .set("beta", fmt_f64(self.hyper.beta))
            .set("iterations", self.hyper.iterations)
            .set("seed", self.hyper.seed)
            .set("epochs_run", self.epochs_run)
            .set("final_train_loss", fmt_f64(self.final_train_loss))
            .set("unseen_users", unseen(&self.user_seen))
            .set("unseen_items", unseen(&self.item_seen));
        write!(w, "{kv}")?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("model text is ASCII")
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r)
            .lines()
            .enumerate()
            .map(|(i, l)| (i as u64 + 1, l));
        let mut next = |what: &str| -> Result<(u64, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::parse(0, format!("model file ended before {what}"))),
            }
        };

        let (n, header) = next("header")?;
        let parts: Vec<&str> = header.trim().split(',').collect();
        if parts.len() != 5 {
            return Err(Error::parse(n, "header must be variant,U,I,K,mu"));
        }
        let variant: Variant = parts[0]
            .parse()
            .map_err(|e: Error| Error::parse(n, e.to_string()))?;
        let dim = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(n, format!("bad dimension {s:?}")))
        };
        let (users, items, k) = (dim(parts[1])?, dim(parts[2])?, dim(parts[3])?);
        let mean = parse_f64(parts[4], n)?;

        let mut read_matrix = |rows: usize, what: &str| -> Result<Factors> {
            let mut out = Vec::with_capacity(rows);
            for _ in 0..rows {
                let (n, line) = next(what)?;
                out.push(parse_row(&line, k, n)?);
            }
            Ok(Factors {
                rows,
                k,
                data: out.concat(),
            })
        };
        let user_factors = read_matrix(users, "user factors")?;
        let item_factors = read_matrix(items, "item factors")?;
        let biases = match variant {
            Variant::Plain => None,
            Variant::Biased => {
                let (n, line) = next("user biases")?;
                let user = parse_row(&line, users, n)?;
                let (n, line) = next("item biases")?;
                let item = parse_row(&line, items, n)?;
                Some(Biases { user, item })
            }
        };

        let mut rest = String::new();
        for (_, line) in lines {
            rest.push_str(&line?);
            rest.push('\n');
        }
        let kv = KvBlock::parse(&rest)?;
        let get = |key: &str| {
            kv.get(key)
                .ok_or_else(|| Error::parse(0, format!("model trailer lacks {key}")))
        };
        let float = |key: &str| get(key).and_then(|v| parse_f64(v, 0));
        let int = |key: &str| {
            get(key).and_then(|v| {
                v.parse::<u64>()
                    .map_err(|_| Error::parse(0, format!("bad {key} {v:?}")))
            })
        };
        let seen = |key: &str, len: usize| -> Result<Vec<bool>> {
            let mut seen = vec![true; len];
            for tok in get(key)?.split_whitespace() {
                let idx: usize = tok
                    .parse()
                    .map_err(|_| Error::parse(0, format!("bad index {tok:?} in {key}")))?;
                *seen
                    .get_mut(idx)
                    .ok_or_else(|| Error::parse(0, format!("{key} index {idx} out of range")))? =
                    false;
            }
            Ok(seen)
        };

        let hyper = Hyperparams {
            k: int("k")? as usize,
            alpha: float("alpha")?,
            beta: float("beta")?,
            iterations: int("iterations")? as usize,
            seed: int("seed")?,
        };
        if hyper.k != k {
            return Err(Error::parse(0, "trailer k disagrees with header"));
        }
        Ok(FactorModel {
            user_factors,
            item_factors,
            mean,
            biases,
            hyper,
            rating_bounds: (float("rating_min")?, float("rating_max")?),
            user_seen: seen("unseen_users", users)?,
            item_seen: seen("unseen_items", items)?,
            epochs_run: int("epochs_run")? as usize,
            final_train_loss: float("final_train_loss")?,
        })
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

fn parse_f64(s: &str, line: u64) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("bad number {s:?}")))
}

fn parse_row(line: &str, expected: usize, n: u64) -> Result<Vec<f64>> {
    let row = line
        .split_whitespace()
        .map(|t| parse_f64(t, n))
        .collect::<Result<Vec<_>>>()?;
    if row.len() != expected {
        return Err(Error::parse(
            n,
            format!("expected {expected} values, found {}", row.len()),
        ));
    }
    Ok(row)
}
