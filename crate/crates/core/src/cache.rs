//! Fixed-capacity cache replay under LRU, LFU and model-score eviction.
//!
//! Capacity counts items, not bytes. All policies break ties on the least
//! recently used entry, so every replay is deterministic.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::ingest::{ContentMode, IdMap, LogRecord};
use crate::model::{dot, FactorModel, Variant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequestEvent {
    pub timestamp: f64,
    pub user: u32,
    pub item: u32,
}

/// Popularity proxy for item `i`: `μ + b_i` for a biased model, otherwise
/// the item factors dotted with the mean user-factor vector.
pub fn item_score(model: &FactorModel, i: usize) -> Result<f64> {
    model.check_item(i)?;
    Ok(match (model.variant(), &model.biases) {
        (Variant::Biased, Some(b)) => model.mean + b.item[i],
        _ => dot(&mean_user_vector(model), model.item_factors.row(i)),
    })
}

fn mean_user_vector(model: &FactorModel) -> Vec<f64> {
    let w = &model.user_factors;
    let mut mean = vec![0.0; w.k()];
    for u in 0..w.rows() {
        for (m, x) in mean.iter_mut().zip(w.row(u)) {
            *m += x;
        }
    }
    let n = w.rows().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Frozen per-item scores; items without a score rank below everything.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemScores(Vec<f64>);

impl ItemScores {
    pub fn new(scores: Vec<f64>) -> Self {
        ItemScores(scores)
    }

    pub fn from_model(model: &FactorModel) -> Self {
        let scores = match &model.biases {
            Some(b) => b.item.iter().map(|bi| model.mean + bi).collect(),
            None => {
                let mean = mean_user_vector(model);
                (0..model.num_items())
                    .map(|i| dot(&mean, model.item_factors.row(i)))
                    .collect()
            }
        };
        ItemScores(scores)
    }

    pub fn get(&self, item: u32) -> f64 {
        self.0
            .get(item as usize)
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ItemScores(self.0.iter().map(|&s| f(s)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Lru,
    /// Evicts the entry with the fewest hits since admission.
    Lfu,
    /// Evicts the lowest-scored entry and only admits an item that outscores
    /// the entry it would displace.
    MfScore(ItemScores),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Lru => "lru",
            Policy::Lfu => "lfu",
            Policy::MfScore(_) => "mf",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheSimResult {
    pub policy: String,
    pub capacity: usize,
    pub hits: u64,
    pub misses: u64,
    /// `hits / (hits + misses)`, 0 for an empty stream.
    pub chr: f64,
}

impl CacheSimResult {
    pub const CSV_HEADER: &'static str = "policy,capacity,hits,misses,chr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.policy, self.capacity, self.hits, self.misses, self.chr
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Priority(f64);

impl PartialEq for Priority {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Priority {}

impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Eviction order is ascending `(priority, last access)`.
struct Cache<'p> {
    policy: &'p Policy,
    capacity: usize,
    entries: HashMap<u32, (Priority, u64)>,
    order: BTreeSet<(Priority, u64, u32)>,
}

impl<'p> Cache<'p> {
    fn new(policy: &'p Policy, capacity: usize) -> Self {
        Cache {
            policy,
            capacity,
            entries: HashMap::with_capacity(capacity),
            order: BTreeSet::new(),
        }
    }

    fn admit_priority(&self, item: u32) -> Priority {
        match self.policy {
            Policy::Lru => Priority(0.0),
            Policy::Lfu => Priority(1.0),
            Policy::MfScore(s) => Priority(s.get(item)),
        }
    }

    fn insert(&mut self, item: u32, prio: Priority, tick: u64) {
        self.entries.insert(item, (prio, tick));
        self.order.insert((prio, tick, item));
    }

    /// Returns whether the access hit.
    fn access(&mut self, item: u32, tick: u64) -> bool {
        if let Some(&(prio, last)) = self.entries.get(&item) {
            self.order.remove(&(prio, last, item));
            let prio = match self.policy {
                Policy::Lfu => Priority(prio.0 + 1.0),
                _ => prio,
            };
            self.insert(item, prio, tick);
            return true;
        }
        let prio = self.admit_priority(item);
        if self.entries.len() >= self.capacity {
            let &(victim_prio, victim_tick, victim) =
                self.order.first().expect("full cache is non-empty");
            if matches!(self.policy, Policy::MfScore(_)) && prio <= victim_prio {
                return false;
            }
            self.order.remove(&(victim_prio, victim_tick, victim));
            self.entries.remove(&victim);
        }
        self.insert(item, prio, tick);
        false
    }
}

fn check_events(events: &[RequestEvent], capacity: usize) -> Result<()> {
    if capacity < 1 {
        return Err(Error::domain("cache capacity must be at least 1"));
    }
    if let Some(pos) = events.windows(2).position(|w| {
        !matches!(
            w[0].timestamp.partial_cmp(&w[1].timestamp),
            Some(Ordering::Less | Ordering::Equal)
        )
    }) {
        return Err(Error::domain(format!(
            "events are not sorted by timestamp at position {}",
            pos + 1
        )));
    }
    Ok(())
}

/// Replays `events` and returns the hit (`true`) / miss sequence.
pub fn simulate_trace(
    events: &[RequestEvent],
    policy: &Policy,
    capacity: usize,
) -> Result<Vec<bool>> {
    check_events(events, capacity)?;
    let mut cache = Cache::new(policy, capacity);
    Ok(events
        .iter()
        .enumerate()
        .map(|(tick, ev)| cache.access(ev.item, tick as u64))
        .collect())
}

pub fn run_simulation(
    events: &[RequestEvent],
    policy: &Policy,
    capacity: usize,
) -> Result<CacheSimResult> {
    let trace = simulate_trace(events, policy, capacity)?;
    let hits = trace.iter().filter(|h| **h).count() as u64;
    let misses = trace.len() as u64 - hits;
    let chr = if trace.is_empty() {
        0.0
    } else {
        hits as f64 / trace.len() as f64
    };
    Ok(CacheSimResult {
        policy: policy.name().to_string(),
        capacity,
        hits,
        misses,
        chr,
    })
}

/// Request events for records whose user and item appear in the maps,
/// stably sorted by timestamp.
pub fn events_from_records(
    records: &[LogRecord],
    mode: ContentMode,
    users: &IdMap,
    items: &IdMap,
) -> Vec<RequestEvent> {
    let mut events: Vec<RequestEvent> = records
        .iter()
        .filter_map(|r| {
            let item = items.index_of(r.item(mode)?)?;
            let user = users.index_of(&r.uid)?;
            Some(RequestEvent {
                timestamp: r.timestamp,
                user,
                item,
            })
        })
        .collect();
    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    events
}

/// Headerless `timestamp,userId,itemId` rows.
pub fn write_events<W: Write>(w: W, events: &[RequestEvent]) -> Result<()> {
    let mut w = io::BufWriter::new(w);
    for e in events {
        writeln!(w, "{},{},{}", e.timestamp, e.user, e.item)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(r: R) -> Result<Vec<RequestEvent>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(Error::parse(
                line,
                format!("expected 3 fields, found {}", rec.len()),
            ));
        }
        let timestamp: f64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("bad timestamp {:?}", &rec[0])))?;
        let id = |i: usize| {
            rec[i]
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::parse(line, format!("bad index {:?}", &rec[i])))
        };
        out.push(RequestEvent {
            timestamp,
            user: id(1)?,
            item: id(2)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Factors, Hyperparams};
    use proptest::prelude::*;

    fn stream(items: &[u32]) -> Vec<RequestEvent> {
        items
            .iter()
            .enumerate()
            .map(|(t, &item)| RequestEvent {
                timestamp: t as f64,
                user: 0,
                item,
            })
            .collect()
    }

    const A: u32 = 0;
    const B: u32 = 1;
    const C: u32 = 2;

    #[test]
    fn large_cache_only_takes_compulsory_misses() {
        let ev = stream(&[A, B, A, C, B, A, C, C]);
        for policy in [
            Policy::Lru,
            Policy::Lfu,
            Policy::MfScore(ItemScores::new(vec![1.0, 2.0, 3.0])),
        ] {
            let r = run_simulation(&ev, &policy, 3).unwrap();
            assert_eq!(r.misses, 3);
            assert_eq!(r.chr, 1.0 - 3.0 / 8.0);
        }
    }

    #[test]
    fn lru_thrashes_at_capacity_one() {
        let r = run_simulation(&stream(&[A, B, A, B]), &Policy::Lru, 1).unwrap();
        assert_eq!((r.hits, r.misses, r.chr), (0, 4, 0.0));
    }

    #[test]
    fn lfu_hand_trace() {
        let trace = simulate_trace(&stream(&[A, A, B, C, A]), &Policy::Lfu, 2).unwrap();
        assert_eq!(trace, vec![false, true, false, false, true]);
        let r = run_simulation(&stream(&[A, A, B, C, A]), &Policy::Lfu, 2).unwrap();
        assert_eq!(r.chr, 2.0 / 5.0);
    }

    #[test]
    fn mf_admission_rejects_weaker_items() {
        // A scores highest, so once the single slot holds A nothing displaces it
        let scores = ItemScores::new(vec![5.0, 1.0, 3.0]);
        let trace = simulate_trace(&stream(&[B, A, B, C, A]), &Policy::MfScore(scores), 1).unwrap();
        assert_eq!(trace, vec![false, false, false, false, true]);
    }

    #[test]
    fn unknown_items_never_displace_known_ones() {
        let scores = ItemScores::new(vec![0.0]);
        let trace = simulate_trace(&stream(&[A, 9, A, 9]), &Policy::MfScore(scores), 1).unwrap();
        assert_eq!(trace, vec![false, false, true, false]);
        // with spare room unknown items are still cached
        let trace = simulate_trace(
            &stream(&[9, 9]),
            &Policy::MfScore(ItemScores::new(vec![])),
            1,
        )
        .unwrap();
        assert_eq!(trace, vec![false, true]);
    }

    #[test]
    fn rejects_unsorted_events_and_zero_capacity() {
        let mut ev = stream(&[A, B, C]);
        ev[2].timestamp = 0.5;
        assert!(run_simulation(&ev, &Policy::Lru, 2).is_err());
        assert!(run_simulation(&stream(&[A]), &Policy::Lru, 0).is_err());
    }

    #[test]
    fn item_score_variants() {
        let hp = Hyperparams::new(2, 0.1, 0.0, 1, 0);
        let w = Factors::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let h = Factors::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let m = FactorModel::biased(w, h, 3.0, vec![0.2], vec![-1.0, 0.5], hp).unwrap();
        assert_eq!(item_score(&m, 1).unwrap(), 3.5);
        assert!(item_score(&m, 2).is_err());

        let w = Factors::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let h = Factors::from_rows(&[vec![2.0, 9.0]]).unwrap();
        let m = FactorModel::plain(w, h, hp).unwrap();
        assert_eq!(item_score(&m, 0).unwrap(), 2.0);
        assert_eq!(ItemScores::from_model(&m).as_slice(), &[2.0]);
    }

    #[test]
    fn events_file_round_trip() {
        let ev = vec![
            RequestEvent {
                timestamp: 1.25,
                user: 3,
                item: 4,
            },
            RequestEvent {
                timestamp: 1600000000.5,
                user: 0,
                item: 1,
            },
        ];
        let mut buf = Vec::new();
        write_events(&mut buf, &ev).unwrap();
        assert_eq!(
            String::from_utf8_lossy(&buf),
            "1.25,3,4\n1600000000.5,0,1\n"
        );
        assert_eq!(read_events(&buf[..]).unwrap(), ev);
        assert!(matches!(
            read_events(&b"1,2\n"[..]),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn events_follow_id_maps_and_time() {
        let mut users = IdMap::new();
        let mut items = IdMap::new();
        users.get_or_insert("u");
        items.get_or_insert("x");
        items.get_or_insert("y");
        let mut r1 = LogRecord::new(5.0, "u");
        r1.livechannel = Some("y".into());
        let mut r2 = LogRecord::new(2.0, "u");
        r2.livechannel = Some("x".into());
        let mut r3 = LogRecord::new(1.0, "stranger");
        r3.livechannel = Some("x".into());
        let ev = events_from_records(&[r1, r2, r3], ContentMode::LiveTv, &users, &items);
        assert_eq!(ev.iter().map(|e| e.item).collect::<Vec<_>>(), vec![0, 1]);
    }

    fn arb_stream() -> impl Strategy<Value = Vec<RequestEvent>> {
        prop::collection::vec(0u32..12, 0..200).prop_map(|v| stream(&v))
    }

    proptest! {
        #[test]
        fn counts_add_up_and_replays_repeat(ev in arb_stream(), cap in 1usize..8) {
            let scores = ItemScores::new((0..12).map(|i| ((i * 7) % 5) as f64).collect());
            for policy in [Policy::Lru, Policy::Lfu, Policy::MfScore(scores.clone())] {
                let a = run_simulation(&ev, &policy, cap).unwrap();
                prop_assert_eq!(a.hits + a.misses, ev.len() as u64);
                prop_assert!((0.0..=1.0).contains(&a.chr));
                prop_assert_eq!(a, run_simulation(&ev, &policy, cap).unwrap());
            }
        }

        #[test]
        fn single_item_stream(n in 1usize..100, cap in 1usize..4) {
            let ev = stream(&vec![7; n]);
            for policy in [Policy::Lru, Policy::Lfu, Policy::MfScore(ItemScores::new(vec![]))] {
                let r = run_simulation(&ev, &policy, cap).unwrap();
                prop_assert_eq!(r.chr, (n - 1) as f64 / n as f64);
            }
        }

        #[test]
        fn occupancy_never_exceeds_capacity(ev in arb_stream(), cap in 1usize..6) {
            let policy = Policy::Lfu;
            let mut cache = Cache::new(&policy, cap);
            for (t, e) in ev.iter().enumerate() {
                cache.access(e.item, t as u64);
                prop_assert!(cache.entries.len() <= cap);
                prop_assert_eq!(cache.entries.len(), cache.order.len());
            }
        }

        #[test]
        fn mf_policy_depends_only_on_score_ranking(ev in arb_stream(), cap in 1usize..6, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::rng_from_seed(seed);
            let raw: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
            let scores = ItemScores::new(raw);
            let a = simulate_trace(&ev, &Policy::MfScore(scores.clone()), cap).unwrap();
            let b = simulate_trace(&ev, &Policy::MfScore(scores.map(|s| 2.0 * s + 7.0)), cap).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
