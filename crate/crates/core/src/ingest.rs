//! Access-log parsing and grouping of requests into user/item interactions.
//!
//! Logs are delimiter-separated text with a header row naming the columns.
//! Only `timestamp` and `uid` are mandatory; `livechannel`, `contentpackage`,
//! `contentlength` and `hit` are typed when present, and every other column
//! is kept verbatim in [`LogRecord::extra`].

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Which log column identifies the item a request is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContentMode {
    /// Items are live TV channels (`livechannel`).
    LiveTv,
    /// Items are video-on-demand assets (`contentpackage`).
    Vod,
}

impl ContentMode {
    pub fn column(self) -> &'static str {
        match self {
            ContentMode::LiveTv => "livechannel",
            ContentMode::Vod => "contentpackage",
        }
    }
}

impl fmt::Display for ContentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContentMode::LiveTv => "livetv",
            ContentMode::Vod => "vod",
        })
    }
}

impl FromStr for ContentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "livetv" | "live" => Ok(ContentMode::LiveTv),
            "vod" => Ok(ContentMode::Vod),
            other => Err(Error::domain(format!(
                "unknown content mode {other:?} (expected livetv or vod)"
            ))),
        }
    }
}

/// One parsed access-log line.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    /// Seconds since the epoch.
    pub timestamp: f64,
    pub uid: String,
    pub livechannel: Option<String>,
    pub contentpackage: Option<String>,
    pub contentlength: Option<u64>,
    pub hit: Option<bool>,
    /// Columns without a typed field, by header name.
    pub extra: BTreeMap<String, String>,
}

impl LogRecord {
    pub fn new(timestamp: f64, uid: impl Into<String>) -> Self {
        LogRecord {
            timestamp,
            uid: uid.into(),
            livechannel: None,
            contentpackage: None,
            contentlength: None,
            hit: None,
            extra: BTreeMap::new(),
        }
    }

    /// The item identity under `mode`, if the record carries one.
    pub fn item(&self, mode: ContentMode) -> Option<&str> {
        match mode {
            ContentMode::LiveTv => self.livechannel.as_deref(),
            ContentMode::Vod => self.contentpackage.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Timestamp,
    Uid,
    LiveChannel,
    ContentPackage,
    ContentLength,
    Hit,
    Other,
}

impl Column {
    fn classify(name: &str) -> Self {
        match name {
            "timestamp" => Column::Timestamp,
            "uid" => Column::Uid,
            "livechannel" => Column::LiveChannel,
            "contentpackage" => Column::ContentPackage,
            "contentlength" => Column::ContentLength,
            "hit" => Column::Hit,
            _ => Column::Other,
        }
    }
}

/// Ordered column names of a log file plus its field delimiter.
#[derive(Debug, Clone)]
pub struct LogSchema {
    names: Vec<String>,
    columns: Vec<Column>,
    delimiter: u8,
}

impl LogSchema {
    pub fn new<S: AsRef<str>>(names: &[S], delimiter: u8) -> Result<Self> {
        let names: Vec<String> = names
            .iter()
            .map(|s| s.as_ref().trim().to_string())
            .collect();
        let columns: Vec<Column> = names.iter().map(|n| Column::classify(n)).collect();
        for required in [Column::Timestamp, Column::Uid] {
            if !columns.contains(&required) {
                let name = if required == Column::Timestamp {
                    "timestamp"
                } else {
                    "uid"
                };
                return Err(Error::domain(format!("log schema has no {name} column")));
            }
        }
        Ok(LogSchema {
            names,
            columns,
            delimiter,
        })
    }

    pub fn from_header(line: &str, delimiter: u8) -> Result<Self> {
        let names: Vec<&str> = line.split(delimiter as char).collect();
        Self::new(&names, delimiter)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn delimiter(&self) -> u8 {
        self.delimiter
    }

    fn record_from_fields(&self, fields: &[&str], line: u64) -> Result<LogRecord> {
        if fields.len() != self.columns.len() {
            return Err(Error::parse(
                line,
                format!(
                    "expected {} fields, found {}",
                    self.columns.len(),
                    fields.len()
                ),
            ));
        }
        let mut timestamp = None;
        let mut uid = None;
        let mut rec = LogRecord::new(0.0, "");
        for ((column, name), raw) in self
            .columns
            .iter()
            .zip(&self.names)
            .zip(fields.iter().copied())
        {
            let value = raw.trim();
            let opt = (!value.is_empty()).then(|| value.to_string());
            match column {
                Column::Timestamp => {
                    let ts: f64 = value.parse().map_err(|_| {
                        Error::parse(line, format!("timestamp {value:?} is not a number"))
                    })?;
                    if !ts.is_finite() || ts < 0.0 {
                        return Err(Error::parse(
                            line,
                            format!("timestamp {value:?} out of range"),
                        ));
                    }
                    timestamp = Some(ts);
                }
                Column::Uid => {
                    if value.is_empty() {
                        return Err(Error::parse(line, "empty uid"));
                    }
                    uid = Some(value.to_string());
                }
                Column::LiveChannel => rec.livechannel = opt,
                Column::ContentPackage => rec.contentpackage = opt,
                Column::ContentLength => {
                    rec.contentlength = match opt {
                        None => None,
                        Some(v) => Some(v.parse::<u64>().map_err(|_| {
                            Error::parse(
                                line,
                                format!("contentlength {v:?} is not a non-negative integer"),
                            )
                        })?),
                    }
                }
                Column::Hit => rec.hit = parse_hit(value).map_err(|m| Error::parse(line, m))?,
                Column::Other => {
                    rec.extra.insert(name.clone(), value.to_string());
                }
            }
        }
        rec.timestamp = timestamp.expect("schema guarantees a timestamp column");
        rec.uid = uid.expect("schema guarantees a uid column");
        Ok(rec)
    }
}

fn parse_hit(value: &str) -> std::result::Result<Option<bool>, String> {
    if value.is_empty() {
        return Ok(None);
    }
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "hit" | "yes" => Ok(Some(true)),
        "0" | "false" | "miss" | "no" => Ok(Some(false)),
        _ => Err(format!("hit value {value:?} is not a boolean")),
    }
}

/// Parses one raw log line. Blank lines and `#` comments yield `Ok(None)`.
///
/// Fields are split on the schema delimiter; quoting is not supported.
pub fn parse_log_line(line: &str, line_no: u64, schema: &LogSchema) -> Result<Option<LogRecord>> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let line = line.strip_suffix('\r').unwrap_or(line);
    let fields: Vec<&str> = line.split(schema.delimiter as char).collect();
    schema.record_from_fields(&fields, line_no).map(Some)
}

/// Streaming reader over a log file whose first non-blank, non-comment line
/// is the header.
///
/// Each item is either a record or a per-line error; iteration continues past
/// errors so the caller can choose between skipping and aborting.
pub struct LogReader<R: Read> {
    schema: LogSchema,
    lines: std::iter::Enumerate<io::Lines<BufReader<R>>>,
}

impl<R: Read> LogReader<R> {
    /// Reads the header. Empty input yields a reader with no records.
    pub fn new(reader: R, delimiter: u8) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines().enumerate();
        let mut schema = LogSchema::new(&["timestamp", "uid"], delimiter)?;
        for (idx, line) in lines.by_ref() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            schema = LogSchema::from_header(trimmed.trim_start_matches('\u{feff}'), delimiter)
                .map_err(|e| Error::parse(idx as u64 + 1, e.to_string()))?;
            break;
        }
        Ok(LogReader { schema, lines })
    }

    pub fn schema(&self) -> &LogSchema {
        &self.schema
    }
}

impl<R: Read> Iterator for LogReader<R> {
    type Item = Result<LogRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        for (idx, line) in self.lines.by_ref() {
            let line_no = idx as u64 + 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::parse(line_no, e.to_string()))),
            };
            match parse_log_line(&line, line_no, &self.schema) {
                Ok(None) => continue,
                Ok(Some(rec)) => return Some(Ok(rec)),
                Err(e) => return Some(Err(e)),
            }
        }
        None
    }
}

/// Writes records as a delimiter-separated log with a header row. Extra
/// columns are taken from the first record.
pub fn write_log_records<W: Write>(mut w: W, records: &[LogRecord], delimiter: u8) -> Result<()> {
    let d = delimiter as char;
    let extras: Vec<&String> = records
        .first()
        .map(|r| r.extra.keys().collect())
        .unwrap_or_default();
    write!(
        w,
        "timestamp{d}uid{d}livechannel{d}contentpackage{d}contentlength{d}hit"
    )?;
    for name in &extras {
        write!(w, "{d}{name}")?;
    }
    writeln!(w)?;
    for r in records {
        write!(
            w,
            "{}{d}{}{d}{}{d}{}{d}{}{d}{}",
            r.timestamp,
            r.uid,
            r.livechannel.as_deref().unwrap_or(""),
            r.contentpackage.as_deref().unwrap_or(""),
            r.contentlength.map(|v| v.to_string()).unwrap_or_default(),
            match r.hit {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            }
        )?;
        for name in &extras {
            write!(
                w,
                "{d}{}",
                r.extra.get(*name).map(String::as_str).unwrap_or("")
            )?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Bijection between original identifier strings and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    forward: HashMap<String, u32>,
    reverse: Vec<String>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index for `id`, assigning the next free one if unseen.
    pub fn get_or_insert(&mut self, id: &str) -> u32 {
        if let Some(&idx) = self.forward.get(id) {
            return idx;
        }
        let idx = self.reverse.len() as u32;
        self.forward.insert(id.to_string(), idx);
        self.reverse.push(id.to_string());
        idx
    }

    pub fn index_of(&self, id: &str) -> Option<u32> {
        self.forward.get(id).copied()
    }

    pub fn id_of(&self, index: u32) -> Option<&str> {
        self.reverse.get(index as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.reverse
    }

    /// Two-column `denseIndex,originalId` CSV, one row per index.
    pub fn write_sidecar<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for (idx, id) in self.reverse.iter().enumerate() {
            out.write_record([idx.to_string().as_str(), id.as_str()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_sidecar<R: Read>(r: R) -> Result<Self> {
        let mut map = IdMap::new();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(r);
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != 2 {
                return Err(Error::parse(
                    line,
                    format!("expected 2 fields, found {}", rec.len()),
                ));
            }
            let idx: usize = rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::parse(line, format!("bad index {:?}", &rec[0])))?;
            if idx != map.len() {
                return Err(Error::parse(line, format!("index {idx} out of sequence")));
            }
            if map.index_of(&rec[1]).is_some() {
                return Err(Error::parse(line, format!("duplicate id {:?}", &rec[1])));
            }
            map.get_or_insert(&rec[1]);
        }
        Ok(map)
    }
}

/// Requests of one user for one item, and their log-scaled rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InteractionTriple {
    pub user: u32,
    pub item: u32,
    pub requests: u64,
    pub interaction: u32,
}

/// A single observed rating, the unit the trainer consumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub value: f64,
}

impl Rating {
    pub fn new(user: u32, item: u32, value: f64) -> Self {
        Rating { user, item, value }
    }
}

impl From<&InteractionTriple> for Rating {
    fn from(t: &InteractionTriple) -> Self {
        Rating::new(t.user, t.item, t.interaction as f64)
    }
}

impl From<InteractionTriple> for Rating {
    fn from(t: InteractionTriple) -> Self {
        Rating::from(&t)
    }
}

/// Maps a request count onto the rating scale: `ln(requests)` rounded half
/// away from zero, so a single request rates 0.
pub fn log_scale(requests: u64) -> Result<u32> {
    if requests < 1 {
        return Err(Error::domain("log_scale needs at least one request"));
    }
    Ok((requests as f64).ln().round() as u32)
}

/// Aggregated dataset with the index maps that produced it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interactions {
    /// One triple per distinct (user, item), in first-appearance order.
    pub triples: Vec<InteractionTriple>,
    pub users: IdMap,
    pub items: IdMap,
    /// Records seen, including skipped ones.
    pub records: usize,
    /// Records lacking the selected item column.
    pub skipped: usize,
}

impl Interactions {
    pub fn ratings(&self) -> Vec<Rating> {
        self.triples.iter().map(Rating::from).collect()
    }
}

/// Per-shard pair counts, pairs listed in order of first appearance.
struct ShardCounts<'a> {
    pairs: Vec<(&'a str, &'a str, u64)>,
    records: usize,
    skipped: usize,
}

fn count_shard<'a, B: Borrow<LogRecord> + 'a>(
    records: impl IntoIterator<Item = &'a B>,
    mode: ContentMode,
) -> ShardCounts<'a> {
    let mut slots: HashMap<(&str, &str), usize> = HashMap::new();
    let mut shard = ShardCounts {
        pairs: Vec::new(),
        records: 0,
        skipped: 0,
    };
    for rec in records {
        let rec: &LogRecord = rec.borrow();
        shard.records += 1;
        let Some(item) = rec.item(mode) else {
            shard.skipped += 1;
            continue;
        };
        let key = (rec.uid.as_str(), item);
        match slots.get(&key) {
            Some(&slot) => shard.pairs[slot].2 += 1,
            None => {
                slots.insert(key, shard.pairs.len());
                shard.pairs.push((key.0, key.1, 1));
            }
        }
    }
    shard
}

fn merge_shards<'a>(shards: impl IntoIterator<Item = ShardCounts<'a>>) -> Interactions {
    // A user's (or item's) first record is also the first record of some
    // pair, so walking pairs in first-appearance order shard by shard
    // reproduces the sequential index assignment.
    let mut out = Interactions::default();
    let mut slots: HashMap<(&str, &str), usize> = HashMap::new();
    for shard in shards {
        out.records += shard.records;
        out.skipped += shard.skipped;
        for (uid, item, count) in shard.pairs {
            match slots.get(&(uid, item)) {
                Some(&slot) => out.triples[slot].requests += count,
                None => {
                    let user = out.users.get_or_insert(uid);
                    let item_idx = out.items.get_or_insert(item);
                    slots.insert((uid, item), out.triples.len());
                    out.triples.push(InteractionTriple {
                        user,
                        item: item_idx,
                        requests: count,
                        interaction: 0,
                    });
                }
            }
        }
    }
    for t in &mut out.triples {
        t.interaction = log_scale(t.requests).expect("every group holds at least one request");
    }
    out
}

/// Groups records by (uid, item) and assigns dense indices in order of first
/// appearance. Records without the item column selected by `mode` are
/// counted in [`Interactions::skipped`].
pub fn aggregate_interactions<'a, B, I>(records: I, mode: ContentMode) -> Interactions
where
    B: Borrow<LogRecord> + 'a,
    I: IntoIterator<Item = &'a B>,
{
    merge_shards([count_shard(records, mode)])
}

/// Same result as [`aggregate_interactions`], counting `shards` contiguous
/// chunks in parallel before a sequential merge.
pub fn aggregate_interactions_sharded(
    records: &[LogRecord],
    mode: ContentMode,
    shards: usize,
) -> Interactions {
    let shards = shards.max(1);
    let chunk = records.len().div_ceil(shards).max(1);
    let partial: Vec<ShardCounts<'_>> = records
        .par_chunks(chunk)
        .map(|c| count_shard(c, mode))
        .collect();
    merge_shards(partial)
}

/// Writes the headerless `userId,itemId,interaction` file.
pub fn write_interactions<W: Write>(w: W, triples: &[InteractionTriple]) -> Result<()> {
    let ratings: Vec<Rating> = triples.iter().map(Rating::from).collect();
    write_ratings(w, &ratings)
}

/// Writes ratings in the interaction file format. Values must be
/// non-negative integers.
pub fn write_ratings<W: Write>(w: W, ratings: &[Rating]) -> Result<()> {
    let mut w = io::BufWriter::new(w);
    for r in ratings {
        if !(r.value >= 0.0 && r.value.fract() == 0.0 && r.value <= u32::MAX as f64) {
            return Err(Error::domain(format!(
                "rating {} for ({}, {}) is not a non-negative integer",
                r.value, r.user, r.item
            )));
        }
        writeln!(w, "{},{},{}", r.user, r.item, r.value as u32)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headerless `userId,itemId,interaction` file.
pub fn read_interactions<R: Read>(r: R) -> Result<Vec<Rating>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::parse(
                line,
                format!("expected 3 fields, found {}", rec.len()),
            ));
        }
        let field = |i: usize, name: &str| -> Result<u32> {
            rec[i].trim().parse::<u32>().map_err(|_| {
                Error::parse(
                    line,
                    format!("{name} {:?} is not a non-negative integer", &rec[i]),
                )
            })
        };
        out.push(Rating::new(
            field(0, "userId")?,
            field(1, "itemId")?,
            field(2, "interaction")? as f64,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> LogSchema {
        LogSchema::from_header(
            "timestamp,uid,livechannel,contentpackage,contentlength,hit,popname",
            b',',
        )
        .unwrap()
    }

    fn rec(uid: &str, ch: Option<&str>, vod: Option<&str>) -> LogRecord {
        let mut r = LogRecord::new(0.0, uid);
        r.livechannel = ch.map(str::to_string);
        r.contentpackage = vod.map(str::to_string);
        r
    }

    #[test]
    fn parses_typed_and_extra_fields() {
        let r = parse_log_line("1600000000,u1,ch7,,1024,hit,bud1", 1, &schema())
            .unwrap()
            .unwrap();
        assert_eq!(r.uid, "u1");
        assert_eq!(r.livechannel.as_deref(), Some("ch7"));
        assert_eq!(r.contentpackage, None);
        assert_eq!(r.timestamp, 1_600_000_000.0);
        assert_eq!(r.contentlength, Some(1024));
        assert_eq!(r.hit, Some(true));
        assert_eq!(r.extra.get("popname").map(String::as_str), Some("bud1"));
    }

    #[test]
    fn blank_and_comment_lines_are_skipped() {
        assert_eq!(parse_log_line("", 3, &schema()).unwrap(), None);
        assert_eq!(parse_log_line("   ", 3, &schema()).unwrap(), None);
        assert_eq!(parse_log_line("# comment", 3, &schema()).unwrap(), None);
    }

    #[test]
    fn negative_contentlength_is_a_line_error() {
        let err = parse_log_line("1600000000,u1,ch7,,-5,,x", 12, &schema()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 12, .. }), "{err}");
    }

    #[test]
    fn bad_timestamps_are_line_errors() {
        for ts in ["abc", "-1", "inf", "NaN", ""] {
            let line = format!("{ts},u1,ch7,,,,x");
            let err = parse_log_line(&line, 4, &schema()).unwrap_err();
            assert!(matches!(err, Error::Parse { line: 4, .. }), "{ts}: {err}");
        }
    }

    #[test]
    fn wrong_arity_is_a_line_error() {
        let err = parse_log_line("1,u1,ch7", 2, &schema()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn schema_needs_timestamp_and_uid() {
        assert!(LogSchema::from_header("uid,livechannel", b',').is_err());
        assert!(LogSchema::from_header("timestamp,livechannel", b',').is_err());
        assert!(LogSchema::from_header("livechannel;uid;timestamp", b';').is_ok());
    }

    #[test]
    fn reader_reports_line_numbers_and_continues() {
        let text = "timestamp,uid,livechannel\n1,u1,a\n\nx,u2,b\n3,u3,c\n";
        let reader = LogReader::new(text.as_bytes(), b',').unwrap();
        let items: Vec<_> = reader.collect();
        assert_eq!(items.len(), 3);
        assert!(items[0].is_ok());
        assert!(
            matches!(items[1], Err(Error::Parse { line: 4, .. })),
            "{:?}",
            items[1]
        );
        assert_eq!(items[2].as_ref().unwrap().uid, "u3");
    }

    #[test]
    fn reader_on_empty_input_yields_nothing() {
        let reader = LogReader::new(&b""[..], b',').unwrap();
        assert_eq!(reader.count(), 0);
    }

    #[test]
    fn log_scale_matches_published_rows() {
        assert_eq!(log_scale(16634).unwrap(), 10);
        assert_eq!(log_scale(18038).unwrap(), 10);
        assert_eq!(log_scale(3019).unwrap(), 8);
        assert_eq!(log_scale(8).unwrap(), 2);
        assert_eq!(log_scale(7).unwrap(), 2);
        assert_eq!(log_scale(1).unwrap(), 0);
        assert!(log_scale(0).is_err());
    }

    #[test]
    fn aggregation_counts_pairs_in_first_appearance_order() {
        let records = vec![
            rec("bob", Some("ch2"), None),
            rec("amy", Some("ch1"), Some("v9")),
            rec("bob", Some("ch2"), None),
            rec("amy", None, Some("v1")),
            rec("bob", Some("ch1"), None),
        ];
        let live = aggregate_interactions(&records, ContentMode::LiveTv);
        assert_eq!(live.users.ids(), ["bob", "amy"]);
        assert_eq!(live.items.ids(), ["ch2", "ch1"]);
        assert_eq!(live.skipped, 1);
        assert_eq!(live.records, 5);
        let got: Vec<(u32, u32, u64)> = live
            .triples
            .iter()
            .map(|t| (t.user, t.item, t.requests))
            .collect();
        assert_eq!(got, vec![(0, 0, 2), (1, 1, 1), (0, 1, 1)]);
        assert_eq!(live.triples[0].interaction, 1);

        let vod = aggregate_interactions(&records, ContentMode::Vod);
        assert_eq!(vod.items.ids(), ["v9", "v1"]);
        assert_eq!(vod.skipped, 3);
    }

    #[test]
    fn aggregation_of_nothing_is_empty() {
        let none: Vec<LogRecord> = Vec::new();
        let agg = aggregate_interactions(&none, ContentMode::LiveTv);
        assert!(agg.triples.is_empty());
        assert_eq!(agg.skipped, 0);

        let vod_only = vec![rec("a", None, Some("v")), rec("b", None, Some("v"))];
        let agg = aggregate_interactions(&vod_only, ContentMode::LiveTv);
        assert!(agg.triples.is_empty());
        assert_eq!(agg.skipped, 2);
    }

    #[test]
    fn large_group_maps_to_published_rating() {
        let records: Vec<LogRecord> = (0..16634).map(|_| rec("u", Some("c"), None)).collect();
        let agg = aggregate_interactions(&records, ContentMode::LiveTv);
        assert_eq!(agg.triples.len(), 1);
        assert_eq!(agg.triples[0].requests, 16634);
        assert_eq!(agg.triples[0].interaction, 10);
    }

    #[test]
    fn interaction_file_format() {
        let triples = [InteractionTriple {
            user: 0,
            item: 0,
            requests: 16634,
            interaction: 10,
        }];
        let mut buf = Vec::new();
        write_interactions(&mut buf, &triples).unwrap();
        assert_eq!(buf, b"0,0,10\n");

        let mut empty = Vec::new();
        write_interactions(&mut empty, &[]).unwrap();
        assert!(empty.is_empty());
        assert!(read_interactions(&empty[..]).unwrap().is_empty());
    }

    #[test]
    fn interaction_file_errors_carry_line_numbers() {
        let err = read_interactions(&b"0,0,1\n1,x,2\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = read_interactions(&b"0,0,1\n1,2\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = read_interactions(&b"0,0,1.5\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn fractional_ratings_are_not_written() {
        let mut buf = Vec::new();
        assert!(write_ratings(&mut buf, &[Rating::new(0, 0, 1.5)]).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let mut map = IdMap::new();
        for id in ["u-7", "zed", "a,b"] {
            map.get_or_insert(id);
        }
        let mut buf = Vec::new();
        map.write_sidecar(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("0,u-7\n1,zed\n"));
        assert_eq!(IdMap::read_sidecar(&buf[..]).unwrap(), map);
    }

    fn arb_records() -> impl Strategy<Value = Vec<LogRecord>> {
        prop::collection::vec(
            (0u8..6, prop::option::of(0u8..4), prop::option::of(0u8..4)),
            0..120,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(u, ch, vod)| {
                    rec(
                        &format!("u{u}"),
                        ch.map(|c| format!("ch{c}")).as_deref(),
                        vod.map(|c| format!("v{c}")).as_deref(),
                    )
                })
                .collect()
        })
    }

    fn groups(agg: &Interactions) -> Vec<(String, String, u64)> {
        let mut g: Vec<_> = agg
            .triples
            .iter()
            .map(|t| {
                (
                    agg.users.id_of(t.user).unwrap().to_string(),
                    agg.items.id_of(t.item).unwrap().to_string(),
                    t.requests,
                )
            })
            .collect();
        g.sort();
        g
    }

    proptest! {
        #[test]
        fn requests_are_conserved(records in arb_records()) {
            let agg = aggregate_interactions(&records, ContentMode::LiveTv);
            let total: u64 = agg.triples.iter().map(|t| t.requests).sum();
            prop_assert_eq!(total as usize, agg.records - agg.skipped);
            for t in &agg.triples {
                prop_assert_eq!(t.interaction, log_scale(t.requests).unwrap());
            }
        }

        #[test]
        fn grouping_ignores_record_order(records in arb_records(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut crate::rng_from_seed(seed));
            let a = aggregate_interactions(&records, ContentMode::Vod);
            let b = aggregate_interactions(&shuffled, ContentMode::Vod);
            prop_assert_eq!(groups(&a), groups(&b));
        }

        #[test]
        fn sharded_aggregation_matches_sequential(records in arb_records(), shards in 1usize..9) {
            let seq = aggregate_interactions(&records, ContentMode::LiveTv);
            let par = aggregate_interactions_sharded(&records, ContentMode::LiveTv, shards);
            prop_assert_eq!(seq, par);
        }

        #[test]
        fn log_scale_is_monotone(a in 1u64..10_000_000, b in 1u64..10_000_000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(log_scale(lo).unwrap() <= log_scale(hi).unwrap());
        }

        #[test]
        fn interaction_file_round_trip(
            rows in prop::collection::vec((0u32..5000, 0u32..500, 0u32..11), 0..1000)
        ) {
            let ratings: Vec<Rating> = rows.iter().map(|&(u, i, r)| Rating::new(u, i, r as f64)).collect();
            let mut buf = Vec::new();
            write_ratings(&mut buf, &ratings).unwrap();
            prop_assert_eq!(read_interactions(&buf[..]).unwrap(), ratings);
        }
    }
}
