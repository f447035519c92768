//! Geographic correctness, Recall@K and query subsampling.
//!
//! A query is correct at K when any of its first K candidates lies within
//! `threshold_m` meters of the query pose. R@K is the fraction of correct
//! queries.
//!
//! # Subsampling
//!
//! Samples are reproducible across platforms and implementations:
//!
//! 1. Seed xoshiro256** from the 64-bit seed through SplitMix64 (four
//!    successive SplitMix64 outputs become state words `s[0..4]`).
//! 2. Partial Fisher-Yates over the positions `0..len`: for `i` in `0..n`,
//!    draw `j = i + bounded(len - i)` and swap positions `i` and `j`.
//!    `bounded(r)` draws `x = next_u64()` until `x < r * floor(2^64 / r)` and
//!    returns `x % r`.
//! 3. Sort the first `n` positions ascending, keeping the input's relative
//!    order.

use std::collections::{BTreeMap, HashMap};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::dataset::{ImageRecord, Pose};
use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const REPORT_FORMAT: &str = "vpr-eval";
pub const REPORT_VERSION: u32 = 1;

/// Planar Euclidean distance for `Utm`, haversine for `Wgs84`.
pub fn geo_distance(a: &Pose, b: &Pose) -> Result<f64> {
    match (*a, *b) {
        (
            Pose::Utm {
                easting: e1,
                northing: n1,
            },
            Pose::Utm {
                easting: e2,
                northing: n2,
            },
        ) => Ok((e1 - e2).hypot(n1 - n2)),
        (
            Pose::Wgs84 {
                lat: lat1,
                lon: lon1,
            },
            Pose::Wgs84 {
                lat: lat2,
                lon: lon2,
            },
        ) => {
            let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
            let dp = p2 - p1;
            let dl = (lon2 - lon1).to_radians();
            let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
            Ok(2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin())
        }
        _ => Err(Error::PoseKindMismatch(a.kind_name(), b.kind_name())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold_m: f64,
    pub ks: Vec<usize>,
    pub subsample_n: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold_m: 25.0,
            ks: vec![1, 5],
            subsample_n: None,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_m.is_finite() && self.threshold_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold_m must be positive, got {}",
                self.threshold_m
            )));
        }
        if self.ks.is_empty() || self.ks[0] == 0 {
            return Err(Error::InvalidConfig(
                "ks must be non-empty positive integers".into(),
            ));
        }
        if self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "ks must be strictly ascending, got {:?}",
                self.ks
            )));
        }
        if self.subsample_n == Some(0) {
            return Err(Error::InvalidConfig("subsample_n must be positive".into()));
        }
        Ok(())
    }

    pub fn max_k(&self) -> usize {
        self.ks.last().copied().unwrap_or(0)
    }
}

/// Portable sampler seeded through SplitMix64.
pub struct SampleRng(Xoshiro256StarStar);

impl SampleRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `0..range` by rejection; `range` must be positive.
    pub fn bounded(&mut self, range: u64) -> u64 {
        assert!(range > 0);
        let limit = (u64::MAX / range) * range;
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % range;
            }
        }
    }
}

/// Sorted positions of a uniform `n`-subset of `0..len`.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: len,
        });
    }
    let mut rng = SampleRng::new(seed);
    let mut slots: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = i + rng.bounded((len - i) as u64) as usize;
        slots.swap(i, j);
    }
    slots.truncate(n);
    slots.sort_unstable();
    Ok(slots)
}

/// Uniform sample without replacement, in original relative order.
pub fn subsample_queries<T: Clone>(queries: &[T], n: usize, seed: u64) -> Result<Vec<T>> {
    Ok(sample_indices(queries.len(), n, seed)?
        .into_iter()
        .map(|i| queries[i].clone())
        .collect())
}

/// One query's candidate ids, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub ids: Vec<String>,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, ids: Vec<String>) -> Self {
        Self {
            query_id: query_id.into(),
            ids,
        }
    }
}

/// Pose lookup by image id.
#[derive(Debug, Clone, Default)]
pub struct PoseTable(HashMap<String, Pose>);

impl PoseTable {
    pub fn from_records(records: &[ImageRecord]) -> Self {
        Self(records.iter().map(|r| (r.id.clone(), r.pose)).collect())
    }

    pub fn insert(&mut self, id: impl Into<String>, pose: Pose) {
        self.0.insert(id.into(), pose);
    }

    pub fn get(&self, id: &str) -> Result<&Pose> {
        self.0
            .get(id)
            .ok_or_else(|| Error::UnresolvableId(id.to_owned()))
    }

    pub fn distance(&self, a: &str, b: &str) -> Result<f64> {
        geo_distance(self.get(a)?, self.get(b)?)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub correct_at: BTreeMap<usize, bool>,
    /// 1-based rank of the first correct candidate anywhere in the list.
    pub best_correct_rank: Option<usize>,
}

/// R@K for one ranking method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub recall: BTreeMap<usize, f64>,
    pub queries: Vec<QueryOutcome>,
}

pub fn recall_at_k(
    results: &[RankedList],
    poses: &PoseTable,
    config: &EvalConfig,
) -> Result<RecallReport> {
    config.validate()?;
    if results.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let mut hits: BTreeMap<usize, usize> = config.ks.iter().map(|&k| (k, 0)).collect();
    let mut queries = Vec::with_capacity(results.len());

    for result in results {
        let query_pose = poses.get(&result.query_id)?;
        let mut best_correct_rank = None;
        for (i, id) in result.ids.iter().enumerate() {
            let d = geo_distance(query_pose, poses.get(id)?)?;
            if d <= config.threshold_m && best_correct_rank.is_none() {
                best_correct_rank = Some(i + 1);
            }
        }
        let correct_at: BTreeMap<usize, bool> = config
            .ks
            .iter()
            .map(|&k| (k, best_correct_rank.is_some_and(|r| r <= k)))
            .collect();
        for (k, ok) in &correct_at {
            if *ok {
                *hits.get_mut(k).expect("k from config") += 1;
            }
        }
        queries.push(QueryOutcome {
            query_id: result.query_id.clone(),
            correct_at,
            best_correct_rank,
        });
    }

    let n = results.len() as f64;
    Ok(RecallReport {
        recall: hits.into_iter().map(|(k, h)| (k, h as f64 / n)).collect(),
        queries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingMethod {
    Coarse,
    Refined,
}

impl RankingMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RankingMethod::Coarse => "coarse",
            RankingMethod::Refined => "refined",
        }
    }
}

/// First line of a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportHeader {
    pub format: String,
    pub version: u32,
    pub method: RankingMethod,
    pub threshold_m: f64,
    pub ks: Vec<usize>,
    pub n_queries: usize,
    pub n_parsed: usize,
    pub n_fallback: usize,
    pub recall: BTreeMap<usize, f64>,
}

/// Coarse and (optionally) refined recall with shared counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold_m: f64,
    pub ks: Vec<usize>,
    pub n_queries: usize,
    pub n_parsed: usize,
    pub n_fallback: usize,
    pub coarse: RecallReport,
    pub refined: Option<RecallReport>,
}

impl EvalReport {
    pub fn method(&self, method: RankingMethod) -> Option<&RecallReport> {
        match method {
            RankingMethod::Coarse => Some(&self.coarse),
            RankingMethod::Refined => self.refined.as_ref(),
        }
    }

    /// Refined minus coarse recall per K.
    pub fn delta(&self) -> Option<BTreeMap<usize, f64>> {
        let refined = self.refined.as_ref()?;
        Some(
            self.coarse
                .recall
                .iter()
                .map(|(k, c)| (*k, refined.recall[k] - c))
                .collect(),
        )
    }

    pub fn header(&self, method: RankingMethod) -> Option<ReportHeader> {
        Some(ReportHeader {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            method,
            threshold_m: self.threshold_m,
            ks: self.ks.clone(),
            n_queries: self.n_queries,
            n_parsed: self.n_parsed,
            n_fallback: self.n_fallback,
            recall: self.method(method)?.recall.clone(),
        })
    }

    /// Line-delimited JSON: the header, then one line per query.
    pub fn to_jsonl(&self, method: RankingMethod) -> Option<String> {
        let header = self.header(method)?;
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for q in &self.method(method)?.queries {
            out.push_str(&serde_json::to_string(q).expect("outcome serializes"));
            out.push('\n');
        }
        Some(out)
    }

    /// Human-readable table in percent, refined rows annotated with the
    /// change over coarse.
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<10}", "method");
        for k in &self.ks {
            out.push_str(&format!("{:>16}", format!("R@{k}")));
        }
        out.push('\n');
        out.push_str(&format!("{:<10}", "coarse"));
        for k in &self.ks {
            out.push_str(&format!(
                "{:>16}",
                format!("{:.1}", 100.0 * self.coarse.recall[k])
            ));
        }
        out.push('\n');
        if let (Some(refined), Some(delta)) = (&self.refined, self.delta()) {
            out.push_str(&format!("{:<10}", "refined"));
            for k in &self.ks {
                let cell = format!(
                    "{:.1} {}",
                    100.0 * refined.recall[k],
                    format_delta(delta[k])
                );
                out.push_str(&format!("{cell:>16}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `(5.1↑)`, `(2.0↓)` or `(0.0)` for a recall difference in [0, 1] units.
pub fn format_delta(delta: f64) -> String {
    let pct = 100.0 * delta;
    let shown = format!("{:.1}", pct.abs());
    if shown == "0.0" {
        "(0.0)".into()
    } else if pct > 0.0 {
        format!("({shown}↑)")
    } else {
        format!("({shown}↓)")
    }
}

/// Parses one report file back into its header and recall data.
pub fn parse_report(text: &str) -> Result<(ReportHeader, RecallReport)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(Error::MalformedRecord {
        line: 1,
        reason: "empty report".into(),
    })?;
    let header: ReportHeader = serde_json::from_str(first).map_err(|e| Error::MalformedRecord {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.format != REPORT_FORMAT || header.version != REPORT_VERSION {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: format!("unexpected format {} v{}", header.format, header.version),
        });
    }
    let queries = lines
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<QueryOutcome>>>()?;
    let recall = header.recall.clone();
    Ok((header, RecallReport { recall, queries }))
}
