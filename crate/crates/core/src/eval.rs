//! Next-click prediction: rankings from an embedding space, hits@k and MRR@k.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{write_lines, BrandMapping, HotelCatalog, SessionSet};
use crate::error::{Error, Result};
use crate::space::EmbeddingSpace;

/// Predict `truth` from `query`; candidates are the pool minus the query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictionEvent {
    pub query: usize,
    pub truth: usize,
    /// `Some(market)` restricts candidates to that market, `None` uses the whole catalog.
    pub market: Option<usize>,
}

impl PredictionEvent {
    pub fn candidates<'a>(&self, catalog: &'a HotelCatalog) -> Box<dyn Iterator<Item = usize> + 'a> {
        let query = self.query;
        match self.market {
            Some(m) => Box::new(catalog.market_members(m).iter().copied().filter(move |&h| h != query)),
            None => Box::new((0..catalog.len()).filter(move |&h| h != query)),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolScope {
    /// The query's market.
    #[default]
    Market,
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Cosine similarity of the two embeddings.
    Cosine,
    /// Raw dot product, the logit the network is trained on.
    Model,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    InBrand,
    CrossBrand,
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMode::Cosine => "cosine",
            ScoreMode::Model => "model",
        })
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::InBrand => "in_brand",
            Setting::CrossBrand => "cross_brand",
        })
    }
}

/// Which way ids are translated before looking them up in the space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Sessions are from the mapping's target brand, the space from its source.
    #[default]
    TargetToSource,
    SourceToTarget,
}

/// One event per consecutive click pair. Repeated clicks of one hotel and
/// clicks unknown to the catalog produce no event.
pub fn make_events(sessions: &SessionSet, catalog: &HotelCatalog, scope: PoolScope) -> Vec<PredictionEvent> {
    let mut events = Vec::new();
    for s in &sessions.sessions {
        let clicks: Vec<Option<usize>> = s.clicks.iter().map(|c| catalog.index_of(c)).collect();
        for w in clicks.windows(2) {
            if let [Some(q), Some(t)] = *w {
                if q == t {
                    continue;
                }
                let market = match scope {
                    PoolScope::Market => Some(catalog.market_of(q)),
                    PoolScope::Global => None,
                };
                if market.is_some_and(|m| catalog.market_of(t) != m) {
                    continue;
                }
                events.push(PredictionEvent {
                    query: q,
                    truth: t,
                    market,
                });
            }
        }
    }
    events
}

/// Row of each catalog hotel in a space, after id translation.
struct SpaceView<'a> {
    space: &'a EmbeddingSpace,
    rows: Vec<Option<usize>>,
    norms: Vec<f64>,
}

impl<'a> SpaceView<'a> {
    fn new(space: &'a EmbeddingSpace, catalog: &HotelCatalog, mapping: Option<(&BrandMapping, Direction)>) -> Self {
        let index: std::collections::HashMap<&str, usize> =
            space.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let rows = catalog
            .hotels()
            .iter()
            .map(|h| {
                let id = match mapping {
                    None => Some(h.hotel_id.as_str()),
                    Some((m, Direction::TargetToSource)) => m.to_source(&h.hotel_id),
                    Some((m, Direction::SourceToTarget)) => m.to_target(&h.hotel_id),
                };
                id.and_then(|id| index.get(id).copied())
            })
            .collect();
        let norms = (0..space.len())
            .map(|i| space.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        SpaceView { space, rows, norms }
    }

    fn score(&self, mode: ScoreMode, q: usize, c: usize) -> f64 {
        let dot: f64 = self.space.row(q).iter().zip(self.space.row(c)).map(|(a, b)| a * b).sum();
        match mode {
            ScoreMode::Model => dot,
            ScoreMode::Cosine => {
                let denom = self.norms[q] * self.norms[c];
                if denom == 0.0 {
                    0.0
                } else {
                    dot / denom
                }
            }
        }
    }
}

/// Candidates ordered best first: descending score, ties by ascending hotel
/// id, then candidates missing from the view (ascending id).
fn ranking(
    event: &PredictionEvent,
    catalog: &HotelCatalog,
    view: &SpaceView<'_>,
    mode: ScoreMode,
) -> Result<Vec<usize>> {
    let q = view.rows[event.query].ok_or_else(|| Error::MissingQuery(catalog.id(event.query).to_string()))?;
    let mut present: Vec<(f64, usize)> = Vec::new();
    let mut missing = Vec::new();
    for c in event.candidates(catalog) {
        match view.rows[c] {
            Some(row) => present.push((view.score(mode, q, row), c)),
            None => missing.push(c),
        }
    }
    present.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| catalog.id(a.1).cmp(catalog.id(b.1))));
    missing.sort_by(|a, b| catalog.id(*a).cmp(catalog.id(*b)));
    Ok(present.into_iter().map(|(_, c)| c).chain(missing).collect())
}

/// 1-based position of the truth in `ranking`, without sorting.
/// Returns `None` when the query has no vector.
fn truth_rank(event: &PredictionEvent, catalog: &HotelCatalog, view: &SpaceView<'_>, mode: ScoreMode) -> Option<(usize, usize)> {
    let q = view.rows[event.query]?;
    let truth_id = catalog.id(event.truth);
    let truth_score = view.rows[event.truth].map(|t| view.score(mode, q, t));
    let mut ahead = 0;
    let mut missing = 0;
    for c in event.candidates(catalog) {
        if c == event.truth {
            continue;
        }
        let before_on_id = catalog.id(c) < truth_id;
        match (view.rows[c], truth_score) {
            (Some(row), Some(ts)) => match view.score(mode, q, row).total_cmp(&ts) {
                Ordering::Greater => ahead += 1,
                Ordering::Equal if before_on_id => ahead += 1,
                _ => {}
            },
            (Some(_), None) => ahead += 1,
            (None, Some(_)) => missing += 1,
            (None, None) => {
                missing += 1;
                if before_on_id {
                    ahead += 1;
                }
            }
        }
    }
    if truth_score.is_none() {
        missing += 1;
    }
    Some((ahead + 1, missing))
}

/// Ranked candidate ids for `event`, looked up in `space` by hotel id.
pub fn rank_candidates(
    event: &PredictionEvent,
    catalog: &HotelCatalog,
    space: &EmbeddingSpace,
    mode: ScoreMode,
) -> Result<Vec<String>> {
    let view = SpaceView::new(space, catalog, None);
    let order = ranking(event, catalog, &view, mode)?;
    Ok(order.into_iter().map(|c| catalog.id(c).to_string()).collect())
}

/// Fraction of events whose truth is ranked within the top `k`.
pub fn hits_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::NoEvents);
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mean of `1 / rank` over events, counting ranks beyond `k` as 0.
pub fn mrr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::NoEvents);
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    // Neumaier summation keeps the result independent of chunking.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &r in ranks {
        let x = if r <= k { 1.0 / r as f64 } else { 0.0 };
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    Ok((sum + comp) / ranks.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub setting: Setting,
    pub mode: ScoreMode,
    pub k: usize,
    pub hits: f64,
    pub mrr: f64,
    pub n_events: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub n_events: usize,
    /// Events dropped because the query had no vector.
    pub skipped_queries: usize,
    /// Candidate slots (summed over events) with no vector.
    pub missing_candidates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub lines: Vec<MetricLine>,
    pub counts: EvalCounts,
}

impl MetricsReport {
    pub fn get(&self, k: usize) -> Option<&MetricLine> {
        self.lines.iter().find(|l| l.k == k)
    }

    pub fn hits(&self, k: usize) -> f64 {
        self.get(k).map_or(f64::NAN, |l| l.hits)
    }

    pub fn mrr(&self, k: usize) -> f64 {
        self.get(k).map_or(f64::NAN, |l| l.mrr)
    }

    /// Fraction of events whose query had no vector.
    pub fn skipped_fraction(&self) -> f64 {
        let total = self.counts.n_events + self.counts.skipped_queries;
        if total == 0 {
            1.0
        } else {
            self.counts.skipped_queries as f64 / total as f64
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_lines(path, self.lines.iter())
    }
}

fn report(
    events: &[PredictionEvent],
    catalog: &HotelCatalog,
    view: &SpaceView<'_>,
    mode: ScoreMode,
    setting: Setting,
    ks: &[usize],
) -> Result<MetricsReport> {
    let results: Vec<Option<(usize, usize)>> =
        events.par_iter().map(|e| truth_rank(e, catalog, view, mode)).collect();
    let ranks: Vec<usize> = results.iter().flatten().map(|(r, _)| *r).collect();
    let counts = EvalCounts {
        n_events: ranks.len(),
        skipped_queries: results.iter().filter(|r| r.is_none()).count(),
        missing_candidates: results.iter().flatten().map(|(_, m)| *m).sum(),
    };
    let lines = ks
        .iter()
        .map(|&k| {
            Ok(MetricLine {
                setting,
                mode,
                k,
                hits: hits_at_k(&ranks, k)?,
                mrr: mrr_at_k(&ranks, k)?,
                n_events: ranks.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport { lines, counts })
}

/// In-brand evaluation of `space` on the consecutive clicks of `sessions`.
pub fn evaluate(
    sessions: &SessionSet,
    catalog: &HotelCatalog,
    space: &EmbeddingSpace,
    mode: ScoreMode,
    ks: &[usize],
    scope: PoolScope,
) -> Result<MetricsReport> {
    let events = make_events(sessions, catalog, scope);
    let view = SpaceView::new(space, catalog, None);
    report(&events, catalog, &view, mode, Setting::InBrand, ks)
}

/// Zero-shot evaluation: `sessions` come from one brand, `space` from the
/// other, and every hotel id is translated through `mapping` before lookup.
/// Unmapped queries are skipped; unmapped candidates rank last.
pub fn cross_brand_evaluate(
    sessions: &SessionSet,
    catalog: &HotelCatalog,
    space: &EmbeddingSpace,
    mapping: &BrandMapping,
    direction: Direction,
    mode: ScoreMode,
    ks: &[usize],
    scope: PoolScope,
) -> Result<MetricsReport> {
    let events = make_events(sessions, catalog, scope);
    let view = SpaceView::new(space, catalog, Some((mapping, direction)));
    report(&events, catalog, &view, mode, Setting::CrossBrand, ks)
}

/// One learning-curve checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    #[serde(rename = "hits@10")]
    pub hits_at_10: f64,
    #[serde(rename = "hits@100")]
    pub hits_at_100: f64,
}

pub fn write_curve(path: &Path, points: &[CurvePoint]) -> Result<()> {
    write_lines(path, points.iter())
}
