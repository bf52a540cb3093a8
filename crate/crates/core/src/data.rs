//! Catalogs, click sessions, brand mappings and the train/validation/test split.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A storefront whose users generate click sessions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Brand(pub String);

impl Brand {
    pub fn new(name: impl Into<String>) -> Self {
        Brand(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Brand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotelRecord {
    pub hotel_id: String,
    pub market_id: String,
    /// Property features, each in `[0, 1]`.
    pub amenities: Vec<f64>,
    /// Scaled coordinates, each in `[-1, 1]`.
    pub geo: Vec<f64>,
}

/// The hotel universe shared by all brands.
///
/// Hotels are addressed internally by their position in the catalog; the
/// position is stable for the life of the catalog.
#[derive(Clone, Debug)]
pub struct HotelCatalog {
    hotels: Vec<HotelRecord>,
    index: HashMap<String, usize>,
    market_ids: Vec<String>,
    market_index: HashMap<String, usize>,
    members: Vec<Vec<usize>>,
    market_of: Vec<usize>,
    slot_in_market: Vec<usize>,
}

impl HotelCatalog {
    pub fn new(hotels: Vec<HotelRecord>) -> Result<Self> {
        let first = hotels.first().ok_or(Error::EmptyCatalog)?;
        let (d_a, d_g) = (first.amenities.len(), first.geo.len());
        if d_a == 0 || d_g == 0 {
            return Err(Error::Config(format!(
                "hotel `{}` has an empty feature vector",
                first.hotel_id
            )));
        }

        let mut index = HashMap::with_capacity(hotels.len());
        let mut market_ids = Vec::new();
        let mut market_index = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut market_of = Vec::with_capacity(hotels.len());
        let mut slot_in_market = Vec::with_capacity(hotels.len());

        for (i, h) in hotels.iter().enumerate() {
            if index.insert(h.hotel_id.clone(), i).is_some() {
                return Err(Error::DuplicateHotel(h.hotel_id.clone()));
            }
            check_features("amenity", h, &h.amenities, d_a, 0.0, 1.0)?;
            check_features("geo", h, &h.geo, d_g, -1.0, 1.0)?;

            let m = *market_index.entry(h.market_id.clone()).or_insert_with(|| {
                market_ids.push(h.market_id.clone());
                members.push(Vec::new());
                market_ids.len() - 1
            });
            market_of.push(m);
            slot_in_market.push(members[m].len());
            members[m].push(i);
        }

        Ok(HotelCatalog {
            hotels,
            index,
            market_ids,
            market_index,
            members,
            market_of,
            slot_in_market,
        })
    }

    pub fn len(&self) -> usize {
        self.hotels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hotels.is_empty()
    }

    pub fn hotels(&self) -> &[HotelRecord] {
        &self.hotels
    }

    pub fn hotel(&self, idx: usize) -> &HotelRecord {
        &self.hotels[idx]
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.hotels[idx].hotel_id
    }

    pub fn index_of(&self, hotel_id: &str) -> Option<usize> {
        self.index.get(hotel_id).copied()
    }

    pub fn amenity_dim(&self) -> usize {
        self.hotels[0].amenities.len()
    }

    pub fn geo_dim(&self) -> usize {
        self.hotels[0].geo.len()
    }

    pub fn n_markets(&self) -> usize {
        self.market_ids.len()
    }

    pub fn market_ids(&self) -> &[String] {
        &self.market_ids
    }

    pub fn market_index(&self, market_id: &str) -> Option<usize> {
        self.market_index.get(market_id).copied()
    }

    /// Market (by index) that hotel `idx` belongs to.
    pub fn market_of(&self, idx: usize) -> usize {
        self.market_of[idx]
    }

    /// Hotels of market `market`, in catalog order.
    pub fn market_members(&self, market: usize) -> &[usize] {
        &self.members[market]
    }

    /// Position of hotel `idx` inside `market_members(market_of(idx))`.
    pub fn slot_in_market(&self, idx: usize) -> usize {
        self.slot_in_market[idx]
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_lines(path, self.hotels.iter())
    }
}

fn check_features(
    kind: &'static str,
    h: &HotelRecord,
    values: &[f64],
    expected: usize,
    lo: f64,
    hi: f64,
) -> Result<()> {
    if values.len() != expected {
        return Err(Error::FeatureLength {
            kind,
            hotel: h.hotel_id.clone(),
            expected,
            found: values.len(),
        });
    }
    if let Some(v) = values.iter().find(|v| !(lo..=hi).contains(*v)) {
        return Err(Error::Config(format!(
            "{kind} feature {v} of hotel `{}` outside [{lo}, {hi}]",
            h.hotel_id
        )));
    }
    Ok(())
}

/// Reads a catalog from an object-per-line file.
pub fn load_catalog(path: &Path) -> Result<HotelCatalog> {
    let records = read_lines::<HotelRecord>(path)?;
    HotelCatalog::new(records)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickSession {
    pub session_id: String,
    pub brand: Brand,
    pub market_id: String,
    pub clicks: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionSet {
    pub brand: Brand,
    pub sessions: Vec<ClickSession>,
}

impl SessionSet {
    pub fn new(brand: Brand, sessions: Vec<ClickSession>) -> Self {
        debug_assert!(sessions.iter().all(|s| s.brand == brand));
        SessionSet { brand, sessions }
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Checks every session against `catalog` and the set's brand.
    ///
    /// Sessions whose clicks leave the declared market are accepted; their
    /// ids are returned so the caller can report them.
    pub fn validate(&self, catalog: &HotelCatalog) -> Result<Vec<String>> {
        let mut seen = HashSet::with_capacity(self.sessions.len());
        let mut cross_market = Vec::new();
        for s in &self.sessions {
            if !seen.insert(s.session_id.as_str()) {
                return Err(Error::DuplicateSession(s.session_id.clone()));
            }
            if s.brand != self.brand {
                return Err(Error::Config(format!(
                    "session `{}` belongs to brand `{}`, expected `{}`",
                    s.session_id, s.brand, self.brand
                )));
            }
            if s.clicks.is_empty() {
                return Err(Error::EmptySession(s.session_id.clone()));
            }
            let market = catalog.market_index(&s.market_id);
            let mut outside = market.is_none();
            for c in &s.clicks {
                let idx = catalog
                    .index_of(c)
                    .ok_or_else(|| Error::UnknownHotel(c.clone()))?;
                outside |= Some(catalog.market_of(idx)) != market;
            }
            if outside {
                cross_market.push(s.session_id.clone());
            }
        }
        Ok(cross_market)
    }

    /// Click lists translated to catalog positions.
    pub fn indexed(&self, catalog: &HotelCatalog) -> Result<Vec<Vec<usize>>> {
        self.sessions
            .iter()
            .map(|s| {
                s.clicks
                    .iter()
                    .map(|c| {
                        catalog
                            .index_of(c)
                            .ok_or_else(|| Error::UnknownHotel(c.clone()))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_lines(path, self.sessions.iter())
    }
}

/// Reads the sessions of `brand` and validates them against `catalog`.
///
/// Returns the set together with the ids of sessions whose clicks do not
/// all lie in the session's market.
pub fn load_sessions(
    path: &Path,
    catalog: &HotelCatalog,
    brand: &Brand,
) -> Result<(SessionSet, Vec<String>)> {
    let sessions = read_lines::<ClickSession>(path)?;
    let set = SessionSet {
        brand: brand.clone(),
        sessions,
    };
    let warnings = set.validate(catalog)?;
    Ok((set, warnings))
}

/// Splits `set` into train, validation and test parts.
///
/// Part sizes are the floors of the normalized ratios; the leftover sessions
/// go one at a time to validation, test, then train (skipping parts with a
/// zero ratio). Which sessions land where is decided by a seeded shuffle.
pub fn split_sessions(
    set: &SessionSet,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(SessionSet, SessionSet, SessionSet)> {
    let [train, val, test] = split_sizes(set.len(), ratios)?;
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut rng::substream(seed, "split", 0));

    let take = |range: std::ops::Range<usize>| {
        let sessions = order[range]
            .iter()
            .map(|&i| set.sessions[i].clone())
            .collect();
        SessionSet::new(set.brand.clone(), sessions)
    };
    Ok((
        take(0..train),
        take(train..train + val),
        take(train + val..train + val + test),
    ))
}

/// Sizes `[train, val, test]` that `split_sessions` produces for `n` sessions.
pub fn split_sizes(n: usize, (train, val, test): (f64, f64, f64)) -> Result<[usize; 3]> {
    let ratios = [train, val, test];
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Config("split ratios must be nonnegative".into()));
    }
    let total: f64 = ratios.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("split ratios are all zero".into()));
    }

    let mut sizes = ratios.map(|r| ((r * n as f64) / total).floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>();
    // Leftovers go val, test, train, repeating.
    let order = [1usize, 2, 0];
    while left > 0 {
        for &part in &order {
            if left == 0 {
                break;
            }
            if ratios[part] > 0.0 {
                sizes[part] += 1;
                left -= 1;
            }
        }
    }
    Ok(sizes)
}

/// One-to-one correspondence between hotels of a source and a target brand.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BrandMapping {
    pairs: Vec<(String, String)>,
    forward: HashMap<String, usize>,
    inverse: HashMap<String, usize>,
}

impl BrandMapping {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut forward = HashMap::with_capacity(pairs.len());
        let mut inverse = HashMap::with_capacity(pairs.len());
        for (i, (s, t)) in pairs.iter().enumerate() {
            if forward.insert(s.clone(), i).is_some() {
                return Err(Error::MappingNotInjective(s.clone()));
            }
            if inverse.insert(t.clone(), i).is_some() {
                return Err(Error::MappingNotInjective(t.clone()));
            }
        }
        Ok(BrandMapping {
            pairs,
            forward,
            inverse,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    /// Target id for a source id.
    pub fn to_target(&self, source: &str) -> Option<&str> {
        self.forward.get(source).map(|&i| self.pairs[i].1.as_str())
    }

    /// Source id for a target id.
    pub fn to_source(&self, target: &str) -> Option<&str> {
        self.inverse.get(target).map(|&i| self.pairs[i].0.as_str())
    }

    pub fn inverted(&self) -> BrandMapping {
        BrandMapping {
            pairs: self.pairs.iter().map(|(s, t)| (t.clone(), s.clone())).collect(),
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }

    /// Checks that every source id exists in `source` and every target id in `target`.
    pub fn validate(&self, source: &HotelCatalog, target: &HotelCatalog) -> Result<()> {
        for (s, t) in &self.pairs {
            if source.index_of(s).is_none() {
                return Err(Error::UnknownHotel(s.clone()));
            }
            if target.index_of(t).is_none() {
                return Err(Error::UnknownHotel(t.clone()));
            }
        }
        Ok(())
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (s, t) in &self.pairs {
            writeln!(out, "{s}\t{t}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a headerless two-column tab-separated mapping file.
pub fn load_mapping(path: &Path) -> Result<BrandMapping> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(s), Some(t), None) if !s.is_empty() && !t.is_empty() => {
                pairs.push((s.to_string(), t.to_string()))
            }
            _ => {
                return Err(Error::Parse {
                    path: path.into(),
                    line: n + 1,
                    message: "expected `source<TAB>target`".into(),
                })
            }
        }
    }
    BrandMapping::new(pairs)
}

pub(crate) fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub(crate) fn write_lines<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
