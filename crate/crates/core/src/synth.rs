//! Seeded two-brand synthetic world: a shared catalog with latent hotel
//! vectors, per-brand popularity, and popularity-and-similarity driven
//! click sessions.

use std::collections::HashMap;

use rand::Rng as _;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Brand, BrandMapping, ClickSession, HotelCatalog, HotelRecord, SessionSet};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Spread of hotel latents around their market direction.
const LATENT_SPREAD: f64 = 1.5;
/// Log-scale spread of the popularity component shared by both brands.
const BASE_POPULARITY_SIGMA: f64 = 1.0;
const MARKET_CENTER_EXTENT: f64 = 0.8;
const GEO_JITTER: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_markets: usize,
    pub hotels_per_market: usize,
    pub latent_dim: usize,
    pub d_a_in: usize,
    pub d_g_in: usize,
    pub n_sessions_per_brand: usize,
    pub session_length: (usize, usize),
    pub brand_bias_strength: f64,
    pub overlap_fraction: f64,
    pub brands: (Brand, Brand),
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_markets: 5,
            hotels_per_market: 200,
            latent_dim: 3,
            d_a_in: 8,
            d_g_in: 2,
            n_sessions_per_brand: 50_000,
            session_length: (3, 7),
            brand_bias_strength: 0.5,
            overlap_fraction: 0.8,
            brands: (Brand::new("H"), Brand::new("E")),
            seed: 42,
        }
    }
}

impl WorldConfig {
    pub fn n_hotels(&self) -> usize {
        self.n_markets * self.hotels_per_market
    }

    pub fn n_mapped(&self) -> usize {
        (self.overlap_fraction * self.n_hotels() as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_markets", self.n_markets),
            ("hotels_per_market", self.hotels_per_market),
            ("latent_dim", self.latent_dim),
            ("d_a_in", self.d_a_in),
            ("d_g_in", self.d_g_in),
            ("n_sessions_per_brand", self.n_sessions_per_brand),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let (lo, hi) = self.session_length;
        if lo < 2 || hi < lo {
            return Err(Error::Config(format!(
                "session_length ({lo}, {hi}) must satisfy 2 <= min <= max"
            )));
        }
        if !(self.brand_bias_strength >= 0.0 && self.brand_bias_strength.is_finite()) {
            return Err(Error::Config("brand_bias_strength must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config("overlap_fraction must lie in [0, 1]".into()));
        }
        if self.n_mapped() < 1 {
            return Err(Error::Config("overlap_fraction maps no hotel".into()));
        }
        if self.brands.0 == self.brands.1 {
            return Err(Error::Config("the two brands must differ".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct World {
    pub catalog: HotelCatalog,
    /// Unit-norm latent vector per catalog position.
    pub latent: Vec<Vec<f64>>,
    /// Positive popularity weight per catalog position, per brand.
    pub popularity: HashMap<Brand, Vec<f64>>,
    pub mapping: BrandMapping,
}

fn normal_vec(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let n = cfg.n_hotels();

    let mut latent_rng = rng::substream(cfg.seed, "latent", 0);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..cfg.n_markets {
        let mut direction = normal_vec(&mut latent_rng, cfg.latent_dim);
        normalize(&mut direction);
        for _ in 0..cfg.hotels_per_market {
            let noise = normal_vec(&mut latent_rng, cfg.latent_dim);
            let mut v: Vec<f64> = direction
                .iter()
                .zip(&noise)
                .map(|(d, e)| d + LATENT_SPREAD * e)
                .collect();
            normalize(&mut v);
            latent.push(v);
        }
    }

    let mut amenity_rng = rng::substream(cfg.seed, "amenity", 0);
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let projection: Vec<Vec<f64>> = (0..cfg.d_a_in)
        .map(|_| {
            normal_vec(&mut amenity_rng, cfg.latent_dim)
                .into_iter()
                .map(|x| x * scale)
                .collect()
        })
        .collect();

    let mut geo_rng = rng::substream(cfg.seed, "geo", 0);
    let extent = Uniform::new_inclusive(-MARKET_CENTER_EXTENT, MARKET_CENTER_EXTENT)
        .expect("valid range");
    let centers: Vec<Vec<f64>> = (0..cfg.n_markets)
        .map(|_| (0..cfg.d_g_in).map(|_| extent.sample(&mut geo_rng)).collect())
        .collect();

    let mut hotels = Vec::with_capacity(n);
    for (i, v) in latent.iter().enumerate() {
        let market = i / cfg.hotels_per_market;
        let amenities = projection
            .iter()
            .map(|p| (0.5 + dot(p, v)).clamp(0.0, 1.0))
            .collect();
        let geo = centers[market]
            .iter()
            .map(|c| {
                let jitter: f64 = StandardNormal.sample(&mut geo_rng);
                (c + GEO_JITTER * jitter).clamp(-1.0, 1.0)
            })
            .collect();
        hotels.push(HotelRecord {
            hotel_id: hotel_id(i),
            market_id: market_id(market),
            amenities,
            geo,
        });
    }
    let catalog = HotelCatalog::new(hotels)?;

    let mut base_rng = rng::substream(cfg.seed, "popularity", 0);
    let base: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut base_rng);
            BASE_POPULARITY_SIGMA * z
        })
        .collect();
    let mut popularity = HashMap::new();
    for brand in [&cfg.brands.0, &cfg.brands.1] {
        let mut brand_rng = rng::substream(cfg.seed, &format!("popularity/{brand}"), 0);
        let weights = base
            .iter()
            .map(|b| {
                let z: f64 = StandardNormal.sample(&mut brand_rng);
                (b + cfg.brand_bias_strength * z).exp()
            })
            .collect();
        popularity.insert(brand.clone(), weights);
    }

    let mapping = BrandMapping::new(
        (0..cfg.n_mapped())
            .map(|i| (hotel_id(i), hotel_id(i)))
            .collect(),
    )?;

    Ok(World {
        catalog,
        latent,
        popularity,
        mapping,
    })
}

fn hotel_id(i: usize) -> String {
    format!("h{i:06}")
}

fn market_id(m: usize) -> String {
    format!("m{m:03}")
}

/// Click sessions of `brand` over `world`.
///
/// A session picks a market uniformly, a first hotel by popularity, then
/// walks to a different hotel of the same market with probability
/// proportional to `popularity * exp(latent . latent)`.
pub fn generate_sessions(world: &World, brand: &Brand, cfg: &WorldConfig) -> Result<SessionSet> {
    cfg.validate()?;
    let popularity = world
        .popularity
        .get(brand)
        .ok_or_else(|| Error::Config(format!("unknown brand `{brand}`")))?;
    let catalog = &world.catalog;

    let mut starts = Vec::with_capacity(catalog.n_markets());
    // transitions[h] samples a slot of market_of(h); slot of h itself has weight 0.
    let mut transitions = Vec::with_capacity(catalog.len());
    for m in 0..catalog.n_markets() {
        let members = catalog.market_members(m);
        let weights: Vec<f64> = members.iter().map(|&h| popularity[h]).collect();
        starts.push(WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?);
    }
    for h in 0..catalog.len() {
        let members = catalog.market_members(catalog.market_of(h));
        let weights: Vec<f64> = members
            .iter()
            .map(|&c| {
                if c == h {
                    0.0
                } else {
                    popularity[c] * dot(&world.latent[h], &world.latent[c]).exp()
                }
            })
            .collect();
        // Single-hotel markets have nowhere to walk.
        transitions.push(WeightedIndex::new(&weights).ok());
    }

    let mut rng = rng::substream(cfg.seed, &format!("sessions/{brand}"), 0);
    let (lo, hi) = cfg.session_length;
    let mut sessions = Vec::with_capacity(cfg.n_sessions_per_brand);
    for i in 0..cfg.n_sessions_per_brand {
        let m = rng.random_range(0..catalog.n_markets());
        let len = rng.random_range(lo..=hi);
        let members = catalog.market_members(m);
        let mut current = members[starts[m].sample(&mut rng)];
        let mut clicks = Vec::with_capacity(len);
        clicks.push(catalog.id(current).to_string());
        while clicks.len() < len {
            let Some(step) = &transitions[current] else {
                break;
            };
            current = members[step.sample(&mut rng)];
            clicks.push(catalog.id(current).to_string());
        }
        sessions.push(ClickSession {
            session_id: format!("{brand}-{i:07}"),
            brand: brand.clone(),
            market_id: catalog.market_ids()[m].clone(),
            clicks,
        });
    }
    Ok(SessionSet::new(brand.clone(), sessions))
}

/// Reproducibility record written next to generated data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorldMeta {
    pub config: WorldConfig,
    pub n_hotels: usize,
    pub n_mapped: usize,
}

impl WorldMeta {
    pub fn new(cfg: &WorldConfig) -> Self {
        WorldMeta {
            config: cfg.clone(),
            n_hotels: cfg.n_hotels(),
            n_mapped: cfg.n_mapped(),
        }
    }
}
