#![allow(dead_code)]

use brandalign::data::{HotelCatalog, HotelRecord};
use brandalign::data::BrandMapping;
use brandalign::model::{gradients, Matrix, ModelParams, RegVariant, SourceAnchors, TrainConfig};
use brandalign::pipeline::TrainingPair;
use brandalign::{Brand, EmbeddingSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Four hotels in one market, two amenity and two geo features each.
pub fn tiny_catalog(rng: &mut ChaCha8Rng) -> HotelCatalog {
    let records = (0..4)
        .map(|i| HotelRecord {
            hotel_id: format!("h{i}"),
            market_id: "m".into(),
            amenities: (0..2).map(|_| rng.random_range(0.05..1.0)).collect(),
            geo: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    HotelCatalog::new(records).unwrap()
}

pub fn tiny_config(lambda: f64, variant: RegVariant, n_neg: usize) -> TrainConfig {
    TrainConfig {
        d_click: 2,
        d_amenity: 2,
        d_geo: 2,
        dim: 3,
        n_neg,
        lambda,
        reg_variant: variant,
        l2_weight: 0.0,
        ..TrainConfig::default()
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_params(catalog: &HotelCatalog, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> ModelParams {
    ModelParams {
        click: random_matrix(catalog.len(), cfg.d_click, rng),
        amenity: random_matrix(catalog.amenity_dim(), cfg.d_amenity, rng),
        geo: random_matrix(catalog.geo_dim(), cfg.d_geo, rng),
        fusion: random_matrix(cfg.concat_dim(), cfg.dim, rng),
    }
}

pub fn random_pair(n_hotels: usize, n_neg: usize, rng: &mut ChaCha8Rng) -> TrainingPair {
    let target = rng.random_range(0..n_hotels);
    let context = (target + rng.random_range(1..n_hotels)) % n_hotels;
    let negatives = (0..n_neg)
        .map(|_| loop {
            let n = rng.random_range(0..n_hotels);
            if n != target && n != context {
                break n;
            }
        })
        .collect();
    TrainingPair {
        target,
        context,
        negatives,
    }
}

pub fn random_source(catalog: &HotelCatalog, dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingSpace {
    let mut space = EmbeddingSpace::new(Brand::new("S"), dim);
    for h in catalog.hotels() {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.5)).collect();
        space.push(h.hotel_id.clone(), &v).unwrap();
    }
    space
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-8;

fn loss_at(
    pair: &TrainingPair,
    params: &ModelParams,
    catalog: &HotelCatalog,
    anchors: Option<&SourceAnchors>,
    cfg: &TrainConfig,
) -> f64 {
    gradients(pair, params, catalog, anchors, cfg).unwrap().1
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over every
/// parameter coordinate with `|analytic| + |numeric| > FD_FLOOR`, using
/// central differences of the loss.
pub fn max_fd_error(
    pair: &TrainingPair,
    params: &ModelParams,
    catalog: &HotelCatalog,
    anchors: Option<&SourceAnchors>,
    cfg: &TrainConfig,
) -> (f64, usize) {
    let (grads, _) = gradients(pair, params, catalog, anchors, cfg).unwrap();
    let analytic = [
        grads.click_dense(catalog.len(), cfg.d_click),
        grads.amenity.clone(),
        grads.geo.clone(),
        grads.fusion.clone(),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (m, expected) in analytic.iter().enumerate() {
        for i in 0..expected.as_slice().len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            matrix_mut(&mut plus, m).as_mut_slice()[i] += FD_STEP;
            matrix_mut(&mut minus, m).as_mut_slice()[i] -= FD_STEP;
            let numeric = (loss_at(pair, &plus, catalog, anchors, cfg)
                - loss_at(pair, &minus, catalog, anchors, cfg))
                / (2.0 * FD_STEP);
            let a = expected.as_slice()[i];
            if a.abs() + numeric.abs() > FD_FLOOR {
                checked += 1;
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()));
            }
        }
    }
    (worst, checked)
}

fn matrix_mut(p: &mut ModelParams, which: usize) -> &mut Matrix {
    match which {
        0 => &mut p.click,
        1 => &mut p.amenity,
        2 => &mut p.geo,
        _ => &mut p.fusion,
    }
}

pub struct GradInstance {
    pub catalog: HotelCatalog,
    pub params: ModelParams,
    pub pair: TrainingPair,
    pub anchors: Option<SourceAnchors>,
    pub cfg: TrainConfig,
}

/// A random tiny instance; with `lambda > 0` every hotel is anchored to a
/// random source vector.
pub fn grad_instance(seed: u64, lambda: f64, variant: RegVariant, n_neg: usize) -> GradInstance {
    let mut r = rng(seed);
    let catalog = tiny_catalog(&mut r);
    let cfg = tiny_config(lambda, variant, n_neg);
    let params = random_params(&catalog, &cfg, &mut r);
    let pair = random_pair(catalog.len(), n_neg, &mut r);
    let anchors = (lambda > 0.0).then(|| {
        let source = random_source(&catalog, cfg.dim, &mut r);
        let mapping = BrandMapping::new(
            catalog
                .hotels()
                .iter()
                .map(|h| (h.hotel_id.clone(), h.hotel_id.clone()))
                .collect(),
        )
        .unwrap();
        SourceAnchors::new(&catalog, &source, &mapping).unwrap()
    });
    GradInstance {
        catalog,
        params,
        pair,
        anchors,
        cfg,
    }
}
