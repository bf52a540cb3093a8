mod common;

use brandalign::model::{
    enriched_embedding, export_embeddings, gradients, train, Matrix, ModelParams, RegVariant, TrainConfig,
};
use brandalign::pipeline::TrainingPair;
use brandalign::synth::{generate_sessions, generate_world, WorldConfig};
use brandalign::{Brand, BrandMapping, HotelCatalog};
use common::*;

/// Straight-line forward pass written independently of the crate's one.
fn oracle_embedding(catalog: &HotelCatalog, params: &ModelParams, h: usize) -> Vec<f64> {
    fn project(x: &[f64], w: &Matrix) -> Vec<f64> {
        (0..w.cols())
            .map(|j| (0..w.rows()).map(|i| x[i] * w.row(i)[j]).sum())
            .collect()
    }
    fn unit_relu(y: Vec<f64>) -> Vec<f64> {
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-12 {
            return vec![0.0; y.len()];
        }
        y.into_iter().map(|v| (v / n).max(0.0)).collect()
    }
    let rec = catalog.hotel(h);
    let mut onehot = vec![0.0; catalog.len()];
    onehot[h] = 1.0;
    let mut concat = unit_relu(project(&onehot, &params.click));
    concat.extend(unit_relu(project(&rec.amenities, &params.amenity)));
    concat.extend(unit_relu(project(&rec.geo, &params.geo)));
    project(&concat, &params.fusion)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect()
}

#[test]
fn forward_matches_oracle() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let catalog = tiny_catalog(&mut r);
        let cfg = tiny_config(0.0, RegVariant::Norm, 1);
        let params = random_params(&catalog, &cfg, &mut r);
        for h in 0..catalog.len() {
            let got = enriched_embedding(catalog.id(h), &params, &catalog).unwrap();
            let want = oracle_embedding(&catalog, &params, h);
            assert_eq!(got.len(), 3);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "seed {seed}: {got:?} vs {want:?}");
                assert!(*g >= 0.0);
            }
        }
    }
}

#[test]
fn zero_fusion_gives_zero_vector() {
    let mut r = rng(1);
    let catalog = tiny_catalog(&mut r);
    let cfg = tiny_config(0.0, RegVariant::Norm, 1);
    let mut params = random_params(&catalog, &cfg, &mut r);
    params.fusion.fill(0.0);
    assert_eq!(enriched_embedding("h0", &params, &catalog).unwrap(), vec![0.0; 3]);
    assert!(enriched_embedding("nope", &params, &catalog).is_err());
}

#[test]
fn identical_inputs_identical_embeddings() {
    let mut r = rng(2);
    let mut records = tiny_catalog(&mut r).hotels().to_vec();
    records[1].amenities = records[0].amenities.clone();
    records[1].geo = records[0].geo.clone();
    let catalog = HotelCatalog::new(records).unwrap();
    let cfg = tiny_config(0.0, RegVariant::Norm, 1);
    let mut params = random_params(&catalog, &cfg, &mut r);
    let row0 = params.click.row(0).to_vec();
    params.click.row_mut(1).copy_from_slice(&row0);
    assert_eq!(
        enriched_embedding("h0", &params, &catalog).unwrap(),
        enriched_embedding("h1", &params, &catalog).unwrap()
    );
}

#[test]
fn gradient_matches_finite_differences_plain() {
    let inst = grad_instance(3, 0.0, RegVariant::Norm, 1);
    let (err, checked) = max_fd_error(&inst.pair, &inst.params, &inst.catalog, None, &inst.cfg);
    assert!(checked > 10);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gradient_matches_finite_differences_squared_regularizer() {
    let inst = grad_instance(4, 1.0, RegVariant::SquaredNorm, 1);
    let (err, _) = max_fd_error(&inst.pair, &inst.params, &inst.catalog, inst.anchors.as_ref(), &inst.cfg);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gradient_matches_finite_differences_with_weight_decay() {
    let mut inst = grad_instance(5, 1.0, RegVariant::Norm, 3);
    inst.cfg.l2_weight = 0.1;
    let (err, _) = max_fd_error(&inst.pair, &inst.params, &inst.catalog, inst.anchors.as_ref(), &inst.cfg);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn untouched_click_rows_have_zero_gradient() {
    let inst = grad_instance(6, 0.0, RegVariant::Norm, 1);
    let (grads, _) = gradients(&inst.pair, &inst.params, &inst.catalog, None, &inst.cfg).unwrap();
    let dense = grads.click_dense(inst.catalog.len(), inst.cfg.d_click);
    let touched = [inst.pair.target, inst.pair.context, inst.pair.negatives[0]];
    for h in 0..inst.catalog.len() {
        if !touched.contains(&h) {
            assert!(dense.row(h).iter().all(|g| *g == 0.0));
        }
    }
    assert!(grads.click_rows.iter().all(|(h, _)| touched.contains(h)));
}

#[test]
fn lambda_without_anchors_is_a_config_error() {
    let inst = grad_instance(7, 1.0, RegVariant::Norm, 1);
    assert!(gradients(&inst.pair, &inst.params, &inst.catalog, None, &inst.cfg).is_err());
    let bad = TrainingPair {
        target: 99,
        ..inst.pair.clone()
    };
    assert!(gradients(&bad, &inst.params, &inst.catalog, inst.anchors.as_ref(), &inst.cfg).is_err());
}

fn reference_tiny_world() -> (WorldConfig, brandalign::World) {
    let cfg = WorldConfig {
        n_markets: 2,
        hotels_per_market: 3,
        n_sessions_per_brand: 10,
        overlap_fraction: 1.0,
        ..WorldConfig::default()
    };
    let world = generate_world(&cfg).unwrap();
    (cfg, world)
}

fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        d_click: 4,
        d_amenity: 4,
        d_geo: 4,
        dim: 8,
        window: 1,
        n_neg: 2,
        epochs: 5,
        learning_rate: 0.05,
        ..TrainConfig::default()
    }
}

#[test]
fn training_lowers_mean_loss() {
    let (wcfg, world) = reference_tiny_world();
    let sessions = generate_sessions(&world, &wcfg.brands.1, &wcfg).unwrap();
    let out = train(&sessions, &world.catalog, &tiny_train_config(), None, None, None).unwrap();
    let first = out.epochs[0].mean_loss;
    let last = out.epochs[4].mean_loss;
    assert!(last < first, "{first} -> {last}");
    // Frozen from the reference run.
    assert_eq!(out.epochs[0].pairs, out.epochs[4].pairs);
    assert!((first - FROZEN_EPOCH1_LOSS).abs() < 1e-9, "epoch 1 loss {first}");
    assert!((last - FROZEN_EPOCH5_LOSS).abs() < 1e-9, "epoch 5 loss {last}");
}

const FROZEN_EPOCH1_LOSS: f64 = 2.0795061281934633;
const FROZEN_EPOCH5_LOSS: f64 = 2.0790013874075846;

#[test]
fn empty_mapping_matches_plain_training() {
    let (wcfg, world) = reference_tiny_world();
    let sessions = generate_sessions(&world, &wcfg.brands.1, &wcfg).unwrap();
    let plain = train(&sessions, &world.catalog, &tiny_train_config(), None, None, None).unwrap();
    let source = export_embeddings(&plain.params, &world.catalog, Brand::new("H"));
    let cfg = TrainConfig {
        lambda: 1.0,
        ..tiny_train_config()
    };
    let empty = BrandMapping::default();
    let da = train(&sessions, &world.catalog, &cfg, Some(&source), Some(&empty), None).unwrap();
    assert_eq!(plain.params, da.params);
}

fn mean_distance(a: &brandalign::EmbeddingSpace, b: &brandalign::EmbeddingSpace, mapping: &BrandMapping) -> f64 {
    let d: Vec<f64> = mapping
        .pairs()
        .iter()
        .map(|(s, t)| {
            let (x, y) = (b.get(s).unwrap(), a.get(t).unwrap());
            x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    d.iter().sum::<f64>() / d.len() as f64
}

#[test]
fn strong_regularizer_pulls_towards_source() {
    let (wcfg, world) = reference_tiny_world();
    let source_sessions = generate_sessions(&world, &wcfg.brands.0, &wcfg).unwrap();
    let target_sessions = generate_sessions(&world, &wcfg.brands.1, &wcfg).unwrap();
    let base = TrainConfig {
        seed: 1,
        ..tiny_train_config()
    };
    let src = train(&source_sessions, &world.catalog, &base, None, None, None).unwrap();
    let source = export_embeddings(&src.params, &world.catalog, wcfg.brands.0.clone());

    let run = |lambda: f64| {
        let cfg = TrainConfig {
            lambda,
            reg_variant: RegVariant::SquaredNorm,
            seed: 2,
            ..tiny_train_config()
        };
        let out = train(&target_sessions, &world.catalog, &cfg, Some(&source), Some(&world.mapping), None).unwrap();
        export_embeddings(&out.params, &world.catalog, wcfg.brands.1.clone())
    };
    let free = mean_distance(&run(0.0), &source, &world.mapping);
    let pulled = mean_distance(&run(10.0), &source, &world.mapping);
    assert!(pulled < free, "{pulled} vs {free}");
    assert!((free - FROZEN_FREE_DISTANCE).abs() < 1e-9, "lambda=0 distance {free}");
    assert!((pulled - FROZEN_PULLED_DISTANCE).abs() < 1e-9, "lambda=10 distance {pulled}");
}

const FROZEN_FREE_DISTANCE: f64 = 0.8488861958631629;
const FROZEN_PULLED_DISTANCE: f64 = 0.23515647874770632;

#[test]
fn export_covers_catalog_and_matches_single_lookups() {
    let (wcfg, world) = reference_tiny_world();
    let sessions = generate_sessions(&world, &wcfg.brands.1, &wcfg).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..tiny_train_config()
    };
    let out = train(&sessions, &world.catalog, &cfg, None, None, None).unwrap();
    let a = export_embeddings(&out.params, &world.catalog, Brand::new("E"));
    let b = export_embeddings(&out.params, &world.catalog, Brand::new("E"));
    assert_eq!(a.len(), 6);
    assert_eq!(a.dim(), 8);
    assert_eq!(a, b);
    for (id, v) in a.iter() {
        let single = enriched_embedding(id, &out.params, &world.catalog).unwrap();
        assert_eq!(
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            single.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(v.iter().all(|x| *x >= 0.0));
    }
}

#[test]
fn training_is_bit_reproducible() {
    let (wcfg, world) = reference_tiny_world();
    let sessions = generate_sessions(&world, &wcfg.brands.1, &wcfg).unwrap();
    for optimizer in [brandalign::model::Optimizer::Sgd, brandalign::model::Optimizer::adam()] {
        let cfg = TrainConfig {
            optimizer,
            ..tiny_train_config()
        };
        let a = train(&sessions, &world.catalog, &cfg, None, None, None).unwrap();
        let b = train(&sessions, &world.catalog, &cfg, None, None, None).unwrap();
        assert_eq!(
            export_embeddings(&a.params, &world.catalog, Brand::new("E")),
            export_embeddings(&b.params, &world.catalog, Brand::new("E"))
        );
    }
}

#[test]
fn lambda_requires_source() {
    let (wcfg, world) = reference_tiny_world();
    let sessions = generate_sessions(&world, &wcfg.brands.1, &wcfg).unwrap();
    let cfg = TrainConfig {
        lambda: 1.0,
        ..tiny_train_config()
    };
    assert!(train(&sessions, &world.catalog, &cfg, None, None, None).is_err());
}

#[test]
fn curve_sink_fires_every_interval() {
    let (wcfg, world) = reference_tiny_world();
    let sessions = generate_sessions(&world, &wcfg.brands.1, &wcfg).unwrap();
    let cfg = TrainConfig {
        eval_every: 7,
        ..tiny_train_config()
    };
    let mut steps = Vec::new();
    let mut sink = |step: u64, space: &brandalign::EmbeddingSpace| {
        assert_eq!(space.len(), 6);
        steps.push(step);
    };
    let out = train(&sessions, &world.catalog, &cfg, None, None, Some(&mut sink)).unwrap();
    assert_eq!(steps.len() as u64, out.steps / 7);
    assert!(steps.iter().all(|s| s % 7 == 0));
}
