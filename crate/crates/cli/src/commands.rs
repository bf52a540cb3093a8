//! One function per subcommand.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::json;

use brandalign::align::{apply_projection, common_rows, fit_linear_projection, fit_procrustes, ProjectionMatrix};
use brandalign::data::{load_catalog, load_mapping, load_sessions, split_sessions};
use brandalign::eval::{
    cross_brand_evaluate, evaluate, write_curve, CurvePoint, Direction, MetricsReport, PoolScope, ScoreMode,
};
use brandalign::experiment::{format_table1, run_repro, write_outputs, ReproConfig};
use brandalign::model::{export_embeddings, train as train_model};
use brandalign::synth::{generate_sessions, generate_world, WorldMeta};
use brandalign::{Brand, EmbeddingSpace, TrainConfig, WorldConfig};

use crate::config::{self, finish, optional, required, take, take_onto, write_json};
use crate::{AlignArgs, CliError, EvalArgs, GenArgs, MethodArg, ReproArgs, TrainArgs};

type Outcome = Result<(), CliError>;

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn gen(args: GenArgs) -> Outcome {
    let mut map = config::merged(args.config.as_deref(), &args)?;
    let out: PathBuf = required(&mut map, "out")?;
    let split = optional::<bool>(&mut map, "split")?.unwrap_or(false);
    let cfg: WorldConfig = take(&mut map)?;
    finish(map)?;
    cfg.validate()?;

    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let world = generate_world(&cfg)?;
    world.catalog.write_jsonl(&out.join("catalog.jsonl"))?;
    world.mapping.write_tsv(&out.join("mapping.tsv"))?;
    for brand in [&cfg.brands.0, &cfg.brands.1] {
        let sessions = generate_sessions(&world, brand, &cfg)?;
        sessions.write_jsonl(&out.join(format!("sessions_{brand}.jsonl")))?;
        if split {
            let (train, val, test) = split_sessions(&sessions, (0.8, 0.1, 0.1), cfg.seed)?;
            for (part, set) in [("train", train), ("val", val), ("test", test)] {
                set.write_jsonl(&out.join(format!("sessions_{brand}_{part}.jsonl")))?;
            }
        }
    }
    write_json(&out.join("world_meta.json"), &WorldMeta::new(&cfg))?;
    println!("wrote {} hotels, {} mapped, to {}", cfg.n_hotels(), cfg.n_mapped(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainMeta<'a> {
    command: &'static str,
    config: &'a TrainConfig,
    brand: &'a Brand,
    sessions: &'a Path,
    source_embeddings: Option<&'a Path>,
    mapping: Option<&'a Path>,
    epoch_losses: Vec<f64>,
    steps: u64,
}

pub fn train(args: TrainArgs) -> Outcome {
    let mut map = config::merged(args.config.as_deref(), &args)?;
    let catalog_path: PathBuf = required(&mut map, "catalog")?;
    let sessions_path: PathBuf = required(&mut map, "sessions")?;
    let brand = Brand::new(required::<String>(&mut map, "brand")?);
    let out: PathBuf = required(&mut map, "out")?;
    let source_path: Option<PathBuf> = optional(&mut map, "source_embeddings")?;
    let mapping_path: Option<PathBuf> = optional(&mut map, "mapping")?;
    let curve_path: Option<PathBuf> = optional(&mut map, "curve")?;
    let curve_sessions: Option<PathBuf> = optional(&mut map, "curve_sessions")?;
    let cfg: TrainConfig = take(&mut map)?;
    finish(map)?;
    cfg.validate()?;
    if cfg.lambda > 0.0 && (source_path.is_none() || mapping_path.is_none()) {
        return Err(CliError::Usage(
            "--lambda > 0 needs --source-embeddings and --mapping".into(),
        ));
    }
    if curve_path.is_some() != curve_sessions.is_some() {
        return Err(CliError::Usage("--curve and --curve-sessions go together".into()));
    }

    let catalog = load_catalog(&catalog_path)?;
    let (sessions, cross) = load_sessions(&sessions_path, &catalog, &brand)?;
    if !cross.is_empty() {
        eprintln!("warning: {} sessions span several markets", cross.len());
    }
    let (source, mapping) = if cfg.lambda > 0.0 {
        let source = EmbeddingSpace::read_text(source_path.as_deref().unwrap(), Brand::new("source"))?;
        let mapping = load_mapping(mapping_path.as_deref().unwrap())?;
        (Some(source), Some(mapping))
    } else {
        (None, None)
    };

    let mut points: Vec<CurvePoint> = Vec::new();
    let mut curve_error = None;
    let outcome = match &curve_sessions {
        Some(path) => {
            let (test, _) = load_sessions(path, &catalog, &brand)?;
            let mut sink = |step: u64, space: &EmbeddingSpace| {
                if curve_error.is_some() {
                    return;
                }
                match evaluate(&test, &catalog, space, ScoreMode::Model, &[10, 100], PoolScope::Market) {
                    Ok(r) => points.push(CurvePoint {
                        step,
                        hits_at_10: r.hits(10),
                        hits_at_100: r.hits(100),
                    }),
                    Err(e) => curve_error = Some(e),
                }
            };
            train_model(&sessions, &catalog, &cfg, source.as_ref(), mapping.as_ref(), Some(&mut sink))?
        }
        None => train_model(&sessions, &catalog, &cfg, source.as_ref(), mapping.as_ref(), None)?,
    };
    if let Some(e) = curve_error {
        return Err(e.into());
    }

    let space = export_embeddings(&outcome.params, &catalog, brand.clone());
    space.write_text(&out)?;
    if let Some(path) = &curve_path {
        write_curve(path, &points)?;
    }
    let losses: Vec<f64> = outcome.epochs.iter().map(|e| e.mean_loss).collect();
    write_json(
        &sidecar(&out, ".meta.json"),
        &TrainMeta {
            command: "train",
            config: &cfg,
            brand: &brand,
            sessions: &sessions_path,
            source_embeddings: source_path.as_deref(),
            mapping: mapping_path.as_deref(),
            epoch_losses: losses.clone(),
            steps: outcome.steps,
        },
    )?;
    match losses.last() {
        Some(loss) => println!("final train loss {loss:.6} after {} steps", outcome.steps),
        None => println!("no training steps"),
    }
    Ok(())
}

pub fn align(args: AlignArgs) -> Outcome {
    let mut map = config::merged(args.config.as_deref(), &args)?;
    let source_path: PathBuf = required(&mut map, "source_embeddings")?;
    let target_path: PathBuf = required(&mut map, "target_embeddings")?;
    let mapping_path: PathBuf = required(&mut map, "mapping")?;
    let out: PathBuf = required(&mut map, "out")?;
    let method: MethodArg = optional(&mut map, "method")?.unwrap_or(MethodArg::Lp);
    finish(map)?;

    let source = EmbeddingSpace::read_text(&source_path, Brand::new("source"))?;
    let target = EmbeddingSpace::read_text(&target_path, Brand::new("target"))?;
    let mapping = load_mapping(&mapping_path)?;
    let rows = common_rows(&source, &target, &mapping)?;
    let projection = match method {
        MethodArg::Lp => fit_linear_projection(&rows.source, &rows.target)?,
        MethodArg::Procrustes => fit_procrustes(&rows.source, &rows.target)?,
    };
    projection.write_text(&out)?;
    let summary = json!({
        "kind": projection.kind.to_string(),
        "n_common": rows.ids.len(),
        "excluded": rows.excluded,
        "residual": projection.fit_residual,
        "orthogonality_error": projection.orthogonality_error(),
        "degenerate": projection.degenerate,
    });
    write_json(&sidecar(&out, ".json"), &summary)?;
    println!("{summary}");
    if matches!(method, MethodArg::Procrustes) {
        eprintln!("orthogonality error {:.3e}", projection.orthogonality_error());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalMeta<'a> {
    command: &'static str,
    sessions: &'a Path,
    brand: &'a Brand,
    embeddings: &'a Path,
    apply_projection: Option<&'a Path>,
    cross_brand: bool,
    mapping: Option<&'a Path>,
    direction: Direction,
    modes: &'a [ScoreMode],
    ks: &'a [usize],
    pool: PoolScope,
    max_missing: f64,
    counts: Vec<&'a brandalign::eval::EvalCounts>,
}

pub fn eval(args: EvalArgs) -> Outcome {
    let mut map = config::merged(args.config.as_deref(), &args)?;
    let catalog_path: PathBuf = required(&mut map, "catalog")?;
    let sessions_path: PathBuf = required(&mut map, "sessions")?;
    let brand = Brand::new(required::<String>(&mut map, "brand")?);
    let emb_path: PathBuf = required(&mut map, "embeddings")?;
    let projection_path: Option<PathBuf> = optional(&mut map, "apply_projection")?;
    let cross = optional::<bool>(&mut map, "cross_brand")?.unwrap_or(false);
    let mapping_path: Option<PathBuf> = optional(&mut map, "mapping")?;
    let direction: Direction = optional(&mut map, "direction")?.unwrap_or_default();
    let modes: Vec<ScoreMode> = optional(&mut map, "mode")?.unwrap_or_else(|| vec![ScoreMode::Cosine]);
    let ks: Vec<usize> = optional(&mut map, "k")?.unwrap_or_else(|| vec![10, 100]);
    let pool: PoolScope = optional(&mut map, "pool")?.unwrap_or_default();
    let max_missing: f64 = optional(&mut map, "max_missing")?.unwrap_or(0.5);
    let out: Option<PathBuf> = optional(&mut map, "out")?;
    finish(map)?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&max_missing) {
        return Err(CliError::Usage("--max-missing must lie in [0, 1]".into()));
    }
    if cross && mapping_path.is_none() {
        return Err(CliError::Usage("--cross-brand needs --mapping".into()));
    }

    let catalog = load_catalog(&catalog_path)?;
    let (sessions, _) = load_sessions(&sessions_path, &catalog, &brand)?;
    let mut space = EmbeddingSpace::read_text(&emb_path, brand.clone())?;
    if let Some(p) = &projection_path {
        space = apply_projection(&space, &ProjectionMatrix::read_text(p)?)?;
    }
    let mapping = mapping_path.as_deref().map(load_mapping).transpose()?;

    let mut reports: Vec<MetricsReport> = Vec::new();
    for &mode in &modes {
        let report = match (&mapping, cross) {
            (Some(m), true) => cross_brand_evaluate(&sessions, &catalog, &space, m, direction, mode, &ks, pool)?,
            _ => evaluate(&sessions, &catalog, &space, mode, &ks, pool)?,
        };
        if report.skipped_fraction() > max_missing {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "{:.1}% of queries have no embedding (limit {:.1}%)",
                100.0 * report.skipped_fraction(),
                100.0 * max_missing
            )));
        }
        reports.push(report);
    }

    let meta = EvalMeta {
        command: "eval",
        sessions: &sessions_path,
        brand: &brand,
        embeddings: &emb_path,
        apply_projection: projection_path.as_deref(),
        cross_brand: cross,
        mapping: mapping_path.as_deref(),
        direction,
        modes: &modes,
        ks: &ks,
        pool,
        max_missing,
        counts: reports.iter().map(|r| &r.counts).collect(),
    };
    let lines: Vec<_> = reports.iter().flat_map(|r| r.lines.iter()).collect();
    match &out {
        Some(path) => {
            write_metric_lines(path, &lines)?;
            write_json(&sidecar(path, ".meta.json"), &meta)?;
        }
        None => {
            for l in &lines {
                println!("{}", serde_json::to_string(l).context("serializing metrics")?);
            }
            eprintln!("{}", serde_json::to_string(&meta).context("serializing config")?);
        }
    }
    Ok(())
}

fn write_metric_lines(path: &Path, lines: &[&brandalign::eval::MetricLine]) -> Outcome {
    let mut text = String::new();
    for l in lines {
        text.push_str(&serde_json::to_string(l).context("serializing metrics")?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn repro(args: ReproArgs) -> Outcome {
    let mut map = config::merged(args.config.as_deref(), &args)?;
    let out: PathBuf = optional(&mut map, "out")?.unwrap_or_else(|| PathBuf::from("repro_out"));
    let quick = optional::<bool>(&mut map, "quick")?.unwrap_or(false);
    let seed: Option<u64> = optional(&mut map, "seed")?;
    let base = if quick { ReproConfig::quick() } else { ReproConfig::default() };
    let mut cfg = ReproConfig {
        world: take_onto(&mut map, base.world.clone())?,
        train: take_onto(&mut map, base.train.clone())?,
        ..base
    };
    cfg = take_onto(&mut map, cfg)?;
    finish(map)?;
    if let Some(seed) = seed {
        cfg.world.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.validate()?;

    let started = std::time::Instant::now();
    let result = run_repro(&cfg, &mut |line| eprintln!("[{:>6.1}s] {line}", started.elapsed().as_secs_f64()))?;
    write_outputs(&result, &cfg, &out)?;
    println!("{}", format_table1(&result, (&cfg.world.brands.0, &cfg.world.brands.1)));
    for c in &result.checks {
        println!("criterion {}: {} - {} ({})", c.criterion, if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if result.passed() {
        Ok(())
    } else {
        let failed: Vec<String> = result
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.criterion.to_string())
            .collect();
        Err(CliError::Acceptance(format!("criteria {} failed", failed.join(", "))))
    }
}
