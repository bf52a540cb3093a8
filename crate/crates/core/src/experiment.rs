//! The reference experiment: two brands, single-brand models, DA-trained
//! models, a least-squares projection, and the comparisons between them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{apply_projection, common_rows, fit_linear_projection};
use crate::data::{split_sessions, write_lines, Brand, BrandMapping, SessionSet};
use crate::error::{Error, Result};
use crate::eval::{
    cross_brand_evaluate, evaluate, write_curve, CurvePoint, Direction, MetricsReport, PoolScope, ScoreMode, Setting,
};
use crate::model::{export_embeddings, train, TrainConfig};
use crate::space::EmbeddingSpace;
use crate::synth::{generate_sessions, generate_world, World, WorldConfig};

/// In-brand hits@100 of the λ=1 model must stay above this share of the
/// single-brand model's.
pub const NON_DEGRADATION_RATIO: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproConfig {
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub lambda_full: f64,
    pub lambda_half: f64,
    pub split: (f64, f64, f64),
    pub ks: Vec<usize>,
    pub pool: PoolScope,
}

impl Default for ReproConfig {
    fn default() -> Self {
        ReproConfig {
            world: WorldConfig::default(),
            train: reference_train_config(),
            lambda_full: 1.0,
            lambda_half: 0.5,
            split: (0.8, 0.1, 0.1),
            ks: vec![10, 100],
            pool: PoolScope::Market,
        }
    }
}

/// Training settings for the reference run. With nonnegative embeddings
/// and uniform in-market negatives, more than one negative per pair drives
/// most hotels to the all-zero vector, so this uses a single one.
pub fn reference_train_config() -> TrainConfig {
    TrainConfig {
        window: 1,
        n_neg: 1,
        learning_rate: 0.01,
        epochs: 5,
        eval_every: 20_000,
        ..TrainConfig::default()
    }
}

impl ReproConfig {
    /// A small world that runs in seconds.
    pub fn quick() -> Self {
        ReproConfig {
            world: WorldConfig {
                n_markets: 2,
                hotels_per_market: 150,
                n_sessions_per_brand: 8_000,
                ..WorldConfig::default()
            },
            train: TrainConfig {
                epochs: 3,
                eval_every: 5_000,
                ..reference_train_config()
            },
            ..ReproConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        for (name, l) in [("lambda_full", self.lambda_full), ("lambda_half", self.lambda_half)] {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {l}")));
            }
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be non-empty and at least 1".into()));
        }
        for k in [10, 100] {
            if !self.ks.contains(&k) {
                return Err(Error::Config(format!("ks must include {k}")));
            }
        }
        Ok(())
    }
}

/// One cell group of the Table 1 analog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableLine {
    pub embeddings: String,
    pub test_brand: Brand,
    pub setting: Setting,
    pub mode: ScoreMode,
    pub k: usize,
    pub hits: f64,
    pub mrr: f64,
    pub n_events: usize,
}

/// Mean distance between a target model's and the source model's vectors
/// over mapped hotels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappedDistances {
    pub lambda_zero: f64,
    pub lambda_half: f64,
    pub lambda_full: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub criterion: u32,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpFit {
    pub n_common: usize,
    pub excluded: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproOutput {
    pub table1: Vec<TableLine>,
    pub table2: Vec<TableLine>,
    pub curve_single: Vec<CurvePoint>,
    pub curve_da: Vec<CurvePoint>,
    pub distances: MappedDistances,
    pub lp: LpFit,
    pub checks: Vec<Check>,
}

impl ReproOutput {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn cell(&self, embeddings: &str, test_brand: &str, k: usize) -> Option<&TableLine> {
        self.table1
            .iter()
            .find(|l| l.embeddings == embeddings && l.test_brand.as_str() == test_brand && l.k == k)
    }
}

pub const ROW_SOURCE: &str = "hotel2vec_source";
pub const ROW_TARGET: &str = "hotel2vec_target";
pub const ROW_LP: &str = "lp";
pub const ROW_DA_FULL: &str = "hotel2vec_da_full";
pub const ROW_DA_HALF: &str = "hotel2vec_da_half";

struct Brands {
    source: Brand,
    target: Brand,
}

struct Splits {
    train: SessionSet,
    test: SessionSet,
}

fn split(set: &SessionSet, cfg: &ReproConfig) -> Result<Splits> {
    let (train, _val, test) = split_sessions(set, cfg.split, cfg.world.seed)?;
    Ok(Splits { train, test })
}

/// Mean L2 distance over the mapping between `target` and `source` vectors.
pub fn mean_mapped_distance(source: &EmbeddingSpace, target: &EmbeddingSpace, mapping: &BrandMapping) -> Result<f64> {
    let rows = common_rows(source, target, mapping)?;
    let diff = &rows.target - &rows.source;
    let total: f64 = diff.row_iter().map(|r| r.norm()).sum();
    Ok(total / diff.nrows() as f64)
}

fn curve_point(step: u64, report: &MetricsReport) -> CurvePoint {
    CurvePoint {
        step,
        hits_at_10: report.hits(10),
        hits_at_100: report.hits(100),
    }
}

/// Trains a target-brand model and records model-scored checkpoints on `test`.
fn train_with_curve(
    world: &World,
    train_set: &SessionSet,
    test: &SessionSet,
    cfg: &TrainConfig,
    source: Option<&EmbeddingSpace>,
    mapping: Option<&BrandMapping>,
    ks: &[usize],
    pool: PoolScope,
) -> Result<(EmbeddingSpace, Vec<CurvePoint>)> {
    let mut points = Vec::new();
    let mut failure = None;
    let mut sink = |step: u64, space: &EmbeddingSpace| {
        if failure.is_some() {
            return;
        }
        match evaluate(test, &world.catalog, space, ScoreMode::Model, ks, pool) {
            Ok(r) => points.push(curve_point(step, &r)),
            Err(e) => failure = Some(e),
        }
    };
    let outcome = train(train_set, &world.catalog, cfg, source, mapping, Some(&mut sink))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let space = export_embeddings(&outcome.params, &world.catalog, train_set.brand.clone());
    if points.last().is_none_or(|p| p.step != outcome.steps) {
        let r = evaluate(test, &world.catalog, &space, ScoreMode::Model, ks, pool)?;
        points.push(curve_point(outcome.steps, &r));
    }
    Ok((space, points))
}

/// First checkpoint at which `curve` reaches `level`.
pub fn first_step_reaching(curve: &[CurvePoint], level: f64) -> Option<u64> {
    curve.iter().find(|p| p.hits_at_100 >= level).map(|p| p.step)
}

/// Runs the whole experiment in memory. `log` receives progress lines.
pub fn run_repro(cfg: &ReproConfig, log: &mut dyn FnMut(&str)) -> Result<ReproOutput> {
    cfg.validate()?;
    let world = generate_world(&cfg.world)?;
    let brands = Brands {
        source: cfg.world.brands.0.clone(),
        target: cfg.world.brands.1.clone(),
    };
    let mapping = &world.mapping;
    let source_split = split(&generate_sessions(&world, &brands.source, &cfg.world)?, cfg)?;
    let target_split = split(&generate_sessions(&world, &brands.target, &cfg.world)?, cfg)?;
    log(&format!(
        "world: {} hotels, {} mapped, {}/{} train sessions",
        world.catalog.len(),
        mapping.len(),
        source_split.train.len(),
        target_split.train.len()
    ));

    let plain = TrainConfig {
        lambda: 0.0,
        ..cfg.train.clone()
    };
    log(&format!("training {} (single brand)", brands.source));
    let source_out = train(&source_split.train, &world.catalog, &plain, None, None, None)?;
    let source_space = export_embeddings(&source_out.params, &world.catalog, brands.source.clone());

    log(&format!("training {} (single brand)", brands.target));
    let (target_space, curve_single) = train_with_curve(
        &world,
        &target_split.train,
        &target_split.test,
        &plain,
        None,
        None,
        &cfg.ks,
        cfg.pool,
    )?;

    log(&format!("training {} (lambda {})", brands.target, cfg.lambda_full));
    let full = TrainConfig {
        lambda: cfg.lambda_full,
        ..cfg.train.clone()
    };
    let (da_full, curve_da) = train_with_curve(
        &world,
        &target_split.train,
        &target_split.test,
        &full,
        Some(&source_space),
        Some(mapping),
        &cfg.ks,
        cfg.pool,
    )?;

    log(&format!("training {} (lambda {})", brands.target, cfg.lambda_half));
    let half = TrainConfig {
        lambda: cfg.lambda_half,
        ..cfg.train.clone()
    };
    let da_half_out = train(&target_split.train, &world.catalog, &half, Some(&source_space), Some(mapping), None)?;
    let da_half = export_embeddings(&da_half_out.params, &world.catalog, brands.target.clone());

    log("fitting linear projection");
    let rows = common_rows(&source_space, &target_space, mapping)?;
    let projection = fit_linear_projection(&rows.source, &rows.target)?;
    let lp = LpFit {
        n_common: rows.ids.len(),
        excluded: rows.excluded,
        residual: projection.fit_residual,
    };
    let projected = apply_projection(&source_space, &projection)?.with_brand(brands.source.clone());

    log("evaluating");
    let rows_t1: [(&str, &EmbeddingSpace); 5] = [
        (ROW_SOURCE, &source_space),
        (ROW_TARGET, &target_space),
        (ROW_LP, &projected),
        (ROW_DA_FULL, &da_full),
        (ROW_DA_HALF, &da_half),
    ];
    let mut table1 = Vec::new();
    for (name, space) in rows_t1 {
        for test in [&target_split.test, &source_split.test] {
            let report = if space.brand() == &test.brand {
                evaluate(test, &world.catalog, space, ScoreMode::Cosine, &cfg.ks, cfg.pool)?
            } else {
                let direction = if test.brand == brands.target {
                    Direction::TargetToSource
                } else {
                    Direction::SourceToTarget
                };
                cross_brand_evaluate(test, &world.catalog, space, mapping, direction, ScoreMode::Cosine, &cfg.ks, cfg.pool)?
            };
            table1.extend(lines(name, &test.brand, &report));
        }
    }

    let mut table2 = Vec::new();
    for (name, space) in [(ROW_TARGET, &target_space), (ROW_DA_FULL, &da_full)] {
        let report = evaluate(&target_split.test, &world.catalog, space, ScoreMode::Model, &cfg.ks, cfg.pool)?;
        table2.extend(lines(name, &brands.target, &report));
    }

    let distances = MappedDistances {
        lambda_zero: mean_mapped_distance(&source_space, &target_space, mapping)?,
        lambda_half: mean_mapped_distance(&source_space, &da_half, mapping)?,
        lambda_full: mean_mapped_distance(&source_space, &da_full, mapping)?,
    };

    let mut out = ReproOutput {
        table1,
        table2,
        curve_single,
        curve_da,
        distances,
        lp,
        checks: Vec::new(),
    };
    out.checks = checks(&out, &brands);
    Ok(out)
}

fn lines(name: &str, brand: &Brand, report: &MetricsReport) -> Vec<TableLine> {
    report
        .lines
        .iter()
        .map(|l| TableLine {
            embeddings: name.to_string(),
            test_brand: brand.clone(),
            setting: l.setting,
            mode: l.mode,
            k: l.k,
            hits: l.hits,
            mrr: l.mrr,
            n_events: l.n_events,
        })
        .collect()
}

fn hits100(out: &ReproOutput, name: &str, brand: &Brand) -> f64 {
    out.cell(name, brand.as_str(), 100).map_or(f64::NAN, |l| l.hits)
}

fn checks(out: &ReproOutput, brands: &Brands) -> Vec<Check> {
    let mut checks = Vec::new();

    // Each space's zero-shot cell: DA target space on source sessions, the
    // projected source space on target sessions.
    let da_cross = hits100(out, ROW_DA_FULL, &brands.source);
    let lp_cross = hits100(out, ROW_LP, &brands.target);
    checks.push(Check {
        criterion: 4,
        name: "zero-shot hits@100: DA above LP".into(),
        pass: da_cross > lp_cross,
        detail: format!("da={da_cross:.6} lp={lp_cross:.6}"),
    });

    let d = &out.distances;
    checks.push(Check {
        criterion: 5,
        name: "mapped distance shrinks with lambda".into(),
        pass: d.lambda_full < d.lambda_zero && d.lambda_full <= d.lambda_half && d.lambda_half <= d.lambda_zero,
        detail: format!("l0={:.6} l0.5={:.6} l1={:.6}", d.lambda_zero, d.lambda_half, d.lambda_full),
    });

    let plain_in = hits100(out, ROW_TARGET, &brands.target);
    let da_in = hits100(out, ROW_DA_FULL, &brands.target);
    checks.push(Check {
        criterion: 6,
        name: "in-brand hits@100 kept".into(),
        pass: da_in >= NON_DEGRADATION_RATIO * plain_in,
        detail: format!("da={da_in:.6} single={plain_in:.6} ratio={:.4}", da_in / plain_in),
    });

    let model = |name: &str| {
        out.table2
            .iter()
            .find(|l| l.embeddings == name && l.k == 100)
            .map_or(f64::NAN, |l| l.hits)
    };
    let (single_m, da_m) = (model(ROW_TARGET), model(ROW_DA_FULL));
    checks.push(Check {
        criterion: 7,
        name: "model-scored hits@100: DA at least single brand".into(),
        pass: da_m >= single_m,
        detail: format!("da={da_m:.6} single={single_m:.6}"),
    });

    let first = |c: &[CurvePoint]| c.first().map_or(f64::NAN, |p| p.hits_at_100);
    let single_final = out.curve_single.last().map_or(f64::NAN, |p| p.hits_at_100);
    let da_reach = first_step_reaching(&out.curve_da, single_final);
    let single_reach = first_step_reaching(&out.curve_single, single_final);
    let jump = first(&out.curve_da) > first(&out.curve_single);
    let earlier = matches!((da_reach, single_reach), (Some(a), Some(b)) if a < b);
    checks.push(Check {
        criterion: 8,
        name: "jump-start".into(),
        pass: jump && earlier,
        detail: format!(
            "first: da={:.6} single={:.6}; reaches {single_final:.6} at da={da_reach:?} single={single_reach:?}",
            first(&out.curve_da),
            first(&out.curve_single)
        ),
    });
    checks
}

pub const TABLE1_FILE: &str = "table1.jsonl";
pub const TABLE2_FILE: &str = "table2.jsonl";
pub const CURVE_SINGLE_FILE: &str = "curve_single.jsonl";
pub const CURVE_DA_FILE: &str = "curve_da.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ReproConfig,
    distances: &'a MappedDistances,
    lp: &'a LpFit,
    checks: &'a [Check],
    passed: bool,
}

/// Writes tables, curves and a summary (with the config echoed) into `dir`.
pub fn write_outputs(out: &ReproOutput, cfg: &ReproConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_lines(&dir.join(TABLE1_FILE), out.table1.iter())?;
    write_lines(&dir.join(TABLE2_FILE), out.table2.iter())?;
    write_curve(&dir.join(CURVE_SINGLE_FILE), &out.curve_single)?;
    write_curve(&dir.join(CURVE_DA_FILE), &out.curve_da)?;
    let summary = Summary {
        config: cfg,
        distances: &out.distances,
        lp: &out.lp,
        checks: &out.checks,
        passed: out.passed(),
    };
    let path = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Human-readable rendering of the Table 1 analog.
pub fn format_table1(out: &ReproOutput, brands: (&Brand, &Brand)) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let cols = [(100, true), (10, true), (10, false), (100, false)];
    let _ = write!(s, "{:<20}", "embeddings");
    for b in [brands.1, brands.0] {
        for (k, hits) in cols {
            let _ = write!(s, " {:>9}", format!("{}:{}@{k}", b, if hits { "hits" } else { "mrr" }));
        }
    }
    s.push('\n');
    for row in [ROW_SOURCE, ROW_TARGET, ROW_LP, ROW_DA_FULL, ROW_DA_HALF] {
        let _ = write!(s, "{row:<20}");
        for b in [brands.1, brands.0] {
            for (k, hits) in cols {
                let v = out.cell(row, b.as_str(), k).map_or(f64::NAN, |l| if hits { l.hits } else { l.mrr });
                let _ = write!(s, " {v:>9.4}");
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ReproConfig::default().validate().is_ok());
        assert!(ReproConfig::quick().validate().is_ok());
        let bad = ReproConfig {
            ks: vec![10],
            ..ReproConfig::quick()
        };
        assert!(bad.validate().is_err());
        let bad = ReproConfig {
            lambda_half: 0.0,
            ..ReproConfig::quick()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn reaching_step() {
        let c = |step, h| CurvePoint {
            step,
            hits_at_10: 0.0,
            hits_at_100: h,
        };
        let curve = vec![c(10, 0.2), c(20, 0.5), c(30, 0.4)];
        assert_eq!(first_step_reaching(&curve, 0.4), Some(20));
        assert_eq!(first_step_reaching(&curve, 0.6), None);
    }
}
