//! Per-pair stochastic training.

use super::grad::{GradWorkspace, Gradients, SourceAnchors};
use super::params::{Matrix, ModelParams, Optimizer, TrainConfig};
use super::export_embeddings;
use crate::data::{BrandMapping, HotelCatalog, SessionSet};
use crate::error::{Error, Result};
use crate::pipeline::build_epoch_stream;
use crate::space::EmbeddingSpace;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub pairs: u64,
    pub skipped: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
}

/// Receives `(step, embeddings)` every `eval_every` steps.
pub type CurveSink<'a> = dyn FnMut(u64, &EmbeddingSpace) + 'a;

struct AdamState {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    moments: [(Matrix, Matrix); 4],
}

impl AdamState {
    fn new(params: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |m: &Matrix| (Matrix::zeros(m.rows(), m.cols()), Matrix::zeros(m.rows(), m.cols()));
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: [
                zeros(&params.click),
                zeros(&params.amenity),
                zeros(&params.geo),
                zeros(&params.fusion),
            ],
        }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        self.step = self.step.saturating_add(1);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let update = |w: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        };

        let [click, amenity, geo, fusion] = &mut self.moments;
        // Lazy update: only rows that received a gradient move.
        for (h, g) in &grads.click_rows {
            update(params.click.row_mut(*h), click.0.row_mut(*h), click.1.row_mut(*h), g);
        }
        for ((w, g), (m, v)) in [
            (&mut params.amenity, &grads.amenity),
            (&mut params.geo, &grads.geo),
            (&mut params.fusion, &grads.fusion),
        ]
        .into_iter()
        .zip([amenity, geo, fusion])
        {
            update(w.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice(), g.as_slice());
        }
    }
}

fn sgd(params: &mut ModelParams, grads: &Gradients, lr: f64) {
    for (h, g) in &grads.click_rows {
        for (w, g) in params.click.row_mut(*h).iter_mut().zip(g) {
            *w -= lr * g;
        }
    }
    for (w, g) in [
        (&mut params.amenity, &grads.amenity),
        (&mut params.geo, &grads.geo),
        (&mut params.fusion, &grads.fusion),
    ] {
        for (w, g) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *w -= lr * g;
        }
    }
}

/// Trains a model on `sessions`.
///
/// With `cfg.lambda > 0`, each target hotel that `mapping` (source -> target)
/// links to a hotel of `source` is pulled towards that frozen source vector.
/// Single-threaded and fully determined by `cfg.seed`.
pub fn train(
    sessions: &SessionSet,
    catalog: &HotelCatalog,
    cfg: &TrainConfig,
    source: Option<&EmbeddingSpace>,
    mapping: Option<&BrandMapping>,
    mut curve: Option<&mut CurveSink<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let anchors = if cfg.lambda > 0.0 {
        let (Some(source), Some(mapping)) = (source, mapping) else {
            return Err(Error::Config(
                "lambda > 0 requires source embeddings and a mapping".into(),
            ));
        };
        if source.dim() != cfg.dim {
            return Err(Error::DimensionMismatch {
                expected: cfg.dim,
                found: source.dim(),
            });
        }
        Some(SourceAnchors::new(catalog, source, mapping)?)
    } else {
        None
    };

    let clicks = sessions.indexed(catalog)?;
    let mut params = ModelParams::init(catalog, cfg);
    let mut ws = GradWorkspace::new(&params);
    let mut adam = match cfg.optimizer {
        Optimizer::Sgd => None,
        Optimizer::Adam { beta1, beta2, eps } => Some(AdamState::new(&params, beta1, beta2, eps)),
    };

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut stream = build_epoch_stream(&clicks, catalog, cfg.window, cfg.n_neg, cfg.seed, epoch as u64);
        let mut total = 0.0;
        let mut pairs = 0u64;
        for pair in stream.by_ref() {
            let loss = ws.compute(&pair, &params, catalog, anchors.as_ref(), cfg);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    target: catalog.id(pair.target).to_string(),
                    context: catalog.id(pair.context).to_string(),
                });
            }
            match adam.as_mut() {
                Some(state) => state.apply(&mut params, &ws.grads, cfg.learning_rate),
                None => sgd(&mut params, &ws.grads, cfg.learning_rate),
            }
            total += loss;
            pairs += 1;
            step += 1;
            if let Some(sink) = curve.as_deref_mut() {
                if step % cfg.eval_every == 0 {
                    sink(step, &export_embeddings(&params, catalog, sessions.brand.clone()));
                }
            }
        }
        epochs.push(EpochStats {
            mean_loss: if pairs > 0 { total / pairs as f64 } else { 0.0 },
            pairs,
            skipped: stream.skipped() as u64,
        });
    }

    Ok(TrainOutcome {
        params,
        epochs,
        steps: step,
    })
}

