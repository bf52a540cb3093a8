//! Per-pair loss and its exact gradient.

use super::forward::HotelForward;
use super::loss::{dot, sigmoid, softplus};
use super::params::{Matrix, ModelParams, RegVariant, TrainConfig};
use crate::data::{BrandMapping, HotelCatalog};
use crate::error::{Error, Result};
use crate::pipeline::TrainingPair;
use crate::space::EmbeddingSpace;

/// Below this distance the non-squared regularizer contributes no gradient.
pub const DIFF_EPS: f64 = 1e-12;

/// Frozen source-brand vector for every target catalog hotel that has one.
#[derive(Clone, Debug)]
pub struct SourceAnchors {
    anchors: Vec<Option<Vec<f64>>>,
}

impl SourceAnchors {
    /// Looks up, for each catalog hotel, its source id through `mapping`
    /// (source -> target) and the source vector in `source`. Hotels outside
    /// the mapping get no anchor; a mapped hotel missing from `source` is an
    /// error.
    pub fn new(catalog: &HotelCatalog, source: &EmbeddingSpace, mapping: &BrandMapping) -> Result<Self> {
        let anchors = catalog
            .hotels()
            .iter()
            .map(|h| match mapping.to_source(&h.hotel_id) {
                None => Ok(None),
                Some(src) => source
                    .get(src)
                    .map(|v| Some(v.to_vec()))
                    .ok_or_else(|| Error::MissingSourceEmbedding(src.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SourceAnchors { anchors })
    }

    pub fn get(&self, hotel: usize) -> Option<&[f64]> {
        self.anchors.get(hotel)?.as_deref()
    }

    pub fn n_anchored(&self) -> usize {
        self.anchors.iter().filter(|a| a.is_some()).count()
    }

    pub fn dim(&self) -> Option<usize> {
        self.anchors.iter().flatten().map(Vec::len).next()
    }
}

/// Gradient of the per-pair loss, shaped like `ModelParams`.
///
/// Only the click rows of hotels in the pair can be nonzero, so those are
/// kept sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub click_rows: Vec<(usize, Vec<f64>)>,
    pub amenity: Matrix,
    pub geo: Matrix,
    pub fusion: Matrix,
}

impl Gradients {
    fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            click_rows: Vec::new(),
            amenity: Matrix::zeros(params.amenity.rows(), params.amenity.cols()),
            geo: Matrix::zeros(params.geo.rows(), params.geo.cols()),
            fusion: Matrix::zeros(params.fusion.rows(), params.fusion.cols()),
        }
    }

    fn reset(&mut self) {
        self.click_rows.clear();
        self.amenity.fill(0.0);
        self.geo.fill(0.0);
        self.fusion.fill(0.0);
    }

    /// Full dense gradient of the click matrix (mostly zero rows).
    pub fn click_dense(&self, n_hotels: usize, cols: usize) -> Matrix {
        let mut m = Matrix::zeros(n_hotels, cols);
        for (h, row) in &self.click_rows {
            for (a, b) in m.row_mut(*h).iter_mut().zip(row) {
                *a += b;
            }
        }
        m
    }
}

/// Reusable buffers for repeated gradient evaluations.
#[derive(Debug)]
pub struct GradWorkspace {
    forwards: Vec<HotelForward>,
    out_grads: Vec<Vec<f64>>,
    grad_pre: Vec<f64>,
    grad_concat: Vec<f64>,
    grad_unit: Vec<f64>,
    slots: Vec<usize>,
    pub grads: Gradients,
}

impl GradWorkspace {
    pub fn new(params: &ModelParams) -> Self {
        GradWorkspace {
            forwards: Vec::new(),
            out_grads: Vec::new(),
            grad_pre: Vec::new(),
            grad_concat: Vec::new(),
            grad_unit: Vec::new(),
            slots: Vec::new(),
            grads: Gradients::zeros_like(params),
        }
    }

    /// Position of `hotel` among the unique hotels, running its forward pass
    /// the first time it is seen.
    fn slot(&mut self, used: &mut usize, hotel: usize, params: &ModelParams, catalog: &HotelCatalog) -> usize {
        if let Some(i) = self.forwards[..*used].iter().position(|f| f.hotel == hotel) {
            return i;
        }
        if *used == self.forwards.len() {
            self.forwards.push(HotelForward::default());
            self.out_grads.push(Vec::new());
        }
        let i = *used;
        self.forwards[i].run(hotel, params, catalog);
        self.out_grads[i].clear();
        self.out_grads[i].resize(params.dim(), 0.0);
        *used += 1;
        i
    }

    /// Loss of `pair` and its gradient (left in `self.grads`).
    ///
    /// The loss is the negative-sampling term, plus `lambda` times the
    /// distance between the target's embedding and its anchor (when the
    /// target has one), plus `l2_weight / 2` times the squared norm of every
    /// parameter the pair touches.
    pub fn compute(
        &mut self,
        pair: &TrainingPair,
        params: &ModelParams,
        catalog: &HotelCatalog,
        anchors: Option<&SourceAnchors>,
        cfg: &TrainConfig,
    ) -> f64 {
        self.grads.reset();
        let mut used = 0;
        let t = self.slot(&mut used, pair.target, params, catalog);
        let c = self.slot(&mut used, pair.context, params, catalog);
        self.slots.clear();
        for &n in &pair.negatives {
            let s = self.slot(&mut used, n, params, catalog);
            self.slots.push(s);
        }

        let dim = params.dim();
        let score = dot(&self.forwards[t].out, &self.forwards[c].out);
        let mut loss = softplus(-score);
        let g = -sigmoid(-score);
        for k in 0..dim {
            let (vt, vc) = (self.forwards[t].out[k], self.forwards[c].out[k]);
            self.out_grads[t][k] += g * vc;
            self.out_grads[c][k] += g * vt;
        }
        for i in 0..self.slots.len() {
            let n = self.slots[i];
            let score = dot(&self.forwards[t].out, &self.forwards[n].out);
            loss += softplus(score);
            let g = sigmoid(score);
            for k in 0..dim {
                let (vt, vn) = (self.forwards[t].out[k], self.forwards[n].out[k]);
                self.out_grads[t][k] += g * vn;
                self.out_grads[n][k] += g * vt;
            }
        }

        if cfg.lambda > 0.0 {
            if let Some(anchor) = anchors.and_then(|a| a.get(pair.target)) {
                loss += self.pull_towards(t, anchor, cfg.lambda, cfg.reg_variant);
            }
        }

        for s in 0..used {
            self.backward(s, params, catalog);
        }

        if cfg.l2_weight > 0.0 {
            loss += self.add_decay(used, params, cfg.l2_weight);
        }
        loss
    }

    fn pull_towards(&mut self, t: usize, anchor: &[f64], lambda: f64, variant: RegVariant) -> f64 {
        let out = &self.forwards[t].out;
        let sq: f64 = out.iter().zip(anchor).map(|(v, a)| (v - a) * (v - a)).sum();
        let (value, scale) = match variant {
            RegVariant::Norm => {
                let norm = sq.sqrt();
                let scale = if norm < DIFF_EPS { 0.0 } else { lambda / norm };
                (lambda * norm, scale)
            }
            RegVariant::SquaredNorm => (lambda * sq, 2.0 * lambda),
        };
        for ((g, v), a) in self.out_grads[t].iter_mut().zip(out).zip(anchor) {
            *g += scale * (v - a);
        }
        value
    }

    fn backward(&mut self, s: usize, params: &ModelParams, catalog: &HotelCatalog) {
        let fwd = &self.forwards[s];
        let grad_out = &self.out_grads[s];
        let dim = params.dim();
        let width = fwd.concat.len();

        self.grad_pre.clear();
        self.grad_pre.extend(
            grad_out
                .iter()
                .zip(&fwd.pre)
                .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 }),
        );
        if self.grad_pre.iter().all(|g| *g == 0.0) {
            return;
        }

        self.grad_concat.clear();
        self.grad_concat.resize(width, 0.0);
        let fusion = params.fusion.as_slice();
        let grad_fusion = self.grads.fusion.as_mut_slice();
        for i in 0..width {
            let w_row = &fusion[i * dim..(i + 1) * dim];
            self.grad_concat[i] = dot(w_row, &self.grad_pre);
            let x = fwd.concat[i];
            if x != 0.0 {
                for (gw, gp) in grad_fusion[i * dim..(i + 1) * dim].iter_mut().zip(&self.grad_pre) {
                    *gw += x * gp;
                }
            }
        }

        let record = catalog.hotel(fwd.hotel);
        let (dc, da) = (params.click.cols(), params.amenity.cols());
        let blocks = [(0, dc), (dc, da), (dc + da, params.geo.cols())];
        for (b, &(offset, len)) in blocks.iter().enumerate() {
            let norm = fwd.norms[b];
            if norm == 0.0 {
                continue;
            }
            let unit = &fwd.unit[offset..offset + len];
            let upstream = &self.grad_concat[offset..offset + len];
            // ReLU mask, then the Jacobian of y / ||y||: (I - u u^T) / ||y||.
            self.grad_unit.clear();
            self.grad_unit.extend(
                upstream
                    .iter()
                    .zip(unit)
                    .map(|(g, u)| if *u > 0.0 { *g } else { 0.0 }),
            );
            let proj = dot(unit, &self.grad_unit);
            for (g, u) in self.grad_unit.iter_mut().zip(unit) {
                *g = (*g - u * proj) / norm;
            }
            match b {
                0 => match self.grads.click_rows.iter_mut().find(|(h, _)| *h == fwd.hotel) {
                    Some((_, row)) => row.iter_mut().zip(&self.grad_unit).for_each(|(r, g)| *r += g),
                    None => self.grads.click_rows.push((fwd.hotel, self.grad_unit.clone())),
                },
                1 => outer_add(&mut self.grads.amenity, &record.amenities, &self.grad_unit),
                _ => outer_add(&mut self.grads.geo, &record.geo, &self.grad_unit),
            }
        }
    }

    fn add_decay(&mut self, used: usize, params: &ModelParams, mu: f64) -> f64 {
        let mut sq = 0.0;
        for s in 0..used {
            let hotel = self.forwards[s].hotel;
            let w = params.click.row(hotel);
            sq += dot(w, w);
            match self.grads.click_rows.iter_mut().find(|(h, _)| *h == hotel) {
                Some((_, row)) => row.iter_mut().zip(w).for_each(|(r, x)| *r += mu * x),
                None => self
                    .grads
                    .click_rows
                    .push((hotel, w.iter().map(|x| mu * x).collect())),
            }
        }
        let dense = [
            (&mut self.grads.amenity, &params.amenity),
            (&mut self.grads.geo, &params.geo),
            (&mut self.grads.fusion, &params.fusion),
        ];
        for (g, w) in dense {
            sq += dot(w.as_slice(), w.as_slice());
            for (a, x) in g.as_mut_slice().iter_mut().zip(w.as_slice()) {
                *a += mu * x;
            }
        }
        0.5 * mu * sq
    }
}

fn outer_add(m: &mut Matrix, x: &[f64], g: &[f64]) {
    for (i, xi) in x.iter().enumerate() {
        if *xi != 0.0 {
            for (a, b) in m.row_mut(i).iter_mut().zip(g) {
                *a += xi * b;
            }
        }
    }
}

/// Loss of one training pair and its gradient with respect to every parameter.
///
/// `anchors` must be given when `cfg.lambda > 0`; targets without an anchor
/// train unregularized.
pub fn gradients(
    pair: &TrainingPair,
    params: &ModelParams,
    catalog: &HotelCatalog,
    anchors: Option<&SourceAnchors>,
    cfg: &TrainConfig,
) -> Result<(Gradients, f64)> {
    let n = catalog.len();
    let hotels = [pair.target, pair.context].into_iter().chain(pair.negatives.iter().copied());
    for h in hotels {
        if h >= n {
            return Err(Error::UnknownHotel(format!("#{h}")));
        }
    }
    if cfg.lambda > 0.0 && anchors.is_none() {
        return Err(Error::Config("lambda > 0 requires source embeddings".into()));
    }
    let mut ws = GradWorkspace::new(params);
    let loss = ws.compute(pair, params, catalog, anchors, cfg);
    Ok((ws.grads, loss))
}
