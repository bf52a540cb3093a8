use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::HotelCatalog;
use crate::error::{Error, Result};
use crate::rng;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// `x * self` for a row vector `x`, written into `out`.
    pub fn left_mul(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (xi, row) in x.iter().zip(self.data.chunks_exact(self.cols)) {
            if *xi != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += xi * w;
                }
            }
        }
    }

    fn uniform(rows: usize, cols: usize, half_width: f64, rng: &mut rng::Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-half_width..=half_width))
            .collect();
        Matrix { rows, cols, data }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegVariant {
    /// `lambda * ||diff||`
    Norm,
    /// `lambda * ||diff||^2`
    SquaredNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d_click: usize,
    pub d_amenity: usize,
    pub d_geo: usize,
    pub dim: usize,
    pub window: usize,
    pub n_neg: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weight-decay strength on the parameters a pair touches.
    pub l2_weight: f64,
    /// Strength of the pull towards the frozen source embeddings.
    pub lambda: f64,
    pub reg_variant: RegVariant,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Training steps between learning-curve checkpoints.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d_click: 16,
            d_amenity: 16,
            d_geo: 16,
            dim: 32,
            window: 3,
            n_neg: 5,
            learning_rate: 0.05,
            epochs: 10,
            l2_weight: 1e-6,
            lambda: 0.0,
            reg_variant: RegVariant::Norm,
            optimizer: Optimizer::Sgd,
            seed: 42,
            eval_every: 100_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_click", self.d_click),
            ("d_amenity", self.d_amenity),
            ("d_geo", self.d_geo),
            ("dim", self.dim),
            ("window", self.window),
            ("n_neg", self.n_neg),
            ("epochs", self.epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for (name, v) in [("l2_weight", self.l2_weight), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::Config("adam needs 0 <= beta < 1 and eps > 0".into()));
            }
        }
        Ok(())
    }

    pub fn concat_dim(&self) -> usize {
        self.d_click + self.d_amenity + self.d_geo
    }
}

/// Trainable weights of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// One row per catalog hotel (`|H| x d_click`).
    pub click: Matrix,
    /// `d_a_in x d_amenity`
    pub amenity: Matrix,
    /// `d_g_in x d_geo`
    pub geo: Matrix,
    /// Projection of the concatenated sub-embeddings (`(d_click + d_amenity + d_geo) x dim`).
    pub fusion: Matrix,
}

impl ModelParams {
    /// Uniform initialization in `[-0.5/cols, 0.5/cols]` for every matrix.
    pub fn init(catalog: &HotelCatalog, cfg: &TrainConfig) -> Self {
        let mut rng = rng::substream(cfg.seed, "init", 0);
        let mut uniform = |rows, cols| Matrix::uniform(rows, cols, 0.5 / cols as f64, &mut rng);
        ModelParams {
            click: uniform(catalog.len(), cfg.d_click),
            amenity: uniform(catalog.amenity_dim(), cfg.d_amenity),
            geo: uniform(catalog.geo_dim(), cfg.d_geo),
            fusion: uniform(cfg.concat_dim(), cfg.dim),
        }
    }

    pub fn zeros(catalog: &HotelCatalog, cfg: &TrainConfig) -> Self {
        ModelParams {
            click: Matrix::zeros(catalog.len(), cfg.d_click),
            amenity: Matrix::zeros(catalog.amenity_dim(), cfg.d_amenity),
            geo: Matrix::zeros(catalog.geo_dim(), cfg.d_geo),
            fusion: Matrix::zeros(cfg.concat_dim(), cfg.dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.fusion.cols()
    }

    /// Checks shapes against `catalog` and that every entry is finite.
    pub fn validate(&self, catalog: &HotelCatalog) -> Result<()> {
        let check = |found: usize, expected: usize| {
            if found == expected {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected, found })
            }
        };
        check(self.click.rows(), catalog.len())?;
        check(self.amenity.rows(), catalog.amenity_dim())?;
        check(self.geo.rows(), catalog.geo_dim())?;
        check(
            self.fusion.rows(),
            self.click.cols() + self.amenity.cols() + self.geo.cols(),
        )?;
        let all = [&self.click, &self.amenity, &self.geo, &self.fusion];
        if all.iter().any(|m| m.as_slice().iter().any(|v| !v.is_finite())) {
            return Err(Error::Config("non-finite parameter".into()));
        }
        Ok(())
    }
}
