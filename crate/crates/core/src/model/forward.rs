//! Forward pass: normalized-ReLU feature embeddings fused by a ReLU projection.

use super::params::{Matrix, ModelParams};
use crate::data::HotelCatalog;
use crate::error::{Error, Result};

/// Below this norm a projection is treated as the zero vector.
pub const NORM_EPS: f64 = 1e-12;

/// `ReLU(xW / ||xW||)`, with the zero vector mapped to itself.
pub fn feature_embed(x: &[f64], w: &Matrix) -> Result<Vec<f64>> {
    if x.len() != w.rows() {
        return Err(Error::DimensionMismatch {
            expected: w.rows(),
            found: x.len(),
        });
    }
    let mut y = vec![0.0; w.cols()];
    w.left_mul(x, &mut y);
    let mut out = vec![0.0; w.cols()];
    normalize_relu(&mut y, &mut out);
    Ok(out)
}

/// Normalizes `y` in place and writes its rectified copy into `out`.
/// Returns the norm of `y` before normalization (0 when below `NORM_EPS`).
pub(crate) fn normalize_relu(y: &mut [f64], out: &mut [f64]) -> f64 {
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < NORM_EPS {
        y.fill(0.0);
        out.fill(0.0);
        return 0.0;
    }
    for (v, o) in y.iter_mut().zip(out.iter_mut()) {
        *v /= norm;
        *o = v.max(0.0);
    }
    norm
}

/// Intermediate values of one hotel's forward pass, kept for backprop.
#[derive(Clone, Debug, Default)]
pub(crate) struct HotelForward {
    pub hotel: usize,
    /// Normalized (pre-ReLU) sub-embeddings, laid out like `concat`.
    pub unit: Vec<f64>,
    /// Norms of the three raw projections.
    pub norms: [f64; 3],
    /// `[V_c, V_a, V_g]`
    pub concat: Vec<f64>,
    /// Pre-activation of the fused output.
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

impl HotelForward {
    pub fn run(&mut self, hotel: usize, params: &ModelParams, catalog: &HotelCatalog) {
        let (dc, da, dg) = (params.click.cols(), params.amenity.cols(), params.geo.cols());
        let width = dc + da + dg;
        let dim = params.dim();
        self.hotel = hotel;
        self.unit.resize(width, 0.0);
        self.concat.resize(width, 0.0);
        self.pre.resize(dim, 0.0);
        self.out.resize(dim, 0.0);

        let record = catalog.hotel(hotel);
        let (unit_c, rest) = self.unit.split_at_mut(dc);
        let (unit_a, unit_g) = rest.split_at_mut(da);
        let (cat_c, rest) = self.concat.split_at_mut(dc);
        let (cat_a, cat_g) = rest.split_at_mut(da);

        unit_c.copy_from_slice(params.click.row(hotel));
        self.norms[0] = normalize_relu(unit_c, cat_c);
        params.amenity.left_mul(&record.amenities, unit_a);
        self.norms[1] = normalize_relu(unit_a, cat_a);
        params.geo.left_mul(&record.geo, unit_g);
        self.norms[2] = normalize_relu(unit_g, cat_g);

        params.fusion.left_mul(&self.concat, &mut self.pre);
        for (o, p) in self.out.iter_mut().zip(&self.pre) {
            *o = p.max(0.0);
        }
    }
}

/// Final embedding of catalog hotel `hotel`; every entry is nonnegative.
pub fn enriched_embedding(hotel: &str, params: &ModelParams, catalog: &HotelCatalog) -> Result<Vec<f64>> {
    let idx = catalog
        .index_of(hotel)
        .ok_or_else(|| Error::UnknownHotel(hotel.to_string()))?;
    Ok(embed_index(idx, params, catalog))
}

pub(crate) fn embed_index(idx: usize, params: &ModelParams, catalog: &HotelCatalog) -> Vec<f64> {
    let mut fwd = HotelForward::default();
    fwd.run(idx, params, catalog);
    fwd.out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity2() -> Matrix {
        Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn three_four_five() {
        assert_eq!(feature_embed(&[3.0, 4.0], &identity2()).unwrap(), vec![0.6, 0.8]);
    }

    #[test]
    fn relu_clips_negative_coordinate() {
        assert_eq!(feature_embed(&[3.0, -4.0], &identity2()).unwrap(), vec![0.6, 0.0]);
    }

    #[test]
    fn zero_projection_stays_zero() {
        assert_eq!(feature_embed(&[0.0, 0.0], &identity2()).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(feature_embed(&[1.0], &identity2()).is_err());
    }
}
