//! Post-hoc alignment of two frozen embedding spaces through the hotels
//! they have in common.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Brand, BrandMapping};
use crate::error::{Error, Result};
use crate::space::EmbeddingSpace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    LeastSquares,
    Orthogonal,
}

impl fmt::Display for ProjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionKind::LeastSquares => "least_squares",
            ProjectionKind::Orthogonal => "orthogonal",
        })
    }
}

impl FromStr for ProjectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least_squares" => Ok(ProjectionKind::LeastSquares),
            "orthogonal" => Ok(ProjectionKind::Orthogonal),
            other => Err(Error::Config(format!("unknown projection kind `{other}`"))),
        }
    }
}

/// A `d_s x d_t` map from source vectors (as rows) to target vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionMatrix {
    pub w: DMatrix<f64>,
    pub kind: ProjectionKind,
    /// `||S W - T||_F` over the rows it was fitted on.
    pub fit_residual: f64,
    /// Orthogonal fit on a repeated or vanishing spectrum: `w` is one of
    /// several equally good solutions.
    pub degenerate: bool,
}

impl ProjectionMatrix {
    /// Largest entry of `|W^T W - I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.w.transpose() * &self.w;
        let eye = DMatrix::<f64>::identity(gram.nrows(), gram.ncols());
        (gram - eye).amax()
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.w.nrows(), self.w.ncols(), self.kind)?;
        for row in self.w.row_iter() {
            let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Reads a projection file. The residual is not stored and reads back as 0.
    pub fn read_text(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.into(),
            line,
            message,
        };
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?
            .map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [rows, cols, kind] = fields[..] else {
            return Err(parse_err(1, "expected `<d_s> <d_t> <kind>`".into()));
        };
        let rows: usize = rows.parse().map_err(|e| parse_err(1, format!("{e}")))?;
        let cols: usize = cols.parse().map_err(|e| parse_err(1, format!("{e}")))?;
        let kind: ProjectionKind = kind.parse().map_err(|e: Error| parse_err(1, e.to_string()))?;

        let mut data = Vec::with_capacity(rows * cols);
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for f in line.split_whitespace() {
                data.push(f.parse::<f64>().map_err(|e| parse_err(n + 2, format!("`{f}`: {e}")))?);
            }
            if data.len() - before != cols {
                return Err(parse_err(n + 2, format!("expected {cols} values")));
            }
        }
        if data.len() != rows * cols {
            return Err(parse_err(1, format!("expected {rows} rows")));
        }
        Ok(ProjectionMatrix {
            w: DMatrix::from_row_slice(rows, cols, &data),
            kind,
            fit_residual: 0.0,
            degenerate: false,
        })
    }
}

/// Source and target vectors of the mapped hotels present in both spaces.
#[derive(Clone, Debug)]
pub struct CommonRows {
    pub source: DMatrix<f64>,
    pub target: DMatrix<f64>,
    /// `(source id, target id)` of each row.
    pub ids: Vec<(String, String)>,
    /// Mapping pairs dropped because a side had no vector.
    pub excluded: usize,
}

pub fn common_rows(source: &EmbeddingSpace, target: &EmbeddingSpace, mapping: &BrandMapping) -> Result<CommonRows> {
    if mapping.is_empty() {
        return Err(Error::NoCommonRows);
    }
    let mut s_rows = Vec::new();
    let mut t_rows = Vec::new();
    let mut ids = Vec::new();
    for (s, t) in mapping.pairs() {
        if let (Some(sv), Some(tv)) = (source.get(s), target.get(t)) {
            s_rows.extend_from_slice(sv);
            t_rows.extend_from_slice(tv);
            ids.push((s.clone(), t.clone()));
        }
    }
    if ids.is_empty() {
        return Err(Error::NoCommonRows);
    }
    let n = ids.len();
    Ok(CommonRows {
        source: DMatrix::from_row_slice(n, source.dim(), &s_rows),
        target: DMatrix::from_row_slice(n, target.dim(), &t_rows),
        excluded: mapping.len() - n,
        ids,
    })
}

fn residual(s: &DMatrix<f64>, t: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    (s * w - t).norm()
}

fn rank_tolerance(m: &DMatrix<f64>, sigma_max: f64) -> f64 {
    m.nrows().max(m.ncols()) as f64 * sigma_max * f64::EPSILON
}

/// Minimum-norm least-squares `W` for `S W ~ T`, via the SVD of `S`.
pub fn fit_linear_projection(s: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<ProjectionMatrix> {
    if s.nrows() != t.nrows() {
        return Err(Error::DimensionMismatch {
            expected: s.nrows(),
            found: t.nrows(),
        });
    }
    if s.nrows() == 0 {
        return Err(Error::NoCommonRows);
    }
    let svd = s.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let w = svd
        .solve(t, rank_tolerance(s, sigma_max))
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(ProjectionMatrix {
        fit_residual: residual(s, t, &w),
        w,
        kind: ProjectionKind::LeastSquares,
        degenerate: false,
    })
}

/// Orthogonal `W = U V^T` from the SVD `U Sigma V^T` of `S^T T`.
pub fn fit_procrustes(s: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<ProjectionMatrix> {
    if s.ncols() != t.ncols() {
        return Err(Error::DimensionMismatch {
            expected: s.ncols(),
            found: t.ncols(),
        });
    }
    if s.nrows() != t.nrows() {
        return Err(Error::DimensionMismatch {
            expected: s.nrows(),
            found: t.nrows(),
        });
    }
    if s.nrows() == 0 {
        return Err(Error::NoCommonRows);
    }
    let m = s.transpose() * t;
    let svd = m.clone().svd(true, true);
    let (u, v_t) = (svd.u.as_ref().expect("u requested"), svd.v_t.as_ref().expect("v_t requested"));
    let w = u * v_t;

    let mut sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    let tol = (rank_tolerance(&m, sigma[0]) * 1e3).max(f64::MIN_POSITIVE);
    let degenerate = sigma.last().is_some_and(|&x| x <= tol) || sigma.windows(2).any(|p| p[0] - p[1] <= tol);

    Ok(ProjectionMatrix {
        fit_residual: residual(s, t, &w),
        w,
        kind: ProjectionKind::Orthogonal,
        degenerate,
    })
}

/// Maps every vector `v` of `space` to `v W`.
pub fn apply_projection(space: &EmbeddingSpace, p: &ProjectionMatrix) -> Result<EmbeddingSpace> {
    if space.dim() != p.w.nrows() {
        return Err(Error::DimensionMismatch {
            expected: p.w.nrows(),
            found: space.dim(),
        });
    }
    let brand = Brand::new(format!("{}+projected", space.brand()));
    let mut out = EmbeddingSpace::new(brand, p.w.ncols());
    let mut buf = vec![0.0; p.w.ncols()];
    for (id, v) in space.iter() {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = v.iter().enumerate().map(|(i, x)| x * p.w[(i, j)]).sum();
        }
        out.push(id, &buf)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        random(d, d, rng).qr().q()
    }

    #[test]
    fn identity_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = random(12, 4, &mut rng);
        let p = fit_linear_projection(&s, &s).unwrap();
        assert!((&p.w - DMatrix::<f64>::identity(4, 4)).amax() < 1e-8);
        assert!(p.fit_residual < 1e-8);
    }

    #[test]
    fn recovers_planted_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random(10, 3, &mut rng);
        let r = random(3, 3, &mut rng);
        let p = fit_linear_projection(&s, &(&s * &r)).unwrap();
        assert!((&p.w - &r).amax() < 1e-6);
    }

    #[test]
    fn duplicated_rows_match_deduplicated_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random(6, 3, &mut rng);
        let t = random(6, 3, &mut rng);
        let dup_s = s.clone().insert_row(6, 0.0);
        let mut dup_s = dup_s;
        dup_s.set_row(6, &s.row(0));
        let mut dup_t = t.clone().insert_row(6, 0.0);
        dup_t.set_row(6, &t.row(0));

        let full = fit_linear_projection(&dup_s, &dup_t).unwrap();
        // Duplicating a row doubles its weight; the deduplicated equivalent
        // scales that row by sqrt(2).
        let mut scaled_s = s.clone();
        let mut scaled_t = t.clone();
        scaled_s.row_mut(0).scale_mut(2f64.sqrt());
        scaled_t.row_mut(0).scale_mut(2f64.sqrt());
        let dedup = fit_linear_projection(&scaled_s, &scaled_t).unwrap();
        assert!((full.fit_residual - dedup.fit_residual).abs() < 1e-10);
        assert!((&full.w - &dedup.w).amax() < 1e-10);

        // A consistent system is unaffected by the duplicate altogether.
        let r = random(3, 3, &mut rng);
        let plain = fit_linear_projection(&s, &(&s * &r)).unwrap();
        let dup = fit_linear_projection(&dup_s, &(&dup_s * &r)).unwrap();
        assert!((plain.fit_residual - dup.fit_residual).abs() < 1e-10);
        assert!((&plain.w - &dup.w).amax() < 1e-10);
    }

    #[test]
    fn rank_deficient_gives_minimum_norm_solution() {
        // Second column is twice the first: only the combination w0 + 2 w1 is determined.
        let s = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, -1.0, -2.0]);
        let t = DMatrix::from_row_slice(3, 1, &[5.0, 10.0, -5.0]);
        let p = fit_linear_projection(&s, &t).unwrap();
        // Minimum-norm solution of w0 + 2 w1 = 5 is (1, 2).
        assert!((p.w[(0, 0)] - 1.0).abs() < 1e-10);
        assert!((p.w[(1, 0)] - 2.0).abs() < 1e-10);
        assert!(p.fit_residual < 1e-10);
    }

    #[test]
    fn procrustes_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random(8, 4, &mut rng);
        let p = fit_procrustes(&s, &s).unwrap();
        assert!((&p.w - DMatrix::<f64>::identity(4, 4)).amax() < 1e-8);
        assert!(!p.degenerate);
    }

    #[test]
    fn procrustes_quarter_turn() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let t = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let p = fit_procrustes(&s, &t).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((&p.w - expected).amax() < 1e-12, "{}", p.w);
        assert!(p.orthogonality_error() < 1e-12);
        // S^T T has two equal singular values.
        assert!(p.degenerate);
    }

    #[test]
    fn procrustes_recovers_planted_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random(20, 5, &mut rng);
        let q = random_orthogonal(5, &mut rng);
        let p = fit_procrustes(&s, &(&s * &q)).unwrap();
        assert!((&p.w - &q).amax() < 1e-6);
        assert!(p.orthogonality_error() < 1e-8);
    }

    #[test]
    fn procrustes_needs_square_map() {
        let s = DMatrix::<f64>::zeros(3, 2);
        let t = DMatrix::<f64>::zeros(3, 3);
        assert!(fit_procrustes(&s, &t).is_err());
    }

    fn space(rows: &[(&str, &[f64])]) -> EmbeddingSpace {
        let mut s = EmbeddingSpace::new(Brand::new("H"), rows[0].1.len());
        for (id, v) in rows {
            s.push(*id, v).unwrap();
        }
        s
    }

    #[test]
    fn common_rows_counts_exclusions() {
        let src = space(&[("a", &[1.0]), ("b", &[2.0]), ("c", &[3.0]), ("d", &[4.0]), ("e", &[5.0])]);
        let tgt = space(&[("a", &[1.0]), ("c", &[3.0]), ("e", &[5.0])]);
        let m = BrandMapping::new(
            ["a", "b", "c", "d", "e"]
                .iter()
                .map(|x| (x.to_string(), x.to_string()))
                .collect(),
        )
        .unwrap();
        let all = common_rows(&src, &src, &m).unwrap();
        assert_eq!((all.ids.len(), all.excluded), (5, 0));
        let some = common_rows(&src, &tgt, &m).unwrap();
        assert_eq!((some.ids.len(), some.excluded), (3, 2));
        assert!(matches!(common_rows(&src, &tgt, &BrandMapping::default()), Err(Error::NoCommonRows)));
    }

    #[test]
    fn apply_identity_zero_and_rotation() {
        let sp = space(&[("a", &[1.0, 2.0]), ("b", &[-0.5, 3.0]), ("c", &[0.0, 0.0])]);
        let proj = |w: DMatrix<f64>| ProjectionMatrix {
            w,
            kind: ProjectionKind::Orthogonal,
            fit_residual: 0.0,
            degenerate: false,
        };
        let same = apply_projection(&sp, &proj(DMatrix::identity(2, 2))).unwrap();
        assert_eq!(same.ids(), sp.ids());
        for ((_, a), (_, b)) in same.iter().zip(sp.iter()) {
            assert_eq!(a, b);
        }
        assert!(same.brand().as_str().ends_with("projected"));

        let zero = apply_projection(&sp, &proj(DMatrix::zeros(2, 3))).unwrap();
        assert_eq!(zero.dim(), 3);
        assert!(zero.iter().all(|(_, v)| v.iter().all(|x| *x == 0.0)));

        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = apply_projection(&sp, &proj(DMatrix::from_row_slice(2, 2, &[c, s, -s, c]))).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let before: f64 = sp.row(i).iter().zip(sp.row(j)).map(|(x, y)| x * y).sum();
                let after: f64 = rot.row(i).iter().zip(rot.row(j)).map(|(x, y)| x * y).sum();
                assert!((before - after).abs() < 1e-8);
            }
        }
        assert!(apply_projection(&sp, &proj(DMatrix::identity(3, 3))).is_err());
    }

    #[test]
    fn projection_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ProjectionMatrix {
            w: random(3, 2, &mut rng),
            kind: ProjectionKind::LeastSquares,
            fit_residual: 0.0,
            degenerate: false,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.proj");
        p.write_text(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("3 2 least_squares\n"));
        assert_eq!(ProjectionMatrix::read_text(&path).unwrap(), p);
    }

    proptest! {
        #[test]
        fn orthogonal_residual_never_beats_least_squares(seed: u64, n in 3usize..15, d in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random(n, d, &mut rng);
            let t = random(n, d, &mut rng);
            let lsq = fit_linear_projection(&s, &t).unwrap();
            let orth = fit_procrustes(&s, &t).unwrap();
            prop_assert!(orth.fit_residual >= lsq.fit_residual - 1e-10);
        }

        #[test]
        fn residual_ignores_row_order(seed: u64, n in 2usize..15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random(n, 3, &mut rng);
            let t = random(n, 3, &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            perm.rotate_left(seed as usize % n);
            let ps = s.select_rows(&perm);
            let pt = t.select_rows(&perm);
            let a = fit_linear_projection(&s, &t).unwrap().fit_residual;
            let b = fit_linear_projection(&ps, &pt).unwrap().fit_residual;
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + a));
        }
    }
}
