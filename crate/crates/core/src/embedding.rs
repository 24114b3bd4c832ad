//! Classical (Torgerson) multidimensional scaling into three dimensions.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::DistanceMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("distance matrix is not symmetric at ({0}, {1})")]
    AsymmetricInput(usize, usize),
    #[error("distance matrix has a nonzero diagonal at {0}")]
    NonzeroDiagonal(usize),
    #[error("embedding has {points} points but the distance matrix has {size}")]
    SizeMismatch { points: usize, size: usize },
    #[error("distance matrix is empty")]
    Empty,
    #[error("eigen-decomposition did not converge")]
    NoConvergence,
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

const SYMMETRY_TOL: f64 = 1e-12;
const EIGEN_EPS: f64 = 1e-10;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding3D {
    pub points: Vec<[f64; 3]>,
    /// Top three eigenvalues of the double-centered matrix, descending,
    /// before clamping.
    pub eigenvalues: [f64; 3],
    pub stress: f64,
}

impl Embedding3D {
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.points[a], self.points[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    }
}

fn validate(d: &DMatrix<f64>) -> Result<()> {
    let n = d.nrows();
    if n == 0 {
        return Err(EmbeddingError::Empty);
    }
    for a in 0..n {
        if d[(a, a)] != 0.0 {
            return Err(EmbeddingError::NonzeroDiagonal(a));
        }
        for b in (a + 1)..n {
            if (d[(a, b)] - d[(b, a)]).abs() > SYMMETRY_TOL {
                return Err(EmbeddingError::AsymmetricInput(a, b));
            }
        }
    }
    Ok(())
}

pub fn mds_embed(d: &DistanceMatrix) -> Result<Embedding3D> {
    let dm = d.matrix();
    validate(dm)?;
    let n = dm.nrows();

    // B = -1/2 J D² J
    let sq = dm.map(|v| v * v);
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).mean()).collect();
    let col_mean: Vec<f64> = (0..n).map(|j| sq.column(j).mean()).collect();
    let grand = sq.mean();
    let mut b = DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (sq[(i, j)] - row_mean[i] - col_mean[j] + grand)
    });
    b = (&b + b.transpose()) * 0.5;

    let eig = SymmetricEigen::try_new(b, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or(EmbeddingError::NoConvergence)?;
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep solver order
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));

    let mut points = vec![[0.0; 3]; n];
    let mut eigenvalues = [0.0; 3];
    for (axis, &col) in order.iter().take(3).enumerate() {
        let lambda = eig.eigenvalues[col];
        eigenvalues[axis] = lambda;
        let scale = lambda.max(0.0).sqrt();
        let v = eig.eigenvectors.column(col);
        // sign-fix: the largest-magnitude coordinate is positive
        let pivot = (0..n).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (i, p) in points.iter_mut().enumerate() {
            p[axis] = sign * v[i] * scale;
        }
    }
    // exact recentering removes round-off drift from the eigenvectors
    for axis in 0..3 {
        let mean = points.iter().map(|p| p[axis]).sum::<f64>() / n as f64;
        points.iter_mut().for_each(|p| p[axis] -= mean);
    }
    let mut emb = Embedding3D {
        points,
        eigenvalues,
        stress: 0.0,
    };
    emb.stress = stress(d, &emb)?;
    Ok(emb)
}

/// Normalized stress `sqrt(Σ(d − ê)² / Σ d²)` over pairs `a < b`. For an
/// all-zero distance matrix the unnormalized `sqrt(Σ ê²)` is returned.
pub fn stress(d: &DistanceMatrix, x: &Embedding3D) -> Result<f64> {
    let n = d.len();
    if x.points.len() != n {
        return Err(EmbeddingError::SizeMismatch {
            points: x.points.len(),
            size: n,
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            let dab = d.get(a, b);
            num += (dab - x.distance(a, b)).powi(2);
            den += dab * dab;
        }
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_points(pts: &[[f64; 3]]) -> DistanceMatrix {
        let n = pts.len();
        DistanceMatrix(DMatrix::from_fn(n, n, |a, b| {
            let (p, q) = (pts[a], pts[b]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        }))
    }

    #[test]
    fn single_point_sits_at_origin() {
        let emb = mds_embed(&DistanceMatrix(DMatrix::zeros(1, 1))).unwrap();
        assert_eq!(emb.points, vec![[0.0; 3]]);
        assert_eq!(emb.stress, 0.0);
    }

    #[test]
    fn regular_tetrahedron_is_exact() {
        let s = 1.0 / 8f64.sqrt();
        let d = from_points(&[[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]]);
        assert!((d.get(0, 1) - 1.0).abs() < 1e-15);
        let emb = mds_embed(&d).unwrap();
        for a in 0..4 {
            for b in (a + 1)..4 {
                assert!((emb.distance(a, b) - 1.0).abs() < 1e-9);
            }
        }
        assert!(emb.stress <= 1e-9);
    }

    #[test]
    fn zero_embedding_has_unit_stress() {
        let d = from_points(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        let zero = Embedding3D {
            points: vec![[0.0; 3]; 3],
            eigenvalues: [0.0; 3],
            stress: 0.0,
        };
        assert_eq!(stress(&d, &zero).unwrap(), 1.0);
    }

    #[test]
    fn rejects_malformed_input() {
        let mut m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert_eq!(
            mds_embed(&DistanceMatrix(m.clone())),
            Err(EmbeddingError::AsymmetricInput(0, 1))
        );
        m[(1, 0)] = 1.0;
        m[(1, 1)] = 0.1;
        assert_eq!(
            mds_embed(&DistanceMatrix(m)),
            Err(EmbeddingError::NonzeroDiagonal(1))
        );
    }

    #[test]
    fn two_points_lie_on_first_axis() {
        let d = from_points(&[[0.0; 3], [3.0, 0.0, 0.0]]);
        let emb = mds_embed(&d).unwrap();
        assert!((emb.distance(0, 1) - 3.0).abs() < 1e-12);
        assert_eq!(emb.points[0][1], 0.0);
        assert_eq!(emb.points[0][2], 0.0);
        // sign rule: the largest-magnitude coordinate on axis 0 is positive
        assert!(emb.points.iter().any(|p| p[0] > 0.0));
    }
}
