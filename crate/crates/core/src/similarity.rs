//! Histogram mutual information between realizations over a VOI, and the
//! similarity → distance conversion.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{EnsembleError, RealizationEnsemble};
use crate::spatialquery::VoiSelection;

pub const DEFAULT_BINS: usize = 32;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("the volume of interest is empty")]
    EmptyVoi,
    #[error("fields cover different cells ({0} vs {1})")]
    CoverageMismatch(usize, usize),
    #[error("at least two bins are required, got {0}")]
    TooFewBins(usize),
    #[error("similarity needs at least two realizations")]
    TooFewRealizations,
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

pub type Result<T, E = SimilarityError> = std::result::Result<T, E>;

/// `bins × bins` joint counts; row index from the first field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointHistogram {
    pub bins: usize,
    pub counts: Vec<u64>,
}

impl JointHistogram {
    pub fn get(&self, a: usize, b: usize) -> u64 {
        self.counts[a * self.bins + b]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Equal-width bin of every sample over the field's own `[min, max]`; a
/// constant field maps everything to bin 0.
pub fn bin_field(values: &[f64], bins: usize) -> Vec<usize> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let width = hi - lo;
    values
        .iter()
        .map(|&v| {
            if width > 0.0 {
                (((v - lo) / width * bins as f64) as usize).min(bins - 1)
            } else {
                0
            }
        })
        .collect()
}

fn histogram_from_bins(a: &[usize], b: &[usize], bins: usize) -> JointHistogram {
    let mut counts = vec![0u64; bins * bins];
    for (&x, &y) in a.iter().zip(b) {
        counts[x * bins + y] += 1;
    }
    JointHistogram { bins, counts }
}

pub fn joint_histogram(a: &[f64], b: &[f64], bins: usize) -> Result<JointHistogram> {
    if bins < 2 {
        return Err(SimilarityError::TooFewBins(bins));
    }
    if a.len() != b.len() {
        return Err(SimilarityError::CoverageMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(SimilarityError::EmptyVoi);
    }
    Ok(histogram_from_bins(
        &bin_field(a, bins),
        &bin_field(b, bins),
        bins,
    ))
}

/// Mutual information and marginal entropies, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutualInformation {
    pub mi: f64,
    pub h_a: f64,
    pub h_b: f64,
}

impl MutualInformation {
    /// `2·MI / (H_a + H_b)`, defined as 1 when both entropies vanish.
    pub fn normalized(&self) -> f64 {
        let h = self.h_a + self.h_b;
        if h > 0.0 {
            2.0 * self.mi / h
        } else {
            1.0
        }
    }
}

/// # Panics
/// If the histogram is empty.
pub fn mutual_information(hist: &JointHistogram) -> MutualInformation {
    let total = hist.total();
    assert!(total > 0, "mutual information of an empty histogram");
    let n = total as f64;
    let b = hist.bins;
    let mut row = vec![0u64; b];
    let mut col = vec![0u64; b];
    for x in 0..b {
        for y in 0..b {
            let c = hist.get(x, y);
            row[x] += c;
            col[y] += c;
        }
    }
    let entropy = |marg: &[u64]| -> f64 {
        marg.iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let mut mi = 0.0;
    for x in 0..b {
        for y in 0..b {
            let c = hist.get(x, y);
            if c == 0 {
                continue;
            }
            // p(x,y) / (p(x) p(y)) = c·n / (row·col)
            let pxy = c as f64 / n;
            mi += pxy * ((c as f64 * n) / (row[x] as f64 * col[y] as f64)).ln();
        }
    }
    MutualInformation {
        mi: mi.max(0.0),
        h_a: entropy(&row),
        h_b: entropy(&col),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub values: DMatrix<f64>,
    pub property: String,
    pub voi_hash: String,
    pub bins: usize,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Text dump: one header line then one row per realization.
    pub fn dump(&self) -> String {
        let mut out = format!(
            "# R={} B={} property={} voi={}\n",
            self.len(),
            self.bins,
            self.property,
            self.voi_hash
        );
        for row in self.values.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Pairwise NMI over the VOI cells. Pairs are computed in parallel and written
/// to fixed slots, so the result does not depend on scheduling.
pub fn similarity_matrix(
    ens: &RealizationEnsemble,
    property: &str,
    voi: &VoiSelection,
    bins: usize,
) -> Result<SimilarityMatrix> {
    if bins < 2 {
        return Err(SimilarityError::TooFewBins(bins));
    }
    if voi.is_empty() {
        return Err(SimilarityError::EmptyVoi);
    }
    let r = ens.count();
    if r < 2 {
        return Err(SimilarityError::TooFewRealizations);
    }
    let cells: Vec<usize> = voi.iter().collect();
    let binned: Vec<Vec<usize>> = (0..r)
        .map(|i| Ok(bin_field(&ens.gather(i, property, &cells)?, bins)))
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..r)
        .flat_map(|a| ((a + 1)..r).map(move |b| (a, b)))
        .collect();
    let nmi: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            mutual_information(&histogram_from_bins(&binned[a], &binned[b], bins)).normalized()
        })
        .collect();
    let mut values = DMatrix::from_element(r, r, 1.0);
    for (&(a, b), &v) in pairs.iter().zip(&nmi) {
        values[(a, b)] = v;
        values[(b, a)] = v;
    }
    Ok(SimilarityMatrix {
        values,
        property: property.to_string(),
        voi_hash: voi.hash_hex(),
        bins,
    })
}

/// Symmetric matrix of distances in `[0, 1]` with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix(pub DMatrix<f64>);

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.0[(a, b)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// `d = sqrt(1 − NMI)`, clamped at zero.
pub fn to_distance(sim: &SimilarityMatrix) -> DistanceMatrix {
    let n = sim.len();
    DistanceMatrix(DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            0.0
        } else {
            (1.0 - sim.values[(a, b)]).max(0.0).sqrt()
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_distinct_values_fill_the_diagonal() {
        let a = [0.0, 1.0, 2.0, 3.0];
        let h = joint_histogram(&a, &a, 4).unwrap();
        for x in 0..4 {
            for y in 0..4 {
                assert_eq!(h.get(x, y), u64::from(x == y));
            }
        }
    }

    #[test]
    fn constant_field_lands_in_row_zero() {
        let a = [5.0; 6];
        let b = [0.1, 0.9, 0.4, 0.3, 0.2, 0.8];
        let h = joint_histogram(&a, &b, 4).unwrap();
        let row0: u64 = (0..4).map(|y| h.get(0, y)).sum();
        assert_eq!(row0, 6);
        let mi = mutual_information(&h);
        assert_eq!(mi.mi, 0.0);
        assert_eq!(mi.h_a, 0.0);
    }

    #[test]
    fn binary_fields_have_ln2_information() {
        let a = [0.0, 1.0, 0.0, 1.0];
        let mi = mutual_information(&joint_histogram(&a, &a, 2).unwrap());
        let ln2 = std::f64::consts::LN_2;
        assert!((mi.mi - ln2).abs() < 1e-15);
        assert!((mi.h_a - ln2).abs() < 1e-15);
        assert!((mi.h_b - ln2).abs() < 1e-15);
        assert!((mi.normalized() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_errors() {
        assert!(matches!(
            joint_histogram(&[], &[], 4),
            Err(SimilarityError::EmptyVoi)
        ));
        assert!(matches!(
            joint_histogram(&[1.0], &[1.0, 2.0], 4),
            Err(SimilarityError::CoverageMismatch(1, 2))
        ));
        assert!(matches!(
            joint_histogram(&[1.0], &[1.0], 1),
            Err(SimilarityError::TooFewBins(1))
        ));
    }

    #[test]
    fn distance_endpoints() {
        let sim = SimilarityMatrix {
            values: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            property: "P".into(),
            voi_hash: String::new(),
            bins: 2,
        };
        let d = to_distance(&sim);
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(0, 1), 1.0);
        let mut over = sim.clone();
        over.values[(0, 1)] = 1.0 + 1e-13;
        assert_eq!(to_distance(&over).get(0, 1), 0.0);
    }

    #[test]
    fn both_constant_is_fully_similar() {
        let mi = mutual_information(&joint_histogram(&[2.0; 3], &[7.0; 3], 4).unwrap());
        assert_eq!(mi.normalized(), 1.0);
    }
}
