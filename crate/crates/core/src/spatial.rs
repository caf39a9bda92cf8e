//! Spatial signs and ranks and the pairwise covariance matrices built on them.
//!
//! The sample Gini covariance matrix is the matrix-valued U-statistic with
//! kernel `δδᵀ/‖δ‖` over pairwise differences `δ = x_i - x_j`; the symmetrized
//! spatial sign covariance matrix (SSCM) uses `δδᵀ/‖δ‖²` and the rank covariance
//! matrix (RCM) averages outer products of leave-one-out spatial ranks.
//! Coincident rows contribute nothing (`s(0) = 0`) but still count as pairs.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::from_packed_upper;
use crate::model::{Consistency, EstimatorKind, Sample, ScatterMatrix};
use crate::pairwise::{pair_count, pair_sum, weighted_outer_sum};

/// A spatial rank: a vector inside the closed unit ball.
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector(Vec<f64>);

impl RankVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `v/‖v‖`, with the zero vector mapped to itself.
pub fn spatial_sign(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("spatial sign input".into()));
    }
    let r = norm(v);
    if r == 0.0 {
        return Ok(vec![0.0; v.len()]);
    }
    Ok(v.iter().map(|x| x / r).collect())
}

/// Sample spatial rank of `x`: the average of `s(x - X_j)`.
///
/// With `leave_one_out`, one row equal to `x` (if any) is dropped and the
/// divisor becomes `n - 1`, which is the convention used at sample points.
pub fn spatial_rank(x: &[f64], sample: &Sample, leave_one_out: bool) -> Result<RankVector> {
    if sample.d() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: sample.d(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rank query point".into()));
    }
    let d = x.len();
    let mut skip = None;
    if leave_one_out {
        skip = sample.rows().position(|r| r == x);
        if skip.is_some() && sample.n() < 2 {
            return Err(Error::TooFewObservations {
                needed: 2,
                got: sample.n(),
            });
        }
    }
    let mut acc = vec![0.0; d];
    accumulate_signs(x, sample, skip, &mut acc);
    let divisor = (sample.n() - usize::from(skip.is_some())) as f64;
    acc.iter_mut().for_each(|v| *v /= divisor);
    Ok(RankVector(acc))
}

fn accumulate_signs(x: &[f64], sample: &Sample, skip: Option<usize>, acc: &mut [f64]) {
    let d = x.len();
    let mut delta = vec![0.0; d];
    for (j, r) in sample.rows().enumerate() {
        if Some(j) == skip {
            continue;
        }
        for k in 0..d {
            delta[k] = x[k] - r[k];
        }
        let nrm = norm(&delta);
        if nrm > 0.0 {
            for k in 0..d {
                acc[k] += delta[k] / nrm;
            }
        }
    }
}

/// Leave-one-out spatial ranks of every row.
pub fn sample_ranks(sample: &Sample) -> Result<Vec<RankVector>> {
    sample.require_rows(2)?;
    let divisor = (sample.n() - 1) as f64;
    Ok((0..sample.n())
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; sample.d()];
            accumulate_signs(sample.row(i), sample, Some(i), &mut acc);
            acc.iter_mut().for_each(|v| *v /= divisor);
            RankVector(acc)
        })
        .collect())
}

/// Sample Gini mean difference: the average of `|x_i - x_j|` over unordered pairs.
pub fn gini_mean_difference(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            got: xs.len(),
        });
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GMD input".into()));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Σ_{i<j} (x_(j) - x_(i)) = Σ_k (2k - n + 1) x_(k)
    let total: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, v)| (2.0 * k as f64 - n as f64 + 1.0) * v)
        .sum();
    Ok(total / pair_count(n))
}

fn scatter(packed: Vec<f64>, sample: &Sample, kind: EstimatorKind) -> Result<ScatterMatrix> {
    let pairs = pair_count(sample.n());
    let m = from_packed_upper(sample.d(), &packed) / pairs;
    ScatterMatrix::new(m, kind, Consistency::Raw)
}

/// Sample Gini covariance matrix, `C(n,2)⁻¹ Σ_{i<j} δδᵀ/‖δ‖`.
pub fn sample_gcm(sample: &Sample) -> Result<ScatterMatrix> {
    sample.require_rows(2)?;
    let packed = weighted_outer_sum(sample, |sq| 1.0 / sq.sqrt());
    scatter(packed, sample, EstimatorKind::Gcm)
}

/// Symmetrized spatial sign covariance matrix, `C(n,2)⁻¹ Σ_{i<j} s(δ)s(δ)ᵀ`.
pub fn sample_sscm(sample: &Sample) -> Result<ScatterMatrix> {
    sample.require_rows(2)?;
    let packed = weighted_outer_sum(sample, |sq| 1.0 / sq);
    scatter(packed, sample, EstimatorKind::Sscm)
}

/// Spatial rank covariance matrix from leave-one-out sample ranks.
pub fn sample_rcm(sample: &Sample) -> Result<ScatterMatrix> {
    let ranks = sample_ranks(sample)?;
    let d = sample.d();
    let mut m = DMatrix::zeros(d, d);
    for r in &ranks {
        let r = r.as_slice();
        for a in 0..d {
            for b in a..d {
                m[(a, b)] += r[a] * r[b];
            }
        }
    }
    m /= sample.n() as f64;
    crate::linalg::symmetrize(&mut m);
    ScatterMatrix::new(m, EstimatorKind::Rcm, Consistency::Raw)
}

/// Multivariate Gini mean difference: mean pairwise Euclidean distance.
pub fn multivariate_gmd(sample: &Sample) -> Result<f64> {
    sample.require_rows(2)?;
    let total = pair_sum(sample, 1, |delta, acc| acc[0] += norm(delta));
    Ok(total[0] / pair_count(sample.n()))
}
