//! Shape normalisation, the classical covariance, robust univariate scales
//! (MAD and Qn) and the rank covariance based MRCM.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Consistency, EstimatorKind, Sample, ScatterMatrix, Seed, ShapeMatrix};
use crate::spatial::sample_rcm;

pub const MAD_FACTOR: f64 = 1.4826;
pub const QN_FACTOR: f64 = 2.2219;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScaleKind {
    #[serde(rename = "MAD")]
    Mad,
    #[serde(rename = "Qn")]
    Qn,
}

impl ScaleKind {
    pub fn apply(self, xs: &[f64]) -> Result<f64> {
        match self {
            ScaleKind::Mad => mad(xs),
            ScaleKind::Qn => qn(xs),
        }
    }
}

/// `d / tr(m) · m`.
pub fn to_shape(m: &ScatterMatrix) -> Result<ShapeMatrix> {
    shape_of(m.matrix())
}

pub(crate) fn shape_of(m: &DMatrix<f64>) -> Result<ShapeMatrix> {
    let tr = linalg::trace(m);
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(Error::ZeroTrace);
    }
    Ok(ShapeMatrix::from_normalized(m * (m.nrows() as f64 / tr)))
}

/// Unbiased covariance (divisor `n - 1`).
pub fn sample_covariance(sample: &Sample) -> Result<ScatterMatrix> {
    sample.require_rows(2)?;
    let (n, d) = (sample.n(), sample.d());
    let mean: Vec<f64> = (0..d)
        .map(|j| sample.rows().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut m = DMatrix::zeros(d, d);
    for r in sample.rows() {
        for a in 0..d {
            let da = r[a] - mean[a];
            for b in a..d {
                m[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    linalg::symmetrize(&mut m);
    ScatterMatrix::new(
        m / (n as f64 - 1.0),
        EstimatorKind::Cov,
        Consistency::NormalConsistent,
    )
}

/// Median; even lengths take the midpoint of the two central order statistics.
pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("median input".into()));
    }
    let mut v = xs.to_vec();
    let n = v.len();
    let mid = n / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Ok(upper)
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(below + (upper - below) / 2.0)
    }
}

/// `1.4826 · median|x_i - median(x)|`.
pub fn mad(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            got: xs.len(),
        });
    }
    let m = median(xs)?;
    let dev: Vec<f64> = xs.iter().map(|v| (v - m).abs()).collect();
    Ok(MAD_FACTOR * median(&dev)?)
}

/// `2.2219 ·` the `C(h, 2)`-th smallest pairwise distance, `h = ⌊n/2⌋ + 1`.
pub fn qn(xs: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("qn input".into()));
    }
    let h = n / 2 + 1;
    let k = h * (h - 1) / 2;
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(QN_FACTOR * kth_pairwise_difference(&sorted, k))
}

/// `k`-th smallest (1-based) of `x_j - x_i`, `i < j`, for ascending `x`.
///
/// Randomised selection over the implicit sorted matrix: each round draws a
/// pivot among the surviving candidates, counts entries below and at the
/// pivot with a monotone sweep in `O(n)`, and shrinks every row's window.
fn kth_pairwise_difference(x: &[f64], k: usize) -> f64 {
    let n = x.len();
    let mut lo: Vec<usize> = (0..n).map(|i| i + 1).collect();
    let mut hi = vec![n; n];
    let mut rng = Seed(0x51_7C_C1_B7).rng();
    loop {
        let total: usize = (0..n).map(|i| hi[i] - lo[i]).sum();
        let eliminated: usize = (0..n).map(|i| lo[i] - (i + 1)).sum();
        if total <= n.max(64) {
            let mut rest: Vec<f64> = (0..n)
                .flat_map(|i| (lo[i]..hi[i]).map(move |j| x[j] - x[i]))
                .collect();
            rest.sort_by(f64::total_cmp);
            return rest[k - eliminated - 1];
        }
        let mut pick = rng.random_range(0..total);
        let mut pivot = 0.0;
        for i in 0..n {
            let w = hi[i] - lo[i];
            if pick < w {
                pivot = x[lo[i] + pick] - x[i];
                break;
            }
            pick -= w;
        }
        let below = boundaries(x, |v| v < pivot);
        let at_or_below = boundaries(x, |v| v <= pivot);
        let count_lt: usize = (0..n).map(|i| below[i] - (i + 1)).sum();
        let count_le: usize = (0..n).map(|i| at_or_below[i] - (i + 1)).sum();
        if k <= count_lt {
            for i in 0..n {
                hi[i] = hi[i].min(below[i]);
            }
        } else if k <= count_le {
            return pivot;
        } else {
            for i in 0..n {
                lo[i] = lo[i].max(at_or_below[i]);
            }
        }
    }
}

/// For each row `i`, the first column `j > i` where `keep(x_j - x_i)` fails.
fn boundaries(x: &[f64], keep: impl Fn(f64) -> bool) -> Vec<usize> {
    let n = x.len();
    let mut out = vec![0; n];
    let mut j = 1;
    for i in 0..n {
        j = j.max(i + 1);
        while j < n && keep(x[j] - x[i]) {
            j += 1;
        }
        out[i] = j;
    }
    out
}

/// `U D Uᵀ` with `U` the eigenvectors of the rank covariance matrix and
/// `D_kk` the squared robust scale of the data projected on `u_k`.
pub fn mrcm(sample: &Sample, scale: ScaleKind) -> Result<ScatterMatrix> {
    let d = sample.d();
    sample.require_rows(d + 1)?;
    let rcm = sample_rcm(sample)?;
    let eig = linalg::sym_eigen(rcm.matrix())?;
    let mut m = DMatrix::zeros(d, d);
    for k in 0..d {
        let u = eig.vectors.column(k);
        let proj: Vec<f64> = sample
            .rows()
            .map(|r| r.iter().zip(u.iter()).map(|(a, b)| a * b).sum())
            .collect();
        let s = scale.apply(&proj)?;
        if !(s > 0.0) {
            return Err(Error::DegenerateSample(format!(
                "zero robust scale along eigenvector {k}"
            )));
        }
        m += u * u.transpose() * (s * s);
    }
    linalg::symmetrize(&mut m);
    ScatterMatrix::new(m, EstimatorKind::Mrcm, Consistency::NormalConsistent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_qn(xs: &[f64]) -> f64 {
        let mut diffs = Vec::new();
        for i in 0..xs.len() {
            for j in (i + 1)..xs.len() {
                diffs.push((xs[i] - xs[j]).abs());
            }
        }
        diffs.sort_by(f64::total_cmp);
        let h = xs.len() / 2 + 1;
        QN_FACTOR * diffs[h * (h - 1) / 2 - 1]
    }

    #[test]
    fn shape_examples() {
        let i2 = ScatterMatrix::new(
            DMatrix::identity(2, 2) * 5.0,
            EstimatorKind::Cov,
            Consistency::Raw,
        )
        .unwrap();
        assert_eq!(to_shape(&i2).unwrap().matrix(), &DMatrix::identity(2, 2));
        let m = ScatterMatrix::new(
            DMatrix::from_diagonal(&nalgebra::dvector![3.0, 1.0]),
            EstimatorKind::Cov,
            Consistency::Raw,
        )
        .unwrap();
        let w = to_shape(&m).unwrap();
        assert_abs_diff_eq!(w.matrix()[(0, 0)], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w.matrix()[(1, 1)], 0.5, epsilon = 1e-15);
        let z =
            ScatterMatrix::new(DMatrix::zeros(2, 2), EstimatorKind::Cov, Consistency::Raw).unwrap();
        assert!(matches!(to_shape(&z), Err(Error::ZeroTrace)));
    }

    #[test]
    fn covariance_example() {
        let s = Sample::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let c = sample_covariance(&s).unwrap();
        assert_eq!(c.to_row_major(), vec![2.0, 0.0, 0.0, 0.0]);
        let swapped = Sample::from_rows(&[[2.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(sample_covariance(&swapped).unwrap(), c);
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    }

    #[test]
    fn scale_examples() {
        assert_abs_diff_eq!(mad(&[1.0, 2.0, 3.0]).unwrap(), 1.4826, epsilon = 1e-15);
        assert_eq!(mad(&[5.0; 4]).unwrap(), 0.0);
        assert_abs_diff_eq!(qn(&[1.0, 2.0]).unwrap(), 2.2219, epsilon = 1e-15);
        assert_eq!(qn(&[5.0; 7]).unwrap(), 0.0);
        assert!(mad(&[1.0]).is_err());
        assert!(qn(&[1.0]).is_err());
    }

    #[test]
    fn qn_selection_matches_brute_force_on_large_input() {
        let mut rng = Seed(5).rng();
        let xs: Vec<f64> = (0..701).map(|_| rng.random::<f64>() * 10.0 - 3.0).collect();
        assert_eq!(qn(&xs).unwrap(), brute_qn(&xs));
        let ties: Vec<f64> = (0..500).map(|i| (i % 13) as f64).collect();
        assert_eq!(qn(&ties).unwrap(), brute_qn(&ties));
    }

    proptest! {
        #[test]
        fn qn_matches_brute_force(xs in prop::collection::vec(-100.0f64..100.0, 2..120)) {
            prop_assert_eq!(qn(&xs).unwrap(), brute_qn(&xs));
        }

        #[test]
        fn scales_are_affine_equivariant(
            xs in prop::collection::vec(-10.0f64..10.0, 3..60),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -20.0f64..20.0,
        ) {
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            for kind in [ScaleKind::Mad, ScaleKind::Qn] {
                let sx = kind.apply(&xs).unwrap();
                let sy = kind.apply(&ys).unwrap();
                prop_assert!((sy - a.abs() * sx).abs() <= 1e-12 * (1.0 + sy.abs()) * 100.0);
            }
        }
    }

    #[test]
    fn mrcm_rejects_zero_scale() {
        let s = Sample::from_rows(&[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            mrcm(&s, ScaleKind::Mad),
            Err(Error::DegenerateSample(_))
        ));
    }
}
