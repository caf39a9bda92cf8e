//! Fixed-point M-estimators of scatter sharing one iteration engine.
//!
//! Every estimator here is computed by transformation-retransformation: the
//! current iterate `Σ` standardizes the data to `z = Σ^{-1/2}(x - μ)` (or the
//! pairwise differences), a spherical kernel is averaged over the `z`, and the
//! result is mapped back with `Σ^{1/2}`. Iteration starts from `I_d` unless a
//! warm start is supplied, and stops when successive iterates differ by less
//! than the configured tolerance in Frobenius norm.
//!
//! | estimator | kernel on `z`            | averaged over | normalisation   |
//! |-----------|--------------------------|---------------|-----------------|
//! | TR-Gini   | `(d/c) zzᵀ/‖z‖`          | pairs         | none            |
//! | Kotz      | `zzᵀ/‖z‖`                | rows          | none            |
//! | Tyler     | `d zzᵀ/‖z‖²`             | rows          | trace `d`       |
//! | Dümbgen   | `d zzᵀ/‖z‖²`             | pairs         | trace `d`       |
//!
//! Zero vectors contribute nothing; the divisor still counts them. Existence
//! of the TR-Gini solution needs a finite first moment, which cannot be
//! checked from data and is assumed.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, EIGEN_FLOOR};
use crate::model::{
    CConvention, Consistency, EstimatorConfig, EstimatorKind, Sample, ScatterMatrix, ShapeMatrix,
};
use crate::pairwise::{pair_count, weighted_outer_sum};
use crate::scale::to_shape;

/// Outcome of a fixed-point solve. A run that exhausts `max_iter` is still
/// returned, with `converged = false` and the last iterate as estimate.
#[derive(Debug, Clone)]
pub struct FixedPointReport {
    pub estimate: ScatterMatrix,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    /// Residual after each iteration.
    pub residuals: Vec<f64>,
}

impl FixedPointReport {
    pub fn shape(&self) -> Result<ShapeMatrix> {
        to_shape(&self.estimate)
    }

    /// The estimate, or `NotConverged` when the iteration budget ran out.
    pub fn into_converged(self) -> Result<ScatterMatrix> {
        if self.converged {
            Ok(self.estimate)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                residual: self.final_residual,
            })
        }
    }
}

/// Iterates directly on matrices; the result is not tagged.
#[derive(Debug, Clone)]
pub struct RawFixedPoint {
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub residuals: Vec<f64>,
}

/// Iterate `M ← update(M)` from `init` until `‖M_{t+1} - M_t‖_F < tolerance`.
///
/// Fails with `NonFinite` if an iterate has non-finite entries or leaves the
/// positive definite cone.
pub fn fixed_point_solve<F>(
    mut update: F,
    init: &DMatrix<f64>,
    config: &EstimatorConfig,
) -> Result<RawFixedPoint>
where
    F: FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    config.validate()?;
    let mut current = init.clone();
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iter {
        let next = update(&current)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("iterate {}", residuals.len() + 1)));
        }
        let eig = linalg::sym_eigen(&next)?;
        let min = eig.values[eig.values.len() - 1];
        if !(min > EIGEN_FLOOR * linalg::trace(&next).abs()) {
            return Err(Error::NonFinite(format!(
                "iterate {} left the positive definite cone (smallest eigenvalue {min:e})",
                residuals.len() + 1
            )));
        }
        let res = linalg::frobenius(&(&next - &current));
        residuals.push(res);
        current = next;
        if res < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(RawFixedPoint {
        matrix: current,
        iterations: residuals.len(),
        final_residual: residuals.last().copied().unwrap_or(0.0),
        converged,
        residuals,
    })
}

/// Multiplier `d/c` of the TR-Gini update and the consistency tag it implies.
pub fn trgini_factor(convention: &CConvention, d: usize) -> Result<(f64, Consistency)> {
    let df = d as f64;
    match convention {
        CConvention::NormalConstant => {
            let c = crate::elliptical::Family::Normal.c_pairwise(d)?.value;
            Ok((df / c, Consistency::NormalConsistent))
        }
        CConvention::Family(f) => Ok((df / f.c_pairwise(d)?.value, Consistency::KnownF)),
        CConvention::Explicit(c) => {
            if !(*c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "c(F) = {c} must be positive"
                )));
            }
            Ok((df / c, Consistency::KnownF))
        }
        CConvention::None => Ok((1.0, Consistency::Raw)),
    }
}

/// `Σ^{1/2} K Σ^{1/2}` where `K` is a kernel average on the standardized data.
fn retransform<K>(sigma: &DMatrix<f64>, kernel: K) -> Result<DMatrix<f64>>
where
    K: FnOnce(&DMatrix<f64>) -> DMatrix<f64>,
{
    let (root, inv_root) = linalg::sqrt_and_inv_sqrt(sigma)?;
    let k = kernel(&inv_root);
    let mut out = &root * k * &root;
    linalg::symmetrize(&mut out);
    Ok(out)
}

fn pairs_average(z: &Sample, weight: impl Fn(f64) -> f64 + Sync) -> DMatrix<f64> {
    let packed = weighted_outer_sum(z, weight);
    linalg::from_packed_upper(z.d(), &packed) / pair_count(z.n())
}

fn rows_average(z: &Sample, weight: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let d = z.d();
    let mut acc = DMatrix::zeros(d, d);
    for r in z.rows() {
        let sq: f64 = r.iter().map(|v| v * v).sum();
        if sq > 0.0 {
            let w = weight(sq);
            for a in 0..d {
                for b in a..d {
                    acc[(a, b)] += w * r[a] * r[b];
                }
            }
        }
    }
    linalg::symmetrize(&mut acc);
    acc / z.n() as f64
}

fn normalize_trace(mut m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let tr = linalg::trace(&m);
    if !(tr > 0.0) {
        return Err(Error::ZeroTrace);
    }
    m *= m.nrows() as f64 / tr;
    Ok(m)
}

/// One TR-Gini step: `factor · mean_{i<j} δδᵀ/√(δᵀΣ⁻¹δ)` with `factor = d/c`.
pub fn tr_gini_map(sample: &Sample, sigma: &DMatrix<f64>, factor: f64) -> Result<DMatrix<f64>> {
    retransform(sigma, |w| {
        pairs_average(&sample.standardized(w, None), |sq| 1.0 / sq.sqrt()) * factor
    })
}

/// One Kotz step: `(1/n) Σ (x-μ)(x-μ)ᵀ/√((x-μ)ᵀΣ⁻¹(x-μ))`.
pub fn kotz_map(sample: &Sample, location: &[f64], sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    retransform(sigma, |w| {
        rows_average(&sample.standardized(w, Some(location)), |sq| {
            1.0 / sq.sqrt()
        })
    })
}

/// One Tyler step, renormalised to trace `d`.
pub fn tyler_map(sample: &Sample, location: &[f64], sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = sample.d() as f64;
    normalize_trace(retransform(sigma, |w| {
        rows_average(&sample.standardized(w, Some(location)), |sq| d / sq)
    })?)
}

/// One Dümbgen step, renormalised to trace `d`.
pub fn duembgen_map(sample: &Sample, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = sample.d() as f64;
    normalize_trace(retransform(sigma, |w| {
        pairs_average(&sample.standardized(w, None), |sq| d / sq)
    })?)
}

/// Raises `DegenerateSample` when the rows (minus `center`, or pairwise when
/// `center` is `None`) do not span `R^d`.
pub fn check_spans(sample: &Sample, center: Option<&[f64]>) -> Result<()> {
    let d = sample.d();
    let origin: Vec<f64> = match center {
        Some(c) => c.to_vec(),
        None => (0..d)
            .map(|j| sample.rows().map(|r| r[j]).sum::<f64>() / sample.n() as f64)
            .collect(),
    };
    let mut gram = DMatrix::zeros(d, d);
    for r in sample.rows() {
        for a in 0..d {
            for b in a..d {
                gram[(a, b)] += (r[a] - origin[a]) * (r[b] - origin[b]);
            }
        }
    }
    linalg::symmetrize(&mut gram);
    let tr = linalg::trace(&gram);
    let eig = linalg::sym_eigen(&gram)?;
    let min = eig.values[d - 1];
    if !(tr > 0.0) || min <= EIGEN_FLOOR * tr {
        let what = if center.is_some() {
            "centered rows"
        } else {
            "pairwise differences"
        };
        return Err(Error::DegenerateSample(format!(
            "{what} lie in a proper subspace"
        )));
    }
    Ok(())
}

fn check_location(sample: &Sample, location: &[f64]) -> Result<()> {
    if location.len() != sample.d() {
        return Err(Error::DimensionMismatch {
            expected: sample.d(),
            got: location.len(),
        });
    }
    if location.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("location".into()));
    }
    Ok(())
}

fn init_or_identity(init: Option<&DMatrix<f64>>, d: usize) -> Result<DMatrix<f64>> {
    match init {
        None => Ok(DMatrix::identity(d, d)),
        Some(m) if m.nrows() == d && m.ncols() == d => Ok(m.clone()),
        Some(m) => Err(Error::DimensionMismatch {
            expected: d,
            got: m.nrows(),
        }),
    }
}

fn report(
    raw: RawFixedPoint,
    kind: EstimatorKind,
    consistency: Consistency,
) -> Result<FixedPointReport> {
    Ok(FixedPointReport {
        estimate: ScatterMatrix::new(raw.matrix, kind, consistency)?,
        iterations: raw.iterations,
        final_residual: raw.final_residual,
        converged: raw.converged,
        residuals: raw.residuals,
    })
}

/// Affine equivariant Gini covariance matrix.
pub fn tr_gini(sample: &Sample, config: &EstimatorConfig) -> Result<FixedPointReport> {
    tr_gini_from(sample, config, None)
}

/// [`tr_gini`] with an optional warm start in place of `I_d`.
pub fn tr_gini_from(
    sample: &Sample,
    config: &EstimatorConfig,
    init: Option<&DMatrix<f64>>,
) -> Result<FixedPointReport> {
    config.validate()?;
    sample.require_rows(sample.d() + 1)?;
    check_spans(sample, None)?;
    let (factor, consistency) = trgini_factor(&config.c_convention, sample.d())?;
    let start = init_or_identity(init, sample.d())?;
    let raw = fixed_point_solve(|s| tr_gini_map(sample, s, factor), &start, config)?;
    report(raw, EstimatorKind::TrGini, consistency)
}

/// Kotz maximum likelihood scatter with known location.
pub fn kotz_m(
    sample: &Sample,
    location: &[f64],
    config: &EstimatorConfig,
) -> Result<FixedPointReport> {
    kotz_m_from(sample, location, config, None)
}

pub fn kotz_m_from(
    sample: &Sample,
    location: &[f64],
    config: &EstimatorConfig,
    init: Option<&DMatrix<f64>>,
) -> Result<FixedPointReport> {
    config.validate()?;
    check_location(sample, location)?;
    sample.require_rows(sample.d() + 1)?;
    check_spans(sample, Some(location))?;
    let start = init_or_identity(init, sample.d())?;
    let raw = fixed_point_solve(|s| kotz_map(sample, location, s), &start, config)?;
    report(raw, EstimatorKind::KotzM, Consistency::Raw)
}

/// Tyler's shape M-estimator with known location; trace `d`.
pub fn tyler_m(
    sample: &Sample,
    location: &[f64],
    config: &EstimatorConfig,
) -> Result<FixedPointReport> {
    tyler_m_from(sample, location, config, None)
}

pub fn tyler_m_from(
    sample: &Sample,
    location: &[f64],
    config: &EstimatorConfig,
    init: Option<&DMatrix<f64>>,
) -> Result<FixedPointReport> {
    config.validate()?;
    check_location(sample, location)?;
    sample.require_rows(sample.d() + 1)?;
    check_spans(sample, Some(location))?;
    let start = normalize_trace(init_or_identity(init, sample.d())?)?;
    let raw = fixed_point_solve(|s| tyler_map(sample, location, s), &start, config)?;
    report(raw, EstimatorKind::Tyler, Consistency::Raw)
}

/// Dümbgen's symmetrized Tyler estimator; trace `d`, no location needed.
pub fn duembgen(sample: &Sample, config: &EstimatorConfig) -> Result<FixedPointReport> {
    duembgen_from(sample, config, None)
}

pub fn duembgen_from(
    sample: &Sample,
    config: &EstimatorConfig,
    init: Option<&DMatrix<f64>>,
) -> Result<FixedPointReport> {
    config.validate()?;
    sample.require_rows(sample.d() + 2)?;
    check_spans(sample, None)?;
    let start = normalize_trace(init_or_identity(init, sample.d())?)?;
    let raw = fixed_point_solve(|s| duembgen_map(sample, s), &start, config)?;
    report(raw, EstimatorKind::Duembgen, Consistency::Raw)
}
