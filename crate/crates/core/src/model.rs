//! Shared data model: samples, scatter and shape matrices, estimator
//! configuration and seeding.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// An `n × d` table of finite observations stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl Sample {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySample);
        }
        if d == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { data, n, d })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let d = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(n, d, data)
    }

    /// Univariate sample.
    pub fn from_column(xs: &[f64]) -> Result<Self> {
        Self::new(xs.len(), 1, xs.to_vec())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.data)
    }

    pub fn require_rows(&self, needed: usize) -> Result<()> {
        if self.n < needed {
            Err(Error::TooFewObservations {
                needed,
                got: self.n,
            })
        } else {
            Ok(())
        }
    }

    /// Rows mapped through `x ↦ A x + b`.
    pub fn affine(&self, a: &DMatrix<f64>, b: &[f64]) -> Result<Sample> {
        if a.ncols() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: a.ncols(),
            });
        }
        if b.len() != a.nrows() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: b.len(),
            });
        }
        let out_d = a.nrows();
        let mut data = Vec::with_capacity(self.n * out_d);
        for r in self.rows() {
            for i in 0..out_d {
                let mut acc = b[i];
                for (k, v) in r.iter().enumerate() {
                    acc += a[(i, k)] * v;
                }
                data.push(acc);
            }
        }
        Sample::new(self.n, out_d, data)
    }

    /// Rows mapped through `x ↦ W (x - center)`; used by transformation-retransformation.
    pub(crate) fn standardized(&self, w: &DMatrix<f64>, center: Option<&[f64]>) -> Sample {
        let d = self.d;
        let mut data = vec![0.0; self.data.len()];
        let mut centered = vec![0.0; d];
        for (src, dst) in self.data.chunks_exact(d).zip(data.chunks_exact_mut(d)) {
            match center {
                Some(c) => {
                    for k in 0..d {
                        centered[k] = src[k] - c[k];
                    }
                }
                None => centered.copy_from_slice(src),
            }
            for i in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += w[(i, k)] * centered[k];
                }
                dst[i] = acc;
            }
        }
        Sample { data, n: self.n, d }
    }

    /// Concatenate rows of two samples of equal dimension.
    pub fn concat(&self, other: &Sample) -> Result<Sample> {
        if other.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: other.d,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Sample {
            data,
            n: self.n + other.n,
            d: self.d,
        })
    }
}

/// Which estimator produced a scatter matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    Cov,
    #[serde(rename = "GCM")]
    Gcm,
    #[serde(rename = "SSCM")]
    Sscm,
    #[serde(rename = "RCM")]
    Rcm,
    TrGini,
    KotzM,
    Tyler,
    Duembgen,
    #[serde(rename = "MRCM")]
    Mrcm,
}

/// Consistency convention of a scatter matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Consistency {
    /// No calibration; the matrix estimates its own functional.
    Raw,
    /// Fisher consistent for the scatter parameter at normal models.
    NormalConsistent,
    /// Fisher consistent for the scatter parameter at a known distribution.
    KnownF,
}

/// Symmetric positive semi-definite `d × d` matrix tagged with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterMatrix {
    m: DMatrix<f64>,
    kind: EstimatorKind,
    consistency: Consistency,
}

impl ScatterMatrix {
    const ASYMMETRY_TOL: f64 = 1e-10;
    const PSD_TOL: f64 = 1e-10;

    /// Validates finiteness, symmetry and positive semi-definiteness.
    pub fn new(mut m: DMatrix<f64>, kind: EstimatorKind, consistency: Consistency) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        linalg::check_finite(&m)?;
        let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
        let dim = m.nrows();
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (m[(i, j)] - m[(j, i)]).abs() > Self::ASYMMETRY_TOL * scale {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        linalg::symmetrize(&mut m);
        let eig = linalg::sym_eigen(&m)?;
        let tr = linalg::trace(&m);
        let min = eig.values[dim - 1];
        if min < -Self::PSD_TOL * tr.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidArgument(format!(
                "matrix is not positive semi-definite (smallest eigenvalue {min:e})"
            )));
        }
        Ok(Self {
            m,
            kind,
            consistency,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn consistency(&self) -> Consistency {
        self.consistency
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.m)
    }

    pub fn inv_sqrt(&self) -> Result<DMatrix<f64>> {
        linalg::inv_sqrt(&self.m)
    }

    /// Multiply by a positive factor, relabelling the consistency convention.
    pub fn rescaled(&self, factor: f64, consistency: Consistency) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "scale factor {factor} must be positive"
            )));
        }
        Ok(Self {
            m: &self.m * factor,
            kind: self.kind,
            consistency,
        })
    }

    /// Row-major flattening.
    pub fn to_row_major(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                out.push(self.m[(i, j)]);
            }
        }
        out
    }
}

/// Scatter normalised to trace `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMatrix {
    w: DMatrix<f64>,
}

impl ShapeMatrix {
    /// Wraps a matrix already normalised to trace `d` (checked to 1e-10 relative).
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        let d = w.nrows() as f64;
        let tr = linalg::trace(&w);
        if (tr - d).abs() > 1e-10 * d {
            return Err(Error::InvalidArgument(format!(
                "shape matrix trace {tr} differs from {d}"
            )));
        }
        let s = ScatterMatrix::new(w, EstimatorKind::Cov, Consistency::Raw)?;
        Ok(Self { w: s.into_matrix() })
    }

    pub(crate) fn from_normalized(w: DMatrix<f64>) -> Self {
        Self { w }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            w: DMatrix::identity(d, d),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

/// How the TR-Gini fixed point obtains the constant `c(F)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CConvention {
    /// `c = 2Γ((d+1)/2)/Γ(d/2)`: Fisher consistent at the normal model.
    NormalConstant,
    /// `c(F₀)` of a known spherical family (closed form or Monte Carlo).
    Family(crate::elliptical::Family),
    Explicit(f64),
    /// Drop the factor: scatter up to scale.
    None,
}

/// Stopping rule and calibration shared by the fixed-point estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub tolerance: f64,
    pub max_iter: usize,
    pub c_convention: CConvention,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iter: 100,
            c_convention: CConvention::NormalConstant,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_c(mut self, c: CConvention) -> Self {
        self.c_convention = c;
        self
    }
}

/// Master seed; child streams are derived deterministically by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    /// Child seed for stream `index` (SplitMix64 finaliser over the pair).
    pub fn derive(self, index: u64) -> Seed {
        let mut z = self.0 ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
