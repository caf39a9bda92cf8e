//! Influence functions of the scatter functionals at spherical models.
//!
//! At a spherical `F₀` every affine equivariant scatter functional has an
//! influence function of the form `IF(x) = α(‖x‖) uuᵀ - β(‖x‖) I` with
//! `u = x/‖x‖`, so the pair `(α, β)` describes it completely. Closed forms are
//! provided for the covariance, Tyler and Kotz functionals, a Monte Carlo
//! evaluation for TR-Gini, and a finite-difference estimator that contaminates
//! a sample and re-runs the actual estimator for cross-checking.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::elliptical::{mean_and_se, spherical_sample, EllipticalSpec, Family};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mest::{kotz_m_from, tr_gini_from, tyler_m_from};
use crate::model::{CConvention, EstimatorConfig, EstimatorKind, Sample, Seed};
use crate::scale::sample_covariance;
use crate::spatial::sample_gcm;

/// `(α, β)` with Monte Carlo standard errors (zero for closed forms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaBeta {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_se: f64,
    pub beta_se: f64,
}

impl AlphaBeta {
    fn exact(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            alpha_se: 0.0,
            beta_se: 0.0,
        }
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "radius {r} must be finite and nonnegative"
        )));
    }
    Ok(())
}

/// Covariance: `IF(x) = xxᵀ - I`.
pub fn alpha_beta_cov(r: f64) -> (f64, f64) {
    (r * r, 1.0)
}

/// Tyler shape: `IF(x) = (d+2)(uuᵀ - I/d)`.
pub fn alpha_beta_tyler(_r: f64, d: usize) -> (f64, f64) {
    let df = d as f64;
    (df + 2.0, (df + 2.0) / df)
}

/// Kotz functional rescaled to be Fisher consistent at `F₀`.
///
/// `α = d(d+2) r/((d+1) c₁)` and `β = 2 - d r/((d+1) c₁)`, which is the
/// solution of the linearised fixed-point equation and satisfies `E IF = 0`.
pub fn alpha_beta_kotz(r: f64, family: Family, d: usize) -> Result<(f64, f64)> {
    check_radius(r)?;
    let c1 = family.c_first(d)?;
    let df = d as f64;
    let slope = df * r / ((df + 1.0) * c1);
    Ok(((df + 2.0) * slope, 2.0 - slope))
}

/// Per-draw integrands of the TR-Gini `(α, β)` at radius `r`.
///
/// With `δ = X₁ - r e₁`: `h_α = ‖δ‖ - d X₁₂²/‖δ‖`, `h_β = ‖δ‖ + (d+2) X₁₂²/‖δ‖`.
pub(crate) fn trgini_integrands(x: &[f64], r: f64) -> (f64, f64) {
    let d = x.len();
    let mut sq = (x[0] - r) * (x[0] - r);
    for v in &x[1..] {
        sq += v * v;
    }
    let norm = sq.sqrt();
    if d == 1 {
        return (norm, norm);
    }
    if norm == 0.0 {
        return (0.0, 0.0);
    }
    let t = x[1] * x[1] / norm;
    let df = d as f64;
    (norm - df * t, norm + (df + 2.0) * t)
}

/// TR-Gini `(α, β)` at radius `r` by Monte Carlo over `mc_size` draws of `X₁ ~ F₀`.
pub fn alpha_beta_trgini(
    r: f64,
    family: Family,
    d: usize,
    mc_size: usize,
    seed: Seed,
) -> Result<AlphaBeta> {
    check_radius(r)?;
    let c = family.c_pairwise(d)?.value;
    let draws = spherical_sample(family, d, mc_size.max(2), seed);
    Ok(trgini_from_draws(r, &draws, c))
}

fn trgini_from_draws(r: f64, draws: &Sample, c: f64) -> AlphaBeta {
    let d = draws.d() as f64;
    let (ha, hb): (Vec<f64>, Vec<f64>) = draws.rows().map(|x| trgini_integrands(x, r)).unzip();
    let (ma, sa) = mean_and_se(&ha);
    let (mb, sb) = mean_and_se(&hb);
    let ka = 2.0 * d * (d + 2.0) / ((d + 1.0) * c);
    let kb = 2.0 * d / ((d + 1.0) * c);
    AlphaBeta {
        alpha: ka * ma,
        beta: 4.0 - kb * mb,
        alpha_se: ka * sa,
        beta_se: kb * sb,
    }
}

/// Closed form or Monte Carlo `(α, β)` for a supported functional.
pub fn alpha_beta(
    kind: EstimatorKind,
    r: f64,
    family: Family,
    d: usize,
    mc_size: usize,
    seed: Seed,
) -> Result<AlphaBeta> {
    check_radius(r)?;
    match kind {
        EstimatorKind::Cov => {
            let (a, b) = alpha_beta_cov(r);
            Ok(AlphaBeta::exact(a, b))
        }
        EstimatorKind::Tyler => {
            let (a, b) = alpha_beta_tyler(r, d);
            Ok(AlphaBeta::exact(a, b))
        }
        EstimatorKind::KotzM => {
            let (a, b) = alpha_beta_kotz(r, family, d)?;
            Ok(AlphaBeta::exact(a, b))
        }
        EstimatorKind::TrGini => alpha_beta_trgini(r, family, d, mc_size, seed),
        other => Err(Error::InvalidArgument(format!(
            "no (alpha, beta) form available for {other:?}"
        ))),
    }
}

/// Where the expectation in the Gini covariance influence function comes from.
pub enum IfSource<'a> {
    /// Plug-in: average over the rows of a sample, `Σ_g` its sample GCM.
    Sample(&'a Sample),
    /// Monte Carlo from the model with `mc_size` draws.
    Model {
        spec: &'a EllipticalSpec,
        mc_size: usize,
        seed: Seed,
    },
}

/// `IF(x; Σ_g) = 2E[(X₁-x)(X₁-x)ᵀ/‖X₁-x‖] - 2Σ_g`.
pub fn if_gcm(x: &[f64], source: IfSource<'_>) -> Result<DMatrix<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("contamination point".into()));
    }
    let (draws, sigma_g) = match source {
        IfSource::Sample(s) => {
            if s.d() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: s.d(),
                    got: x.len(),
                });
            }
            (s.clone(), sample_gcm(s)?.into_matrix())
        }
        IfSource::Model {
            spec,
            mc_size,
            seed,
        } => {
            if spec.d() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: spec.d(),
                    got: x.len(),
                });
            }
            let draws = spec.draw(mc_size.max(2), seed)?;
            let sigma_g = if spec.is_spherical() {
                let c = spec.family().c_pairwise(spec.d())?.value;
                DMatrix::identity(spec.d(), spec.d()) * (c / spec.d() as f64)
            } else {
                disjoint_pair_gcm(&spec.draw(2 * mc_size.max(2), seed.derive(1))?)
            };
            (draws, sigma_g)
        }
    };
    let d = x.len();
    let mut acc = DMatrix::zeros(d, d);
    let mut delta = vec![0.0; d];
    for row in draws.rows() {
        for k in 0..d {
            delta[k] = row[k] - x[k];
        }
        let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for a in 0..d {
                for b in a..d {
                    acc[(a, b)] += delta[a] * delta[b] / norm;
                }
            }
        }
    }
    linalg::symmetrize(&mut acc);
    Ok(acc * (2.0 / draws.n() as f64) - sigma_g * 2.0)
}

/// Unbiased `O(n)` estimate of `Σ_g` from the disjoint pairs `(X₁, X₂), (X₃, X₄), …`.
fn disjoint_pair_gcm(draws: &Sample) -> DMatrix<f64> {
    let d = draws.d();
    let mut acc = DMatrix::zeros(d, d);
    let pairs = draws.n() / 2;
    for p in 0..pairs {
        let (a, b) = (draws.row(2 * p), draws.row(2 * p + 1));
        let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..d {
                for j in 0..d {
                    acc[(i, j)] += delta[i] * delta[j] / norm;
                }
            }
        }
    }
    acc / pairs as f64
}

/// Options of the finite-difference influence estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalIfOptions {
    /// Contamination weight `ε`.
    pub eps: f64,
    /// Size of the clean sample.
    pub n: usize,
    pub seed: Seed,
    /// Spherical models only: stratify radii and close the sample under sign
    /// changes and cyclic coordinate shifts, which removes most of the
    /// sampling noise in `T(F_n)`.
    pub symmetrize: bool,
    /// Fixed-point tolerance for the iterative estimators.
    pub tolerance: f64,
}

impl Default for EmpiricalIfOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            n: 100_000,
            seed: Seed(0),
            symmetrize: true,
            tolerance: 1e-11,
        }
    }
}

/// Clean sample of `EmpiricalIfOptions`: plain draws, or a stratified and
/// symmetrized design when the model is spherical.
pub fn base_sample(
    spec: &EllipticalSpec,
    n: usize,
    symmetrize: bool,
    seed: Seed,
) -> Result<Sample> {
    if !symmetrize || !spec.is_spherical() {
        return spec.draw(n, seed);
    }
    let d = spec.d();
    let family = spec.family();
    let orbit = d << d;
    let radii = n.div_ceil(orbit).max(1);
    let mut rng = seed.rng();
    let mut data = Vec::with_capacity(radii * orbit * d);
    let mut u = vec![0.0; d];
    for i in 0..radii {
        let p = (i as f64 + rng.random::<f64>()) / radii as f64;
        let r = family.radial_quantile(d, p.clamp(1e-12, 1.0 - 1e-12));
        loop {
            for v in u.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let nrm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm > 0.0 {
                u.iter_mut().for_each(|v| *v *= r / nrm);
                break;
            }
        }
        for shift in 0..d {
            for signs in 0..(1usize << d) {
                for k in 0..d {
                    let v = u[(k + shift) % d];
                    data.push(if signs >> k & 1 == 1 { -v } else { v });
                }
            }
        }
    }
    Sample::new(radii * orbit, d, data)
}

/// Functional value on a sample, normalised so that it equals `I` at a
/// spherical `F₀` with identity scatter.
fn functional(
    kind: EstimatorKind,
    sample: &Sample,
    spec: &EllipticalSpec,
    tolerance: f64,
    init: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let d = sample.d();
    let config = EstimatorConfig::default()
        .with_tolerance(tolerance)
        .with_max_iter(2000);
    match kind {
        EstimatorKind::Cov => {
            let n = sample.n() as f64;
            Ok(sample_covariance(sample)?.into_matrix() * ((n - 1.0) / n))
        }
        EstimatorKind::Gcm => Ok(sample_gcm(sample)?.into_matrix()),
        EstimatorKind::Tyler => Ok(tyler_m_from(sample, spec.location(), &config, init)?
            .into_converged()?
            .into_matrix()),
        EstimatorKind::KotzM => {
            let c1 = spec.family().c_first(d)?;
            let scale = (d as f64 / c1).powi(2);
            let start = init.map(|m| m / scale);
            let fit =
                kotz_m_from(sample, spec.location(), &config, start.as_ref())?.into_converged()?;
            Ok(fit.into_matrix() * scale)
        }
        EstimatorKind::TrGini => {
            let config = config.with_c(CConvention::Family(spec.family()));
            Ok(tr_gini_from(sample, &config, init)?
                .into_converged()?
                .into_matrix())
        }
        other => Err(Error::InvalidArgument(format!(
            "no empirical influence function for {other:?}"
        ))),
    }
}

/// Finite-difference influence function `[T(F_{ε,n}) - T(F_n)]/ε_eff`.
///
/// `F_{ε,n}` appends `k = ⌈εN⌉` copies of `x` to the clean sample of size
/// `N`, so the realised weight is `ε_eff = k/(N+k)`. Both evaluations share
/// the clean sample, and the contaminated fit is warm-started at the clean one.
pub fn empirical_if(
    kind: EstimatorKind,
    x: &[f64],
    spec: &EllipticalSpec,
    opts: &EmpiricalIfOptions,
) -> Result<DMatrix<f64>> {
    if !(opts.eps > 0.0 && opts.eps < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "contamination weight {} must lie in (0, 1)",
            opts.eps
        )));
    }
    if x.len() != spec.d() {
        return Err(Error::DimensionMismatch {
            expected: spec.d(),
            got: x.len(),
        });
    }
    let base = base_sample(spec, opts.n, opts.symmetrize, opts.seed)?;
    let clean = functional(kind, &base, spec, opts.tolerance, None)?;
    empirical_if_on(kind, x, spec, &base, &clean, opts)
}

/// [`empirical_if`] on a precomputed clean sample and clean functional value.
pub fn empirical_if_on(
    kind: EstimatorKind,
    x: &[f64],
    spec: &EllipticalSpec,
    base: &Sample,
    clean: &DMatrix<f64>,
    opts: &EmpiricalIfOptions,
) -> Result<DMatrix<f64>> {
    let n = base.n();
    let k = (opts.eps * n as f64).ceil() as usize;
    let copies = Sample::new(k, x.len(), x.repeat(k))?;
    let mixed = base.concat(&copies)?;
    let eps_eff = k as f64 / (n + k) as f64;
    let contaminated = functional(kind, &mixed, spec, opts.tolerance, Some(clean))?;
    Ok((contaminated - clean) / eps_eff)
}

/// Read `(α, β)` off a matrix of the form `α uuᵀ - β I`, `u = x/‖x‖`.
///
/// `β` averages `-vᵀ M v` over an orthonormal basis of `u^⊥`; needs `d ≥ 2`.
pub fn extract_alpha_beta(m: &DMatrix<f64>, x: &[f64]) -> Result<(f64, f64)> {
    let d = x.len();
    if d < 2 {
        return Err(Error::InvalidArgument(
            "alpha and beta are not separable in one dimension".into(),
        ));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidArgument(
            "direction undefined at the origin".into(),
        ));
    }
    let u = nalgebra::DVector::from_iterator(d, x.iter().map(|v| v / norm));
    let along = (u.transpose() * m * &u)[(0, 0)];
    let beta = -(linalg::trace(m) - along) / (d - 1) as f64;
    Ok((along + beta, beta))
}

/// Tabulated `α(r)`, `β(r)` of one functional.
#[derive(Debug, Clone, PartialEq)]
pub struct IFCurve {
    pub kind: EstimatorKind,
    pub grid: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Standard errors of `α` for Monte Carlo curves.
    pub mc_se: Option<Vec<f64>>,
}

impl IFCurve {
    /// Evaluates on a strictly increasing grid of nonnegative radii. Monte
    /// Carlo curves reuse one set of draws across the grid.
    pub fn compute(
        kind: EstimatorKind,
        family: Family,
        d: usize,
        grid: &[f64],
        mc_size: usize,
        seed: Seed,
    ) -> Result<Self> {
        if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) || grid[0] < 0.0 {
            return Err(Error::InvalidArgument(
                "grid must be nonempty, nonnegative and strictly increasing".into(),
            ));
        }
        let mut alpha = Vec::with_capacity(grid.len());
        let mut beta = Vec::with_capacity(grid.len());
        let mut se = Vec::with_capacity(grid.len());
        if kind == EstimatorKind::TrGini {
            let c = family.c_pairwise(d)?.value;
            let draws = spherical_sample(family, d, mc_size.max(2), seed);
            for &r in grid {
                let ab = trgini_from_draws(r, &draws, c);
                alpha.push(ab.alpha);
                beta.push(ab.beta);
                se.push(ab.alpha_se);
            }
        } else {
            for &r in grid {
                let ab = alpha_beta(kind, r, family, d, mc_size, seed)?;
                alpha.push(ab.alpha);
                beta.push(ab.beta);
            }
        }
        let mc_se = (kind == EstimatorKind::TrGini).then_some(se);
        Ok(Self {
            kind,
            grid: grid.to_vec(),
            alpha,
            beta,
            mc_se,
        })
    }

    /// CSV rows `estimator,r,alpha,beta,se`; `se` is empty for closed forms.
    pub fn write_csv<W: Write>(&self, out: &mut W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(out, "estimator,r,alpha,beta,se")?;
        }
        let name = estimator_label(self.kind);
        for i in 0..self.grid.len() {
            let se = self
                .mc_se
                .as_ref()
                .map(|s| format!("{}", s[i]))
                .unwrap_or_default();
            writeln!(
                out,
                "{name},{},{},{},{se}",
                self.grid[i], self.alpha[i], self.beta[i]
            )?;
        }
        Ok(())
    }
}

/// Lower-case label used in CSV output and on the command line.
pub fn estimator_label(kind: EstimatorKind) -> &'static str {
    match kind {
        EstimatorKind::Cov => "cov",
        EstimatorKind::Gcm => "gcm",
        EstimatorKind::Sscm => "sscm",
        EstimatorKind::Rcm => "rcm",
        EstimatorKind::TrGini => "tr-gini",
        EstimatorKind::KotzM => "kotz",
        EstimatorKind::Tyler => "tyler",
        EstimatorKind::Duembgen => "duembgen",
        EstimatorKind::Mrcm => "mrcm",
    }
}
