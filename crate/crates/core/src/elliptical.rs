//! Elliptical families used throughout: multivariate normal, Student t(ν) and
//! the Kotz law whose radius is Gamma(d, 1).
//!
//! Besides sampling, this module supplies the distributional constants the
//! estimators and oracles are calibrated with:
//!
//! * `c(F₀) = E‖X₁ - X₂‖` (closed form for the normal, Monte Carlo otherwise),
//! * `c₁(F₀) = E‖X‖` and `E‖X‖²`,
//! * `τ` of the regular shape estimator, i.e. `1 + κ(F₀)`,
//! * the radial density `f_r(r) = 2π^{d/2}/Γ(d/2) r^{d-1} g(r²)`.
//!
//! Draws are produced in fixed blocks with per-block derived seeds, so the
//! output depends only on `(spec, n, seed)` and not on the thread count.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ChiSquared, ContinuousCDF, Gamma as StatGamma};
use statrs::function::gamma::ln_gamma;

/// Family tag, `ν` bits and dimension.
type ConstantKey = (u8, u64, usize);

use crate::error::{Error, Result};
use crate::model::{Sample, Seed};

const DRAW_BLOCK: usize = 1024;

/// Default number of pairs for Monte Carlo `c(F₀)`.
pub const C_PAIRWISE_MC_PAIRS: usize = 1_000_000;
/// Fixed stream for Monte Carlo constants so calibrations are reproducible.
pub const CONSTANT_SEED: Seed = Seed(0x6A09_E667_F3BC_C908);

/// Spherical generator of an elliptical family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    Normal,
    #[serde(rename = "t")]
    StudentT {
        nu: f64,
    },
    Kotz,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::StudentT { .. } => "t",
            Family::Kotz => "kotz",
        }
    }

    pub fn nu(&self) -> Option<f64> {
        match self {
            Family::StudentT { nu } => Some(*nu),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Family::StudentT { nu } = self {
            if !(*nu > 0.0) || nu.is_nan() {
                return Err(Error::InvalidArgument(format!(
                    "degrees of freedom {nu} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Guard requiring `E‖X‖^k < ∞`.
    pub fn require_moment(&self, k: u32) -> Result<()> {
        self.validate()?;
        if let Family::StudentT { nu } = self {
            if *nu <= k as f64 {
                return Err(Error::MomentUndefined(format!(
                    "t distribution with nu = {nu} has no moment of order {k}"
                )));
            }
        }
        Ok(())
    }

    /// One draw from the spherical law `F₀` in dimension `d`, written into `out`.
    pub fn draw_spherical<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        match *self {
            Family::Normal => {}
            Family::StudentT { nu } => {
                let chi2 = Gamma::new(nu / 2.0, 2.0).expect("validated nu");
                let w: f64 = chi2.sample(rng);
                let f = (nu / w).sqrt();
                out.iter_mut().for_each(|v| *v *= f);
            }
            Family::Kotz => {
                let radius = Gamma::new(out.len() as f64, 1.0).expect("dimension >= 1");
                let r: f64 = radius.sample(rng);
                let nrm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
                out.iter_mut().for_each(|v| *v *= r / nrm);
            }
        }
    }

    /// `c₁(F₀) = E‖X‖`.
    pub fn c_first(&self, d: usize) -> Result<f64> {
        self.require_moment(1)?;
        let df = d as f64;
        let normal =
            std::f64::consts::SQRT_2 * (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp();
        Ok(match *self {
            Family::Normal => normal,
            Family::StudentT { nu } => {
                let radial = (0.5 * nu.ln() + ln_gamma((nu - 1.0) / 2.0) - ln_gamma(nu / 2.0))
                    .exp()
                    / std::f64::consts::SQRT_2;
                radial * normal
            }
            Family::Kotz => df,
        })
    }

    /// `E‖X‖²` under `F₀`.
    pub fn radial_second_moment(&self, d: usize) -> Result<f64> {
        self.require_moment(2)?;
        let df = d as f64;
        Ok(match *self {
            Family::Normal => df,
            Family::StudentT { nu } => df * nu / (nu - 2.0),
            Family::Kotz => df * (df + 1.0),
        })
    }

    /// Off-diagonal asymptotic variance of the regular shape estimator, `1 + κ`.
    pub fn tau_regular(&self, d: usize) -> Result<f64> {
        self.validate()?;
        let df = d as f64;
        match *self {
            Family::Normal => Ok(1.0),
            Family::StudentT { nu } if nu > 4.0 => Ok((nu - 2.0) / (nu - 4.0)),
            Family::StudentT { nu } => Err(Error::MomentUndefined(format!(
                "regular shape estimator needs nu > 4, got {nu}"
            ))),
            Family::Kotz => Ok((df + 3.0) / (df + 1.0)),
        }
    }

    /// Density of `R = ‖X‖` under `F₀`.
    pub fn radial_pdf(&self, d: usize, r: f64) -> f64 {
        if r < 0.0 {
            return 0.0;
        }
        if r == 0.0 {
            return match (d, self) {
                (1, Family::Kotz) => 1.0,
                (1, _) => (self.ln_generator(1, 0.0) + 2.0f64.ln()).exp(),
                _ => 0.0,
            };
        }
        let df = d as f64;
        let ln_surface = 2.0f64.ln() + 0.5 * df * PI.ln() - ln_gamma(df / 2.0);
        (ln_surface + (df - 1.0) * r.ln() + self.ln_generator(d, r * r)).exp()
    }

    /// Quantile of `R = ‖X‖` at probability `p ∈ (0, 1)`.
    pub fn radial_quantile(&self, d: usize, p: f64) -> f64 {
        let df = d as f64;
        match *self {
            Family::Normal => ChiSquared::new(df).expect("d >= 1").inverse_cdf(p).sqrt(),
            Family::StudentT { nu } => {
                let q = Beta::new(df / 2.0, nu / 2.0)
                    .expect("validated nu")
                    .inverse_cdf(p);
                (nu * q / (1.0 - q)).sqrt()
            }
            Family::Kotz => StatGamma::new(df, 1.0).expect("d >= 1").inverse_cdf(p),
        }
    }

    /// `ln g(t)` of the density generator.
    fn ln_generator(&self, d: usize, t: f64) -> f64 {
        let df = d as f64;
        match *self {
            Family::Normal => -0.5 * df * (2.0 * PI).ln() - t / 2.0,
            Family::StudentT { nu } => {
                ln_gamma((nu + df) / 2.0)
                    - ln_gamma(nu / 2.0)
                    - 0.5 * df * (nu * PI).ln()
                    - (df + nu) / 2.0 * (t / nu).ln_1p()
            }
            Family::Kotz => {
                ln_gamma(df / 2.0) - 2.0f64.ln() - 0.5 * df * PI.ln() - ln_gamma(df) - t.sqrt()
            }
        }
    }

    /// `c(F₀) = E‖X₁ - X₂‖`: closed form for the normal, Monte Carlo otherwise.
    pub fn c_pairwise(&self, d: usize) -> Result<ConstantEstimate> {
        self.require_moment(1)?;
        match self {
            Family::Normal => {
                let df = d as f64;
                let value = 2.0 * (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp();
                Ok(ConstantEstimate {
                    value,
                    se: 0.0,
                    method: Method::ClosedForm,
                })
            }
            _ => {
                static CACHE: OnceLock<Mutex<HashMap<ConstantKey, ConstantEstimate>>> =
                    OnceLock::new();
                let key = (self.tag(), self.nu().unwrap_or(0.0).to_bits(), d);
                let cache = CACHE.get_or_init(Default::default);
                if let Some(hit) = cache.lock().expect("cache poisoned").get(&key) {
                    return Ok(*hit);
                }
                let est = self.c_pairwise_mc(d, C_PAIRWISE_MC_PAIRS, CONSTANT_SEED)?;
                cache.lock().expect("cache poisoned").insert(key, est);
                Ok(est)
            }
        }
    }

    /// Monte Carlo `E‖X₁ - X₂‖` from independent pairs, with standard error.
    pub fn c_pairwise_mc(&self, d: usize, pairs: usize, seed: Seed) -> Result<ConstantEstimate> {
        self.require_moment(1)?;
        if pairs < 2 {
            return Err(Error::InvalidArgument(
                "need at least two Monte Carlo pairs".into(),
            ));
        }
        let sample = spherical_sample(*self, d, 2 * pairs, seed);
        let dists: Vec<f64> = sample
            .as_slice()
            .chunks_exact(2 * d)
            .map(|c| {
                let (a, b) = c.split_at(d);
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let (value, se) = mean_and_se(&dists);
        Ok(ConstantEstimate {
            value,
            se,
            method: Method::MonteCarlo,
        })
    }

    fn tag(&self) -> u8 {
        match self {
            Family::Normal => 0,
            Family::StudentT { .. } => 1,
            Family::Kotz => 2,
        }
    }
}

/// How a reported quantity was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantEstimate {
    pub value: f64,
    pub se: f64,
    pub method: Method,
}

pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Generative model: family, location and scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticalSpec {
    family: Family,
    location: DVector<f64>,
    scatter: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl EllipticalSpec {
    pub fn new(family: Family, location: Vec<f64>, scatter: DMatrix<f64>) -> Result<Self> {
        family.validate()?;
        let d = location.len();
        if d == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        if scatter.nrows() != d || scatter.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: scatter.nrows(),
            });
        }
        crate::linalg::check_finite(&scatter)?;
        if location.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("location".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if scatter[(i, j)] != scatter[(j, i)] {
                    return Err(Error::InvalidArgument("scatter must be symmetric".into()));
                }
            }
        }
        let chol = scatter
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("scatter must be positive definite".into()))?
            .l();
        Ok(Self {
            family,
            location: DVector::from_vec(location),
            scatter,
            chol,
        })
    }

    /// Centered at the origin with identity scatter.
    pub fn spherical(family: Family, d: usize) -> Result<Self> {
        Self::new(family, vec![0.0; d], DMatrix::identity(d, d))
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn d(&self) -> usize {
        self.location.len()
    }

    pub fn location(&self) -> &[f64] {
        self.location.as_slice()
    }

    pub fn scatter(&self) -> &DMatrix<f64> {
        &self.scatter
    }

    pub fn is_spherical(&self) -> bool {
        self.location.iter().all(|v| *v == 0.0)
            && self.scatter == DMatrix::identity(self.d(), self.d())
    }

    /// `n` i.i.d. rows `L z + μ` with `z ~ F₀` and `LLᵀ = Σ`.
    pub fn draw(&self, n: usize, seed: Seed) -> Result<Sample> {
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let d = self.d();
        let blocks = n.div_ceil(DRAW_BLOCK);
        let parts: Vec<Vec<f64>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let rows = DRAW_BLOCK.min(n - b * DRAW_BLOCK);
                let mut rng = seed.derive(b as u64).rng();
                let mut z = vec![0.0; d];
                let mut out = Vec::with_capacity(rows * d);
                for _ in 0..rows {
                    self.family.draw_spherical(&mut rng, &mut z);
                    for i in 0..d {
                        let mut acc = self.location[i];
                        for (k, zk) in z.iter().enumerate().take(i + 1) {
                            acc += self.chol[(i, k)] * zk;
                        }
                        out.push(acc);
                    }
                }
                out
            })
            .collect();
        Sample::new(n, d, parts.concat())
    }

    pub fn c_pairwise(&self) -> Result<ConstantEstimate> {
        self.family.c_pairwise(self.d())
    }

    pub fn c_first(&self) -> Result<f64> {
        self.family.c_first(self.d())
    }

    pub fn tau_regular(&self) -> Result<f64> {
        self.family.tau_regular(self.d())
    }

    pub fn radial_pdf(&self, r: f64) -> f64 {
        self.family.radial_pdf(self.d(), r)
    }

    pub fn to_json(&self) -> SpecJson {
        SpecJson {
            family: self.family.name().to_string(),
            nu: self.family.nu(),
            d: self.d(),
            mu: self.location.iter().copied().collect(),
            sigma: (0..self.d())
                .map(|i| (0..self.d()).map(|j| self.scatter[(i, j)]).collect())
                .collect(),
        }
    }
}

/// Spherical draws without constructing a full spec (identity scatter, zero location).
pub(crate) fn spherical_sample(family: Family, d: usize, n: usize, seed: Seed) -> Sample {
    EllipticalSpec::spherical(family, d)
        .and_then(|s| s.draw(n, seed))
        .expect("validated spherical spec")
}

/// JSON form `{"family": "normal|t|kotz", "nu": …, "d": …, "mu": […], "sigma": [[…]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecJson {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    pub d: usize,
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub sigma: Vec<Vec<f64>>,
}

pub fn parse_family(name: &str, nu: Option<f64>) -> Result<Family> {
    let fam = match name.to_ascii_lowercase().as_str() {
        "normal" | "gaussian" => Family::Normal,
        "t" | "student" | "student-t" => match nu {
            Some(v) if v.is_infinite() && v > 0.0 => Family::Normal,
            Some(v) => Family::StudentT { nu: v },
            None => return Err(Error::InvalidArgument("t family requires nu".into())),
        },
        "kotz" => Family::Kotz,
        other => return Err(Error::InvalidArgument(format!("unknown family '{other}'"))),
    };
    fam.validate()?;
    Ok(fam)
}

impl TryFrom<SpecJson> for EllipticalSpec {
    type Error = Error;

    fn try_from(j: SpecJson) -> Result<Self> {
        let family = parse_family(&j.family, j.nu)?;
        let mu = if j.mu.is_empty() {
            vec![0.0; j.d]
        } else {
            j.mu
        };
        if mu.len() != j.d {
            return Err(Error::DimensionMismatch {
                expected: j.d,
                got: mu.len(),
            });
        }
        let sigma = if j.sigma.is_empty() {
            DMatrix::identity(j.d, j.d)
        } else {
            if j.sigma.len() != j.d || j.sigma.iter().any(|r| r.len() != j.d) {
                return Err(Error::DimensionMismatch {
                    expected: j.d,
                    got: j.sigma.len(),
                });
            }
            DMatrix::from_fn(j.d, j.d, |r, c| j.sigma[r][c])
        };
        EllipticalSpec::new(family, mu, sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn c_pairwise_normal_closed_form() {
        let c1 = Family::Normal.c_pairwise(1).unwrap().value;
        assert_abs_diff_eq!(c1, 2.0 / PI.sqrt(), epsilon = 1e-13);
        let c2 = Family::Normal.c_pairwise(2).unwrap().value;
        assert_abs_diff_eq!(c2, PI.sqrt(), epsilon = 1e-13);
    }

    #[test]
    fn c_first_values() {
        for d in 1..6 {
            assert_eq!(Family::Kotz.c_first(d).unwrap(), d as f64);
        }
        assert_abs_diff_eq!(
            Family::Normal.c_first(2).unwrap(),
            (PI / 2.0).sqrt(),
            epsilon = 1e-13
        );
        // √5 Γ(2)/(√2 Γ(5/2)) · √2 Γ(3/2)/Γ(1)
        let expected = 5f64.sqrt() * 1.0 / (2f64.sqrt() * 1.329_340_388_179_137)
            * 2f64.sqrt()
            * 0.886_226_925_452_758;
        let got = Family::StudentT { nu: 5.0 }.c_first(2).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 1.4907, epsilon = 1e-4);
    }

    #[test]
    fn normal_pairwise_is_root_two_first() {
        for d in 1..8 {
            let c = Family::Normal.c_pairwise(d).unwrap().value;
            let c1 = Family::Normal.c_first(d).unwrap();
            assert_abs_diff_eq!(c, 2f64.sqrt() * c1, epsilon = 1e-10);
        }
    }

    #[test]
    fn tau_values() {
        assert_eq!(Family::StudentT { nu: 5.0 }.tau_regular(2).unwrap(), 3.0);
        assert_eq!(Family::Normal.tau_regular(3).unwrap(), 1.0);
        assert_abs_diff_eq!(
            Family::Kotz.tau_regular(2).unwrap(),
            5.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            Family::StudentT { nu: 4.0 }.tau_regular(2),
            Err(Error::MomentUndefined(_))
        ));
    }

    #[test]
    fn moment_guards() {
        assert!(Family::StudentT { nu: 1.0 }.c_first(2).is_err());
        assert!(Family::StudentT { nu: 0.5 }.c_pairwise(2).is_err());
        assert!(Family::StudentT { nu: 2.0 }
            .radial_second_moment(2)
            .is_err());
        assert!(Family::StudentT { nu: -1.0 }.validate().is_err());
    }

    #[test]
    fn radial_pdf_closed_forms() {
        for &r in &[0.1f64, 0.7, 1.5, 3.0] {
            let half_normal = (2.0 / PI).sqrt() * (-r * r / 2.0).exp();
            assert_abs_diff_eq!(
                Family::Normal.radial_pdf(1, r),
                half_normal,
                epsilon = 1e-13
            );
            let gamma3 = r * r * (-r).exp() / 2.0;
            assert_abs_diff_eq!(Family::Kotz.radial_pdf(3, r), gamma3, epsilon = 1e-13);
        }
        assert_eq!(Family::Normal.radial_pdf(2, -1.0), 0.0);
    }

    #[test]
    fn draws_are_deterministic() {
        let spec = EllipticalSpec::spherical(Family::Kotz, 3).unwrap();
        let a = spec.draw(3000, Seed(9)).unwrap();
        let b = spec.draw(3000, Seed(9)).unwrap();
        assert_eq!(a, b);
        let c = spec.draw(3000, Seed(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn spec_json_roundtrip() {
        let text = r#"{"family":"t","nu":5,"d":2,"mu":[1,2],"sigma":[[2,0.5],[0.5,1]]}"#;
        let j: SpecJson = serde_json::from_str(text).unwrap();
        let spec = EllipticalSpec::try_from(j.clone()).unwrap();
        assert_eq!(spec.family(), Family::StudentT { nu: 5.0 });
        assert_eq!(spec.location(), &[1.0, 2.0]);
        assert_eq!(spec.to_json(), j);
        let bad = r#"{"family":"cauchy","d":2}"#;
        let j: SpecJson = serde_json::from_str(bad).unwrap();
        assert!(EllipticalSpec::try_from(j).is_err());
    }

    #[test]
    fn family_tagged_json() {
        let f: Family = serde_json::from_str(r#"{"family":"t","nu":8}"#).unwrap();
        assert_eq!(f, Family::StudentT { nu: 8.0 });
        let k: Family = serde_json::from_str(r#"{"family":"kotz"}"#).unwrap();
        assert_eq!(k, Family::Kotz);
    }
}
