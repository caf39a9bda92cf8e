//! Finite-sample efficiency study: replicate sampling, shape estimation,
//! off-diagonal MSE aggregation and relative efficiency against the regular
//! shape estimator.
//!
//! By default every estimator sees the same replicate data (paired design),
//! which makes the MSE ratios much less noisy; `paired = false` draws an
//! independent sample per estimator instead. Replicates whose fixed point did
//! not converge keep their last iterate and are counted in `fail_count`.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::efficiency::family_nu;
use crate::elliptical::{EllipticalSpec, Family};
use crate::error::{Error, Result};
use crate::mest::{duembgen, kotz_m, tr_gini, tyler_m};
use crate::model::{EstimatorConfig, Seed, ShapeMatrix};
use crate::scale::{mrcm, sample_covariance, to_shape, ScaleKind};
use crate::spatial::gini_mean_difference;

/// Shape estimators compared in the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimEstimator {
    Regular,
    Tyler,
    Duembgen,
    Kotz,
    TrGini,
    Mrcm,
    MrcmQn,
}

impl SimEstimator {
    pub const TABLE: [SimEstimator; 6] = [
        SimEstimator::Tyler,
        SimEstimator::Duembgen,
        SimEstimator::Kotz,
        SimEstimator::TrGini,
        SimEstimator::Mrcm,
        SimEstimator::MrcmQn,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SimEstimator::Regular => "regular",
            SimEstimator::Tyler => "tyler",
            SimEstimator::Duembgen => "duembgen",
            SimEstimator::Kotz => "kotz",
            SimEstimator::TrGini => "tr-gini",
            SimEstimator::Mrcm => "mrcm",
            SimEstimator::MrcmQn => "mrcm-qn",
        }
    }

    /// Shape estimate and whether the underlying iteration converged.
    pub fn shape(
        self,
        sample: &crate::Sample,
        location: &[f64],
        config: &EstimatorConfig,
    ) -> Result<(ShapeMatrix, bool)> {
        let fixed = |r: crate::FixedPointReport| Ok((r.shape()?, r.converged));
        match self {
            SimEstimator::Regular => Ok((to_shape(&sample_covariance(sample)?)?, true)),
            SimEstimator::Tyler => fixed(tyler_m(sample, location, config)?),
            SimEstimator::Duembgen => fixed(duembgen(sample, config)?),
            SimEstimator::Kotz => fixed(kotz_m(sample, location, config)?),
            SimEstimator::TrGini => fixed(tr_gini(sample, config)?),
            SimEstimator::Mrcm => Ok((to_shape(&mrcm(sample, ScaleKind::Mad)?)?, true)),
            SimEstimator::MrcmQn => Ok((to_shape(&mrcm(sample, ScaleKind::Qn)?)?, true)),
        }
    }
}

/// Mean over the upper off-diagonal positions of the per-position MSE.
pub fn mse_offdiag(estimates: &[ShapeMatrix], truth: &ShapeMatrix) -> Result<f64> {
    let d = truth.dim();
    if estimates.is_empty() {
        return Err(Error::EmptySample);
    }
    if d < 2 {
        return Err(Error::InvalidArgument(
            "no off-diagonal elements in one dimension".into(),
        ));
    }
    if let Some(e) = estimates.iter().find(|e| e.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: e.dim(),
        });
    }
    let total: f64 = estimates
        .iter()
        .map(|e| offdiag_sq_error(e.matrix(), truth.matrix()))
        .sum();
    Ok(total / estimates.len() as f64)
}

fn offdiag_sq_error(e: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    let d = truth.nrows();
    let mut s = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            let diff = e[(i, j)] - truth[(i, j)];
            s += diff * diff;
        }
    }
    s / (d * (d - 1) / 2) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub spec: EllipticalSpec,
    pub n: usize,
    pub replicates: usize,
    pub estimators: Vec<SimEstimator>,
    pub seed: Seed,
    pub paired: bool,
    pub config: EstimatorConfig,
}

impl SimScenario {
    /// Spherical truth `Σ = I`, paired replicates, default stopping rule.
    pub fn new(
        family: Family,
        d: usize,
        n: usize,
        replicates: usize,
        estimators: Vec<SimEstimator>,
        seed: Seed,
    ) -> Result<Self> {
        Ok(Self {
            spec: EllipticalSpec::spherical(family, d)?,
            n,
            replicates,
            estimators,
            seed,
            paired: true,
            config: EstimatorConfig::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.spec.d();
        if d < 2 {
            return Err(Error::InvalidArgument(
                "efficiency study needs d >= 2".into(),
            ));
        }
        if self.n < d + 2 {
            return Err(Error::TooFewObservations {
                needed: d + 2,
                got: self.n,
            });
        }
        if self.replicates < 2 {
            return Err(Error::InvalidArgument("need at least 2 replicates".into()));
        }
        self.config.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorEfficiency {
    pub estimator: SimEstimator,
    pub mse: f64,
    /// `MSE(regular) / MSE(estimator)`.
    pub re: f64,
    /// Jackknife-over-replicates standard error of `re`.
    pub se: f64,
    /// Replicates that did not converge or produced no estimate.
    pub fail_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub regular_mse: f64,
    pub rows: Vec<EstimatorEfficiency>,
    pub paired: bool,
}

impl EfficiencyReport {
    pub fn get(&self, e: SimEstimator) -> Option<&EstimatorEfficiency> {
        self.rows.iter().find(|r| r.estimator == e)
    }
}

/// Per replicate: regular error, then per estimator `(error, failed)`.
type ReplicateErrors = (f64, Vec<(Option<f64>, bool)>);

fn replicate(s: &SimScenario, m: usize, truth: &DMatrix<f64>) -> Result<ReplicateErrors> {
    let rep_seed = s.seed.derive(m as u64);
    let draw = |stream: u64| {
        let seed = if s.paired {
            rep_seed
        } else {
            rep_seed.derive(stream)
        };
        s.spec.draw(s.n, seed)
    };
    let base = draw(0)?;
    let (reg, _) = SimEstimator::Regular.shape(&base, s.spec.location(), &s.config)?;
    let regular = offdiag_sq_error(reg.matrix(), truth);
    let mut per = Vec::with_capacity(s.estimators.len());
    for (k, &e) in s.estimators.iter().enumerate() {
        let own;
        let sample = if s.paired {
            &base
        } else {
            own = draw(k as u64 + 1)?;
            &own
        };
        per.push(match e.shape(sample, s.spec.location(), &s.config) {
            Ok((w, converged)) => (Some(offdiag_sq_error(w.matrix(), truth)), !converged),
            Err(_) => (None, true),
        });
    }
    Ok((regular, per))
}

/// Runs all replicates and reports the relative efficiency of each estimator.
pub fn finite_sample_re(s: &SimScenario) -> Result<EfficiencyReport> {
    s.validate()?;
    let truth = DMatrix::identity(s.spec.d(), s.spec.d());
    let reps: Vec<ReplicateErrors> = (0..s.replicates)
        .into_par_iter()
        .map(|m| replicate(s, m, &truth))
        .collect::<Result<_>>()?;
    let regular: Vec<f64> = reps.iter().map(|r| r.0).collect();
    let rows = s
        .estimators
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let fail_count = reps.iter().filter(|r| r.1[k].1).count();
            let (reg, est): (Vec<f64>, Vec<f64>) = reps
                .iter()
                .zip(&regular)
                .filter_map(|(r, &g)| r.1[k].0.map(|v| (g, v)))
                .unzip();
            let (re, se) = ratio_with_jackknife(&reg, &est);
            let mse = est.iter().sum::<f64>() / est.len().max(1) as f64;
            EstimatorEfficiency {
                estimator: e,
                mse,
                re,
                se,
                fail_count,
            }
        })
        .collect();
    Ok(EfficiencyReport {
        regular_mse: regular.iter().sum::<f64>() / regular.len() as f64,
        rows,
        paired: s.paired,
    })
}

/// `Σ num / Σ den` and its jackknife standard error over the paired entries.
pub fn ratio_with_jackknife(num: &[f64], den: &[f64]) -> (f64, f64) {
    let m = num.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let (sn, sd): (f64, f64) = (num.iter().sum(), den.iter().sum());
    let ratio = sn / sd;
    if m < 2 {
        return (ratio, f64::NAN);
    }
    let loo: Vec<f64> = (0..m).map(|i| (sn - num[i]) / (sd - den[i])).collect();
    let mean = loo.iter().sum::<f64>() / m as f64;
    let var = loo.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * (m - 1) as f64 / m as f64;
    (ratio, var.sqrt())
}

/// Relative efficiency of the normal-consistent Gini mean difference
/// `GMD·√π/2` against the sample standard deviation for `N(0, 1)` data:
/// `MSE(sd) / MSE(GMD)` over `replicates` samples of size `n`.
pub fn gmd_sd_efficiency(n: usize, replicates: usize, seed: Seed) -> Result<(f64, f64)> {
    if n < 2 || replicates < 2 {
        return Err(Error::InvalidArgument(
            "need n >= 2 and at least 2 replicates".into(),
        ));
    }
    let spec = EllipticalSpec::spherical(Family::Normal, 1)?;
    let k = std::f64::consts::PI.sqrt() / 2.0;
    let errs: Vec<(f64, f64)> = (0..replicates)
        .into_par_iter()
        .map(|m| {
            let x = spec.draw(n, seed.derive(m as u64))?;
            let xs = x.as_slice();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd =
                (xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
            let g = gini_mean_difference(xs)? * k;
            Ok(((sd - 1.0).powi(2), (g - 1.0).powi(2)))
        })
        .collect::<Result<_>>()?;
    let (sd_err, gmd_err): (Vec<f64>, Vec<f64>) = errs.into_iter().unzip();
    Ok(ratio_with_jackknife(&sd_err, &gmd_err))
}

/// Grid configuration for the finite-sample study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table2Config {
    pub families: Vec<Family>,
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    #[serde(rename = "M")]
    pub replicates: usize,
    pub estimators: Vec<SimEstimator>,
    pub seed: Seed,
    #[serde(default = "paired_default")]
    pub paired: bool,
}

fn paired_default() -> bool {
    true
}

impl Default for Table2Config {
    /// t(5), t(8), normal and Kotz; `n ∈ {50, 200}`; `d ∈ {2, 5}`; `M = 2000`.
    fn default() -> Self {
        Self {
            families: vec![
                Family::StudentT { nu: 5.0 },
                Family::StudentT { nu: 8.0 },
                Family::Normal,
                Family::Kotz,
            ],
            n: vec![50, 200],
            d: vec![2, 5],
            replicates: 2000,
            estimators: SimEstimator::TABLE.to_vec(),
            seed: Seed(2017),
            paired: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Row {
    pub family: Family,
    pub d: usize,
    pub n: usize,
    pub estimator: SimEstimator,
    pub re: Option<f64>,
    pub se: Option<f64>,
    pub fail_count: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Report {
    pub rows: Vec<Table2Row>,
    pub replicates: usize,
    pub paired: bool,
}

impl Table2Report {
    /// CSV with columns `family,nu,d,n,estimator,re,se,fail_count`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "family,nu,d,n,estimator,re,se,fail_count")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.family.name(),
                family_nu(r.family),
                r.d,
                r.n,
                r.estimator.label(),
                opt(r.re),
                opt(r.se),
                r.fail_count
            )?;
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let design = if self.paired { "paired" } else { "unpaired" };
        let _ = writeln!(s, "M = {} replicates, {design} design", self.replicates);
        let _ = writeln!(
            s,
            "{:<9} {:<8} {:>3} {:>5} {:>7} {:>7} {:>5}",
            "estimator", "family", "d", "n", "re", "se", "fail"
        );
        for r in &self.rows {
            let fam = match r.family {
                Family::StudentT { nu } => format!("t({nu})"),
                f => f.name().to_string(),
            };
            let num = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<9} {:<8} {:>3} {:>5} {:>7} {:>7} {:>5}",
                r.estimator.label(),
                fam,
                r.d,
                r.n,
                num(r.re),
                num(r.se),
                r.fail_count
            );
        }
        s
    }
}

/// Runs every (family, n, d) cell; a failing cell yields rows with a note.
pub fn run_table2(config: &Table2Config) -> Result<Table2Report> {
    if config.replicates < 2 {
        return Err(Error::InvalidArgument("M must be at least 2".into()));
    }
    for f in &config.families {
        f.validate()?;
    }
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &family in &config.families {
        for &n in &config.n {
            for &d in &config.d {
                let seed = config.seed.derive(cell);
                cell += 1;
                let outcome = SimScenario::new(
                    family,
                    d,
                    n,
                    config.replicates,
                    config.estimators.clone(),
                    seed,
                )
                .and_then(|mut s| {
                    s.paired = config.paired;
                    finite_sample_re(&s)
                });
                match outcome {
                    Ok(rep) => rows.extend(rep.rows.into_iter().map(|e| Table2Row {
                        family,
                        d,
                        n,
                        estimator: e.estimator,
                        re: Some(e.re),
                        se: Some(e.se),
                        fail_count: e.fail_count,
                        note: None,
                    })),
                    Err(err) => rows.extend(config.estimators.iter().map(|&e| Table2Row {
                        family,
                        d,
                        n,
                        estimator: e,
                        re: None,
                        se: None,
                        fail_count: config.replicates,
                        note: Some(err.to_string()),
                    })),
                }
            }
        }
    }
    Ok(Table2Report {
        rows,
        replicates: config.replicates,
        paired: config.paired,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn shape(m: DMatrix<f64>) -> ShapeMatrix {
        ShapeMatrix::new(m).unwrap()
    }

    #[test]
    fn mse_examples() {
        let truth = ShapeMatrix::identity(2);
        assert_eq!(
            mse_offdiag(&[truth.clone(), truth.clone()], &truth).unwrap(),
            0.0
        );
        let e = shape(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]));
        assert_abs_diff_eq!(mse_offdiag(&[e], &truth).unwrap(), 0.09, epsilon = 1e-15);
    }

    #[test]
    fn mse_three_by_three_brute_force() {
        let truth = ShapeMatrix::identity(3);
        let mats = [
            [1.0, 0.1, -0.2, 0.1, 1.0, 0.3, -0.2, 0.3, 1.0],
            [1.5, 0.0, 0.4, 0.0, 0.5, -0.1, 0.4, -0.1, 1.0],
            [1.0, -0.5, 0.0, -0.5, 1.0, 0.2, 0.0, 0.2, 1.0],
        ];
        let est: Vec<ShapeMatrix> = mats
            .iter()
            .map(|m| shape(DMatrix::from_row_slice(3, 3, m)))
            .collect();
        // positions (0,1), (0,2), (1,2)
        let p01 = (0.01 + 0.0 + 0.25) / 3.0;
        let p02 = (0.04 + 0.16 + 0.0) / 3.0;
        let p12 = (0.09 + 0.01 + 0.04) / 3.0;
        assert_abs_diff_eq!(
            mse_offdiag(&est, &truth).unwrap(),
            (p01 + p02 + p12) / 3.0,
            epsilon = 1e-15
        );
        assert!(mse_offdiag(&est, &ShapeMatrix::identity(2)).is_err());
    }

    #[test]
    fn jackknife_of_constant_ratio_is_zero() {
        let (r, se) = ratio_with_jackknife(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]);
        assert_eq!(r, 2.0);
        assert_abs_diff_eq!(se, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn regular_against_itself_is_one() {
        let s = SimScenario::new(
            Family::Normal,
            2,
            20,
            10,
            vec![SimEstimator::Regular, SimEstimator::Kotz],
            Seed(1),
        )
        .unwrap();
        let rep = finite_sample_re(&s).unwrap();
        assert_eq!(rep.get(SimEstimator::Regular).unwrap().re, 1.0);
        assert_eq!(rep, finite_sample_re(&s).unwrap());
    }

    #[test]
    fn scenario_validation() {
        let s =
            SimScenario::new(Family::Normal, 2, 3, 10, vec![SimEstimator::Tyler], Seed(1)).unwrap();
        assert!(finite_sample_re(&s).is_err());
        let s =
            SimScenario::new(Family::Normal, 2, 30, 1, vec![SimEstimator::Tyler], Seed(1)).unwrap();
        assert!(finite_sample_re(&s).is_err());
    }

    #[test]
    fn config_json_and_failed_cells() {
        let text = r#"{"families":[{"family":"normal"},{"family":"t","nu":5}],"n":[3,30],"d":[2],"M":3,
                       "estimators":["tyler","mrcm-qn"],"seed":9}"#;
        let cfg: Table2Config = serde_json::from_str(text).unwrap();
        assert!(cfg.paired);
        let rep = run_table2(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 8);
        assert!(rep.rows[0].note.is_some() && rep.rows[0].re.is_none());
        assert!(rep.rows[2].re.unwrap() > 0.0);
        let mut out = Vec::new();
        rep.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text
            .starts_with("family,nu,d,n,estimator,re,se,fail_count\nnormal,inf,2,3,tyler,,,3\n"));
    }
}
