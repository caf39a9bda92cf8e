//! Asymptotic variances of off-diagonal shape elements and the resulting
//! asymptotic relative efficiencies against the regular (covariance based)
//! shape estimator.
//!
//! For an influence function `α(r) uuᵀ - β(r) I` at a spherical `F₀` the
//! off-diagonal asymptotic variance is `E[α(R)²]/(d(d+2))`. The TR-Gini `α`
//! is itself an expectation over an independent `X₁`, so its variance is a
//! nested Monte Carlo: outer radii `R = ‖X₂‖`, and per outer draw an unbiased
//! estimate of `m(R)²` from an inner sample. The outer average uses
//! `m(R)² - R²` with the known `E R²` added back, which removes the heavy
//! radial tail that otherwise dominates the error under t laws.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptical::Family;
use crate::error::{Error, Result};
use crate::influence::trgini_integrands;
use crate::model::Seed;

const OUTER_BLOCK: usize = 256;

/// Estimators whose off-diagonal asymptotic variance can be tabulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AsvEstimator {
    Regular,
    Tyler,
    Duembgen,
    Kotz,
    TrGini,
    Zonoid,
}

impl AsvEstimator {
    pub const TABLE: [AsvEstimator; 5] = [
        AsvEstimator::Tyler,
        AsvEstimator::Duembgen,
        AsvEstimator::Kotz,
        AsvEstimator::TrGini,
        AsvEstimator::Zonoid,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AsvEstimator::Regular => "regular",
            AsvEstimator::Tyler => "tyler",
            AsvEstimator::Duembgen => "duembgen",
            AsvEstimator::Kotz => "kotz",
            AsvEstimator::TrGini => "tr-gini",
            AsvEstimator::Zonoid => "zonoid",
        }
    }
}

/// How an ASV cell was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AsvMethod {
    ClosedForm,
    MonteCarlo,
    /// No formula is implemented; only a reference value may be attached.
    Unavailable,
    /// A required moment does not exist.
    Undefined,
}

impl AsvMethod {
    pub fn label(self) -> &'static str {
        match self {
            AsvMethod::ClosedForm => "closed-form",
            AsvMethod::MonteCarlo => "monte-carlo",
            AsvMethod::Unavailable => "unavailable",
            AsvMethod::Undefined => "undefined",
        }
    }
}

/// Nested Monte Carlo sizes for the TR-Gini variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedMc {
    pub outer: usize,
    pub inner: usize,
    pub seed: Seed,
}

impl Default for NestedMc {
    fn default() -> Self {
        Self {
            outer: 10_000,
            inner: 1_000,
            seed: Seed(20_170_101),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsvValue {
    pub value: f64,
    pub method: AsvMethod,
    pub se: f64,
}

/// TR-Gini scatter variances at `F₀` with `Σ = I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrGiniVariances {
    /// Off-diagonal element.
    pub asv12: f64,
    pub se12: f64,
    /// Diagonal element.
    pub asv11: f64,
    /// Covariance of two diagonal elements.
    pub asc: f64,
}

/// Nested Monte Carlo for the TR-Gini influence function moments.
pub fn trgini_variances(family: Family, d: usize, mc: &NestedMc) -> Result<TrGiniVariances> {
    family.require_moment(2)?;
    if mc.outer < 2 || mc.inner < 2 {
        return Err(Error::InvalidArgument(
            "nested Monte Carlo needs at least 2 outer and 2 inner draws".into(),
        ));
    }
    let c_est = family.c_pairwise(d)?;
    let c = c_est.value;
    let er2 = family.radial_second_moment(d)?;
    let df = d as f64;
    let ka = 2.0 * df * (df + 2.0) / ((df + 1.0) * c);
    let kb = 2.0 * df / ((df + 1.0) * c);

    let blocks = mc.outer.div_ceil(OUTER_BLOCK);
    // Per outer draw: [m² - R², m, q, m q, q²] with unbiased products.
    let partials: Vec<[f64; 6]> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = mc.seed.derive(b as u64).rng();
            let count = OUTER_BLOCK.min(mc.outer - b * OUTER_BLOCK);
            let mut acc = [0.0; 6];
            let mut z = vec![0.0; d];
            let k = mc.inner as f64;
            for _ in 0..count {
                family.draw_spherical(&mut rng, &mut z);
                let r2: f64 = z.iter().map(|v| v * v).sum();
                let r = r2.sqrt();
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for _ in 0..mc.inner {
                    family.draw_spherical(&mut rng, &mut z);
                    let (a, bq) = trgini_integrands(&z, r);
                    sa += a;
                    sb += bq;
                    saa += a * a;
                    sbb += bq * bq;
                    sab += a * bq;
                }
                let pairs = k * (k - 1.0);
                let m2 = (sa * sa - saa) / pairs;
                let v = m2 - r2;
                acc[0] += v;
                acc[1] += v * v;
                acc[2] += sa / k;
                acc[3] += sb / k;
                acc[4] += (sa * sb - sab) / pairs;
                acc[5] += (sb * sb - sbb) / pairs;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 6];
    for p in partials {
        for i in 0..6 {
            tot[i] += p[i];
        }
    }
    let n = mc.outer as f64;
    let mean_v = tot[0] / n;
    let var_v = (tot[1] - n * mean_v * mean_v) / (n - 1.0);
    let e_m2 = mean_v + er2;
    let (e_m, e_q, e_mq, e_q2) = (tot[2] / n, tot[3] / n, tot[4] / n, tot[5] / n);

    let scale12 = 4.0 * df * (df + 2.0) / ((df + 1.0).powi(2) * c * c);
    let asv12 = scale12 * e_m2;
    let se_mc = scale12 * (var_v / n).sqrt();
    let se12 = (se_mc * se_mc + (2.0 * asv12 * c_est.se / c).powi(2)).sqrt();

    let e_a2 = ka * ka * e_m2;
    let e_ab = 4.0 * ka * e_m - ka * kb * e_mq;
    let e_b2 = 16.0 - 8.0 * kb * e_q + kb * kb * e_q2;
    let asv11 = 3.0 * e_a2 / (df * (df + 2.0)) - 2.0 * e_ab / df + e_b2;
    let asc = e_a2 / (df * (df + 2.0)) - 2.0 * e_ab / df + e_b2;
    Ok(TrGiniVariances {
        asv12,
        se12,
        asv11,
        asc,
    })
}

/// Off-diagonal asymptotic variance of a shape estimator at spherical `F₀`.
pub fn asv_offdiag(
    estimator: AsvEstimator,
    family: Family,
    d: usize,
    mc: &NestedMc,
) -> Result<AsvValue> {
    if d < 2 {
        return Err(Error::InvalidArgument(
            "off-diagonal variances need d >= 2".into(),
        ));
    }
    let df = d as f64;
    let closed = |value| {
        Ok(AsvValue {
            value,
            method: AsvMethod::ClosedForm,
            se: 0.0,
        })
    };
    match estimator {
        AsvEstimator::Regular => closed(family.tau_regular(d)?),
        AsvEstimator::Tyler => {
            family.validate()?;
            closed((df + 2.0) / df)
        }
        AsvEstimator::Kotz => {
            let er2 = family.radial_second_moment(d)?;
            let c1 = family.c_first(d)?;
            closed(df * (df + 2.0) * er2 / ((df + 1.0).powi(2) * c1 * c1))
        }
        AsvEstimator::Zonoid => {
            let er2 = family.radial_second_moment(d)?;
            let c1 = family.c_first(d)?;
            closed(df * (4.0 * er2 - 3.0 * c1 * c1) / ((df + 2.0) * c1 * c1))
        }
        AsvEstimator::TrGini => {
            let v = trgini_variances(family, d, mc)?;
            Ok(AsvValue {
                value: v.asv12,
                method: AsvMethod::MonteCarlo,
                se: v.se12,
            })
        }
        AsvEstimator::Duembgen => Err(Error::InvalidArgument(
            "no asymptotic variance formula is implemented for the Duembgen estimator".into(),
        )),
    }
}

/// Reference asymptotic efficiencies of the Dümbgen estimator, carried as
/// reference metadata only. Rows `d = 2..=5`, columns t(5), t(6), t(8),
/// t(15), normal, Kotz.
const DUEMBGEN_REFERENCE: [[f64; 6]; 4] = [
    [2.36, 1.57, 1.26, 1.01, 0.91, 1.22],
    [2.38, 1.66, 1.27, 1.04, 0.92, 1.18],
    [2.39, 1.69, 1.30, 1.06, 0.93, 1.15],
    [2.50, 1.71, 1.31, 1.07, 0.94, 1.13],
];

pub fn duembgen_reference(family: Family, d: usize) -> Option<f64> {
    let col = match family {
        Family::StudentT { nu: 5.0 } => 0,
        Family::StudentT { nu: 6.0 } => 1,
        Family::StudentT { nu: 8.0 } => 2,
        Family::StudentT { nu: 15.0 } => 3,
        Family::Normal => 4,
        Family::Kotz => 5,
        _ => return None,
    };
    (2..=5).contains(&d).then(|| DUEMBGEN_REFERENCE[d - 2][col])
}

/// One row of an efficiency table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreRow {
    pub estimator: AsvEstimator,
    pub family: Family,
    pub d: usize,
    pub asv: Option<f64>,
    pub are: Option<f64>,
    pub method: AsvMethod,
    pub se: Option<f64>,
    pub reference: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AREReport {
    pub rows: Vec<AreRow>,
}

impl AREReport {
    pub fn find(&self, estimator: AsvEstimator, family: Family, d: usize) -> Option<&AreRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.family == family && r.d == d)
    }

    /// CSV with columns `estimator,family,nu,d,asv,are,method,se,reference`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "estimator,family,nu,d,asv,are,method,se,reference")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.estimator.label(),
                r.family.name(),
                family_nu(r.family),
                r.d,
                opt(r.asv),
                opt(r.are),
                r.method.label(),
                opt(r.se),
                opt(r.reference)
            )?;
        }
        Ok(())
    }

    /// Fixed-width text table for terminals.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:<8} {:>3} {:>8} {:>8} {:>9} {:>12}",
            "estimator", "family", "d", "asv", "are", "se", "method"
        );
        for r in &self.rows {
            let fam = match r.family {
                Family::StudentT { nu } => format!("t({nu})"),
                f => f.name().to_string(),
            };
            let num = |v: Option<f64>, p: usize| {
                v.map(|x| format!("{x:.p$}")).unwrap_or_else(|| "-".into())
            };
            let method = match (r.method, r.reference) {
                (AsvMethod::Unavailable, Some(v)) => format!("ref {v:.2}"),
                (m, _) => m.label().to_string(),
            };
            let _ = writeln!(
                s,
                "{:<10} {:<8} {:>3} {:>8} {:>8} {:>9} {:>12}",
                r.estimator.label(),
                fam,
                r.d,
                num(r.asv, 4),
                num(r.are, 3),
                num(r.se, 5),
                method
            );
        }
        s
    }
}

/// `nu` column value: degrees of freedom, `inf` for the normal, empty for Kotz.
pub fn family_nu(f: Family) -> String {
    match f {
        Family::StudentT { nu } => nu.to_string(),
        Family::Normal => "inf".into(),
        Family::Kotz => String::new(),
    }
}

/// ARE of each estimator against the regular shape estimator, per cell.
/// Cells with missing moments are reported in-row rather than failing.
pub fn are_table(
    cells: &[(Family, usize)],
    estimators: &[AsvEstimator],
    mc: &NestedMc,
) -> AREReport {
    let mut rows = Vec::new();
    for &(family, d) in cells {
        let tau = family.tau_regular(d);
        for (i, &est) in estimators.iter().enumerate() {
            let mut row = AreRow {
                estimator: est,
                family,
                d,
                asv: None,
                are: None,
                method: AsvMethod::Undefined,
                se: None,
                reference: None,
                note: None,
            };
            if est == AsvEstimator::Duembgen {
                row.method = AsvMethod::Unavailable;
                row.reference = duembgen_reference(family, d);
                rows.push(row);
                continue;
            }
            let cell_mc = NestedMc {
                seed: mc.seed.derive(i as u64),
                ..*mc
            };
            match (&tau, asv_offdiag(est, family, d, &cell_mc)) {
                (Ok(t), Ok(a)) => {
                    row.asv = Some(a.value);
                    row.are = Some(t / a.value);
                    row.method = a.method;
                    row.se = Some(t * a.se / (a.value * a.value));
                }
                (Err(e), Ok(a)) => {
                    row.asv = Some(a.value);
                    row.method = a.method;
                    row.note = Some(e.to_string());
                }
                (_, Err(e)) => row.note = Some(e.to_string()),
            }
            rows.push(row);
        }
    }
    AREReport { rows }
}

/// Table configuration read by the command line front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreConfig {
    pub families: Vec<Family>,
    pub d: Vec<usize>,
    pub estimators: Vec<AsvEstimator>,
    #[serde(default = "default_outer")]
    pub outer: usize,
    #[serde(default = "default_inner")]
    pub inner: usize,
    #[serde(default = "default_seed")]
    pub seed: Seed,
}

fn default_outer() -> usize {
    NestedMc::default().outer
}
fn default_inner() -> usize {
    NestedMc::default().inner
}
fn default_seed() -> Seed {
    NestedMc::default().seed
}

impl Default for AreConfig {
    /// The full grid: t(5), t(6), t(8), t(15), normal and Kotz for `d = 2..=5`.
    fn default() -> Self {
        let mut families: Vec<Family> = [5.0, 6.0, 8.0, 15.0]
            .iter()
            .map(|&nu| Family::StudentT { nu })
            .collect();
        families.extend([Family::Normal, Family::Kotz]);
        Self {
            families,
            d: vec![2, 3, 4, 5],
            estimators: AsvEstimator::TABLE.to_vec(),
            outer: default_outer(),
            inner: default_inner(),
            seed: default_seed(),
        }
    }
}

impl AreConfig {
    pub fn run(&self) -> Result<AREReport> {
        for f in &self.families {
            f.validate()?;
        }
        if self.d.iter().any(|&d| d < 2) {
            return Err(Error::InvalidArgument(
                "dimensions must be at least 2".into(),
            ));
        }
        let cells: Vec<(Family, usize)> = self
            .d
            .iter()
            .flat_map(|&d| self.families.iter().map(move |&f| (f, d)))
            .collect();
        let mc = NestedMc {
            outer: self.outer,
            inner: self.inner,
            seed: self.seed,
        };
        Ok(are_table(&cells, &self.estimators, &mc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mc() -> NestedMc {
        NestedMc::default()
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(
            asv_offdiag(AsvEstimator::Tyler, Family::Normal, 2, &mc())
                .unwrap()
                .value,
            2.0
        );
        let k = asv_offdiag(AsvEstimator::Kotz, Family::Kotz, 2, &mc())
            .unwrap()
            .value;
        assert_abs_diff_eq!(k, 4.0 / 3.0, epsilon = 1e-12);
        let z = asv_offdiag(AsvEstimator::Zonoid, Family::Kotz, 2, &mc())
            .unwrap()
            .value;
        assert_abs_diff_eq!(z, 1.5, epsilon = 1e-12);
        let kt = asv_offdiag(AsvEstimator::Kotz, Family::StudentT { nu: 5.0 }, 2, &mc())
            .unwrap()
            .value;
        assert_abs_diff_eq!(kt, 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn kotz_and_zonoid_under_kotz_law_for_all_d() {
        for d in 2..8 {
            let df = d as f64;
            let k = asv_offdiag(AsvEstimator::Kotz, Family::Kotz, d, &mc())
                .unwrap()
                .value;
            assert_abs_diff_eq!(k, (df + 2.0) / (df + 1.0), epsilon = 1e-12);
            let z = asv_offdiag(AsvEstimator::Zonoid, Family::Kotz, d, &mc())
                .unwrap()
                .value;
            assert_abs_diff_eq!(z, (df + 4.0) / (df + 2.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn undefined_cells_are_reported_not_fatal() {
        let report = are_table(
            &[(Family::StudentT { nu: 3.0 }, 2)],
            &[AsvEstimator::Tyler, AsvEstimator::Kotz],
            &mc(),
        );
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows[0].are.is_none() && report.rows[0].note.is_some());
        assert_eq!(report.rows[0].asv, Some(2.0));
        assert_eq!(report.rows[1].method, AsvMethod::ClosedForm);
        assert!(report.rows[1].are.is_none());
        let report = are_table(
            &[(Family::StudentT { nu: 2.0 }, 2)],
            &[AsvEstimator::Kotz],
            &mc(),
        );
        assert_eq!(report.rows[0].method, AsvMethod::Undefined);
        assert!(report.rows[0].asv.is_none());
    }

    #[test]
    fn duembgen_rows_carry_reference_only() {
        let report = are_table(&[(Family::Normal, 3)], &[AsvEstimator::Duembgen], &mc());
        let row = &report.rows[0];
        assert_eq!(row.method, AsvMethod::Unavailable);
        assert_eq!(row.reference, Some(0.92));
        assert!(row.are.is_none());
    }

    #[test]
    fn diagonal_structure_identity() {
        let small = NestedMc {
            outer: 400,
            inner: 50,
            seed: Seed(3),
        };
        let v = trgini_variances(Family::Normal, 3, &small).unwrap();
        assert_abs_diff_eq!(
            v.asc,
            v.asv11 - 2.0 * v.asv12,
            epsilon = 1e-9 * v.asv11.abs().max(1.0)
        );
    }

    #[test]
    fn config_roundtrip_and_default_grid() {
        let cfg = AreConfig::default();
        assert_eq!(cfg.families.len() * cfg.d.len() * cfg.estimators.len(), 120);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: AreConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: AreConfig = serde_json::from_str(
            r#"{"families":[{"family":"normal"}],"d":[2],"estimators":["tyler"]}"#,
        )
        .unwrap();
        assert_eq!(partial.outer, 10_000);
        assert!(serde_json::from_str::<AreConfig>(
            r#"{"families":[],"d":[],"estimators":[],"bogus":1}"#
        )
        .is_err());
    }
}
