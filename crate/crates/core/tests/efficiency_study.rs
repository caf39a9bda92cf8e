//! Finite-sample efficiency study: trends across families and sample sizes.

use gini_cov::efficiency::{are_table, AsvEstimator, NestedMc};
use gini_cov::sim::{finite_sample_re, run_table2, SimEstimator, SimScenario, Table2Config};
use gini_cov::{Family, Seed};

fn re(family: Family, n: usize, m: usize, e: SimEstimator, seed: u64) -> (f64, f64) {
    let s = SimScenario::new(family, 2, n, m, vec![e], Seed(seed)).unwrap();
    let r = finite_sample_re(&s).unwrap();
    let row = r.get(e).unwrap();
    assert_eq!(row.fail_count, 0);
    (row.re, row.se)
}

fn above(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 - b.0 > 2.0 * (a.1 * a.1 + b.1 * b.1).sqrt()
}

#[test]
fn tr_gini_gains_with_heavier_tails() {
    let e = SimEstimator::TrGini;
    let t5 = re(Family::StudentT { nu: 5.0 }, 200, 2000, e, 21);
    let t8 = re(Family::StudentT { nu: 8.0 }, 200, 2000, e, 22);
    let normal = re(Family::Normal, 200, 2000, e, 23);
    eprintln!("tr-gini n=200: t5 {t5:?} t8 {t8:?} normal {normal:?}");
    assert!(above(t5, t8));
    assert!(above(t8, normal));
}

fn toward_are(
    e: SimEstimator,
    a: AsvEstimator,
    family: Family,
    seed: u64,
) -> (f64, [(f64, f64); 3]) {
    let mc = NestedMc {
        outer: 4_000,
        inner: 500,
        seed: Seed(31),
    };
    let are = are_table(&[(family, 2)], &[a], &mc).rows[0].are.unwrap();
    let cells = [50, 200, 2000].map(|n| re(family, n, 500, e, seed + n as u64));
    eprintln!(
        "{} {} ARE {are:.3}, n=50,200,2000: {cells:?}",
        e.label(),
        family.name()
    );
    (are, cells)
}

#[test]
fn efficiency_at_the_normal_is_near_the_are_already() {
    // Both are close to their limit at n = 50, so the gap to the ARE can only
    // be bounded, not shown to shrink.
    for (e, a, seed) in [
        (SimEstimator::Kotz, AsvEstimator::Kotz, 30),
        (SimEstimator::TrGini, AsvEstimator::TrGini, 40),
    ] {
        let (are, [small, _, large]) = toward_are(e, a, Family::Normal, seed);
        assert!((large.0 - are).abs() < 3.0 * large.1);
        let joint = (small.1 * small.1 + large.1 * large.1).sqrt();
        assert!((large.0 - are).abs() < (small.0 - are).abs() + 2.0 * joint);
    }
}

#[test]
fn tyler_under_t5_converges_slowly_toward_the_are() {
    let (are, [small, mid, large]) = toward_are(
        SimEstimator::Tyler,
        AsvEstimator::Tyler,
        Family::StudentT { nu: 5.0 },
        70,
    );
    assert!((large.0 - are).abs() < (small.0 - are).abs());
    assert!(above(mid, small));
    assert!(above(large, small));
}

#[test]
fn qn_scales_beat_mad_at_the_normal() {
    let s = SimScenario::new(
        Family::Normal,
        2,
        200,
        2000,
        vec![SimEstimator::Mrcm, SimEstimator::MrcmQn],
        Seed(50),
    )
    .unwrap();
    let r = finite_sample_re(&s).unwrap();
    let mad = r.get(SimEstimator::Mrcm).unwrap();
    let qn = r.get(SimEstimator::MrcmQn).unwrap();
    eprintln!("mrcm {} mrcm-qn {}", mad.re, qn.re);
    // Paired design: both ratios share the regular denominator, so compare directly.
    assert!(qn.re > mad.re);
    assert!(qn.mse < mad.mse);
}

#[test]
fn default_grid_has_every_cell() {
    let config = Table2Config {
        replicates: 20,
        ..Table2Config::default()
    };
    let report = run_table2(&config).unwrap();
    assert_eq!(report.rows.len(), 96);
    for r in &report.rows {
        let v = r.re.unwrap();
        assert!(v.is_finite() && v > 0.0, "{r:?}");
        assert!(r.note.is_none());
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 97);
    assert_eq!(run_table2(&config).unwrap(), report);
}

#[test]
fn unpaired_design_uses_fresh_samples() {
    let mut s = SimScenario::new(
        Family::StudentT { nu: 5.0 },
        2,
        60,
        300,
        vec![SimEstimator::Tyler],
        Seed(60),
    )
    .unwrap();
    let paired = finite_sample_re(&s).unwrap();
    s.paired = false;
    let unpaired = finite_sample_re(&s).unwrap();
    assert!(!unpaired.paired);
    let (a, b) = (paired.rows[0].re, unpaired.rows[0].re);
    assert_ne!(a, b);
    assert!((a - b).abs() < 3.0 * (paired.rows[0].se.powi(2) + unpaired.rows[0].se.powi(2)).sqrt());
}
