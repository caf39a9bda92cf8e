//! Deterministic parallel reduction over unordered pairs of sample rows.
//!
//! Rows are cut into fixed blocks of `ROW_BLOCK`; each block sums its pairs
//! `(i, j), i < j` into a private accumulator and the block partials are then
//! added sequentially in block order. Block boundaries do not depend on the
//! thread pool, so results are bit-identical for any worker count.

use rayon::prelude::*;

use crate::model::Sample;

pub(crate) const ROW_BLOCK: usize = 32;

/// `Σ_{i<j} kernel(x_i - x_j)` into a `width`-long accumulator.
pub(crate) fn pair_sum<K>(sample: &Sample, width: usize, kernel: K) -> Vec<f64>
where
    K: Fn(&[f64], &mut [f64]) + Sync,
{
    let n = sample.n();
    let d = sample.d();
    let data = sample.as_slice();
    let blocks = n.div_ceil(ROW_BLOCK);
    let partials: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; width];
            let mut delta = vec![0.0; d];
            let start = b * ROW_BLOCK;
            let end = (start + ROW_BLOCK).min(n);
            for i in start..end {
                let xi = &data[i * d..(i + 1) * d];
                for xj in data[(i + 1) * d..].chunks_exact(d) {
                    for k in 0..d {
                        delta[k] = xi[k] - xj[k];
                    }
                    kernel(&delta, &mut acc);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// Packed upper-triangle accumulation of `w(‖δ‖²) δδᵀ` over all pairs with `δ ≠ 0`.
pub(crate) fn weighted_outer_sum<W>(sample: &Sample, weight: W) -> Vec<f64>
where
    W: Fn(f64) -> f64 + Sync,
{
    let d = sample.d();
    let width = d * (d + 1) / 2;
    pair_sum(sample, width, |delta, acc| {
        let sq: f64 = delta.iter().map(|v| v * v).sum();
        if sq > 0.0 {
            let w = weight(sq);
            let mut k = 0;
            for (a, da) in delta.iter().enumerate() {
                let wa = w * da;
                for db in &delta[a..] {
                    acc[k] += wa * db;
                    k += 1;
                }
            }
        }
    })
}

pub(crate) fn pair_count(n: usize) -> f64 {
    n as f64 * (n as f64 - 1.0) / 2.0
}
