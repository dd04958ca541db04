//! Dense versus packed kernel timing.

use std::time::Instant;

use serde::Serialize;

use mpdc_core::linalg::{block_matmul_with, gemm, hadamard_mask, to_block_diagonal, DenseMatrix, MacCounter};
use mpdc_core::maskgen::make_mask;
use mpdc_core::rng::Rng64;

use crate::CliError;

pub const WARMUP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeStats {
    pub median_s: f64,
    pub min_s: f64,
}

impl TimeStats {
    fn from_samples(mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let median = if n % 2 == 1 {
            samples[n / 2]
        } else {
            (samples[n / 2 - 1] + samples[n / 2]) / 2.0
        };
        Self {
            median_s: median,
            min_s: samples[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub batch: usize,
    pub reps: usize,
    pub warmup: usize,
    pub threads: usize,
    pub dense_macs: u64,
    pub packed_macs: u64,
    pub dense: TimeStats,
    pub packed: TimeStats,
    /// Dense median over packed median.
    pub speedup: f64,
    /// Largest absolute difference between the two outputs.
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchParams {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub reps: usize,
    pub batch: usize,
    pub threads: usize,
    pub seed: u64,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Times `W x` with `W` an `m x n` masked matrix: the dense kernel over all
/// `m n` entries against the block kernel over the stored blocks. MAC counts
/// come from a single product and do not depend on `reps`.
pub fn run_bench(p: BenchParams) -> Result<BenchReport, CliError> {
    if p.reps < 3 {
        return Err(CliError::Usage("bench needs at least 3 repetitions".into()));
    }
    if p.batch == 0 {
        return Err(CliError::Usage("batch must be at least 1".into()));
    }
    let mask = make_mask(p.m, p.n, p.k, p.seed, p.seed.wrapping_add(1))?;
    let mut rng = Rng64::new(p.seed);
    let w = hadamard_mask(&DenseMatrix::from_fn(p.m, p.n, |_, _| rng.uniform(-1.0, 1.0)), &mask)?;
    let x = DenseMatrix::from_fn(p.n, p.batch, |_, _| rng.next_f64());

    // The packed kernel sees permuted inputs; the gather is left out of the
    // timed region for both sides.
    let packed_w = to_block_diagonal(
        &mpdc_core::linalg::permute_matrix(&w, mask.p_row(), mask.p_col(), mpdc_core::linalg::Transpose::BOTH)?,
        mask.pattern(),
    )?;
    let x_perm = DenseMatrix::from_vec(p.n, p.batch, {
        let mut v = Vec::with_capacity(p.n * p.batch);
        for &c in mask.p_col().as_slice() {
            v.extend_from_slice(x.row(c));
        }
        v
    })?;

    let mut dense_macs = MacCounter::new();
    let dense_out = gemm(&w, &x, &mut dense_macs)?;
    let mut packed_macs = MacCounter::new();
    let packed_out = block_matmul_with(&packed_w, &x_perm, &mut packed_macs, p.threads)?;
    let mut max_abs_diff: f64 = 0.0;
    for (r, &src) in mask.p_row().as_slice().iter().enumerate() {
        for (a, b) in packed_out.row(r).iter().zip(dense_out.row(src)) {
            max_abs_diff = max_abs_diff.max((a - b).abs());
        }
    }

    let mut dense_times = Vec::with_capacity(p.reps);
    let mut packed_times = Vec::with_capacity(p.reps);
    for i in 0..WARMUP + p.reps {
        let (_, td) = timed(|| gemm(&w, &x, &mut MacCounter::new()));
        let (_, tp) = timed(|| block_matmul_with(&packed_w, &x_perm, &mut MacCounter::new(), p.threads));
        if i >= WARMUP {
            dense_times.push(td);
            packed_times.push(tp);
        }
    }
    let dense = TimeStats::from_samples(dense_times);
    let packed = TimeStats::from_samples(packed_times);
    Ok(BenchReport {
        m: p.m,
        n: p.n,
        k: p.k,
        batch: p.batch,
        reps: p.reps,
        warmup: WARMUP,
        threads: p.threads,
        dense_macs: dense_macs.get(),
        packed_macs: packed_macs.get(),
        speedup: dense.median_s / packed.median_s,
        dense,
        packed,
        max_abs_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: usize, reps: usize) -> BenchParams {
        BenchParams {
            m: 64,
            n: 48,
            k,
            reps,
            batch: 4,
            threads: 1,
            seed: 3,
        }
    }

    #[test]
    fn mac_counts_are_structural() {
        let a = run_bench(params(4, 3)).unwrap();
        let b = run_bench(params(4, 5)).unwrap();
        assert_eq!(a.dense_macs, 64 * 48 * 4);
        assert_eq!(a.packed_macs, 64 * 48 * 4 / 4);
        assert_eq!((a.dense_macs, a.packed_macs), (b.dense_macs, b.packed_macs));
        assert!(a.max_abs_diff <= 1e-12);
        assert!(a.dense.median_s > 0.0 && a.packed.min_s > 0.0);
    }

    #[test]
    fn too_few_reps() {
        assert!(run_bench(params(4, 2)).is_err());
    }

    #[test]
    fn median_of_even_count() {
        let s = TimeStats::from_samples(vec![4.0, 1.0, 3.0, 2.0]);
        assert_eq!((s.median_s, s.min_s), (2.5, 1.0));
    }
}
