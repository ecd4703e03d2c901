//! Wall-clock scaling comparison of the closed-form distillation distance
//! against the exact transport solver, with log-log slope fits.
//!
//! Each measurement times one call on a fresh random distribution pair;
//! data generation happens outside the timed region and the harness runs
//! single-threaded so the timings stay honest.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uld_core::distributions::{sort_desc, ProbVector};
use uld_core::losses::uld_w1_step;
use uld_core::ot::{exact_ot, CostMatrix, MAX_ORACLE_SUPPORT};

use crate::CliError;

pub const CLOSED_FORM: &str = "closed_form";
pub const EXACT_OT: &str = "exact_ot";

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: &'static str,
    pub n: usize,
    pub rep: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of `ln(mean seconds)` against `ln(n)` per
    /// method.
    pub slopes: Vec<(&'static str, f64)>,
    /// Worst observed `|closed_form - 2 * exact|` wherever both ran.
    pub max_identity_dev: f64,
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> ProbVector {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-6..1.0)).collect();
    let total: f64 = raw.iter().sum();
    ProbVector::new(raw.into_iter().map(|x| x / total).collect()).expect("normalized")
}

/// Times the closed form on every size and the exact solver on sizes up to
/// `exact_cap`, checking the factor-two identity wherever both run.
pub fn bench_scaling(
    sizes: &[usize],
    reps: usize,
    exact_cap: usize,
    seed: u64,
) -> Result<BenchReport, CliError> {
    if sizes.is_empty() || reps == 0 {
        return Err(CliError::config("bench needs sizes and reps >= 1"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config("bench sizes must be strictly ascending"));
    }
    let exact_cap = exact_cap.min(MAX_ORACLE_SUPPORT);

    let mut rows = Vec::new();
    let mut max_identity_dev = 0.0f64;
    for &n in sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9e37));
        for rep in 0..reps {
            let p = random_dist(&mut rng, n);
            let q = random_dist(&mut rng, n);

            let start = Instant::now();
            let w1 = uld_w1_step(&p, &q);
            rows.push(BenchRow {
                method: CLOSED_FORM,
                n,
                rep,
                seconds: start.elapsed().as_secs_f64(),
            });

            if n <= exact_cap {
                let (ps, _) = sort_desc(&p);
                let (qs, _) = sort_desc(&q);
                let cost = CostMatrix::uniform01(n);
                let start = Instant::now();
                let plan = exact_ot(&ps, &qs, &cost)
                    .map_err(|e| CliError::runtime(format!("exact transport at n={n}: {e}")))?;
                rows.push(BenchRow {
                    method: EXACT_OT,
                    n,
                    rep,
                    seconds: start.elapsed().as_secs_f64(),
                });
                max_identity_dev = max_identity_dev.max((w1 - 2.0 * plan.cost()).abs());
            }
        }
    }

    let slopes = [CLOSED_FORM, EXACT_OT]
        .iter()
        .filter_map(|&method| fit_slope(&rows, method).map(|s| (method, s)))
        .collect();
    Ok(BenchReport {
        rows,
        slopes,
        max_identity_dev,
    })
}

/// Least-squares slope over `(ln n, ln mean_seconds)` points; needs at
/// least two sizes for the method.
fn fit_slope(rows: &[BenchRow], method: &str) -> Option<f64> {
    let mut by_size: Vec<(usize, f64, usize)> = Vec::new();
    for row in rows.iter().filter(|r| r.method == method) {
        match by_size.iter_mut().find(|(n, _, _)| *n == row.n) {
            Some((_, total, count)) => {
                *total += row.seconds;
                *count += 1;
            }
            None => by_size.push((row.n, row.seconds, 1)),
        }
    }
    if by_size.len() < 2 {
        return None;
    }
    let points: Vec<(f64, f64)> = by_size
        .iter()
        .map(|&(n, total, count)| ((n as f64).ln(), (total / count as f64).ln()))
        .collect();
    let count = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / count;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / count;
    let cov: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let var: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    Some(cov / var)
}

/// Mean seconds per call for one method and size.
pub fn mean_seconds(report: &BenchReport, method: &str, n: usize) -> Option<f64> {
    let times: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| r.method == method && r.n == n)
        .map(|r| r.seconds)
        .collect();
    if times.is_empty() {
        None
    } else {
        Some(times.iter().sum::<f64>() / times.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_quadratic_data() {
        // Synthetic rows with seconds = n^2 must fit slope 2.
        let rows: Vec<BenchRow> = [16usize, 32, 64, 128]
            .iter()
            .map(|&n| BenchRow {
                method: CLOSED_FORM,
                n,
                rep: 0,
                seconds: (n * n) as f64,
            })
            .collect();
        let slope = fit_slope(&rows, CLOSED_FORM).unwrap();
        assert!((slope - 2.0).abs() < 1e-9);
    }

    #[test]
    fn small_bench_checks_identity() {
        let report = bench_scaling(&[8, 16, 32], 2, 32, 7).unwrap();
        assert!(report.max_identity_dev < 1e-9);
        assert_eq!(report.slopes.len(), 2);
        assert!(report
            .rows
            .iter()
            .any(|r| r.method == EXACT_OT && r.n == 32));
    }

    #[test]
    fn rejects_unsorted_sizes() {
        assert!(bench_scaling(&[32, 16], 1, 32, 7).is_err());
        assert!(bench_scaling(&[], 1, 32, 7).is_err());
        assert!(bench_scaling(&[8], 0, 32, 7).is_err());
    }
}
