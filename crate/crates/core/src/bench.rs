//! Stage timings of the lattice filter and a full-size transfer run.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureRecord, KernelParams, HOG_BINS};
use crate::lattice::{kernel_gain, PermutohedralLattice};
use crate::oracle::normal_points;
use crate::sampler::SampleSet;
use crate::transfer::transfer;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Training point counts.
    pub sizes: Vec<usize>,
    /// Query point counts.
    pub queries: Vec<usize>,
    pub dim: usize,
    pub value_width: usize,
    pub seed: u64,
    /// Slice runs per row; the fastest is reported.
    pub slice_repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![10_000, 100_000, 1_000_000],
            queries: vec![1000],
            dim: 5,
            value_width: 3,
            seed: 0,
            slice_repeats: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub n_s: usize,
    pub n_q: usize,
    pub dim: usize,
    pub value_width: usize,
    pub vertices: usize,
    pub splat_ms: f64,
    pub blur_ms: f64,
    pub slice_ms: f64,
}

impl BenchRow {
    pub fn slice_ms_per_query(&self) -> f64 {
        self.slice_ms / self.n_q.max(1) as f64
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Times one plain filter run: splat of training and query points, one blur,
/// and the query slice.
pub fn bench_one(n_s: usize, n_q: usize, dim: usize, value_width: usize, seed: u64, slice_repeats: usize) -> Result<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = normal_points(n_s, dim, &mut rng);
    let queries = normal_points(n_q, dim, &mut rng);
    let mut values: Vec<f64> = (0..n_s * value_width).map(|_| rng.random()).collect();
    values.resize((n_s + n_q) * value_width, 0.0);
    let points = [train, queries.clone()].concat();

    let t = Instant::now();
    let mut lattice = PermutohedralLattice::<f32>::splat(&points, dim, &values, value_width)?;
    let splat_ms = ms_since(t);

    let t = Instant::now();
    lattice.blur_in_place();
    let blur_ms = ms_since(t);

    let gain = kernel_gain(dim);
    let mut slice_ms = f64::INFINITY;
    for _ in 0..slice_repeats.max(1) {
        let t = Instant::now();
        let mut out = lattice.slice(&queries)?;
        out.iter_mut().for_each(|x| *x *= gain);
        slice_ms = slice_ms.min(ms_since(t));
        std::hint::black_box(&out);
    }
    Ok(BenchRow { n_s, n_q, dim, value_width, vertices: lattice.num_vertices(), splat_ms, blur_ms, slice_ms })
}

/// Every (N_s, N_q) combination of the grid, in order.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.sizes.is_empty() || cfg.queries.is_empty() {
        return Err(Error::InvalidParam("bench needs at least one training and one query size".into()));
    }
    let mut rows = Vec::new();
    for &n_s in &cfg.sizes {
        for &n_q in &cfg.queries {
            let row = bench_one(n_s, n_q, cfg.dim, cfg.value_width, cfg.seed, cfg.slice_repeats)?;
            log::info!("N_s={n_s} N_q={n_q}: {} vertices", row.vertices);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("N_s,N_q,D,V,splat_ms,blur_ms,slice_ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.3},{:.3},{:.3}",
            r.n_s, r.n_q, r.dim, r.value_width, r.splat_ms, r.blur_ms, r.slice_ms
        );
    }
    out
}

/// Ordinary least squares `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit { slope, intercept, r2 })
}

/// Scaling diagnostics over a bench grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    /// Splat + blur time against N_s, one fit per query count.
    pub build_vs_ns: Vec<(usize, Option<LinearFit>)>,
    /// Largest over smallest per-query slice time across N_s, per query count.
    pub slice_spread: Vec<(usize, f64)>,
    /// Slice time against N_q, one fit per training size.
    pub slice_vs_nq: Vec<(usize, Option<LinearFit>)>,
}

pub fn scaling_report(rows: &[BenchRow]) -> ScalingReport {
    let mut n_qs: Vec<usize> = rows.iter().map(|r| r.n_q).collect();
    n_qs.sort_unstable();
    n_qs.dedup();
    let mut n_ss: Vec<usize> = rows.iter().map(|r| r.n_s).collect();
    n_ss.sort_unstable();
    n_ss.dedup();
    let mut report = ScalingReport { build_vs_ns: Vec::new(), slice_spread: Vec::new(), slice_vs_nq: Vec::new() };
    for &q in &n_qs {
        let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.n_q == q).collect();
        let x: Vec<f64> = sel.iter().map(|r| r.n_s as f64).collect();
        let y: Vec<f64> = sel.iter().map(|r| r.splat_ms + r.blur_ms).collect();
        report.build_vs_ns.push((q, linear_fit(&x, &y)));
        let per_query: Vec<f64> = sel.iter().map(|r| r.slice_ms_per_query()).collect();
        let hi = per_query.iter().cloned().fold(f64::MIN, f64::max);
        let lo = per_query.iter().cloned().fold(f64::MAX, f64::min);
        report.slice_spread.push((q, hi / lo));
    }
    for &s in &n_ss {
        let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.n_s == s).collect();
        let x: Vec<f64> = sel.iter().map(|r| r.n_q as f64).collect();
        let y: Vec<f64> = sel.iter().map(|r| r.slice_ms).collect();
        report.slice_vs_nq.push((s, linear_fit(&x, &y)));
    }
    report
}

impl ScalingReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let fit = |f: &Option<LinearFit>| {
            f.map_or("n/a (fewer than two sizes)".to_string(), |f| {
                format!("slope {:.3e} ms/pt, intercept {:.2} ms, R2 {:.4}", f.slope, f.intercept, f.r2)
            })
        };
        for (q, f) in &self.build_vs_ns {
            let _ = writeln!(out, "splat+blur vs N_s (N_q={q}): {}", fit(f));
        }
        for (q, s) in &self.slice_spread {
            let _ = writeln!(out, "per-query slice time max/min over N_s (N_q={q}): {s:.3}");
        }
        for (s, f) in &self.slice_vs_nq {
            let _ = writeln!(out, "slice vs N_q (N_s={s}): {}", fit(f));
        }
        out
    }
}

/// Feature records with values spread over their natural ranges.
pub fn random_records(n: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureRecord> {
    (0..n)
        .map(|_| {
            let mut hog = [0.0; HOG_BINS];
            hog.iter_mut().for_each(|h| *h = rng.random::<f64>());
            let total: f64 = hog.iter().sum();
            hog.iter_mut().for_each(|h| *h /= total);
            FeatureRecord {
                color: [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)],
                gray_std: rng.random_range(0.0..40.0),
                top: rng.random(),
                hog,
                dissimilarity: rng.random(),
            }
        })
        .collect()
}

/// Wall-clock milliseconds of one two-kernel transfer over random records.
pub fn transfer_throughput(n_s: usize, n_q: usize, num_classes: usize, seed: u64) -> Result<f64> {
    if num_classes == 0 || num_classes > 255 {
        return Err(Error::InvalidParam(format!("class count {num_classes} outside 1..=255")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = random_records(n_s, &mut rng);
    let labels: Vec<u8> = (0..n_s).map(|_| rng.random_range(0..num_classes) as u8).collect();
    let mut queries = random_records(n_q, &mut rng);
    queries.iter_mut().for_each(|q| q.dissimilarity = 0.0);
    let sample = SampleSet::from_records(train, labels, num_classes)?;
    let t = Instant::now();
    let scores = transfer(&sample, &queries, &KernelParams::default())?;
    std::hint::black_box(&scores);
    Ok(ms_since(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
        assert!(linear_fit(&[2.0, 2.0], &[1.0, 3.0]).is_none());
    }

    #[test]
    fn small_grid_runs() {
        let cfg = BenchConfig { sizes: vec![500, 1000], queries: vec![50, 100], slice_repeats: 1, ..Default::default() };
        let rows = bench(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        let csv = rows_to_csv(&rows);
        assert!(csv.starts_with("N_s,N_q,D,V,splat_ms,blur_ms,slice_ms\n"));
        assert_eq!(csv.lines().count(), 5);
        let report = scaling_report(&rows);
        assert_eq!(report.build_vs_ns.len(), 2);
        assert_eq!(report.slice_vs_nq.len(), 2);
        assert!(report.to_text().contains("R2"));
    }

    #[test]
    fn throughput_runs_small() {
        assert!(transfer_throughput(2000, 20, 4, 1).unwrap() >= 0.0);
    }
}
