//! Exact brute-force references for the lattice filter and the two-kernel
//! label transfer. Quadratic cost; meant for validation only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureRecord, KernelParams};
use crate::lattice::filter;
use crate::sampler::SampleSet;
use crate::transfer::{argmax, label_vectors, LabelScores};

/// `q_i = sum_j exp(-|x_i - y_j|^2 / 2) v_j` in double precision.
pub fn brute_filter(
    points: &[f64],
    values: &[f64],
    dim: usize,
    value_width: usize,
    queries: &[f64],
) -> Result<Vec<f64>> {
    if dim == 0 || !points.len().is_multiple_of(dim) || !queries.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!("coordinates do not match dimension {dim}")));
    }
    let n = points.len() / dim;
    if values.len() != n * value_width {
        return Err(Error::Dimension(format!("{} values for {n} points x {value_width}", values.len())));
    }
    let mut out = vec![0.0; queries.len() / dim * value_width];
    out.par_chunks_mut(value_width).zip(queries.par_chunks_exact(dim)).for_each(|(dst, q)| {
        for (p, v) in points.chunks_exact(dim).zip(values.chunks_exact(value_width)) {
            let r2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = (-0.5 * r2).exp();
            for (o, &x) in dst.iter_mut().zip(v) {
                *o += k * x;
            }
        }
    });
    Ok(out)
}

/// Color kernel evaluated directly from the features.
pub fn kernel_k1(a: &FeatureRecord, b: &FeatureRecord, kp: &KernelParams) -> f64 {
    let dc: f64 = a.color.iter().zip(&b.color).map(|(x, y)| (x - y) * (x - y)).sum();
    let e = dc / (kp.sigma_c * kp.sigma_c) + shared_terms(a, b, kp);
    (-e).exp()
}

/// Gradient kernel evaluated directly from the features.
pub fn kernel_k2(a: &FeatureRecord, b: &FeatureRecord, kp: &KernelParams) -> f64 {
    let dh: f64 = a.hog.iter().zip(&b.hog).map(|(x, y)| (x - y) * (x - y)).sum();
    let e = dh / (kp.sigma_h * kp.sigma_h) + shared_terms(a, b, kp);
    (-e).exp()
}

fn shared_terms(a: &FeatureRecord, b: &FeatureRecord, kp: &KernelParams) -> f64 {
    let sq = |x: f64, s: f64| x * x / (s * s);
    sq(a.top - b.top, kp.sigma_t) + sq(a.gray_std - b.gray_std, kp.sigma_s) + sq(a.dissimilarity - b.dissimilarity, kp.sigma_d)
}

/// Exact `q_i = sum_j (w1 k1 + w2 k2)(x_i, x'_j) q'_j`.
pub fn brute_transfer(sample: &SampleSet, query_features: &[FeatureRecord], kp: &KernelParams) -> Result<LabelScores> {
    kp.validate()?;
    let values = label_vectors(sample)?;
    let l = sample.num_classes;
    let mut q = vec![0.0; query_features.len() * l];
    q.par_chunks_mut(l).zip(query_features.par_iter()).for_each(|(dst, qf)| {
        for (tf, v) in sample.features.iter().zip(values.chunks_exact(l)) {
            let k = kp.w1 * kernel_k1(qf, tf, kp) + kp.w2 * kernel_k2(qf, tf, kp);
            for (o, &x) in dst.iter_mut().zip(v) {
                *o += k * x;
            }
        }
    });
    Ok(LabelScores::from_raw(q, l))
}

/// Error distribution of an approximation against exact values.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub median: f64,
    pub p95: f64,
    pub max: f64,
    pub argmax_agreement: f64,
    pub count: usize,
}

/// Per-row relative L1 error `|a - e|_1 / |e|_1` and argmax agreement. Rows
/// whose exact mass is zero are skipped.
pub fn compare(approx: &[f64], exact: &[f64], width: usize) -> ErrorStats {
    let mut errors = Vec::new();
    let mut agree = 0usize;
    let mut rows = 0usize;
    for (a, e) in approx.chunks_exact(width).zip(exact.chunks_exact(width)) {
        let mass: f64 = e.iter().map(|x| x.abs()).sum();
        if mass <= 0.0 {
            continue;
        }
        rows += 1;
        errors.push(a.iter().zip(e).map(|(x, y)| (x - y).abs()).sum::<f64>() / mass);
        if argmax(a) == argmax(e) {
            agree += 1;
        }
    }
    errors.sort_by(f64::total_cmp);
    ErrorStats {
        median: quantile(&errors, 0.5),
        p95: quantile(&errors, 0.95),
        max: errors.last().copied().unwrap_or(0.0),
        argmax_agreement: if rows == 0 { 1.0 } else { agree as f64 / rows as f64 },
        count: rows,
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// Standard-normal points, `dim` per row.
pub fn normal_points(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n * dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Lattice and exact results on one seeded instance: standard-normal training
/// and query points, each training point carrying a one-hot value of a random
/// channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityRun {
    pub approx: Vec<f64>,
    pub exact: Vec<f64>,
    pub value_width: usize,
}

pub fn fidelity_run(seed: u64, n_s: usize, n_q: usize, dim: usize, value_width: usize) -> Result<FidelityRun> {
    if value_width == 0 {
        return Err(Error::InvalidParam("value width must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = normal_points(n_s, dim, &mut rng);
    let queries = normal_points(n_q, dim, &mut rng);
    let mut values = vec![0.0; n_s * value_width];
    for row in values.chunks_exact_mut(value_width) {
        row[rng.random_range(0..value_width)] = 1.0;
    }
    let approx = filter(&train, &values, dim, value_width, &queries)?;
    let exact = brute_filter(&train, &values, dim, value_width, &queries)?;
    Ok(FidelityRun { approx, exact, value_width })
}

/// Per-instance statistics for `seeds`, and the statistics of all rows pooled.
pub fn fidelity_suite(
    seeds: impl IntoIterator<Item = u64>,
    n_s: usize,
    n_q: usize,
    dim: usize,
    value_width: usize,
) -> Result<(Vec<ErrorStats>, ErrorStats)> {
    let mut per_run = Vec::new();
    let (mut approx, mut exact) = (Vec::new(), Vec::new());
    for seed in seeds {
        let run = fidelity_run(seed, n_s, n_q, dim, value_width)?;
        per_run.push(compare(&run.approx, &run.exact, value_width));
        approx.extend(run.approx);
        exact.extend(run.exact);
    }
    let pooled = compare(&approx, &exact, value_width);
    Ok((per_run, pooled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{embed_all, K1_DIM, K2_DIM};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_record(rng: &mut ChaCha8Rng, d: f64) -> FeatureRecord {
        let mut hog = [0.0; 6];
        hog.iter_mut().for_each(|h| *h = rng.random::<f64>());
        let s: f64 = hog.iter().sum();
        hog.iter_mut().for_each(|h| *h /= s);
        FeatureRecord {
            color: [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)],
            gray_std: rng.random_range(0.0..40.0),
            top: rng.random::<f64>(),
            hog,
            dissimilarity: d,
        }
    }

    #[test]
    fn single_source_at_query_returns_value() {
        let out = brute_filter(&[1.0, 2.0], &[3.0, 4.0], 2, 2, &[1.0, 2.0]).unwrap();
        assert_eq!(out, vec![3.0, 4.0]);
    }

    #[test]
    fn symmetric_sources_give_equal_channels() {
        let out = brute_filter(&[-1.0, 0.0, 1.0, 0.0], &[1.0, 0.0, 0.0, 1.0], 2, 2, &[0.0, 0.0]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn accumulation_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<f64> = (0..300).map(|_| rng.random_range(-2.0..2.0)).collect();
        let vals: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let qs: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fwd = brute_filter(&pts, &vals, 3, 1, &qs).unwrap();
        let rev_pts: Vec<f64> = pts.chunks(3).rev().flatten().copied().collect();
        let rev_vals: Vec<f64> = vals.iter().rev().copied().collect();
        let bwd = brute_filter(&rev_pts, &rev_vals, 3, 1, &qs).unwrap();
        for (a, b) in fwd.iter().zip(bwd) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn embedding_realizes_direct_kernels() {
        let kp = KernelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let d = rng.random::<f64>();
            let a = random_record(&mut rng, d);
            let b = random_record(&mut rng, 0.0);
            let (a1, a2) = embed_all(std::slice::from_ref(&a), &kp);
            let (b1, b2) = embed_all(std::slice::from_ref(&b), &kp);
            let realized = |x: &[f64], y: &[f64]| {
                (-0.5 * x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()).exp()
            };
            let (k1, k2) = (kernel_k1(&a, &b, &kp), kernel_k2(&a, &b, &kp));
            let (r1, r2) = (realized(&a1, &b1), realized(&a2, &b2));
            if k1 > 0.0 {
                assert!((r1 - k1).abs() <= 1e-12 * k1.max(1e-300) || (r1 - k1).abs() < 1e-300, "{r1} {k1}");
            }
            assert!((r2 - k2).abs() <= 1e-12 * k2, "{r2} {k2}");
        }
    }

    #[test]
    fn brute_transfer_equals_embed_then_brute_filter() {
        let kp = KernelParams { sigma_c: 60.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let train: Vec<_> = (0..50).map(|_| random_record(&mut rng, 0.5)).collect();
        let labels: Vec<u8> = (0..50).map(|i| (i % 3) as u8).collect();
        let queries: Vec<_> = (0..10).map(|_| random_record(&mut rng, 0.0)).collect();
        let set = SampleSet::from_records(train, labels, 3).unwrap();
        let direct = brute_transfer(&set, &queries, &kp).unwrap();
        let values = label_vectors(&set).unwrap();
        let (t1, t2) = embed_all(&set.features, &kp);
        let (q1, q2) = embed_all(&queries, &kp);
        let f1 = brute_filter(&t1, &values, K1_DIM, 3, &q1).unwrap();
        let f2 = brute_filter(&t2, &values, K2_DIM, 3, &q2).unwrap();
        for i in 0..direct.q.len() {
            let composed = kp.w1 * f1[i] + kp.w2 * f2[i];
            assert!((direct.q[i] - composed).abs() <= 1e-9 * composed.abs().max(1e-300));
        }
    }

    #[test]
    fn doubling_lambda_doubles_channel() {
        let kp = KernelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let train: Vec<_> = (0..20).map(|_| random_record(&mut rng, 0.2)).collect();
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let queries: Vec<_> = (0..4).map(|_| random_record(&mut rng, 0.0)).collect();
        let set = SampleSet::from_records(train, labels, 2).unwrap();
        let base = brute_transfer(&set, &queries, &kp).unwrap();
        let mut doubled = set.clone();
        doubled.weights[1] = doubled.weights[1].map(|w| 2.0 * w);
        let twice = brute_transfer(&doubled, &queries, &kp).unwrap();
        for i in 0..4 {
            assert_eq!(twice.raw(i)[0], base.raw(i)[0]);
            assert_eq!(twice.raw(i)[1], 2.0 * base.raw(i)[1]);
        }
    }

    #[test]
    fn compare_stats() {
        let exact = [1.0, 0.0, 0.0, 2.0];
        let approx = [1.1, 0.0, 0.0, 2.0];
        let s = compare(&approx, &exact, 2);
        assert_eq!(s.count, 2);
        assert!((s.max - 0.1).abs() < 1e-12);
        assert_eq!(s.argmax_agreement, 1.0);
        assert!((quantile(&[0.0, 1.0], 0.5) - 0.5).abs() < 1e-15);
    }
}
