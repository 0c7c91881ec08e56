//! Per-superpixel observables and their embedding into the two kernel spaces.
//!
//! Both kernels have the form `exp(-sum_k (a_k - b_k)^2 / sigma_k^2)`. Scaling
//! every feature by `sqrt(2) / sigma_k` turns this into `exp(-|u - v|^2 / 2)`,
//! the unit-variance Gaussian the lattice filters with. Every downstream
//! consumer of these points relies on that identity.

use std::f64::consts::SQRT_2;

use crate::descriptors::{gradients, normalize_eps, orientation_bin};
use crate::error::{Error, Result};
use crate::image::{gray_value, ImageRGB};
use crate::superpixel::SuperpixelPartition;

pub const HOG_BINS: usize = 6;
pub const K1_DIM: usize = 6;
pub const K2_DIM: usize = HOG_BINS + 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    /// Mean RGB in [0, 255].
    pub color: [f64; 3],
    /// Population standard deviation of gray values.
    pub gray_std: f64,
    /// Topmost member row over image height.
    pub top: f64,
    pub hog: [f64; HOG_BINS],
    /// Rank-derived dissimilarity of the source image; 0 for queries.
    pub dissimilarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub sigma_c: f64,
    pub sigma_t: f64,
    pub sigma_s: f64,
    pub sigma_d: f64,
    pub sigma_h: f64,
    pub w1: f64,
    pub w2: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { sigma_c: 20.0, sigma_t: 0.2, sigma_s: 15.0, sigma_d: 0.5, sigma_h: 0.3, w1: 0.5, w2: 0.5 }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_c, self.sigma_t, self.sigma_s, self.sigma_d, self.sigma_h];
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParam(format!("kernel sigmas must be positive: {self:?}")));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0 && self.w1 + self.w2 > 0.0) {
            return Err(Error::InvalidParam(format!(
                "kernel weights must be non-negative with a positive sum: w1={}, w2={}",
                self.w1, self.w2
            )));
        }
        Ok(())
    }
}

/// Feature records for every superpixel of `part`, tagged with `d_image`.
pub fn superpixel_features(
    image: &ImageRGB,
    part: &SuperpixelPartition,
    d_image: f64,
) -> Result<Vec<FeatureRecord>> {
    let (w, h) = (image.width(), image.height());
    if (part.width(), part.height()) != (w, h) {
        return Err(Error::Dimension(format!(
            "partition {}x{} does not match image {w}x{h}",
            part.width(),
            part.height()
        )));
    }
    let gray = image.gray();
    let (gx, gy) = gradients(&gray, w, h);
    let n = part.count();
    let mut sum_rgb = vec![[0.0f64; 3]; n];
    let mut sum_g = vec![0.0f64; n];
    let mut sum_g2 = vec![0.0f64; n];
    let mut hog = vec![[0.0f64; HOG_BINS]; n];
    for (i, (&sp, &px)) in part.assignment().iter().zip(image.pixels()).enumerate() {
        let sp = sp as usize;
        for c in 0..3 {
            sum_rgb[sp][c] += px[c] as f64;
        }
        let g = gray_value(px);
        sum_g[sp] += g;
        sum_g2[sp] += g * g;
        let (bin, mag) = orientation_bin(gx[i], gy[i], HOG_BINS);
        hog[sp][bin] += mag;
    }
    let records = (0..n)
        .map(|sp| {
            let count = part.sizes()[sp] as f64;
            let mean_g = sum_g[sp] / count;
            let var = (sum_g2[sp] / count - mean_g * mean_g).max(0.0);
            let mut hist = hog[sp];
            normalize_eps(&mut hist);
            FeatureRecord {
                color: sum_rgb[sp].map(|s| s / count),
                gray_std: var.sqrt(),
                top: part.extents()[sp].y0 as f64 / h as f64,
                hog: hist,
                dissimilarity: d_image,
            }
        })
        .collect();
    Ok(records)
}

/// Color kernel space: `sqrt(2) * (c/sigma_c, t/sigma_t, s/sigma_s, d/sigma_d)`.
pub fn embed_k1(f: &FeatureRecord, kp: &KernelParams) -> [f64; K1_DIM] {
    let a = SQRT_2 / kp.sigma_c;
    [
        a * f.color[0],
        a * f.color[1],
        a * f.color[2],
        SQRT_2 * f.top / kp.sigma_t,
        SQRT_2 * f.gray_std / kp.sigma_s,
        SQRT_2 * f.dissimilarity / kp.sigma_d,
    ]
}

/// Gradient kernel space: `sqrt(2) * (h/sigma_h, t/sigma_t, s/sigma_s, d/sigma_d)`.
pub fn embed_k2(f: &FeatureRecord, kp: &KernelParams) -> [f64; K2_DIM] {
    let mut out = [0.0; K2_DIM];
    let a = SQRT_2 / kp.sigma_h;
    for (o, &hv) in out.iter_mut().zip(&f.hog) {
        *o = a * hv;
    }
    out[HOG_BINS] = SQRT_2 * f.top / kp.sigma_t;
    out[HOG_BINS + 1] = SQRT_2 * f.gray_std / kp.sigma_s;
    out[HOG_BINS + 2] = SQRT_2 * f.dissimilarity / kp.sigma_d;
    out
}

/// Flat row-major embedding of many records, `dim` values per record.
pub fn embed_all(records: &[FeatureRecord], kp: &KernelParams) -> (Vec<f64>, Vec<f64>) {
    let mut k1 = Vec::with_capacity(records.len() * K1_DIM);
    let mut k2 = Vec::with_capacity(records.len() * K2_DIM);
    for r in records {
        k1.extend_from_slice(&embed_k1(r, kp));
        k2.extend_from_slice(&embed_k2(r, kp));
    }
    (k1, k2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superpixel::grid_partition;

    fn record() -> FeatureRecord {
        FeatureRecord {
            color: [10.0, 20.0, 30.0],
            gray_std: 4.0,
            top: 0.25,
            hog: [0.1, 0.2, 0.3, 0.1, 0.2, 0.1],
            dissimilarity: 0.5,
        }
    }

    fn realized(a: &[f64], b: &[f64]) -> f64 {
        (-a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 2.0).exp()
    }

    #[test]
    fn uniform_superpixel() {
        let img = ImageRGB::filled(4, 4, [100, 150, 200]).unwrap();
        let f = superpixel_features(&img, &grid_partition(4, 4, 4), 0.0).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].color, [100.0, 150.0, 200.0]);
        assert!(f[0].gray_std.abs() < 1e-9);
        assert_eq!(f[0].top, 0.0);
        assert!((f[0].hog.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_pixel_population_std() {
        let img = ImageRGB::new(2, 1, vec![[0, 0, 0], [255, 255, 255]]).unwrap();
        let f = superpixel_features(&img, &grid_partition(2, 1, 2), 0.0).unwrap();
        // gray values {0, 255}: mean 127.5, population std 127.5
        assert!((f[0].gray_std - 127.5).abs() < 1e-6, "{}", f[0].gray_std);
    }

    #[test]
    fn top_is_normalized_min_row() {
        let img = ImageRGB::filled(4, 8, [0, 0, 0]).unwrap();
        let f = superpixel_features(&img, &grid_partition(4, 8, 4), 0.3).unwrap();
        assert_eq!(f[0].top, 0.0);
        assert_eq!(f[1].top, 0.5);
        assert!(f.iter().all(|r| r.dissimilarity == 0.3));
    }

    #[test]
    fn mismatched_partition_rejected() {
        let img = ImageRGB::filled(4, 4, [0, 0, 0]).unwrap();
        assert!(superpixel_features(&img, &grid_partition(3, 4, 2), 0.0).is_err());
    }

    #[test]
    fn identical_records_realize_unit_kernel() {
        let kp = KernelParams::default();
        let r = record();
        assert_eq!(realized(&embed_k1(&r, &kp), &embed_k1(&r, &kp)), 1.0);
        assert_eq!(realized(&embed_k2(&r, &kp), &embed_k2(&r, &kp)), 1.0);
    }

    #[test]
    fn top_offset_of_one_sigma() {
        let kp = KernelParams::default();
        let a = record();
        let mut b = record();
        b.top += kp.sigma_t;
        let k = realized(&embed_k1(&a, &kp), &embed_k1(&b, &kp));
        assert!((k - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn hog_offset_of_one_sigma() {
        let kp = KernelParams::default();
        let a = record();
        let mut b = record();
        // (0.6, 0.8) has unit norm
        b.hog[0] += 0.6 * kp.sigma_h;
        b.hog[3] += 0.8 * kp.sigma_h;
        let k = realized(&embed_k2(&a, &kp), &embed_k2(&b, &kp));
        assert!((k - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(embed_k2(&a, &kp).len(), 9);
    }

    #[test]
    fn query_record_has_zero_d_coordinate() {
        let mut r = record();
        r.dissimilarity = 0.0;
        assert_eq!(embed_k1(&r, &KernelParams::default())[5], 0.0);
        assert_eq!(embed_k2(&r, &KernelParams::default())[8], 0.0);
    }

    #[test]
    fn params_validation() {
        assert!(KernelParams::default().validate().is_ok());
        assert!(KernelParams { sigma_h: 0.0, ..Default::default() }.validate().is_err());
        assert!(KernelParams { w1: 0.0, w2: 0.0, ..Default::default() }.validate().is_err());
        assert!(KernelParams { w1: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn features_independent_of_enumeration_order() {
        let pixels = (0..36).map(|i| [(i * 7) as u8, (i * 3) as u8, 200 - i as u8]).collect();
        let img = ImageRGB::new(6, 6, pixels).unwrap();
        let part = grid_partition(6, 6, 3);
        // relabel superpixels in reverse order
        let n = part.count() as u32;
        let rev: Vec<u32> = part.assignment().iter().map(|&a| n - 1 - a).collect();
        let part_rev = SuperpixelPartition::from_assignment(6, 6, rev).unwrap();
        let a = superpixel_features(&img, &part, 0.0).unwrap();
        let mut b = superpixel_features(&img, &part_rev, 0.0).unwrap();
        b.reverse();
        assert_eq!(a, b);
    }
}
