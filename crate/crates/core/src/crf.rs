//! Location prior and fully connected mean-field CRF over pixels.
//!
//! Pairwise messages are normalized Gaussian convolutions computed on the
//! permutohedral lattice: every label channel is filtered together with an
//! all-ones channel, and the pixel's own contribution is removed from both.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::descriptors::Ranking;
use crate::error::{Error, Result};
use crate::image::{ImageRGB, LabelMap, VOID};
use crate::lattice::{self, PermutohedralLattice};
use crate::superpixel::SuperpixelPartition;
use crate::transfer::{argmax, LabelScores};

#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    pub iterations: usize,
    /// Appearance kernel: spatial and color bandwidths.
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub w_app: f64,
    /// Smoothness kernel: spatial bandwidth.
    pub sigma_gamma: f64,
    pub w_smooth: f64,
    /// Weight of `-ln prior` in the pixel cost.
    pub w_loc: f64,
    /// Number of top-ranked training maps in the location prior.
    pub prior_k: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            iterations: 10,
            sigma_alpha: 60.0,
            sigma_beta: 10.0,
            w_app: 5.0,
            sigma_gamma: 3.0,
            w_smooth: 3.0,
            w_loc: 0.5,
            prior_k: 15,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("crf.sigma_alpha", self.sigma_alpha),
            ("crf.sigma_beta", self.sigma_beta),
            ("crf.sigma_gamma", self.sigma_gamma),
        ] {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be positive, got {s}")));
            }
        }
        for (name, w) in [("crf.w_app", self.w_app), ("crf.w_smooth", self.w_smooth), ("crf.w_loc", self.w_loc)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be non-negative, got {w}")));
            }
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParam("crf.iterations must be at least 1".into()));
        }
        if self.prior_k == 0 {
            return Err(Error::InvalidParam("crf.prior_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Row-major per-pixel vectors of length `num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelField {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub data: Vec<f64>,
}

impl PixelField {
    pub fn at(&self, pixel: usize) -> &[f64] {
        &self.data[pixel * self.num_classes..(pixel + 1) * self.num_classes]
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Per-pixel argmax (argmin when `lowest` is set).
    fn pick(&self, lowest: bool) -> LabelMap {
        let labels = self
            .data
            .chunks_exact(self.num_classes)
            .map(|row| {
                if lowest {
                    let neg: Vec<f64> = row.iter().map(|x| -x).collect();
                    argmax(&neg) as u8
                } else {
                    argmax(row) as u8
                }
            })
            .collect();
        LabelMap::new(self.width, self.height, labels, self.num_classes).expect("labels below num_classes")
    }
}

/// Per-pixel class distribution from the location prior.
pub type LocationPrior = PixelField;
/// Per-pixel class costs.
pub type PixelCosts = PixelField;

/// Mean-field marginals.
pub type PixelMarginals = PixelField;

impl PixelField {
    pub fn argmax_map(&self) -> LabelMap {
        self.pick(false)
    }

    pub fn argmin_map(&self) -> LabelMap {
        self.pick(true)
    }
}

/// Laplace-smoothed per-pixel histogram of the labels of the `k` best-ranked
/// labeled training maps, each resampled to `width x height`.
pub fn location_prior(ranking: &Ranking, train: &Dataset, width: usize, height: usize, k: usize) -> Result<LocationPrior> {
    let l = train.num_classes;
    let maps: Vec<LabelMap> = ranking
        .ordered
        .iter()
        .filter_map(|&i| train.entries.get(i).and_then(|e| e.labels.as_ref()))
        .take(k)
        .map(|m| m.resample_nearest(width, height))
        .collect();
    if maps.len() < k {
        log::debug!("location prior uses {} of {k} requested maps", maps.len());
    }
    let mut data = vec![1.0; width * height * l];
    data.par_chunks_mut(l).enumerate().for_each(|(p, hist)| {
        for m in &maps {
            let y = m.labels()[p];
            if y != VOID {
                hist[y as usize] += 1.0;
            }
        }
        let total: f64 = hist.iter().sum();
        hist.iter_mut().for_each(|h| *h /= total);
    });
    Ok(PixelField { width, height, num_classes: l, data })
}

/// `cost(p, l) = u_{sp(p)}(l) + w_loc * (-ln prior(p, l))`.
pub fn pixel_unary(
    scores: &LabelScores,
    partition: &SuperpixelPartition,
    prior: &LocationPrior,
    w_loc: f64,
) -> Result<PixelCosts> {
    let l = scores.num_classes;
    if scores.num_queries() != partition.count() {
        return Err(Error::Dimension(format!(
            "{} superpixel unaries for {} superpixels",
            scores.num_queries(),
            partition.count()
        )));
    }
    if (prior.width, prior.height, prior.num_classes) != (partition.width(), partition.height(), l) {
        return Err(Error::Dimension(format!(
            "prior {}x{}x{} does not match {}x{}x{l}",
            prior.width,
            prior.height,
            prior.num_classes,
            partition.width(),
            partition.height()
        )));
    }
    let assignment = partition.assignment();
    let mut data = vec![0.0; assignment.len() * l];
    data.par_chunks_mut(l).enumerate().for_each(|(p, cost)| {
        let u = scores.unary_of(assignment[p] as usize);
        for (c, (dst, &ul)) in cost.iter_mut().zip(u).enumerate() {
            *dst = ul;
            if w_loc != 0.0 {
                *dst += w_loc * -prior.data[p * l + c].ln();
            }
        }
    });
    Ok(PixelField { width: partition.width(), height: partition.height(), num_classes: l, data })
}

fn softmax_neg(cost: &[f64], out: &mut [f64]) {
    let lo = cost.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (o, &c) in out.iter_mut().zip(cost) {
        *o = (lo - c).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// One pairwise kernel: a lattice over per-pixel features and each pixel's own
/// raw lattice response, which is subtracted to exclude self-messages.
struct PairwiseKernel {
    lattice: PermutohedralLattice<f32>,
    self_weight: Vec<f64>,
    weight: f64,
}

impl PairwiseKernel {
    fn new(features: &[f64], dim: usize, value_width: usize, weight: f64) -> Result<Self> {
        let lattice = PermutohedralLattice::<f32>::build(features, dim, value_width)?;
        let self_weight = features.par_chunks_exact(dim).map(lattice::self_response).collect();
        Ok(Self { lattice, self_weight, weight })
    }

    /// Adds `weight * sum_{q != p} k(p, q) Q_q / sum_{q != p} k(p, q)` to `messages`.
    fn accumulate(&mut self, q: &[f64], num_classes: usize, messages: &mut [f64]) -> Result<()> {
        let l = num_classes;
        let v = l + 1;
        let mut values = vec![1.0; q.len() / l * v];
        for (dst, src) in values.chunks_exact_mut(v).zip(q.chunks_exact(l)) {
            dst[..l].copy_from_slice(src);
        }
        self.lattice.splat_values(&values)?;
        self.lattice.blur_in_place();
        let filtered = self.lattice.slice_inputs();
        let weight = self.weight;
        messages
            .par_chunks_mut(l)
            .zip(filtered.par_chunks_exact(v))
            .zip(q.par_chunks_exact(l))
            .zip(self.self_weight.par_iter())
            .for_each(|(((m, f), own), &s)| {
                let norm = f[l] - s;
                // isolated pixel: nothing else reaches it
                if norm <= 1e-9 * f[l].abs().max(1e-30) {
                    return;
                }
                for c in 0..l {
                    m[c] += weight * ((f[c] - s * own[c]) / norm).max(0.0);
                }
            });
        Ok(())
    }
}

/// Mean-field inference with Potts compatibility. Returns the marginals and
/// their argmax labeling.
pub fn meanfield(costs: &PixelCosts, image: &ImageRGB, params: &CrfParams) -> Result<(PixelMarginals, LabelMap)> {
    params.validate()?;
    let (w, h, l) = (costs.width, costs.height, costs.num_classes);
    if (image.width(), image.height()) != (w, h) {
        return Err(Error::Dimension(format!(
            "costs are {w}x{h} but image is {}x{}",
            image.width(),
            image.height()
        )));
    }
    if costs.data.len() != w * h * l {
        return Err(Error::Dimension(format!("{} costs for {w}x{h}x{l}", costs.data.len())));
    }
    if let Some(i) = costs.data.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!("pixel {} has a non-finite cost", i / l.max(1))));
    }
    let mut q = vec![0.0; costs.data.len()];
    q.par_chunks_mut(l).zip(costs.data.par_chunks_exact(l)).for_each(|(dst, c)| softmax_neg(c, dst));

    let mut kernels = Vec::new();
    if params.w_app > 0.0 {
        let mut feats = Vec::with_capacity(w * h * 5);
        for (i, px) in image.pixels().iter().enumerate() {
            feats.push((i % w) as f64 / params.sigma_alpha);
            feats.push((i / w) as f64 / params.sigma_alpha);
            feats.extend(px.iter().map(|&c| c as f64 / params.sigma_beta));
        }
        kernels.push(PairwiseKernel::new(&feats, 5, l + 1, params.w_app)?);
    }
    if params.w_smooth > 0.0 {
        let feats: Vec<f64> = (0..w * h)
            .flat_map(|i| [(i % w) as f64 / params.sigma_gamma, (i / w) as f64 / params.sigma_gamma])
            .collect();
        kernels.push(PairwiseKernel::new(&feats, 2, l + 1, params.w_smooth)?);
    }
    if !kernels.is_empty() {
        let mut messages = vec![0.0; q.len()];
        let mut energy = vec![0.0; q.len()];
        for _ in 0..params.iterations {
            messages.iter_mut().for_each(|m| *m = 0.0);
            for k in kernels.iter_mut() {
                k.accumulate(&q, l, &mut messages)?;
            }
            // Potts: label l pays for the message mass on every other label
            energy
                .par_chunks_mut(l)
                .zip(messages.par_chunks_exact(l))
                .zip(costs.data.par_chunks_exact(l))
                .for_each(|((e, m), c)| {
                    let total: f64 = m.iter().sum();
                    for i in 0..l {
                        e[i] = c[i] + total - m[i];
                    }
                });
            q.par_chunks_mut(l).zip(energy.par_chunks_exact(l)).for_each(|(dst, e)| softmax_neg(e, dst));
        }
    }
    let marginals = PixelField { width: w, height: h, num_classes: l, data: q };
    let labels = marginals.argmax_map();
    Ok((marginals, labels))
}
