//! Rank-derived sampling scores, class-balanced weighted sampling without
//! replacement, and rare-class label weights.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::descriptors::Ranking;
use crate::error::{Error, Result};
use crate::features::FeatureRecord;

/// A training superpixel: (training image index, superpixel index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SuperpixelRef {
    pub image: usize,
    pub superpixel: usize,
}

/// Per-superpixel dissimilarity `d`, score `p`, and class label for every
/// labeled training superpixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingScores {
    pub refs: Vec<SuperpixelRef>,
    pub d: Vec<f64>,
    /// Empty until [`SamplingScores::with_scores`] runs.
    pub p: Vec<f64>,
    pub labels: Vec<u8>,
    pub num_classes: usize,
}

impl SamplingScores {
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn with_scores(mut self, sigma_d_sample: f64) -> Result<Self> {
        self.p = scores(&self.d, sigma_d_sample)?;
        Ok(self)
    }
}

/// Gives every labeled superpixel of the rank-`r` image (of `M`) the value `r / M`.
/// All-VOID superpixels are left out.
pub fn assign_dissimilarity(ranking: &Ranking, train: &Dataset) -> Result<SamplingScores> {
    if ranking.len() != train.len() {
        return Err(Error::Dimension(format!(
            "ranking covers {} images, training set has {}",
            ranking.len(),
            train.len()
        )));
    }
    let mut out = SamplingScores {
        refs: Vec::new(),
        d: Vec::new(),
        p: Vec::new(),
        labels: Vec::new(),
        num_classes: train.num_classes,
    };
    for (image, entry) in train.entries.iter().enumerate() {
        let d = ranking.per_image_d[image];
        for (superpixel, label) in entry.superpixel_labels.iter().enumerate() {
            if let Some(l) = label {
                out.refs.push(SuperpixelRef { image, superpixel });
                out.d.push(d);
                out.labels.push(*l);
            }
        }
    }
    Ok(out)
}

/// `p_j = exp(-d_j^2 / sigma_d_sample)`.
pub fn scores(d: &[f64], sigma_d_sample: f64) -> Result<Vec<f64>> {
    if !(sigma_d_sample.is_finite() && sigma_d_sample > 0.0) {
        return Err(Error::InvalidParam(format!("sigma_d_sample must be positive, got {sigma_d_sample}")));
    }
    Ok(d.iter().map(|&x| (-x * x / sigma_d_sample).exp()).collect())
}

/// Class-balanced sample of labeled superpixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub refs: Vec<SuperpixelRef>,
    /// One record per sample; empty until features are attached.
    pub features: Vec<FeatureRecord>,
    pub labels: Vec<u8>,
    pub d: Vec<f64>,
    pub p: Vec<f64>,
    /// Samples drawn per class.
    pub counts: Vec<usize>,
    pub n_max: usize,
    /// `N_max / N(l)`, `None` for classes with no samples.
    pub weights: Vec<Option<f64>>,
    pub cap: usize,
    pub num_classes: usize,
}

impl SampleSet {
    /// Sample set over explicit records, e.g. for direct transfer calls.
    pub fn from_records(features: Vec<FeatureRecord>, labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature records for {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidParam(format!("label {l} outside 0..{num_classes}")));
        }
        let n = labels.len();
        let mut set = SampleSet {
            refs: (0..n).map(|i| SuperpixelRef { image: 0, superpixel: i }).collect(),
            d: features.iter().map(|f| f.dissimilarity).collect(),
            p: vec![1.0; n],
            features,
            labels,
            counts: Vec::new(),
            n_max: 0,
            weights: Vec::new(),
            cap: n.max(1),
            num_classes,
        };
        set.recount();
        Ok(set)
    }

    fn recount(&mut self) {
        self.counts = vec![0; self.num_classes];
        for &l in &self.labels {
            self.counts[l as usize] += 1;
        }
        self.n_max = self.counts.iter().copied().max().unwrap_or(0);
        self.weights = rare_class_weights_from_counts(&self.counts);
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// Copies each sampled superpixel's record out of `per_image` (indexed
    /// `[image][superpixel]`) and stamps it with the sample's dissimilarity.
    pub fn attach_features(&mut self, per_image: &[Vec<FeatureRecord>]) -> Result<()> {
        let mut features = Vec::with_capacity(self.len());
        for (r, &d) in self.refs.iter().zip(&self.d) {
            let rec = per_image
                .get(r.image)
                .and_then(|img| img.get(r.superpixel))
                .ok_or_else(|| Error::Dimension(format!("no features for {r:?}")))?;
            features.push(FeatureRecord { dissimilarity: d, ..rec.clone() });
        }
        self.features = features;
        Ok(())
    }

    /// Replaces every class weight by 1.
    pub fn with_unit_weights(mut self) -> Self {
        self.weights = self.counts.iter().map(|&c| (c > 0).then_some(1.0)).collect();
        self
    }

    /// Debug dump: `image_id,superpixel_id,class,d,p`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,superpixel_id,class,d,p\n");
        for i in 0..self.len() {
            let r = self.refs[i];
            let _ = writeln!(out, "{},{},{},{},{}", r.image, r.superpixel, self.labels[i], self.d[i], self.p[i]);
        }
        out
    }
}

/// Per-class RNG substream so class draws are independent of scheduling.
fn class_rng(seed: u64, class: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class as u64);
    rng
}

/// Draws `k` indices from `candidates` without replacement, each successive
/// draw proportional to the remaining scores. Uses exponential keys
/// `-ln(u) / p` and keeps the `k` smallest.
pub fn weighted_sample_without_replacement(
    candidates: &[usize],
    p: &[f64],
    k: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = candidates
        .iter()
        .map(|&j| {
            let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
            let key = if p[j] > 0.0 { -u.ln() / p[j] } else { f64::INFINITY };
            (key, j)
        })
        .collect();
    let k = k.min(keyed.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, cmp);
        keyed.truncate(k);
    }
    keyed.sort_by(cmp);
    keyed.into_iter().map(|(_, j)| j).collect()
}

/// Per class, draws `min(cap, available)` superpixels without replacement with
/// probability proportional to `p` among those remaining in the class.
pub fn sample_balanced(scores: &SamplingScores, cap: usize, rng_seed: u64) -> Result<SampleSet> {
    if cap == 0 {
        return Err(Error::InvalidParam("per-class cap must be at least 1".into()));
    }
    if scores.p.len() != scores.len() {
        return Err(Error::InvalidParam("sampling scores have not been computed".into()));
    }
    let l = scores.num_classes;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); l];
    for (j, &lab) in scores.labels.iter().enumerate() {
        by_class[lab as usize].push(j);
    }
    let picked: Vec<Vec<usize>> = by_class
        .par_iter()
        .enumerate()
        .map(|(class, members)| {
            let mut rng = class_rng(rng_seed, class);
            let mut chosen = weighted_sample_without_replacement(members, &scores.p, cap, &mut rng);
            chosen.sort_unstable();
            chosen
        })
        .collect();
    let mut set = SampleSet {
        refs: Vec::new(),
        features: Vec::new(),
        labels: Vec::new(),
        d: Vec::new(),
        p: Vec::new(),
        counts: Vec::new(),
        n_max: 0,
        weights: Vec::new(),
        cap,
        num_classes: l,
    };
    for j in picked.into_iter().flatten() {
        set.refs.push(scores.refs[j]);
        set.labels.push(scores.labels[j]);
        set.d.push(scores.d[j]);
        set.p.push(scores.p[j]);
    }
    set.recount();
    Ok(set)
}

fn rare_class_weights_from_counts(counts: &[usize]) -> Vec<Option<f64>> {
    let n_max = counts.iter().copied().max().unwrap_or(0);
    counts.iter().map(|&c| (c > 0).then(|| n_max as f64 / c as f64)).collect()
}

/// `lambda(l) = N_max / N(l)` for every class with samples.
pub fn rare_class_weights(sample: &SampleSet) -> Result<Vec<Option<f64>>> {
    if sample.counts.iter().all(|&c| c == 0) {
        return Err(Error::Empty("sample has no classes with samples".into()));
    }
    Ok(rare_class_weights_from_counts(&sample.counts))
}
