//! Label transfer by two-kernel lattice filtering of weighted one-hot labels.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{embed_all, FeatureRecord, KernelParams, K1_DIM, K2_DIM};
use crate::lattice::{self, FilterOptions};
use crate::sampler::SampleSet;

/// Floor added to every class score before normalizing.
pub const EPS_FLOOR: f64 = 1e-8;

/// Per-query class scores, flattened row-major with `num_classes` per query.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelScores {
    pub num_classes: usize,
    /// Raw filtered scores, non-negative.
    pub q: Vec<f64>,
    /// Floored, normalized distributions.
    pub q_norm: Vec<f64>,
    /// `-ln q_norm`.
    pub unary: Vec<f64>,
}

impl LabelScores {
    /// Wraps raw scores and derives the normalized scores and unaries.
    pub fn from_raw(q: Vec<f64>, num_classes: usize) -> Self {
        let q_norm: Vec<f64> = q.chunks_exact(num_classes).flat_map(normalize).collect();
        let unary = q_norm.chunks_exact(num_classes).flat_map(unary).collect();
        Self { num_classes, q, q_norm, unary }
    }

    pub fn num_queries(&self) -> usize {
        self.q.len() / self.num_classes
    }

    pub fn raw(&self, i: usize) -> &[f64] {
        &self.q[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn normalized(&self, i: usize) -> &[f64] {
        &self.q_norm[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn unary_of(&self, i: usize) -> &[f64] {
        &self.unary[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn argmax(&self) -> Vec<u8> {
        self.q_norm.chunks_exact(self.num_classes).map(|r| argmax(r) as u8).collect()
    }

    /// Debug dump: `query_id,argmax,q0..q{L-1}` (normalized scores).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id,argmax");
        for l in 0..self.num_classes {
            out.push_str(&format!(",q{l}"));
        }
        out.push('\n');
        for i in 0..self.num_queries() {
            let row = self.normalized(i);
            out.push_str(&format!("{i},{}", argmax(row)));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Index of the largest entry; first wins on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `q'_j(l) = lambda(l)` on the sample's own class, 0 elsewhere. Flat, `L` per sample.
pub fn label_vectors(sample: &SampleSet) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::Empty("sample has no superpixels".into()));
    }
    let l = sample.num_classes;
    let mut out = vec![0.0; sample.len() * l];
    for (j, &y) in sample.labels.iter().enumerate() {
        let w = sample.weights.get(y as usize).copied().flatten().ok_or_else(|| {
            Error::InvalidParam(format!("class {y} has a sample but no weight"))
        })?;
        out[j * l + y as usize] = w;
    }
    Ok(out)
}

/// Raw two-kernel filtered scores `q_i = w1 * F_k1 + w2 * F_k2`, clamped at 0,
/// on the plain lattice.
pub fn transfer(sample: &SampleSet, query_features: &[FeatureRecord], kp: &KernelParams) -> Result<LabelScores> {
    transfer_with(sample, query_features, kp, FilterOptions::plain())
}

pub fn transfer_with(
    sample: &SampleSet,
    query_features: &[FeatureRecord],
    kp: &KernelParams,
    opts: FilterOptions,
) -> Result<LabelScores> {
    kp.validate()?;
    if sample.features.len() != sample.len() {
        return Err(Error::InvalidParam(format!(
            "sample has {} superpixels but {} feature records",
            sample.len(),
            sample.features.len()
        )));
    }
    let values = label_vectors(sample)?;
    let l = sample.num_classes;
    let (train1, train2) = embed_all(&sample.features, kp);
    let (query1, query2) = embed_all(query_features, kp);
    let run = |w: f64, train: &[f64], query: &[f64], dim: usize| -> Result<Option<Vec<f64>>> {
        if w == 0.0 {
            return Ok(None);
        }
        lattice::filter_with::<f32>(train, &values, dim, l, query, opts).map(Some)
    };
    let (f1, f2) = rayon::join(
        || run(kp.w1, &train1, &query1, K1_DIM),
        || run(kp.w2, &train2, &query2, K2_DIM),
    );
    let (f1, f2) = (f1?, f2?);
    let mut q = vec![0.0; query_features.len() * l];
    q.par_iter_mut().enumerate().for_each(|(i, out)| {
        let mut v = 0.0;
        if let Some(f) = &f1 {
            v += kp.w1 * f[i];
        }
        if let Some(f) = &f2 {
            v += kp.w2 * f[i];
        }
        *out = v.max(0.0);
    });
    Ok(LabelScores::from_raw(q, l))
}

/// `(q + eps) / sum(q + eps)`; all-zero rows come out uniform.
pub fn normalize(q: &[f64]) -> Vec<f64> {
    let total: f64 = q.iter().map(|&x| x.max(0.0) + EPS_FLOOR).sum();
    q.iter().map(|&x| (x.max(0.0) + EPS_FLOOR) / total).collect()
}

pub fn unary(q_norm: &[f64]) -> Vec<f64> {
    q_norm.iter().map(|&x| -x.ln()).collect()
}
