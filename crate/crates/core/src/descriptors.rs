//! Global image descriptors, the chi-squared distance, and average-rank fusion
//! of the per-descriptor rankings.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::{ImageRGB, LabelMap};

const CHI2_EPS: f64 = 1e-12;
const HIST_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DescriptorKind {
    ColorPyramid,
    GistLike,
    HogGlobal,
    GtClassHist,
}

impl DescriptorKind {
    fn code(self) -> u32 {
        match self {
            DescriptorKind::ColorPyramid => 1,
            DescriptorKind::GistLike => 2,
            DescriptorKind::HogGlobal => 3,
            DescriptorKind::GtClassHist => 4,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            1 => DescriptorKind::ColorPyramid,
            2 => DescriptorKind::GistLike,
            3 => DescriptorKind::HogGlobal,
            4 => DescriptorKind::GtClassHist,
            _ => return None,
        })
    }
}

/// Non-negative, L1-normalized histogram-style descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub kind: DescriptorKind,
    pub values: Vec<f64>,
}

impl Descriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Central-difference gradients of the gray image with replicated borders.
pub(crate) fn gradients(gray: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; gray.len()];
    let mut gy = vec![0.0; gray.len()];
    for y in 0..height {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(height - 1);
        for x in 0..width {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(width - 1);
            let i = y * width + x;
            gx[i] = 0.5 * (gray[y * width + right] - gray[y * width + left]);
            gy[i] = 0.5 * (gray[down * width + x] - gray[up * width + x]);
        }
    }
    (gx, gy)
}

/// Unsigned orientation bin (bins centered on multiples of pi/n, bin 0 holds
/// horizontal gradients) and magnitude.
#[inline]
pub(crate) fn orientation_bin(gx: f64, gy: f64, bins: usize) -> (usize, f64) {
    let mag = gx.hypot(gy);
    // fold (gx, gy) and (-gx, -gy) onto the same half-plane before atan2
    let (fx, fy) = if gy < 0.0 || (gy == 0.0 && gx < 0.0) { (-gx, -gy) } else { (gx, gy) };
    let theta = fy.atan2(fx); // [0, pi]
    let bin = (theta / (PI / bins as f64)).round() as usize % bins;
    (bin, mag)
}

/// L1 normalization with an additive epsilon so all-zero input becomes uniform.
pub(crate) fn normalize_eps(values: &mut [f64]) {
    let n = values.len() as f64;
    let total: f64 = values.iter().sum::<f64>() + n * HIST_EPS;
    values.iter_mut().for_each(|v| *v = (*v + HIST_EPS) / total);
}

fn normalize_plain(values: &mut [f64]) {
    let total: f64 = values.iter().sum();
    if total > 0.0 {
        values.iter_mut().for_each(|v| *v /= total);
    }
}

#[inline]
fn cell_index(coord: usize, extent: usize, cells: usize) -> usize {
    (coord * cells / extent).min(cells - 1)
}

/// Spatial pyramid of joint RGB histograms; level `l` (1-based) splits the
/// image into `2^(l-1)` x `2^(l-1)` cells.
pub fn color_pyramid(image: &ImageRGB, levels: usize, bins_per_channel: usize) -> Result<Descriptor> {
    if levels == 0 || bins_per_channel < 2 {
        return Err(Error::InvalidParam(format!(
            "color pyramid needs levels >= 1 and bins >= 2, got {levels}, {bins_per_channel}"
        )));
    }
    let b = bins_per_channel;
    let joint = b * b * b;
    let (w, h) = (image.width(), image.height());
    let mut values = Vec::new();
    for level in 0..levels {
        let cells = 1usize << level;
        let mut hist = vec![0.0; cells * cells * joint];
        for y in 0..h {
            let cy = cell_index(y, h, cells);
            for x in 0..w {
                let cx = cell_index(x, w, cells);
                let [r, g, bl] = image.get(x, y);
                let q = |v: u8| v as usize * b / 256;
                let bin = (q(r) * b + q(g)) * b + q(bl);
                hist[(cy * cells + cx) * joint + bin] += 1.0;
            }
        }
        values.extend(hist);
    }
    normalize_plain(&mut values);
    Ok(Descriptor { kind: DescriptorKind::ColorPyramid, values })
}

/// Tiled magnitude-weighted gradient-orientation histograms on a `grid` x `grid` layout.
pub fn gist_like(image: &ImageRGB, grid: usize, orientations: usize) -> Result<Descriptor> {
    if grid == 0 || orientations < 2 {
        return Err(Error::InvalidParam(format!(
            "gist-like descriptor needs grid >= 1 and orientations >= 2, got {grid}, {orientations}"
        )));
    }
    let (w, h) = (image.width(), image.height());
    let (gx, gy) = gradients(&image.gray(), w, h);
    let mut values = vec![0.0; grid * grid * orientations];
    for y in 0..h {
        let cy = cell_index(y, h, grid);
        for x in 0..w {
            let i = y * w + x;
            let (bin, mag) = orientation_bin(gx[i], gy[i], orientations);
            values[(cy * grid + cell_index(x, w, grid)) * orientations + bin] += mag;
        }
    }
    normalize_eps(&mut values);
    Ok(Descriptor { kind: DescriptorKind::GistLike, values })
}

/// Whole-image magnitude-weighted orientation histogram over [0, pi).
pub fn hog_global(image: &ImageRGB, orientations: usize) -> Result<Descriptor> {
    if orientations < 2 {
        return Err(Error::InvalidParam(format!("orientations must be >= 2, got {orientations}")));
    }
    let (gx, gy) = gradients(&image.gray(), image.width(), image.height());
    let mut values = vec![0.0; orientations];
    for (&x, &y) in gx.iter().zip(&gy) {
        let (bin, mag) = orientation_bin(x, y, orientations);
        values[bin] += mag;
    }
    normalize_eps(&mut values);
    Ok(Descriptor { kind: DescriptorKind::HogGlobal, values })
}

/// Normalized class-label histogram (VOID excluded).
pub fn gt_class_hist(labels: &LabelMap) -> Result<Descriptor> {
    labels
        .class_histogram()
        .map(|values| Descriptor { kind: DescriptorKind::GtClassHist, values })
        .ok_or_else(|| Error::Empty("label map is entirely VOID".into()))
}

/// `0.5 * sum (a_i - b_i)^2 / (a_i + b_i + eps)`.
pub fn chi2(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    if a.kind != b.kind {
        return Err(Error::DescriptorMismatch(format!("{:?} vs {:?}", a.kind, b.kind)));
    }
    if a.len() != b.len() {
        return Err(Error::DescriptorMismatch(format!("lengths {} vs {}", a.len(), b.len())));
    }
    Ok(chi2_values(&a.values, &b.values))
}

pub(crate) fn chi2_values(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d / (x + y + CHI2_EPS)
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankParams {
    pub pyramid_levels: usize,
    pub color_bins: usize,
    pub gist_grid: usize,
    pub gist_orientations: usize,
    pub hog_orientations: usize,
}

impl Default for RankParams {
    fn default() -> Self {
        Self { pyramid_levels: 2, color_bins: 4, gist_grid: 4, gist_orientations: 8, hog_orientations: 8 }
    }
}

/// The three ranking descriptors of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptors {
    pub color: Descriptor,
    pub gist: Descriptor,
    pub hog: Descriptor,
}

impl GlobalDescriptors {
    pub fn compute(image: &ImageRGB, params: &RankParams) -> Result<Self> {
        Ok(Self {
            color: color_pyramid(image, params.pyramid_levels, params.color_bins)?,
            gist: gist_like(image, params.gist_grid, params.gist_orientations)?,
            hog: hog_global(image, params.hog_orientations)?,
        })
    }

    fn parts(&self) -> [&Descriptor; 3] {
        [&self.color, &self.gist, &self.hog]
    }
}

/// Training images ordered from most to least similar, with the per-image
/// dissimilarity `rank / M` (rank 1 = most similar).
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub ordered: Vec<usize>,
    /// Indexed by training-image index, not by rank.
    pub per_image_d: Vec<f64>,
}

impl Ranking {
    pub fn from_order(ordered: Vec<usize>) -> Self {
        let m = ordered.len();
        let mut per_image_d = vec![0.0; m];
        for (pos, &img) in ordered.iter().enumerate() {
            per_image_d[img] = (pos + 1) as f64 / m as f64;
        }
        Self { ordered, per_image_d }
    }

    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }

    pub fn top(&self, k: usize) -> &[usize] {
        &self.ordered[..k.min(self.ordered.len())]
    }
}

/// Rank positions (1-based) after sorting by ascending distance, ties by index.
fn rank_positions(distances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let mut pos = vec![0; distances.len()];
    for (r, &i) in order.iter().enumerate() {
        pos[i] = r + 1;
    }
    pos
}

/// Orders items by ascending mean rank across several rankings, ties by index.
/// `rank_lists[k][i]` is item `i`'s 1-based position in ranking `k`.
pub fn fuse_ranks(rank_lists: &[Vec<usize>]) -> Vec<usize> {
    let n = rank_lists.first().map_or(0, Vec::len);
    // equal list count for every item, so comparing sums compares means exactly
    let sums: Vec<usize> = (0..n).map(|i| rank_lists.iter().map(|r| r[i]).sum()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sums[a].cmp(&sums[b]).then(a.cmp(&b)));
    order
}

pub fn rank_by_descriptors(query: &GlobalDescriptors, train: &[GlobalDescriptors]) -> Result<Ranking> {
    if train.is_empty() {
        return Err(Error::Empty("training set has no images".into()));
    }
    let mut rank_lists = Vec::with_capacity(3);
    for k in 0..3 {
        let q = query.parts()[k];
        let distances =
            train.iter().map(|t| chi2(q, t.parts()[k])).collect::<Result<Vec<_>>>()?;
        rank_lists.push(rank_positions(&distances));
    }
    Ok(Ranking::from_order(fuse_ranks(&rank_lists)))
}

pub fn compute_all(images: &[&ImageRGB], params: &RankParams) -> Result<Vec<GlobalDescriptors>> {
    images.par_iter().map(|img| GlobalDescriptors::compute(img, params)).collect()
}

/// Descriptor-based ranking of every training image against `query`.
pub fn rank_images(query: &ImageRGB, train: &Dataset, params: &RankParams) -> Result<Ranking> {
    let images: Vec<&ImageRGB> = train.entries.iter().map(|e| &e.image).collect();
    let train_desc = compute_all(&images, params)?;
    rank_by_descriptors(&GlobalDescriptors::compute(query, params)?, &train_desc)
}

/// Ranking by chi-squared distance between ground-truth class histograms.
/// Training images without usable labels sort last.
pub fn rank_images_ideal(query_labels: &LabelMap, train: &Dataset) -> Result<Ranking> {
    if train.is_empty() {
        return Err(Error::Empty("training set has no images".into()));
    }
    let q = gt_class_hist(query_labels)?;
    let distances: Vec<f64> = train
        .entries
        .iter()
        .map(|e| {
            e.labels
                .as_ref()
                .and_then(|l| gt_class_hist(l).ok())
                .map_or(f64::INFINITY, |t| chi2_values(&q.values, &t.values))
        })
        .collect();
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    Ok(Ranking::from_order(order))
}

const CACHE_MAGIC: &[u8; 4] = b"SFDC";

/// Writes descriptors as consecutive `magic, kind, length, f32 LE values` records.
pub fn save_descriptor_cache(path: impl AsRef<Path>, descriptors: &[Descriptor]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for d in descriptors {
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&d.kind.code().to_le_bytes());
        buf.extend_from_slice(&(d.values.len() as u32).to_le_bytes());
        for &v in &d.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_descriptor_cache(path: impl AsRef<Path>) -> Result<Vec<Descriptor>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let corrupt = |msg: &str| Error::Decode { path: path.to_path_buf(), msg: msg.into() };
    let mut out = Vec::new();
    let mut at = 0;
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    while at < bytes.len() {
        if bytes.len() < at + 12 || &bytes[at..at + 4] != CACHE_MAGIC {
            return Err(corrupt("bad descriptor cache header"));
        }
        let kind = DescriptorKind::from_code(u32_at(at + 4)).ok_or_else(|| corrupt("unknown descriptor kind"))?;
        let len = u32_at(at + 8) as usize;
        at += 12;
        if bytes.len() < at + 4 * len {
            return Err(corrupt("truncated descriptor cache"));
        }
        let values = (0..len).map(|i| f32::from_bits(u32_at(at + 4 * i)) as f64).collect();
        at += 4 * len;
        out.push(Descriptor { kind, values });
    }
    Ok(out)
}
