//! Permutohedral-lattice Gaussian filtering.
//!
//! Points in `R^D` are elevated onto the hyperplane `H_D` of `R^(D+1)`
//! (coordinates summing to zero), scaled so that the splat + blur + slice
//! pipeline approximates the unit-variance kernel `exp(-|x - y|^2 / 2)`.
//! Each point lands in one simplex of the `A*_D` lattice and deposits its value
//! on the `D + 1` vertices with barycentric weights. Blurring applies a
//! `[1, 2, 1] / 4` stencil along each of the `D + 1` lattice directions in turn;
//! slicing reads values back by barycentric interpolation.
//!
//! The vertex table only holds vertices touched by a splat. Neighbours outside
//! the table count as zero during blur and slice.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Accumulator element type for lattice values.
pub trait Accum:
    Copy + Default + Send + Sync + Add<Output = Self> + AddAssign + Mul<Output = Self> + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Accum for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Accum for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

const EMPTY: u32 = u32::MAX;

/// Open-addressing hash from lattice keys to dense vertex ids. Only the first
/// `D` coordinates are stored; the last follows from the zero-sum constraint.
#[derive(Debug, Clone)]
struct VertexTable {
    key_len: usize,
    keys: Vec<i32>,
    slots: Vec<u32>,
    mask: usize,
}

impl VertexTable {
    fn with_capacity(key_len: usize, expected: usize) -> Self {
        let cap = (expected.max(8) * 2).next_power_of_two();
        Self {
            key_len,
            keys: Vec::with_capacity(expected * key_len),
            slots: vec![EMPTY; cap],
            mask: cap - 1,
        }
    }

    fn len(&self) -> usize {
        if self.key_len == 0 {
            // D = 0 never happens in practice, guard the division
            return 0;
        }
        self.keys.len() / self.key_len
    }

    #[inline]
    fn hash(key: &[i32]) -> usize {
        let mut h: u64 = 0;
        for &k in key {
            h = h.wrapping_add(k as i64 as u64);
            h = h.wrapping_mul(2_531_011);
        }
        (h ^ (h >> 29)) as usize
    }

    #[inline]
    fn key(&self, id: usize) -> &[i32] {
        &self.keys[id * self.key_len..(id + 1) * self.key_len]
    }

    fn find(&self, key: &[i32]) -> Option<usize> {
        let mut slot = Self::hash(key) & self.mask;
        loop {
            let id = self.slots[slot];
            if id == EMPTY {
                return None;
            }
            if self.key(id as usize) == key {
                return Some(id as usize);
            }
            slot = (slot + 1) & self.mask;
        }
    }

    fn find_or_insert(&mut self, key: &[i32]) -> usize {
        if (self.len() + 1) * 2 > self.slots.len() {
            self.grow();
        }
        let mut slot = Self::hash(key) & self.mask;
        loop {
            let id = self.slots[slot];
            if id == EMPTY {
                let new_id = self.len();
                self.keys.extend_from_slice(key);
                self.slots[slot] = new_id as u32;
                return new_id;
            }
            if self.key(id as usize) == key {
                return id as usize;
            }
            slot = (slot + 1) & self.mask;
        }
    }

    fn grow(&mut self) {
        let cap = self.slots.len() * 2;
        self.slots = vec![EMPTY; cap];
        self.mask = cap - 1;
        for id in 0..self.len() {
            let mut slot = Self::hash(self.key(id)) & self.mask;
            while self.slots[slot] != EMPTY {
                slot = (slot + 1) & self.mask;
            }
            self.slots[slot] = id as u32;
        }
    }
}

/// Enclosing simplex of one elevated point: the `D + 1` vertex keys (first `D`
/// coordinates each, flattened) and their barycentric weights.
#[derive(Debug, Clone)]
struct Simplex {
    keys: Vec<i32>,
    weights: Vec<f64>,
}

/// Scratch buffers and constants for locating simplices in dimension `D`.
#[derive(Debug, Clone)]
struct Locator {
    dim: usize,
    scale: Vec<f64>,
    elevated: Vec<f64>,
    rem0: Vec<i64>,
    rank: Vec<i64>,
    bary: Vec<f64>,
}

impl Locator {
    fn new(dim: usize) -> Self {
        let d = dim as f64;
        let inv_std = (2.0f64 / 3.0).sqrt() * (d + 1.0);
        let scale = (0..dim).map(|i| inv_std / (((i + 1) * (i + 2)) as f64).sqrt()).collect();
        Self {
            dim,
            scale,
            elevated: vec![0.0; dim + 1],
            rem0: vec![0; dim + 1],
            rank: vec![0; dim + 1],
            bary: vec![0.0; dim + 2],
        }
    }

    fn locate(&mut self, point: &[f64], out: &mut Simplex) {
        let d = self.dim;
        let dp1 = (d + 1) as i64;
        let inv = 1.0 / (d + 1) as f64;

        // elevate onto H_D
        let mut sm = 0.0;
        for i in (1..=d).rev() {
            let cf = point[i - 1] * self.scale[i - 1];
            self.elevated[i] = sm - i as f64 * cf;
            sm += cf;
        }
        self.elevated[0] = sm;

        // nearest remainder-0 point
        let mut sum: i64 = 0;
        for i in 0..=d {
            let v = self.elevated[i] * inv;
            let up = v.ceil() as i64 * dp1;
            let down = v.floor() as i64 * dp1;
            self.rem0[i] =
                if (up as f64 - self.elevated[i]) < (self.elevated[i] - down as f64) { up } else { down };
            sum += self.rem0[i];
        }
        let sum = sum / dp1;

        // rank the residual
        self.rank.iter_mut().for_each(|r| *r = 0);
        for i in 0..d {
            let di = self.elevated[i] - self.rem0[i] as f64;
            for j in i + 1..=d {
                if di < self.elevated[j] - self.rem0[j] as f64 {
                    self.rank[i] += 1;
                } else {
                    self.rank[j] += 1;
                }
            }
        }

        // walk back onto the plane if the rounding left it
        if sum > 0 {
            for i in 0..=d {
                if self.rank[i] >= dp1 - sum {
                    self.rem0[i] -= dp1;
                    self.rank[i] += sum - dp1;
                } else {
                    self.rank[i] += sum;
                }
            }
        } else if sum < 0 {
            for i in 0..=d {
                if self.rank[i] < -sum {
                    self.rem0[i] += dp1;
                    self.rank[i] += dp1 + sum;
                } else {
                    self.rank[i] += sum;
                }
            }
        }

        // barycentric coordinates
        self.bary.iter_mut().for_each(|b| *b = 0.0);
        for i in 0..=d {
            let v = (self.elevated[i] - self.rem0[i] as f64) * inv;
            let r = self.rank[i] as usize;
            self.bary[d - r] += v;
            self.bary[d + 1 - r] -= v;
        }
        self.bary[0] += 1.0 + self.bary[d + 1];

        out.keys.clear();
        out.weights.clear();
        for remainder in 0..=d {
            for i in 0..d {
                let r = self.rank[i] as usize;
                let canonical = if r <= d - remainder { remainder as i64 } else { remainder as i64 - dp1 };
                out.keys.push((self.rem0[i] + canonical) as i32);
            }
            out.weights.push(self.bary[remainder]);
        }
    }
}

/// Multiplier that brings raw lattice output onto the scale of
/// `sum_j exp(-|x - y_j|^2 / 2) v_j`: the kernel integral `(2 pi)^(D/2)` times
/// the lattice vertex density in input space.
pub fn kernel_gain(dim: usize) -> f64 {
    let d = dim as f64;
    let scale = (2.0f64 / 3.0).sqrt() * (d + 1.0);
    // vertices form {p in Z^(D+1): sum p = 0, all p_i congruent mod D+1},
    // covolume sqrt(D+1) * (D+1)^(D-1) on the hyperplane
    let log_density = d * scale.ln() - 0.5 * (d + 1.0).ln() - (d - 1.0) * (d + 1.0).ln();
    (0.5 * d * (2.0 * PI).ln() + log_density).exp()
}

#[derive(Debug, Clone)]
pub struct PermutohedralLattice<T: Accum = f32> {
    dim: usize,
    value_width: usize,
    table: VertexTable,
    /// `D + 1` (vertex, weight) pairs per splatted input.
    splat_vertices: Vec<u32>,
    splat_weights: Vec<f32>,
    values: Vec<T>,
}

fn check_points(points: &[f64], dim: usize, what: &str) -> Result<usize> {
    if dim == 0 {
        return Err(Error::Dimension("lattice dimension must be at least 1".into()));
    }
    if !points.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!(
            "{what}: {} coordinates is not a multiple of dimension {dim}",
            points.len()
        )));
    }
    if let Some(i) = points.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} point {} has a non-finite coordinate", i / dim)));
    }
    Ok(points.len() / dim)
}

impl<T: Accum> PermutohedralLattice<T> {
    /// Builds the vertex table for `points` (row-major, `dim` per point)
    /// without depositing any values.
    pub fn build(points: &[f64], dim: usize, value_width: usize) -> Result<Self> {
        let n = check_points(points, dim, "splat")?;
        if value_width == 0 {
            return Err(Error::Dimension("value width must be at least 1".into()));
        }
        let mut table = VertexTable::with_capacity(dim, n * (dim + 1) / 2 + 16);
        let mut locator = Locator::new(dim);
        let mut simplex = Simplex { keys: Vec::with_capacity(dim * (dim + 1)), weights: Vec::new() };
        let mut splat_vertices = Vec::with_capacity(n * (dim + 1));
        let mut splat_weights = Vec::with_capacity(n * (dim + 1));
        for p in points.chunks_exact(dim) {
            locator.locate(p, &mut simplex);
            for (key, &w) in simplex.keys.chunks_exact(dim).zip(&simplex.weights) {
                splat_vertices.push(table.find_or_insert(key) as u32);
                splat_weights.push(w as f32);
            }
        }
        let values = vec![T::default(); table.len() * value_width];
        Ok(Self { dim, value_width, table, splat_vertices, splat_weights, values })
    }

    /// Deposits `values` (`value_width` per point) at the points the lattice was built from.
    pub fn splat_values(&mut self, values: &[f64]) -> Result<()> {
        let v = self.value_width;
        let n = self.num_inputs();
        if values.len() != n * v {
            return Err(Error::Dimension(format!(
                "expected {} values ({n} points x {v}), got {}",
                n * v,
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("splat values".into()));
        }
        self.values.iter_mut().for_each(|x| *x = T::default());
        let dp1 = self.dim + 1;
        for (i, val) in values.chunks_exact(v).enumerate() {
            for k in 0..dp1 {
                let vertex = self.splat_vertices[i * dp1 + k] as usize;
                let w = T::from_f64(self.splat_weights[i * dp1 + k] as f64);
                let dst = &mut self.values[vertex * v..(vertex + 1) * v];
                for (d, &x) in dst.iter_mut().zip(val) {
                    *d += w * T::from_f64(x);
                }
            }
        }
        Ok(())
    }

    /// Elevates and splats `points` carrying `values`.
    pub fn splat(points: &[f64], dim: usize, values: &[f64], value_width: usize) -> Result<Self> {
        let mut lattice = Self::build(points, dim, value_width)?;
        lattice.splat_values(values)?;
        Ok(lattice)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value_width(&self) -> usize {
        self.value_width
    }

    pub fn num_vertices(&self) -> usize {
        self.table.len()
    }

    pub fn num_inputs(&self) -> usize {
        self.splat_vertices.len() / (self.dim + 1)
    }

    /// Raw accumulator of `vertex`.
    pub fn vertex_value(&self, vertex: usize) -> Vec<f64> {
        self.values[vertex * self.value_width..(vertex + 1) * self.value_width]
            .iter()
            .map(|x| x.to_f64())
            .collect()
    }

    /// Sum of every vertex accumulator, per channel.
    pub fn total_mass(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.value_width];
        for chunk in self.values.chunks_exact(self.value_width) {
            for (t, x) in total.iter_mut().zip(chunk) {
                *t += x.to_f64();
            }
        }
        total
    }

    /// Barycentric (vertex, weight) pairs of splatted input `i`.
    pub fn splat_record(&self, i: usize) -> Vec<(usize, f64)> {
        let dp1 = self.dim + 1;
        (0..dp1)
            .map(|k| (self.splat_vertices[i * dp1 + k] as usize, self.splat_weights[i * dp1 + k] as f64))
            .collect()
    }

    /// Full `D + 1` coordinate key of a vertex.
    pub fn vertex_key(&self, vertex: usize) -> Vec<i32> {
        let mut key = self.table.key(vertex).to_vec();
        key.push(-key.iter().sum::<i32>());
        key
    }

    /// Vertex ids of the two neighbours of every vertex along lattice direction `axis`.
    fn neighbours(&self, axis: usize) -> Vec<[u32; 2]> {
        let d = self.dim;
        (0..self.table.len())
            .into_par_iter()
            .map_init(
                || (vec![0i32; d], vec![0i32; d]),
                |(prev, next), id| {
                    let key = self.table.key(id);
                    for k in 0..d {
                        prev[k] = key[k] - 1;
                        next[k] = key[k] + 1;
                    }
                    if axis < d {
                        prev[axis] = key[axis] + d as i32;
                        next[axis] = key[axis] - d as i32;
                    }
                    let look = |k: &[i32]| self.table.find(k).map_or(EMPTY, |v| v as u32);
                    [look(prev), look(next)]
                },
            )
            .collect()
    }

    /// One `[1, 2, 1] / 4` pass along each of the `D + 1` lattice directions.
    pub fn blur_in_place(&mut self) {
        let v = self.value_width;
        let quarter = T::from_f64(0.25);
        let half = T::from_f64(0.5);
        let mut scratch = vec![T::default(); self.values.len()];
        for axis in 0..=self.dim {
            let nb = self.neighbours(axis);
            let old = &self.values;
            scratch.par_chunks_mut(v).enumerate().for_each(|(id, dst)| {
                let [p, n] = nb[id];
                let own = &old[id * v..(id + 1) * v];
                for c in 0..v {
                    let mut acc = half * own[c];
                    if p != EMPTY {
                        acc += quarter * old[p as usize * v + c];
                    }
                    if n != EMPTY {
                        acc += quarter * old[n as usize * v + c];
                    }
                    dst[c] = acc;
                }
            });
            std::mem::swap(&mut self.values, &mut scratch);
        }
    }

    /// Runs `passes` full blurs without truncation: before each directional
    /// step the missing neighbours of every non-zero vertex are inserted.
    /// Returns `false`, leaving the lattice unusable, once the table would
    /// exceed `max_vertices`.
    pub fn blur_growing(&mut self, passes: usize, max_vertices: usize) -> bool {
        let v = self.value_width;
        let d = self.dim;
        let quarter = T::from_f64(0.25);
        let half = T::from_f64(0.5);
        let zero = T::default();
        let mut key = vec![0i32; d];
        // cached [prev, next] ids per axis; EMPTY until looked up
        let mut nb: Vec<Vec<[u32; 2]>> = vec![Vec::new(); d + 1];
        let mut scratch = Vec::new();
        for _ in 0..passes {
            for axis in 0..=d {
                let cache = &mut nb[axis];
                let existing = self.table.len();
                cache.resize(existing, [EMPTY; 2]);
                for id in 0..existing {
                    if self.values[id * v..(id + 1) * v].iter().all(|x| x.to_f64() == 0.0) {
                        continue;
                    }
                    for side in 0..2 {
                        if cache[id][side] != EMPTY {
                            continue;
                        }
                        let sign = if side == 0 { -1 } else { 1 };
                        let base = self.table.key(id);
                        for k in 0..d {
                            key[k] = base[k] + sign;
                        }
                        if axis < d {
                            key[axis] = base[axis] - sign * d as i32;
                        }
                        let other = self.table.find_or_insert(&key);
                        if self.table.len() > max_vertices {
                            return false;
                        }
                        if other >= cache.len() {
                            cache.resize(other + 1, [EMPTY; 2]);
                        }
                        cache[id][side] = other as u32;
                        cache[other][1 - side] = id as u32;
                    }
                }
                let total = self.table.len();
                self.values.resize(total * v, zero);
                scratch.clear();
                scratch.resize(total * v, zero);
                for id in 0..existing {
                    let own = &self.values[id * v..(id + 1) * v];
                    if own.iter().all(|x| x.to_f64() == 0.0) {
                        continue;
                    }
                    let [p, n] = cache[id];
                    for c in 0..v {
                        let x = own[c];
                        scratch[id * v + c] += half * x;
                        scratch[p as usize * v + c] += quarter * x;
                        scratch[n as usize * v + c] += quarter * x;
                    }
                }
                std::mem::swap(&mut self.values, &mut scratch);
            }
        }
        true
    }

    pub fn blur(mut self) -> Self {
        self.blur_in_place();
        self
    }

    /// Barycentric interpolation of vertex values at arbitrary `queries`.
    /// Vertices missing from the table contribute zero.
    pub fn slice(&self, queries: &[f64]) -> Result<Vec<f64>> {
        let n = check_points(queries, self.dim, "slice").map_err(|e| match e {
            Error::Dimension(m) => Error::Dimension(format!("{m} (lattice dimension {})", self.dim)),
            other => other,
        })?;
        let v = self.value_width;
        let d = self.dim;
        let mut out = vec![0.0; n * v];
        out.par_chunks_mut(v)
            .zip(queries.par_chunks_exact(d))
            .for_each_init(
                || (Locator::new(d), Simplex { keys: Vec::new(), weights: Vec::new() }),
                |(locator, simplex), (dst, q)| {
                    locator.locate(q, simplex);
                    for (key, &w) in simplex.keys.chunks_exact(d).zip(&simplex.weights) {
                        if let Some(vertex) = self.table.find(key) {
                            let src = &self.values[vertex * v..(vertex + 1) * v];
                            for (o, x) in dst.iter_mut().zip(src) {
                                *o += w * x.to_f64();
                            }
                        }
                    }
                },
            );
        Ok(out)
    }

    /// Slices at the splatted inputs using the stored splat records.
    pub fn slice_inputs(&self) -> Vec<f64> {
        let v = self.value_width;
        let dp1 = self.dim + 1;
        let mut out = vec![0.0; self.num_inputs() * v];
        out.par_chunks_mut(v).enumerate().for_each(|(i, dst)| {
            for k in 0..dp1 {
                let vertex = self.splat_vertices[i * dp1 + k] as usize;
                let w = self.splat_weights[i * dp1 + k] as f64;
                for (o, x) in dst.iter_mut().zip(&self.values[vertex * v..(vertex + 1) * v]) {
                    *o += w * x.to_f64();
                }
            }
        });
        out
    }
}

/// Raw splat -> blur -> slice response of a lone unit-valued point at itself.
/// The result depends only on where the point falls inside its simplex.
pub fn self_response(point: &[f64]) -> f64 {
    let dim = point.len();
    let mut locator = Locator::new(dim);
    let mut simplex = Simplex { keys: Vec::new(), weights: Vec::new() };
    locator.locate(point, &mut simplex);
    let dp1 = dim + 1;
    let keys: Vec<&[i32]> = simplex.keys.chunks_exact(dim).collect();
    let find = |key: &[i32]| keys.iter().position(|k| *k == key);
    let mut values = simplex.weights.clone();
    let mut scratch = vec![0.0; dp1];
    let mut prev = vec![0i32; dim];
    let mut next = vec![0i32; dim];
    for axis in 0..=dim {
        for (id, key) in keys.iter().enumerate() {
            for k in 0..dim {
                prev[k] = key[k] - 1;
                next[k] = key[k] + 1;
            }
            if axis < dim {
                prev[axis] = key[axis] + dim as i32;
                next[axis] = key[axis] - dim as i32;
            }
            let mut acc = 0.5 * values[id];
            if let Some(p) = find(&prev) {
                acc += 0.25 * values[p];
            }
            if let Some(n) = find(&next) {
                acc += 0.25 * values[n];
            }
            scratch[id] = acc;
        }
        std::mem::swap(&mut values, &mut scratch);
    }
    simplex.weights.iter().zip(&values).map(|(w, v)| w * v).sum()
}

/// How [`filter_with`] builds and blurs its lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterOptions {
    /// Blur passes on a proportionally finer lattice, grown so that no mass is
    /// truncated. 0 selects the plain single-pass lattice.
    pub refine_passes: usize,
    /// Vertex budget for the grown lattice; past it the plain lattice is used.
    pub max_vertices: usize,
    /// Per-input share of the budget, which keeps failed attempts linear in N.
    pub max_vertices_per_input: usize,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self { refine_passes: 2, max_vertices: 1 << 21, max_vertices_per_input: 1024 }
    }
}

impl FilterOptions {
    /// Single splat + blur + slice over the touched vertices only.
    pub fn plain() -> Self {
        Self { refine_passes: 0, max_vertices: 0, max_vertices_per_input: 0 }
    }

    /// Input scale that keeps the kernel at unit variance over `passes` blurs.
    /// Splat and slice each contribute 1/8 per axis, one blur pass 3/4.
    pub fn refine_scale(passes: usize) -> f64 {
        (0.75 * passes as f64 + 0.25).sqrt()
    }
}

/// Lattice approximation of `q_i = sum_j exp(-|x_i - y_j|^2 / 2) v_j`,
/// rescaled by [`kernel_gain`]. Uses [`FilterOptions::default`].
pub fn filter(
    train_points: &[f64],
    train_values: &[f64],
    dim: usize,
    value_width: usize,
    query_points: &[f64],
) -> Result<Vec<f64>> {
    filter_with::<f32>(train_points, train_values, dim, value_width, query_points, FilterOptions::default())
}

pub fn filter_with<T: Accum>(
    train_points: &[f64],
    train_values: &[f64],
    dim: usize,
    value_width: usize,
    query_points: &[f64],
    opts: FilterOptions,
) -> Result<Vec<f64>> {
    let n_train = check_points(train_points, dim, "splat")?;
    check_points(query_points, dim, "slice")?;
    if train_values.len() != n_train * value_width {
        return Err(Error::Dimension(format!(
            "expected {} values ({n_train} points x {value_width}), got {}",
            n_train * value_width,
            train_values.len()
        )));
    }
    if opts.refine_passes > 0 {
        let alpha = FilterOptions::refine_scale(opts.refine_passes);
        let scaled: Vec<f64> = train_points.iter().map(|x| x * alpha).collect();
        let mut lattice = PermutohedralLattice::<T>::splat(&scaled, dim, train_values, value_width)?;
        let budget = opts.max_vertices.min(opts.max_vertices_per_input.saturating_mul(n_train));
        // sparse inputs grow by far more than 4x; skip the attempt outright
        if lattice.num_vertices() * 4 <= budget && lattice.blur_growing(opts.refine_passes, budget)
        {
            let queries: Vec<f64> = query_points.iter().map(|x| x * alpha).collect();
            let gain = kernel_gain(dim) * alpha.powi(dim as i32);
            let mut out = lattice.slice(&queries)?;
            out.iter_mut().for_each(|x| *x *= gain);
            return Ok(out);
        }
        log::debug!("grown lattice over budget for {n_train} points in {dim}-D, using plain lattice");
    }
    // queries join the vertex table with zero values so blurred mass reaches them
    let points = [train_points, query_points].concat();
    let mut values = train_values.to_vec();
    values.resize(values.len() + query_points.len() / dim * value_width, 0.0);
    let mut lattice = PermutohedralLattice::<T>::splat(&points, dim, &values, value_width)?;
    lattice.blur_in_place();
    let gain = kernel_gain(dim);
    let mut out = lattice.slice(query_points)?;
    out.iter_mut().for_each(|x| *x *= gain);
    Ok(out)
}
