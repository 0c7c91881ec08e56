//! Seeded synthetic scene corpus: textured class regions with exact labels.
//!
//! Every class has its own color and stripe texture. Scenes split at a random
//! horizon into an upper class (from the first half of the classes) and a lower
//! class (from the second half), and often carry one rectangular object of
//! another class. Output is byte-identical for a given spec.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{save_pgm, save_png, ImageRGB, LabelMap};
use crate::palette::Palette;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub train: usize,
    pub query: usize,
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    /// Keeps this class to a small patch (about 2% of the image) in half the scenes.
    pub rare_class: Option<u8>,
    /// Extra training images whose appearance is unrelated to their labels.
    pub distractors: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            train: 60,
            query: 10,
            width: 128,
            height: 128,
            num_classes: 4,
            rare_class: None,
            distractors: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub name: String,
    pub image: ImageRGB,
    pub labels: LabelMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<SynthImage>,
    pub query: Vec<SynthImage>,
    pub palette: Palette,
}

/// Files written by [`write_corpus`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPaths {
    pub train_manifest: PathBuf,
    pub query_manifest: PathBuf,
    pub palette: PathBuf,
}

struct ClassLook {
    rgb: [f64; 3],
    /// Unit vector across the stripes.
    dir: [f64; 2],
    period: f64,
}

fn class_look(c: usize, num_classes: usize) -> ClassLook {
    let hue = c as f64 / num_classes as f64 * 2.0 * PI;
    let rgb = [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0].map(|phase| 128.0 + 80.0 * (hue + phase).cos());
    let angle = c as f64 * PI / num_classes as f64;
    ClassLook { rgb, dir: [angle.cos(), angle.sin()], period: 5.0 + 3.0 * (c % 4) as f64 }
}

fn validate(spec: &SynthSpec) -> Result<()> {
    if spec.num_classes < 2 || spec.num_classes > 255 {
        return Err(Error::InvalidParam(format!("synthetic corpus needs 2..=255 classes, got {}", spec.num_classes)));
    }
    if spec.width < 8 || spec.height < 8 {
        return Err(Error::InvalidParam(format!("image size {}x{} is below 8x8", spec.width, spec.height)));
    }
    if let Some(r) = spec.rare_class {
        if r as usize >= spec.num_classes || spec.num_classes < 3 {
            return Err(Error::InvalidParam(format!("rare class {r} needs at least 3 classes and an index below L")));
        }
    }
    Ok(())
}

/// Class layout of one scene, painted into `labels`.
fn layout(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Vec<u8> {
    let (w, h, l) = (spec.width, spec.height, spec.num_classes);
    let usable: Vec<u8> = (0..l as u8).filter(|&c| Some(c) != spec.rare_class).collect();
    let half = usable.len() / 2;
    let upper = usable[rng.random_range(0..half.max(1))];
    let lower = usable[half + rng.random_range(0..usable.len() - half)];
    let horizon = (h as f64 * rng.random_range(0.35..0.65)) as usize;
    let mut labels: Vec<u8> = (0..w * h).map(|i| if i / w < horizon { upper } else { lower }).collect();
    let paint = |labels: &mut Vec<u8>, class: u8, x0: usize, y0: usize, rw: usize, rh: usize| {
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                labels[y * w + x] = class;
            }
        }
    };
    if rng.random_bool(0.6) {
        let others: Vec<u8> = usable.iter().copied().filter(|&c| c != upper && c != lower).collect();
        let class = if others.is_empty() { usable[rng.random_range(0..usable.len())] } else { others[rng.random_range(0..others.len())] };
        let rw = (w as f64 * rng.random_range(0.25..0.45)) as usize;
        let rh = (h as f64 * rng.random_range(0.25..0.45)) as usize;
        let x0 = rng.random_range(0..=w - rw);
        let y0 = rng.random_range(0..=h - rh);
        paint(&mut labels, class, x0, y0, rw, rh);
    }
    if let Some(r) = spec.rare_class {
        if rng.random_bool(0.5) {
            let side = ((0.02 * (w * h) as f64).sqrt() as usize).clamp(2, w.min(h));
            let x0 = rng.random_range(0..=w - side);
            let y0 = rng.random_range(0..=h - side);
            paint(&mut labels, r, x0, y0, side, side);
        }
    }
    labels
}

fn render(rng: &mut ChaCha8Rng, labels: &[u8], spec: &SynthSpec) -> Result<ImageRGB> {
    let looks: Vec<ClassLook> = (0..spec.num_classes).map(|c| class_look(c, spec.num_classes)).collect();
    let noise = Normal::new(0.0, 8.0).expect("valid std");
    let w = spec.width;
    let pixels = labels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let look = &looks[c as usize];
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let stripe = 18.0 * (2.0 * PI * (x * look.dir[0] + y * look.dir[1]) / look.period).sin();
            look.rgb.map(|base| (base + stripe + noise.sample(rng)).round().clamp(0.0, 255.0) as u8)
        })
        .collect();
    ImageRGB::new(spec.width, spec.height, pixels)
}

/// Blocks of random color, labeled with one class throughout.
fn distractor(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Result<(ImageRGB, Vec<u8>)> {
    let (w, h) = (spec.width, spec.height);
    let block = 8;
    let bw = w.div_ceil(block);
    let colors: Vec<[u8; 3]> = (0..bw * h.div_ceil(block)).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let pixels = (0..w * h).map(|i| colors[(i / w / block) * bw + (i % w) / block]).collect();
    let class = rng.random_range(0..spec.num_classes) as u8;
    Ok((ImageRGB::new(w, h, pixels)?, vec![class; w * h]))
}

fn scene(spec: &SynthSpec, stream: u64, name: String) -> Result<SynthImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let labels = layout(&mut rng, spec);
    let image = render(&mut rng, &labels, spec)?;
    Ok(SynthImage { name, image, labels: LabelMap::new(spec.width, spec.height, labels, spec.num_classes)? })
}

/// Builds the corpus in memory. Training scenes, query scenes and distractors
/// use separate random streams, so changing one count leaves the others intact.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    validate(spec)?;
    let mut train = (0..spec.train)
        .map(|i| scene(spec, i as u64, format!("train_{i:03}")))
        .collect::<Result<Vec<_>>>()?;
    let query = (0..spec.query)
        .map(|i| scene(spec, (1 << 32) + i as u64, format!("query_{i:03}")))
        .collect::<Result<Vec<_>>>()?;
    for i in 0..spec.distractors {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream((2 << 32) + i as u64);
        let (image, labels) = distractor(&mut rng, spec)?;
        let labels = LabelMap::new(spec.width, spec.height, labels, spec.num_classes)?;
        train.push(SynthImage { name: format!("distractor_{i:03}"), image, labels });
    }
    Ok(SynthCorpus { train, query, palette: Palette::default_for(spec.num_classes) })
}

/// Writes PNG images, PGM label maps, `train.txt`, `query.txt` and `palette.csv` into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: impl AsRef<Path>) -> Result<SynthPaths> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write_set = |set: &[SynthImage], manifest: &str| -> Result<PathBuf> {
        let mut body = String::new();
        for item in set {
            let img = format!("{}.png", item.name);
            let lab = format!("{}_labels.pgm", item.name);
            save_png(&item.image, dir.join(&img))?;
            save_pgm(&item.labels, dir.join(&lab))?;
            body.push_str(&format!("{img}\t{lab}\n"));
        }
        let path = dir.join(manifest);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };
    let train_manifest = write_set(&corpus.train, "train.txt")?;
    let query_manifest = write_set(&corpus.query, "query.txt")?;
    let palette = dir.join("palette.csv");
    corpus.palette.save(&palette)?;
    Ok(SynthPaths { train_manifest, query_manifest, palette })
}

pub fn make_synthetic(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<SynthPaths> {
    write_corpus(&generate(spec)?, dir)
}

/// Two-color image split down the middle, with per-pixel costs that favor the
/// true side except on a `flip_fraction` of pixels. Returns the image, the
/// flat `width * height * 2` costs and the true labels.
pub fn flipped_two_region(
    seed: u64,
    width: usize,
    height: usize,
    flip_fraction: f64,
) -> Result<(ImageRGB, Vec<f64>, LabelMap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 4.0).expect("valid std");
    let mut pixels = Vec::with_capacity(width * height);
    let mut truth = Vec::with_capacity(width * height);
    let mut costs = Vec::with_capacity(width * height * 2);
    let (good, bad) = (-(0.7f64.ln()), -(0.3f64.ln()));
    for i in 0..width * height {
        let class = u8::from(i % width >= width / 2);
        let base = if class == 0 { [200.0, 60.0, 50.0] } else { [40.0, 90.0, 190.0] };
        pixels.push(base.map(|b: f64| (b + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8));
        let shown = if rng.random_bool(flip_fraction) { 1 - class } else { class };
        costs.extend(if shown == 0 { [good, bad] } else { [bad, good] });
        truth.push(class);
    }
    Ok((ImageRGB::new(width, height, pixels)?, costs, LabelMap::new(width, height, truth, 2)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec { train: 4, query: 2, width: 32, height: 24, ..Default::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthSpec { seed: 8, ..small() };
        assert_ne!(generate(&small()).unwrap().train[0], generate(&other).unwrap().train[0]);
    }

    #[test]
    fn streams_are_independent_of_counts() {
        let more = SynthSpec { train: 6, distractors: 3, ..small() };
        let a = generate(&small()).unwrap();
        let b = generate(&more).unwrap();
        assert_eq!(a.train[..4], b.train[..4]);
        assert_eq!(a.query, b.query);
        assert_eq!(b.train.len(), 9);
    }

    #[test]
    fn labels_cover_image_with_valid_classes() {
        let c = generate(&small()).unwrap();
        for item in c.train.iter().chain(&c.query) {
            assert_eq!(item.labels.labels().len(), 32 * 24);
            assert!(item.labels.labels().iter().all(|&y| y < 4));
        }
    }

    #[test]
    fn rare_class_stays_small() {
        let spec = SynthSpec { train: 20, width: 64, height: 64, rare_class: Some(3), ..Default::default() };
        let c = generate(&spec).unwrap();
        let mut rare = 0usize;
        let mut all = 0usize;
        for item in &c.train {
            rare += item.labels.labels().iter().filter(|&&y| y == 3).count();
            all += item.labels.labels().len();
        }
        let frac = rare as f64 / all as f64;
        assert!(frac > 0.0 && frac < 0.03, "{frac}");
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(generate(&SynthSpec { num_classes: 1, ..small() }).is_err());
        assert!(generate(&SynthSpec { rare_class: Some(9), ..small() }).is_err());
        assert!(generate(&SynthSpec { width: 4, ..small() }).is_err());
    }

    #[test]
    fn writes_loadable_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let paths = make_synthetic(&small(), dir.path()).unwrap();
        let ds = crate::dataset::load_dataset(&paths.train_manifest, 8, 4).unwrap();
        let mem = generate(&small()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.entries[0].image, mem.train[0].image);
        assert_eq!(ds.entries[0].labels.as_ref(), Some(&mem.train[0].labels));
        assert_eq!(Palette::load(&paths.palette).unwrap(), mem.palette);
    }

    #[test]
    fn flip_instance_has_requested_noise() {
        let (img, costs, truth) = flipped_two_region(1, 40, 30, 0.1).unwrap();
        assert_eq!(img.pixels().len(), 1200);
        let wrong = costs
            .chunks(2)
            .zip(truth.labels())
            .filter(|(c, &t)| u8::from(c[1] < c[0]) != t)
            .count();
        let frac = wrong as f64 / 1200.0;
        assert!((0.06..0.14).contains(&frac), "{frac}");
    }
}
