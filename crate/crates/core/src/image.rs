//! Raster types and file I/O for images and label maps.
//!
//! Images decode from PNG or binary PPM (P6); label maps from single-channel
//! PNG or binary PGM (P5) with 255 reserved for VOID.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageReader};

use crate::error::{Error, Result};

/// Label value for unlabeled pixels.
pub const VOID: u8 = 255;

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRGB {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("image must be non-empty, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    /// Luma with 0.299/0.587/0.114 weights, as f64 in [0, 255].
    pub fn gray(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| gray_value(p)).collect()
    }

    /// Rotates by 180 degrees.
    pub fn rotated_180(&self) -> Self {
        let mut pixels = self.pixels.clone();
        pixels.reverse();
        Self { width: self.width, height: self.height, pixels }
    }
}

#[inline]
pub fn gray_value(p: [u8; 3]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// Per-pixel class indices in `0..num_classes`, or [`VOID`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
    num_classes: usize,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("label map must be non-empty, got {width}x{height}")));
        }
        if labels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        if num_classes == 0 || num_classes > VOID as usize {
            return Err(Error::InvalidParam(format!(
                "num_classes must be in 1..=255, got {num_classes}"
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l != VOID && l as usize >= num_classes) {
            return Err(Error::InvalidParam(format!(
                "label {} at pixel ({}, {}) is outside 0..{num_classes}",
                labels[i],
                i % width,
                i / width
            )));
        }
        Ok(Self { width, height, labels, num_classes })
    }

    pub fn filled(width: usize, height: usize, label: u8, num_classes: usize) -> Result<Self> {
        Self::new(width, height, vec![label; width * height], num_classes)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn is_fully_void(&self) -> bool {
        self.labels.iter().all(|&l| l == VOID)
    }

    /// Normalized class histogram over non-VOID pixels, `None` when fully VOID.
    pub fn class_histogram(&self) -> Option<Vec<f64>> {
        let mut hist = vec![0.0; self.num_classes];
        let mut total = 0usize;
        for &l in &self.labels {
            if l != VOID {
                hist[l as usize] += 1.0;
                total += 1;
            }
        }
        if total == 0 {
            return None;
        }
        let inv = 1.0 / total as f64;
        hist.iter_mut().for_each(|h| *h *= inv);
        Some(hist)
    }

    /// Nearest-neighbor resample to `width` x `height`.
    pub fn resample_nearest(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            let sy = sy.min(self.height - 1);
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                labels.push(self.labels[sy * self.width + sx.min(self.width - 1)]);
            }
        }
        Self { width, height, labels, num_classes: self.num_classes }
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format().is_none() {
        return Err(Error::Decode { path: path.to_path_buf(), msg: "unsupported raster format".into() });
    }
    reader
        .decode()
        .map_err(|e| Error::Decode { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRGB> {
    let path = path.as_ref();
    let rgb = decode(path)?.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = rgb.pixels().map(|p| p.0).collect();
    ImageRGB::new(w, h, pixels)
        .map_err(|e| Error::Decode { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn load_labelmap(path: impl AsRef<Path>, num_classes: usize) -> Result<LabelMap> {
    let path = path.as_ref();
    let luma = match decode(path)? {
        DynamicImage::ImageLuma8(buf) => buf,
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                msg: format!("label map must be single-channel 8-bit, got {:?}", other.color()),
            })
        }
    };
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let labels = luma.into_raw();
    for (i, &value) in labels.iter().enumerate() {
        if value != VOID && value as usize >= num_classes {
            return Err(Error::LabelOutOfRange {
                path: path.to_path_buf(),
                value,
                x: i % w,
                y: i / w,
                num_classes,
            });
        }
    }
    LabelMap::new(w, h, labels, num_classes)
        .map_err(|e| Error::Decode { path: path.to_path_buf(), msg: e.to_string() })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn save_png(image: &ImageRGB, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = image.pixels.iter().flatten().copied().collect();
    image::save_buffer(
        path,
        &raw,
        image.width as u32,
        image.height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Encode { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn save_ppm(image: &ImageRGB, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let raw: Vec<u8> = image.pixels.iter().flatten().copied().collect();
    write!(out, "P6\n{} {}\n255\n", image.width, image.height)
        .and_then(|_| out.write_all(&raw))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn save_pgm(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    write!(out, "P5\n{} {}\n255\n", map.width, map.height)
        .and_then(|_| out.write_all(&map.labels))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn save_label_png(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    image::save_buffer(
        path,
        &map.labels,
        map.width as u32,
        map.height as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| Error::Encode { path: path.to_path_buf(), msg: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_two_pixel_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        fs::write(&path, b"P6\n2 1\n255\n\xff\x00\x00\x00\x00\xff").unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.pixels(), &[[255, 0, 0], [0, 0, 255]]);
    }

    #[test]
    fn uniform_gray_png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = ImageRGB::filled(16, 16, [128, 128, 128]).unwrap();
        save_png(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert!(back.pixels().iter().all(|&p| p == [128, 128, 128]));
        assert_eq!(back, img);
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_image("/nonexistent/nowhere.png").unwrap_err();
        assert!(err.to_string().contains("file not found"), "{err}");
        assert!(err.to_string().contains("/nonexistent/nowhere.png"));
    }

    #[test]
    fn garbage_file_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        fs::write(&path, b"definitely not an image").unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(matches!(err, Error::Decode { .. }), "{err}");
    }

    #[test]
    fn labelmap_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.pgm");
        fs::write(&path, b"P5\n2 2\n255\n\x00\x01\x01\x00").unwrap();
        let map = load_labelmap(&path, 2).unwrap();
        assert_eq!(map.labels(), &[0, 1, 1, 0]);
        assert!(!map.is_fully_void());
    }

    #[test]
    fn labelmap_out_of_range_names_value_and_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.pgm");
        fs::write(&path, b"P5\n2 1\n255\n\x00\x07").unwrap();
        let err = load_labelmap(&path, 5).unwrap_err();
        match err {
            Error::LabelOutOfRange { value, x, y, .. } => assert_eq!((value, x, y), (7, 1, 0)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn labelmap_all_void() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.png");
        save_label_png(&LabelMap::filled(3, 3, VOID, 4).unwrap(), &path).unwrap();
        let map = load_labelmap(&path, 4).unwrap();
        assert!(map.is_fully_void());
        assert!(map.class_histogram().is_none());
    }

    #[test]
    fn labelmap_rejects_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        save_png(&ImageRGB::filled(2, 2, [1, 2, 3]).unwrap(), &path).unwrap();
        assert!(matches!(load_labelmap(&path, 4), Err(Error::Decode { .. })));
    }

    #[test]
    fn pgm_writer_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.pgm");
        let map = LabelMap::new(3, 2, vec![0, 1, 2, VOID, 1, 0], 3).unwrap();
        save_pgm(&map, &path).unwrap();
        assert_eq!(load_labelmap(&path, 3).unwrap(), map);
    }

    #[test]
    fn nearest_resample_keeps_categories() {
        let map = LabelMap::new(2, 2, vec![0, 1, 2, 3], 4).unwrap();
        let up = map.resample_nearest(4, 4);
        assert_eq!(up.labels()[0..4], [0, 0, 1, 1]);
        assert_eq!(up.labels()[12..16], [2, 2, 3, 3]);
    }
}
