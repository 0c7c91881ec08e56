//! Training/query corpora: image + label map + superpixel partition per entry.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{load_image, load_labelmap, ImageRGB, LabelMap, VOID};
use crate::palette::Palette;
use crate::superpixel::{GridPartitioner, Partitioner, SuperpixelPartition};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub image: ImageRGB,
    pub labels: Option<LabelMap>,
    pub partition: SuperpixelPartition,
    /// Majority label per superpixel; `None` when every member pixel is VOID.
    pub superpixel_labels: Vec<Option<u8>>,
}

impl Entry {
    pub fn new(
        name: impl Into<String>,
        image: ImageRGB,
        labels: Option<LabelMap>,
        partitioner: &dyn Partitioner,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if (l.width(), l.height()) != (image.width(), image.height()) {
                return Err(Error::Dimension(format!(
                    "label map {}x{} does not match image {}x{}",
                    l.width(),
                    l.height(),
                    image.width(),
                    image.height()
                )));
            }
        }
        let partition = partitioner.partition(&image);
        let superpixel_labels = match &labels {
            Some(l) => majority_labels(&partition, l),
            None => vec![None; partition.count()],
        };
        Ok(Self { name: name.into(), image, labels, partition, superpixel_labels })
    }

    pub fn usable_superpixels(&self) -> usize {
        self.superpixel_labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Mode of the non-VOID labels inside each superpixel, ties toward the smaller class.
pub fn majority_labels(partition: &SuperpixelPartition, labels: &LabelMap) -> Vec<Option<u8>> {
    let l = labels.num_classes();
    let mut counts = vec![0u32; partition.count() * l];
    for (&sp, &lab) in partition.assignment().iter().zip(labels.labels()) {
        if lab != VOID {
            counts[sp as usize * l + lab as usize] += 1;
        }
    }
    counts
        .chunks(l)
        .map(|c| {
            let (best, &n) = c
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("at least one class");
            (n > 0).then_some(best as u8)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<Entry>,
    pub num_classes: usize,
    pub palette: Palette,
}

impl Dataset {
    pub fn new(entries: Vec<Entry>, num_classes: usize, palette: Palette) -> Self {
        Self { entries, num_classes, palette }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_superpixels(&self) -> usize {
        self.entries.iter().map(|e| e.partition.count()).sum()
    }
}

/// One manifest row: image path and an optional label path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestLine {
    pub line: usize,
    pub image: PathBuf,
    pub labels: Option<PathBuf>,
}

/// Parses `image_path<TAB>label_path` rows. Relative paths resolve against the
/// manifest's directory; blank lines and `#` comments are skipped.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestLine>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut rows = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let image = fields.next().map(str::trim).filter(|s| !s.is_empty()).ok_or_else(|| {
            Error::Parse { path: path.to_path_buf(), line: n + 1, msg: "missing image path".into() }
        })?;
        let labels = fields.next().map(str::trim).filter(|s| !s.is_empty());
        if fields.next().is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: "expected `image_path<TAB>label_path`".into(),
            });
        }
        rows.push(ManifestLine {
            line: n + 1,
            image: base.join(image),
            labels: labels.map(|l| base.join(l)),
        });
    }
    Ok(rows)
}

/// Loads every manifest entry with a regular grid partition. The first failing
/// row (in manifest order) aborts the load.
pub fn load_dataset(manifest: impl AsRef<Path>, cell: usize, num_classes: usize) -> Result<Dataset> {
    load_dataset_with(manifest, &GridPartitioner::new(cell)?, num_classes, None)
}

pub fn load_dataset_with(
    manifest: impl AsRef<Path>,
    partitioner: &dyn Partitioner,
    num_classes: usize,
    palette: Option<Palette>,
) -> Result<Dataset> {
    let manifest = manifest.as_ref();
    let rows = parse_manifest(manifest)?;
    let entries = rows
        .par_iter()
        .map(|row| {
            let load = || -> Result<Entry> {
                let image = load_image(&row.image)?;
                let labels = row.labels.as_ref().map(|p| load_labelmap(p, num_classes)).transpose()?;
                let name = row
                    .image
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("entry{}", row.line));
                Entry::new(name, image, labels, partitioner)
            };
            load().map_err(|e| Error::Manifest {
                path: manifest.to_path_buf(),
                line: row.line,
                source: Box::new(e),
            })
        })
        .collect::<Vec<_>>();
    let entries = entries.into_iter().collect::<Result<Vec<_>>>()?;
    let palette = palette.unwrap_or_else(|| Palette::default_for(num_classes));
    Ok(Dataset::new(entries, num_classes, palette))
}
