use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImageRGB, LabelMap, VOID};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaletteEntry {
    pub name: String,
    pub rgb: [u8; 3],
}

/// Class index -> display color and name. CSV form is `index,name,r,g,b`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Palette {
    entries: Vec<Option<PaletteEntry>>,
}

const DEFAULT_COLORS: [[u8; 3]; 16] = [
    [128, 64, 128],
    [70, 130, 180],
    [107, 142, 35],
    [220, 20, 60],
    [250, 170, 30],
    [152, 251, 152],
    [0, 0, 142],
    [190, 153, 153],
    [102, 102, 156],
    [244, 35, 232],
    [220, 220, 0],
    [0, 80, 100],
    [119, 11, 32],
    [255, 255, 255],
    [70, 70, 70],
    [0, 60, 100],
];

impl Palette {
    /// Distinct colors for `num_classes` classes named `class<i>`.
    pub fn default_for(num_classes: usize) -> Self {
        let entries = (0..num_classes)
            .map(|i| {
                let base = DEFAULT_COLORS[i % DEFAULT_COLORS.len()];
                // shift repeats so colors stay unique
                let k = (i / DEFAULT_COLORS.len()) as u8;
                let rgb = [base[0].wrapping_add(k * 37), base[1].wrapping_add(k * 53), base[2]];
                Some(PaletteEntry { name: format!("class{i}"), rgb })
            })
            .collect();
        Self { entries }
    }

    pub fn insert(&mut self, index: u8, name: impl Into<String>, rgb: [u8; 3]) {
        let i = index as usize;
        if self.entries.len() <= i {
            self.entries.resize(i + 1, None);
        }
        self.entries[i] = Some(PaletteEntry { name: name.into(), rgb });
    }

    pub fn get(&self, index: u8) -> Option<&PaletteEntry> {
        self.entries.get(index as usize).and_then(|e| e.as_ref())
    }

    pub fn len(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut palette = Palette::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("index") {
                continue;
            }
            let bad = |msg: &str| Error::Parse { path: path.to_path_buf(), line: n + 1, msg: msg.into() };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(bad("expected `index,name,r,g,b`"));
            }
            let index: u8 = fields[0].parse().map_err(|_| bad("bad class index"))?;
            if index == VOID {
                return Err(bad("index 255 is reserved for VOID"));
            }
            let mut rgb = [0u8; 3];
            for (c, f) in rgb.iter_mut().zip(&fields[2..]) {
                *c = f.parse().map_err(|_| bad("color components must be 0..=255"))?;
            }
            palette.insert(index, fields[1], rgb);
        }
        Ok(palette)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,name,r,g,b\n");
        for (i, e) in self.entries.iter().enumerate() {
            if let Some(e) = e {
                let _ = writeln!(out, "{i},{},{},{},{}", e.name, e.rgb[0], e.rgb[1], e.rgb[2]);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Maps colors back to class indices; black and unknown colors become VOID.
    pub fn inverse(&self, image: &ImageRGB, num_classes: usize) -> Result<LabelMap> {
        let lookup: HashMap<[u8; 3], u8> = self
            .entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|e| (e.rgb, i as u8)))
            .collect();
        let labels = image
            .pixels()
            .iter()
            .map(|p| lookup.get(p).copied().unwrap_or(VOID))
            .collect();
        LabelMap::new(image.width(), image.height(), labels, num_classes)
    }
}

/// Per-pixel palette lookup; VOID renders black.
pub fn render_labelmap(map: &LabelMap, palette: &Palette) -> Result<ImageRGB> {
    let pixels = map
        .labels()
        .iter()
        .map(|&l| {
            if l == VOID {
                Ok([0, 0, 0])
            } else {
                palette.get(l).map(|e| e.rgb).ok_or(Error::MissingPalette(l))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ImageRGB::new(map.width(), map.height(), pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_single_class_red() {
        let mut p = Palette::default();
        p.insert(0, "thing", [255, 0, 0]);
        let img = render_labelmap(&LabelMap::filled(3, 2, 0, 1).unwrap(), &p).unwrap();
        assert!(img.pixels().iter().all(|&c| c == [255, 0, 0]));
    }

    #[test]
    fn void_renders_black() {
        let p = Palette::default_for(2);
        let map = LabelMap::new(2, 1, vec![VOID, 1], 2).unwrap();
        let img = render_labelmap(&map, &p).unwrap();
        assert_eq!(img.pixels()[0], [0, 0, 0]);
    }

    #[test]
    fn missing_entry_is_an_error() {
        let p = Palette::default_for(1);
        let map = LabelMap::new(2, 1, vec![0, 1], 2).unwrap();
        assert!(matches!(render_labelmap(&map, &p), Err(Error::MissingPalette(1))));
    }

    #[test]
    fn render_then_inverse_round_trips() {
        let p = Palette::default_for(20);
        let labels: Vec<u8> = (0..40).map(|i| if i % 7 == 0 { VOID } else { (i % 20) as u8 }).collect();
        let map = LabelMap::new(8, 5, labels, 20).unwrap();
        let img = render_labelmap(&map, &p).unwrap();
        assert_eq!(p.inverse(&img, 20).unwrap(), map);
    }

    #[test]
    fn csv_round_trip() {
        let p = Palette::default_for(5);
        let q = Palette::parse(&p.to_csv(), Path::new("mem")).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let err = Palette::parse("0,sky,1,2\n", Path::new("p.csv")).unwrap_err();
        assert!(err.to_string().contains("p.csv:1"), "{err}");
        assert!(Palette::parse("255,void,0,0,0\n", Path::new("p.csv")).is_err());
    }
}
