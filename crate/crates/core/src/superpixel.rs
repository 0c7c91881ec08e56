use crate::error::{Error, Result};
use crate::image::ImageRGB;

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Dense assignment of every pixel to exactly one superpixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelPartition {
    width: usize,
    height: usize,
    assignment: Vec<u32>,
    extents: Vec<Extent>,
    sizes: Vec<usize>,
}

impl SuperpixelPartition {
    /// Builds a partition from a per-pixel assignment. Indices must be dense
    /// and every superpixel non-empty.
    pub fn from_assignment(width: usize, height: usize, assignment: Vec<u32>) -> Result<Self> {
        if assignment.len() != width * height || width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "assignment of {} entries for {width}x{height}",
                assignment.len()
            )));
        }
        let count = assignment.iter().map(|&a| a as usize + 1).max().unwrap_or(0);
        let mut extents = vec![Extent { x0: usize::MAX, y0: usize::MAX, x1: 0, y1: 0 }; count];
        let mut sizes = vec![0usize; count];
        for (i, &a) in assignment.iter().enumerate() {
            let (x, y) = (i % width, i / width);
            let e = &mut extents[a as usize];
            e.x0 = e.x0.min(x);
            e.y0 = e.y0.min(y);
            e.x1 = e.x1.max(x + 1);
            e.y1 = e.y1.max(y + 1);
            sizes[a as usize] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidParam(format!("superpixel {empty} is empty")));
        }
        Ok(Self { width, height, assignment, extents, sizes })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn extents(&self) -> &[Extent] {
        &self.extents
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    #[inline]
    pub fn superpixel_of(&self, x: usize, y: usize) -> usize {
        self.assignment[y * self.width + x] as usize
    }

    /// Pixel indices grouped by superpixel.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members: Vec<Vec<usize>> =
            self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &a) in self.assignment.iter().enumerate() {
            members[a as usize].push(i);
        }
        members
    }
}

/// Strategy for splitting an image into superpixels.
pub trait Partitioner: Send + Sync {
    fn partition(&self, image: &ImageRGB) -> SuperpixelPartition;
}

/// Regular tiling into `cell` x `cell` squares, row-major; border cells may be smaller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridPartitioner {
    pub cell: usize,
}

impl GridPartitioner {
    pub fn new(cell: usize) -> Result<Self> {
        if cell == 0 {
            return Err(Error::InvalidParam("grid cell must be at least 1 pixel".into()));
        }
        Ok(Self { cell })
    }
}

impl Partitioner for GridPartitioner {
    fn partition(&self, image: &ImageRGB) -> SuperpixelPartition {
        grid_partition(image.width(), image.height(), self.cell)
    }
}

pub fn grid_superpixels(image: &ImageRGB, cell: usize) -> Result<SuperpixelPartition> {
    Ok(GridPartitioner::new(cell)?.partition(image))
}

pub(crate) fn grid_partition(width: usize, height: usize, cell: usize) -> SuperpixelPartition {
    let cols = width.div_ceil(cell);
    let rows = height.div_ceil(cell);
    let mut assignment = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = y / cell;
        for x in 0..width {
            assignment.push((row * cols + x / cell) as u32);
        }
    }
    let mut extents = Vec::with_capacity(rows * cols);
    let mut sizes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let e = Extent {
                x0: c * cell,
                y0: r * cell,
                x1: ((c + 1) * cell).min(width),
                y1: ((r + 1) * cell).min(height),
            };
            sizes.push((e.x1 - e.x0) * (e.y1 - e.y0));
            extents.push(e);
        }
    }
    SuperpixelPartition { width, height, assignment, extents, sizes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(w: usize, h: usize) -> ImageRGB {
        ImageRGB::filled(w, h, [0, 0, 0]).unwrap()
    }

    #[test]
    fn four_by_four_cell_two() {
        let p = grid_superpixels(&image(4, 4), 2).unwrap();
        assert_eq!(p.count(), 4);
        assert!(p.sizes().iter().all(|&s| s == 4));
        assert_eq!(p.superpixel_of(3, 0), 1);
        assert_eq!(p.superpixel_of(0, 3), 2);
    }

    #[test]
    fn five_by_four_has_narrow_right_column() {
        let p = grid_superpixels(&image(5, 4), 2).unwrap();
        assert_eq!(p.count(), 6);
        assert_eq!(p.sizes(), &[4, 4, 2, 4, 4, 2]);
        let e = p.extents()[2];
        assert_eq!((e.x1 - e.x0, e.y1 - e.y0), (1, 2));
    }

    #[test]
    fn cell_larger_than_image() {
        let p = grid_superpixels(&image(3, 3), 5).unwrap();
        assert_eq!(p.count(), 1);
        assert_eq!(p.sizes(), &[9]);
    }

    #[test]
    fn zero_cell_rejected() {
        assert!(grid_superpixels(&image(3, 3), 0).is_err());
    }

    #[test]
    fn grid_matches_generic_construction() {
        let p = grid_superpixels(&image(13, 7), 4).unwrap();
        let q = SuperpixelPartition::from_assignment(13, 7, p.assignment().to_vec()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn from_assignment_rejects_gaps() {
        assert!(SuperpixelPartition::from_assignment(2, 1, vec![0, 2]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn grid_covers_every_pixel(w in 1usize..40, h in 1usize..40, cell in 1usize..20) {
            let p = grid_superpixels(&image(w, h), cell).unwrap();
            proptest::prop_assert_eq!(p.sizes().iter().sum::<usize>(), w * h);
            proptest::prop_assert_eq!(p.count(), w.div_ceil(cell) * h.div_ceil(cell));
            let mut seen = vec![false; p.count()];
            for &a in p.assignment() { seen[a as usize] = true; }
            proptest::prop_assert!(seen.into_iter().all(|s| s));
        }
    }
}
