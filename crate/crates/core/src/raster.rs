//! Row-major 2D rasters and half-open pixel boxes.

use alloc::vec::Vec;
use core::ops::{Index, IndexMut};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Raster { width, height, data: alloc::vec![value; width * height] }
    }

    /// Copies the `bbox` window out of `self`.
    pub fn crop(&self, bbox: &BBox) -> Raster<T> {
        let mut data = Vec::with_capacity(bbox.area());
        for i in bbox.row0..bbox.row1 {
            data.extend_from_slice(&self.data[i * self.width + bbox.col0..i * self.width + bbox.col1]);
        }
        Raster { width: bbox.width(), height: bbox.height(), data }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length mismatch");
        Raster { width, height, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Raster { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn same_shape<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<&T> {
        (row < self.height && col < self.width).then(|| &self.data[row * self.width + col])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }

    /// `(row, col, &value)` in row-major order.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data.iter().enumerate().map(move |(k, v)| (k / w, k % w, v))
    }
}

impl<T> Index<(usize, usize)> for Raster<T> {
    type Output = T;

    #[inline]
    fn index(&self, (row, col): (usize, usize)) -> &T {
        debug_assert!(row < self.height && col < self.width);
        &self.data[row * self.width + col]
    }
}

impl<T> IndexMut<(usize, usize)> for Raster<T> {
    #[inline]
    fn index_mut(&mut self, (row, col): (usize, usize)) -> &mut T {
        debug_assert!(row < self.height && col < self.width);
        &mut self.data[row * self.width + col]
    }
}

/// Half-open pixel box `[row0, row1) × [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl BBox {
    pub fn new(row0: usize, col0: usize, row1: usize, col1: usize) -> Self {
        BBox { row0, col0, row1, col1 }
    }

    pub fn full(height: usize, width: usize) -> Self {
        BBox { row0: 0, col0: 0, row1: height, col1: width }
    }

    pub fn height(&self) -> usize {
        self.row1.saturating_sub(self.row0)
    }

    pub fn width(&self) -> usize {
        self.col1.saturating_sub(self.col0)
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row1 && col >= self.col0 && col < self.col1
    }

    pub fn within(&self, height: usize, width: usize) -> bool {
        self.row0 < self.row1 && self.col0 < self.col1 && self.row1 <= height && self.col1 <= width
    }

    /// Grows each side by `margin` times the box extent (rounded up), clamped
    /// to the image.
    pub fn expand(&self, margin: f64, height: usize, width: usize) -> BBox {
        let dr = num_traits::Float::ceil(margin * self.height() as f64 * 0.5) as usize;
        let dc = num_traits::Float::ceil(margin * self.width() as f64 * 0.5) as usize;
        BBox {
            row0: self.row0.saturating_sub(dr),
            col0: self.col0.saturating_sub(dc),
            row1: (self.row1 + dr).min(height),
            col1: (self.col1 + dc).min(width),
        }
    }

    /// Tight bounds of the `true` pixels of `mask`, offset by `(row_off, col_off)`.
    pub fn tight(mask: &Raster<bool>, row_off: usize, col_off: usize) -> Option<BBox> {
        let mut b: Option<BBox> = None;
        for (i, j, &m) in mask.indexed() {
            if !m {
                continue;
            }
            let (r, c) = (i + row_off, j + col_off);
            b = Some(match b {
                None => BBox::new(r, c, r + 1, c + 1),
                Some(b) => BBox::new(b.row0.min(r), b.col0.min(c), b.row1.max(r + 1), b.col1.max(c + 1)),
            });
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_index() {
        let r = Raster::from_fn(4, 5, |i, j| i * 10 + j);
        let c = r.crop(&BBox::new(1, 2, 3, 5));
        assert_eq!((c.height(), c.width()), (2, 3));
        assert_eq!(c[(0, 0)], 12);
        assert_eq!(c[(1, 2)], 24);
        assert_eq!(r.get(4, 0), None);
    }

    #[test]
    fn expand_by_fraction_clamps() {
        let b = BBox::new(10, 10, 20, 30);
        // 0.3 of the extent split over both sides.
        assert_eq!(b.expand(0.3, 100, 100), BBox::new(8, 7, 22, 33));
        assert_eq!(b.expand(10.0, 25, 35), BBox::new(0, 0, 25, 35));
        assert_eq!(b.expand(0.0, 100, 100), b);
    }

    #[test]
    fn tight_bounds() {
        let mut m = Raster::filled(8, 8, false);
        m[(2, 3)] = true;
        m[(4, 6)] = true;
        assert_eq!(BBox::tight(&m, 0, 0), Some(BBox::new(2, 3, 5, 7)));
        assert_eq!(BBox::tight(&Raster::filled(2, 2, false), 0, 0), None);
    }
}
