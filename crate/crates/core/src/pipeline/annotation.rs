use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::raster::{BBox, Raster};
use crate::render::ChannelStack;
use crate::rng::{self, label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationSource {
    Oracle,
    Degraded,
}

/// Box and mask of one instance in full-image coordinates. `mask` covers
/// exactly `bbox`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAnnotation {
    pub instance_id: u32,
    pub bbox: BBox,
    pub mask: Raster<bool>,
    pub source: AnnotationSource,
    /// `(height, width)` of the full image.
    pub frame: (usize, usize),
}

impl InstanceAnnotation {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.bbox.contains(row, col) && self.mask[(row - self.bbox.row0, col - self.bbox.col0)]
    }

    pub fn pixel_count(&self) -> usize {
        self.mask.as_slice().iter().filter(|&&m| m).count()
    }

    /// Mask expanded to the full frame.
    pub fn full_mask(&self) -> Raster<bool> {
        Raster::from_fn(self.frame.0, self.frame.1, |i, j| self.contains(i, j))
    }

    /// Re-tightens box and mask around the `true` pixels of a full-frame mask.
    pub fn from_full_mask(
        instance_id: u32,
        full: &Raster<bool>,
        source: AnnotationSource,
    ) -> Option<InstanceAnnotation> {
        let bbox = BBox::tight(full, 0, 0)?;
        Some(InstanceAnnotation {
            instance_id,
            bbox,
            mask: full.crop(&bbox),
            source,
            frame: (full.height(), full.width()),
        })
    }
}

/// One annotation per positive id present, sorted by id.
pub fn oracle_annotations(stack: &ChannelStack) -> Vec<InstanceAnnotation> {
    let (h, w) = (stack.height(), stack.width());
    let (r0, c0) = stack.origin;
    let frame = (stack.camera.height, stack.camera.width);
    stack
        .instance_ids()
        .into_iter()
        .filter_map(|id| {
            let local = stack.instance_id.map(|&v| v == id);
            let tight = BBox::tight(&local, 0, 0)?;
            let mask = local.crop(&tight);
            debug_assert!(tight.row1 <= h && tight.col1 <= w);
            Some(InstanceAnnotation {
                instance_id: id,
                bbox: BBox::new(tight.row0 + r0, tight.col0 + c0, tight.row1 + r0, tight.col1 + c0),
                mask,
                source: AnnotationSource::Oracle,
                frame,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphOp {
    Dilate,
    Erode,
}

/// Binary dilation with a `k × k` square; pixels outside the raster are false.
pub fn dilate(mask: &Raster<bool>, k: usize) -> Raster<bool> {
    let r = (k / 2) as isize;
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    Raster::from_fn(mask.height(), mask.width(), |i, j| {
        let (i, j) = (i as isize, j as isize);
        (i - r..=i + r)
            .any(|a| (j - r..=j + r).any(|b| a >= 0 && b >= 0 && a < h && b < w && mask[(a as usize, b as usize)]))
    })
}

/// Binary erosion with a `k × k` square; pixels outside the raster are false.
pub fn erode(mask: &Raster<bool>, k: usize) -> Raster<bool> {
    let r = (k / 2) as isize;
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    Raster::from_fn(mask.height(), mask.width(), |i, j| {
        let (i, j) = (i as isize, j as isize);
        (i - r..=i + r)
            .all(|a| (j - r..=j + r).all(|b| a >= 0 && b >= 0 && a < h && b < w && mask[(a as usize, b as usize)]))
    })
}

/// Dilates or erodes the mask with a square kernel of size 3, 5 or 7 and
/// re-tightens the box.
pub fn degrade_annotation(
    ann: &InstanceAnnotation,
    kernel: usize,
    op: MorphOp,
) -> Result<InstanceAnnotation, PipelineError> {
    if !matches!(kernel, 3 | 5 | 7) {
        return Err(PipelineError::InvalidKernel(kernel));
    }
    let (fh, fw) = ann.frame;
    // Work on the box grown by the kernel radius so dilation has room.
    let canvas = BBox::new(
        ann.bbox.row0.saturating_sub(kernel / 2),
        ann.bbox.col0.saturating_sub(kernel / 2),
        (ann.bbox.row1 + kernel / 2).min(fh),
        (ann.bbox.col1 + kernel / 2).min(fw),
    );
    let local = Raster::from_fn(canvas.height(), canvas.width(), |i, j| ann.contains(i + canvas.row0, j + canvas.col0));
    // The canvas only truncates at the image border, where out-of-range
    // pixels are background for both operations.
    let out = match op {
        MorphOp::Dilate => dilate(&local, kernel),
        MorphOp::Erode => erode(&local, kernel),
    };
    let tight = BBox::tight(&out, 0, 0).ok_or(PipelineError::EmptyMaskAfterErosion)?;
    Ok(InstanceAnnotation {
        instance_id: ann.instance_id,
        bbox: BBox::new(
            tight.row0 + canvas.row0,
            tight.col0 + canvas.col0,
            tight.row1 + canvas.row0,
            tight.col1 + canvas.col0,
        ),
        mask: out.crop(&tight),
        source: AnnotationSource::Degraded,
        frame: ann.frame,
    })
}

/// With probability 0.75 applies a dilation or erosion (equally likely) with
/// a kernel drawn from {3, 5, 7}; otherwise returns the annotation unchanged.
/// An erosion that would empty the mask leaves it unchanged.
pub fn random_degradation(ann: &InstanceAnnotation, seed: u64) -> InstanceAnnotation {
    let mut rng = rng::substream(seed, &[label::MASK, ann.instance_id as u64]);
    if rng::uniform(&mut rng) >= 0.75 {
        return ann.clone();
    }
    let kernel = [3, 5, 7][rng::index(&mut rng, 3)];
    let op = if rng::index(&mut rng, 2) == 0 { MorphOp::Dilate } else { MorphOp::Erode };
    degrade_annotation(ann, kernel, op).unwrap_or_else(|_| ann.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;

    fn stack_with(ids: &[(usize, usize, u32)], h: usize, w: usize) -> ChannelStack {
        let cam = CameraIntrinsics::new(10.0, 10.0, 1.0, 1.0, w, h).unwrap();
        let mut s = ChannelStack::empty(cam, (0, 0), h, w);
        for &(i, j, id) in ids {
            s.instance_id[(i, j)] = id;
        }
        s
    }

    fn ann_from(cells: &[(usize, usize)], h: usize, w: usize) -> InstanceAnnotation {
        let full = Raster::from_fn(h, w, |i, j| cells.contains(&(i, j)));
        InstanceAnnotation::from_full_mask(1, &full, AnnotationSource::Oracle).unwrap()
    }

    #[test]
    fn oracle_single_instance() {
        let mut px = Vec::new();
        for i in 2..=4 {
            for j in 3..=6 {
                px.push((i, j, 1));
            }
        }
        let s = stack_with(&px, 8, 8);
        let anns = oracle_annotations(&s);
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].bbox, BBox::new(2, 3, 5, 7));
        assert!(anns[0].mask.as_slice().iter().all(|&m| m));
        assert_eq!(anns[0].source, AnnotationSource::Oracle);
    }

    #[test]
    fn oracle_empty_and_two_instances() {
        assert!(oracle_annotations(&stack_with(&[], 8, 8)).is_empty());
        let s = stack_with(&[(0, 0, 1), (0, 1, 1), (5, 5, 2)], 8, 8);
        let anns = oracle_annotations(&s);
        assert_eq!(anns.len(), 2);
        let (a, b) = (anns[0].full_mask(), anns[1].full_mask());
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| !(x & y)));
        assert_eq!(anns[1].instance_id, 2);
    }

    #[test]
    fn dilating_a_single_pixel_gives_a_block() {
        let a = ann_from(&[(5, 5)], 12, 12);
        let d = degrade_annotation(&a, 3, MorphOp::Dilate).unwrap();
        assert_eq!(d.bbox, BBox::new(4, 4, 7, 7));
        assert_eq!(d.pixel_count(), 9);
        assert_eq!(d.source, AnnotationSource::Degraded);
    }

    #[test]
    fn closing_restores_solid_rectangle() {
        let mut cells = Vec::new();
        for i in 8..16 {
            for j in 10..20 {
                cells.push((i, j));
            }
        }
        let a = ann_from(&cells, 30, 30);
        for k in [3, 5, 7] {
            let c =
                degrade_annotation(&degrade_annotation(&a, k, MorphOp::Dilate).unwrap(), k, MorphOp::Erode).unwrap();
            assert_eq!(c.full_mask(), a.full_mask(), "kernel {k}");
        }
    }

    #[test]
    fn eroding_a_thin_line_fails() {
        let cells: Vec<_> = (2..10).map(|j| (5, j)).collect();
        let a = ann_from(&cells, 12, 12);
        assert_eq!(degrade_annotation(&a, 3, MorphOp::Erode), Err(PipelineError::EmptyMaskAfterErosion));
        assert_eq!(degrade_annotation(&a, 4, MorphOp::Erode), Err(PipelineError::InvalidKernel(4)));
    }

    #[test]
    fn dilation_clamps_at_image_border() {
        let a = ann_from(&[(0, 0)], 5, 5);
        let d = degrade_annotation(&a, 5, MorphOp::Dilate).unwrap();
        assert_eq!(d.bbox, BBox::new(0, 0, 3, 3));
    }

    #[test]
    fn random_degradation_is_deterministic() {
        let mut cells = Vec::new();
        for i in 5..15 {
            for j in 5..15 {
                cells.push((i, j));
            }
        }
        let a = ann_from(&cells, 20, 20);
        assert_eq!(random_degradation(&a, 3), random_degradation(&a, 3));
        let changed = (0..40).filter(|&s| random_degradation(&a, s) != a).count();
        assert!(changed > 15 && changed < 40);
    }
}
