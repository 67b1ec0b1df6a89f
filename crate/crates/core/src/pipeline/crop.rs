use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{InstanceAnnotation, PipelineError};
use crate::raster::BBox;
use crate::render::{ChannelStack, NO_FACE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropOptions {
    /// Box growth as a fraction of its extent, split over both sides.
    pub margin: f64,
    /// Whether PE channels are masked along with everything else.
    pub mask_pe: bool,
}

impl Default for CropOptions {
    fn default() -> Self {
        CropOptions { margin: 0.0, mask_pe: true }
    }
}

fn local_box(stack: &ChannelStack, ann: &InstanceAnnotation, margin: f64) -> Result<BBox, PipelineError> {
    let (r0, c0) = stack.origin;
    if ann.bbox.row0 < r0 || ann.bbox.col0 < c0 {
        return Err(PipelineError::AnnotationOutOfBounds);
    }
    let b = BBox::new(ann.bbox.row0 - r0, ann.bbox.col0 - c0, ann.bbox.row1 - r0, ann.bbox.col1 - c0);
    if !b.within(stack.height(), stack.width()) {
        return Err(PipelineError::AnnotationOutOfBounds);
    }
    Ok(b.expand(margin, stack.height(), stack.width()))
}

/// Crops every channel to the annotation box grown by `margin`, without
/// masking. Coordinate channels keep their full-image values.
pub fn crop_box(stack: &ChannelStack, ann: &InstanceAnnotation, margin: f64) -> Result<ChannelStack, PipelineError> {
    Ok(stack.crop(&local_box(stack, ann, margin)?))
}

/// Image-level step 1 with default options (PE masked).
pub fn crop_and_mask(
    stack: &ChannelStack,
    ann: &InstanceAnnotation,
    margin: f64,
) -> Result<ChannelStack, PipelineError> {
    crop_and_mask_with(stack, ann, CropOptions { margin, ..CropOptions::default() })
}

/// Crops to the (expanded) box, then zeroes every channel outside the mask
/// and marks those pixels invalid.
pub fn crop_and_mask_with(
    stack: &ChannelStack,
    ann: &InstanceAnnotation,
    opts: CropOptions,
) -> Result<ChannelStack, PipelineError> {
    if ann.pixel_count() == 0 {
        return Err(PipelineError::EmptyAnnotation);
    }
    let mut p = crop_box(stack, ann, opts.margin)?;
    for i in 0..p.height() {
        for j in 0..p.width() {
            if ann.contains(i + p.origin.0, j + p.origin.1) {
                continue;
            }
            let px = (i, j);
            p.rgb[px] = [0.0; 3];
            p.depth[px] = 0.0;
            p.valid[px] = false;
            p.plain_uv[px] = [0.0; 2];
            p.xy[px] = [0.0; 2];
            p.nrm[px] = [0.0; 3];
            p.instance_id[px] = 0;
            p.abc[px] = None;
            p.face[px] = NO_FACE;
            if opts.mask_pe {
                for pe in &mut p.pe {
                    pe[px] = 0.0;
                }
            }
        }
    }
    Ok(p)
}

/// Dense per-pixel feature vectors: rgb(3), depth, valid, plain_uv(2),
/// xy(2), nrm(3), then the PE channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn from_stack(s: &ChannelStack) -> Self {
        let channels = 12 + s.pe.len();
        let mut data = Vec::with_capacity(s.height() * s.width() * channels);
        for i in 0..s.height() {
            for j in 0..s.width() {
                let px = (i, j);
                data.extend_from_slice(&s.rgb[px]);
                data.push(s.depth[px]);
                data.push(if s.valid[px] { 1.0 } else { 0.0 });
                data.extend_from_slice(&s.plain_uv[px]);
                data.extend_from_slice(&s.xy[px]);
                data.extend_from_slice(&s.nrm[px]);
                data.extend(s.pe.iter().map(|r| r[px]));
            }
        }
        FeatureMap { height: s.height(), width: s.width(), channels, data }
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let k = (row * self.width + col) * self.channels;
        &self.data[k..k + self.channels]
    }

    /// Zero-padded box filter: each output is the window sum divided by
    /// `(2r + 1)²`, a stand-in for a convolutional receptive field.
    pub fn box_filter(&self, radius: usize) -> FeatureMap {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as isize;
        let norm = ((2 * radius + 1) * (2 * radius + 1)) as f64;
        let (h, w, c) = (self.height as isize, self.width as isize, self.channels);
        let mut data = alloc::vec![0.0; self.data.len()];
        for i in 0..h {
            for j in 0..w {
                let out = &mut data[((i * w + j) as usize) * c..((i * w + j) as usize + 1) * c];
                for a in (i - r).max(0)..(i + r + 1).min(h) {
                    for b in (j - r).max(0)..(j + r + 1).min(w) {
                        for (o, v) in out.iter_mut().zip(self.pixel(a as usize, b as usize)) {
                            *o += v;
                        }
                    }
                }
                for o in out.iter_mut() {
                    *o /= norm;
                }
            }
        }
        FeatureMap { data, ..*self }
    }

    fn crop_and_mask(&self, origin: (usize, usize), ann: &InstanceAnnotation) -> FeatureMap {
        let b = ann.bbox;
        let c = self.channels;
        let mut data = Vec::with_capacity(b.area() * c);
        for gi in b.row0..b.row1 {
            for gj in b.col0..b.col1 {
                if ann.contains(gi, gj) {
                    data.extend_from_slice(self.pixel(gi - origin.0, gj - origin.1));
                } else {
                    data.extend(core::iter::repeat_n(0.0, c));
                }
            }
        }
        FeatureMap { height: b.height(), width: b.width(), channels: c, data }
    }
}

/// Feature-level masking: aggregate over the unmasked stack first, then crop
/// and zero outside the mask. Background within `window_radius` of the mask
/// leaks into the surviving features.
pub fn feature_level_mask(
    stack: &ChannelStack,
    ann: &InstanceAnnotation,
    window_radius: usize,
) -> Result<FeatureMap, PipelineError> {
    local_box(stack, ann, 0.0)?;
    let agg = FeatureMap::from_stack(stack).box_filter(window_radius);
    Ok(agg.crop_and_mask(stack.origin, ann))
}

/// Image-level masking: crop and mask the channels first, then aggregate
/// with the same receptive field and zero outside the mask.
pub fn image_level_features(
    stack: &ChannelStack,
    ann: &InstanceAnnotation,
    window_radius: usize,
) -> Result<FeatureMap, PipelineError> {
    let patch = crop_and_mask(stack, ann, 0.0)?;
    let agg = FeatureMap::from_stack(&patch).box_filter(window_radius);
    Ok(agg.crop_and_mask(patch.origin, ann))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::pipeline::{oracle_annotations, AnnotationSource};
    use crate::raster::Raster;
    use crate::render::{assemble_channels, PeMode};

    /// 4×4 image, 2×2 instance at rows 1..3, cols 1..3.
    fn small() -> ChannelStack {
        let cam = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let mut s = ChannelStack::empty(cam, (0, 0), 4, 4);
        s.depth = Raster::from_fn(4, 4, |i, j| 1.0 + 0.1 * (i * 4 + j) as f64);
        s.valid = Raster::filled(4, 4, true);
        s.rgb = Raster::filled(4, 4, [0.5; 3]);
        for i in 1..3 {
            for j in 1..3 {
                s.instance_id[(i, j)] = 7;
                s.abc[(i, j)] = Some([i as f64, j as f64, 0.0]);
            }
        }
        assemble_channels(&s, PeMode::NormalizedUv)
    }

    #[test]
    fn full_image_crop_is_identity() {
        let s = small();
        let full =
            InstanceAnnotation::from_full_mask(1, &Raster::filled(4, 4, true), AnnotationSource::Oracle).unwrap();
        assert_eq!(crop_and_mask(&s, &full, 0.0).unwrap(), s);
    }

    #[test]
    fn two_by_two_patch() {
        let s = small();
        let ann = &oracle_annotations(&s)[0];
        let p = crop_and_mask(&s, ann, 0.0).unwrap();
        assert_eq!((p.height(), p.width()), (2, 2));
        assert_eq!(p.origin, (1, 1));
        assert_eq!(p.plain_uv[(0, 0)], [1.5, 1.5]);
        assert_eq!(p.depth[(1, 1)], s.depth[(2, 2)]);
        assert!(p.valid.as_slice().iter().all(|&v| v));

        // With a margin the ring around the instance is zeroed background.
        let m = crop_and_mask(&s, ann, 1.0).unwrap();
        assert_eq!((m.height(), m.width()), (4, 4));
        assert_eq!(m.depth[(0, 0)], 0.0);
        assert_eq!(m.rgb[(0, 3)], [0.0; 3]);
        assert!(!m.valid[(3, 3)]);
        assert_eq!(m.plain_uv[(1, 1)], s.plain_uv[(1, 1)]);
    }

    #[test]
    fn pe_can_stay_unmasked() {
        let s = small();
        let ann = &oracle_annotations(&s)[0];
        let p = crop_and_mask_with(&s, ann, CropOptions { margin: 1.0, mask_pe: false }).unwrap();
        assert_eq!(p.pe[0][(0, 0)], s.pe[0][(0, 0)]);
        assert_eq!(p.depth[(0, 0)], 0.0);
    }

    #[test]
    fn zero_radius_feature_masking_matches_image_level() {
        let s = small();
        let ann = &oracle_annotations(&s)[0];
        assert_eq!(feature_level_mask(&s, ann, 0).unwrap(), image_level_features(&s, ann, 0).unwrap());
        assert_eq!(
            feature_level_mask(&s, ann, 0).unwrap(),
            FeatureMap::from_stack(&crop_and_mask(&s, ann, 0.0).unwrap())
        );
    }

    #[test]
    fn background_leaks_only_at_feature_level() {
        let s = small();
        let ann = &oracle_annotations(&s)[0];
        let mut edited = s.clone();
        edited.depth[(0, 1)] += 3.0; // 1 px above the mask
        edited.rgb[(0, 1)] = [1.0, 0.0, 0.0];
        assert_ne!(feature_level_mask(&s, ann, 2).unwrap(), feature_level_mask(&edited, ann, 2).unwrap());
        assert_eq!(image_level_features(&s, ann, 2).unwrap(), image_level_features(&edited, ann, 2).unwrap());
    }

    #[test]
    fn out_of_bounds_annotation() {
        let s = small();
        let big = InstanceAnnotation::from_full_mask(1, &Raster::filled(6, 6, true), AnnotationSource::Oracle).unwrap();
        assert_eq!(crop_and_mask(&s, &big, 0.0), Err(PipelineError::AnnotationOutOfBounds));
    }
}
