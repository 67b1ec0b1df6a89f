//! Two-step denoising.
//!
//! Step 1 removes instance-outside noise at the image level: crop every
//! channel to the instance box and zero everything outside its mask before any
//! aggregation happens. Step 2 removes instance-inside noise: morphological
//! hole filling followed by an affine depth calibration fit against
//! re-projected depth labels.

mod annotation;
mod calibration;
mod crop;
mod fill;

pub use annotation::{
    degrade_annotation, dilate, erode, oracle_annotations, random_degradation, AnnotationSource, InstanceAnnotation,
    MorphOp,
};
pub use calibration::{apply_calibration, fit_calibration, CalibrationModel, CalibrationSample};
pub use crop::{
    crop_and_mask, crop_and_mask_with, crop_box, feature_level_mask, image_level_features, CropOptions, FeatureMap,
};
pub use fill::{fill_holes, FillKernel, FillSchedule, KernelShape};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("erosion removed every mask pixel")]
    EmptyMaskAfterErosion,
    #[error("kernel size {0} is not one of 3, 5, 7")]
    InvalidKernel(usize),
    #[error("annotation does not fit inside the stack")]
    AnnotationOutOfBounds,
    #[error("annotation mask is empty")]
    EmptyAnnotation,
    #[error("patch has no valid depth")]
    AllInvalid,
    #[error("calibration is degenerate: observed depths have no spread")]
    DegenerateFit,
    #[error("calibration gain {0} outside (0, 10)")]
    CalibrationOutOfRange(f64),
}
