//! Synthetic RGB-D benchmark core: CAD re-projection rendering, depth
//! corruption, two-step denoising, closed-form rigid fitting and the
//! ADD-family metrics.
//!
//! `no_std` with `alloc`; every random draw comes from a seeded substream
//! (see [`rng`]), so all outputs are a pure function of their inputs.

#![no_std]
// `!(x > 0.0)` is used deliberately so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod estimator;
pub mod geometry;
pub mod mesh;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod rng;

pub use geometry::{CameraIntrinsics, GeometryError, Point3, Pose};
pub use mesh::{MeshError, ModelMesh};
pub use raster::{BBox, Raster};
pub use render::{ChannelStack, RenderError};
