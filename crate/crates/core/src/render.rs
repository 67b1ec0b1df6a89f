//! Z-buffer rasterization of meshes into per-pixel channel stacks, and
//! generation of noiseless depth/XY/normal labels by re-projecting the
//! object-frame surface map through the ground-truth pose.

use alloc::vec::Vec;
use nalgebra::Vector3;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pixel_center, CameraIntrinsics, Point3, Pose};
use crate::mesh::{make_box, ModelMesh};
use crate::raster::{BBox, Raster};
use crate::rng;

/// `face` value for pixels not covered by any mesh triangle.
pub const NO_FACE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("scene has no instances")]
    EmptyScene,
    #[error("instance {0} has non-positive depth at its translation")]
    InstanceBehindCamera(usize),
    #[error("background plane depth must be positive")]
    InvalidBackground,
    #[error("pixel ({row}, {col}) of instance {instance} has no object-frame coordinate")]
    MissingAbc { instance: u32, row: usize, col: usize },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Position-encoding variants for the PE channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PeMode {
    /// `((j + 0.5) / W, (i + 0.5) / H)` in full-image coordinates.
    #[default]
    NormalizedUv,
    /// `sin/cos(2^k·π·u_n)` and `sin/cos(2^k·π·v_n)` for `k < octaves`.
    Sinusoidal { octaves: usize },
}

impl PeMode {
    pub fn channels(&self) -> usize {
        match self {
            PeMode::NormalizedUv => 2,
            PeMode::Sinusoidal { octaves } => 4 * octaves,
        }
    }

    fn encode(&self, un: f64, vn: f64, out: &mut Vec<f64>) {
        out.clear();
        match *self {
            PeMode::NormalizedUv => out.extend_from_slice(&[un, vn]),
            PeMode::Sinusoidal { octaves } => {
                for k in 0..octaves {
                    let f = core::f64::consts::PI * (1u64 << k) as f64;
                    out.extend_from_slice(&[(f * un).sin(), (f * un).cos(), (f * vn).sin(), (f * vn).cos()]);
                }
            }
        }
    }
}

/// Per-pixel channels of one view (or of a crop of it).
///
/// `origin` is the `(row, col)` of this raster's top-left pixel in the full
/// image; coordinate channels always carry full-image values.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    pub camera: CameraIntrinsics,
    pub origin: (usize, usize),
    pub rgb: Raster<[f64; 3]>,
    /// Meters; `0.0` wherever `valid` is false.
    pub depth: Raster<f64>,
    pub valid: Raster<bool>,
    pub plain_uv: Raster<[f64; 2]>,
    pub xy: Raster<[f64; 2]>,
    pub nrm: Raster<[f64; 3]>,
    /// One raster per position-encoding channel.
    pub pe: Vec<Raster<f64>>,
    /// `0` is background.
    pub instance_id: Raster<u32>,
    /// Object-frame surface coordinate of the visible point.
    pub abc: Raster<Option<[f64; 3]>>,
    /// Index of the visible triangle in its instance mesh, or [`NO_FACE`].
    pub face: Raster<u32>,
}

impl ChannelStack {
    /// Background-free stack with every pixel invalid.
    pub fn empty(camera: CameraIntrinsics, origin: (usize, usize), height: usize, width: usize) -> Self {
        ChannelStack {
            camera,
            origin,
            rgb: Raster::filled(height, width, [0.0; 3]),
            depth: Raster::filled(height, width, 0.0),
            valid: Raster::filled(height, width, false),
            plain_uv: Raster::filled(height, width, [0.0; 2]),
            xy: Raster::filled(height, width, [0.0; 2]),
            nrm: Raster::filled(height, width, [0.0; 3]),
            pe: Vec::new(),
            instance_id: Raster::filled(height, width, 0),
            abc: Raster::filled(height, width, None),
            face: Raster::filled(height, width, NO_FACE),
        }
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    /// Full-image pixel center of local pixel `(row, col)`.
    #[inline]
    pub fn uv(&self, row: usize, col: usize) -> (f64, f64) {
        pixel_center(row + self.origin.0, col + self.origin.1)
    }

    /// Camera-frame point of a valid pixel.
    #[inline]
    pub fn point(&self, row: usize, col: usize) -> Option<Point3> {
        if !self.valid[(row, col)] {
            return None;
        }
        let (u, v) = self.uv(row, col);
        Some(self.camera.backproject_unchecked(u, v, self.depth[(row, col)]))
    }

    /// Copies every channel inside `bbox` (local coordinates).
    pub fn crop(&self, bbox: &BBox) -> ChannelStack {
        ChannelStack {
            camera: self.camera,
            origin: (self.origin.0 + bbox.row0, self.origin.1 + bbox.col0),
            rgb: self.rgb.crop(bbox),
            depth: self.depth.crop(bbox),
            valid: self.valid.crop(bbox),
            plain_uv: self.plain_uv.crop(bbox),
            xy: self.xy.crop(bbox),
            nrm: self.nrm.crop(bbox),
            pe: self.pe.iter().map(|r| r.crop(bbox)).collect(),
            instance_id: self.instance_id.crop(bbox),
            abc: self.abc.crop(bbox),
            face: self.face.crop(bbox),
        }
    }

    /// Sorted distinct positive instance ids.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.instance_id.as_slice().iter().copied().filter(|&i| i > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Recomputes `xy` from `depth` on valid pixels (zero elsewhere).
    pub fn refresh_xy(&mut self) {
        for i in 0..self.height() {
            for j in 0..self.width() {
                self.xy[(i, j)] = match self.point(i, j) {
                    Some(p) => [p.x, p.y],
                    None => [0.0, 0.0],
                };
            }
        }
    }

    /// Recomputes `nrm` from `depth` by central differences.
    pub fn refresh_normals(&mut self) {
        self.nrm = compute_normals_at(&self.depth, &self.valid, &self.camera, self.origin);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SceneInstance<'a> {
    pub mesh: &'a ModelMesh,
    pub pose: Pose,
}

/// Fronto-parallel background plane plus optional seeded clutter boxes
/// placed between the instances and the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub plane_depth: f64,
    #[serde(default)]
    pub clutter_boxes: usize,
    #[serde(default)]
    pub clutter_seed: u64,
}

impl Default for Background {
    fn default() -> Self {
        Background { plane_depth: 1.5, clutter_boxes: 0, clutter_seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Scene<'a> {
    pub camera: CameraIntrinsics,
    /// Instance `k` is rendered with id `k + 1`.
    pub instances: Vec<SceneInstance<'a>>,
    pub background: Background,
}

impl Scene<'_> {
    pub fn validate(&self) -> Result<(), RenderError> {
        self.camera.validate()?;
        if self.instances.is_empty() {
            return Err(RenderError::EmptyScene);
        }
        if let Some(k) = self.instances.iter().position(|inst| !(inst.pose.translation().z > 0.0)) {
            return Err(RenderError::InstanceBehindCamera(k));
        }
        if !(self.background.plane_depth > 0.0) {
            return Err(RenderError::InvalidBackground);
        }
        Ok(())
    }
}

/// Near limit below which triangles are skipped rather than clipped.
const NEAR: f64 = 1e-3;

struct ZBuffer {
    depth: Raster<f64>,
    hit: Raster<Option<Hit>>,
}

#[derive(Clone, Copy)]
struct Hit {
    id: u32,
    face: u32,
    abc: [f64; 3],
    normal: Vector3<f64>,
}

/// Rasterizes every triangle of `mesh` under `pose` into `zb`. Coverage uses
/// screen-space edge functions at pixel centers; depth and object-frame
/// coordinates use perspective-correct barycentric interpolation.
fn rasterize(zb: &mut ZBuffer, camera: &CameraIntrinsics, mesh: &ModelMesh, pose: &Pose, id: u32) {
    let cam: Vec<Point3> = mesh.vertices().iter().map(|v| pose.apply(v)).collect();
    let (h, w) = (zb.depth.height(), zb.depth.width());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let idx = tri.map(|i| i as usize);
        let p = idx.map(|i| cam[i]);
        if p.iter().any(|q| q.z <= NEAR) {
            continue;
        }
        let s = p.map(|q| (camera.fx * q.x / q.z + camera.cx, camera.fy * q.y / q.z + camera.cy));
        let area = edge(s[0], s[1], s[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let inv_z = p.map(|q| 1.0 / q.z);
        let (umin, umax) = (s[0].0.min(s[1].0).min(s[2].0), s[0].0.max(s[1].0).max(s[2].0));
        let (vmin, vmax) = (s[0].1.min(s[1].1).min(s[2].1), s[0].1.max(s[1].1).max(s[2].1));
        let Some((r0, r1)) = span(vmin, vmax, h) else { continue };
        let Some((c0, c1)) = span(umin, umax, w) else { continue };
        let obj = idx.map(|i| mesh.vertices()[i]);
        let n_cam = pose.apply_vector(&mesh.face_normal(t));
        let eps = 1e-12;
        for i in r0..=r1 {
            for j in c0..=c1 {
                let c = pixel_center(i, j);
                let l0 = edge(s[1], s[2], c) / area;
                let l1 = edge(s[2], s[0], c) / area;
                let l2 = edge(s[0], s[1], c) / area;
                if l0 < -eps || l1 < -eps || l2 < -eps {
                    continue;
                }
                let (l0, l1, l2) = (l0.max(0.0), l1.max(0.0), l2.max(0.0));
                let wsum = l0 * inv_z[0] + l1 * inv_z[1] + l2 * inv_z[2];
                let z = 1.0 / wsum;
                if !(z < zb.depth[(i, j)]) {
                    continue;
                }
                let m = [l0 * inv_z[0] * z, l1 * inv_z[1] * z, l2 * inv_z[2] * z];
                let a = obj[0].coords * m[0] + obj[1].coords * m[1] + obj[2].coords * m[2];
                let ray = Vector3::new((c.0 - camera.cx) / camera.fx, (c.1 - camera.cy) / camera.fy, 1.0);
                let normal = if n_cam.dot(&ray) > 0.0 { -n_cam } else { n_cam };
                zb.depth[(i, j)] = z;
                zb.hit[(i, j)] = Some(Hit { id, face: t as u32, abc: [a.x, a.y, a.z], normal });
            }
        }
    }
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Pixel indices whose centers fall in `[lo, hi]`, clamped to `[0, n)`.
fn span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let a = (lo - 0.5).ceil().max(0.0);
    let b = (hi - 0.5).floor().min(n as f64 - 1.0);
    (a <= b).then_some((a as usize, b as usize))
}

fn albedo(id: u32) -> [f64; 3] {
    let h = rng::splitmix64(id as u64);
    core::array::from_fn(|k| 0.25 + 0.75 * ((h >> (16 * k)) & 0xffff) as f64 / 65535.0)
}

/// Renders all instances over the background plane into a full-image stack
/// with normalized-UV position encoding.
pub fn render_scene(scene: &Scene) -> Result<ChannelStack, RenderError> {
    render_scene_with(scene, PeMode::default())
}

pub fn render_scene_with(scene: &Scene, pe_mode: PeMode) -> Result<ChannelStack, RenderError> {
    scene.validate()?;
    let cam = scene.camera;
    let (h, w) = (cam.height, cam.width);
    let mut zb = ZBuffer { depth: Raster::filled(h, w, scene.background.plane_depth), hit: Raster::filled(h, w, None) };

    for box_mesh_pose in background_clutter(scene) {
        let (mesh, pose) = box_mesh_pose;
        rasterize(&mut zb, &cam, &mesh, &pose, 0);
    }
    for (k, inst) in scene.instances.iter().enumerate() {
        rasterize(&mut zb, &cam, inst.mesh, &inst.pose, k as u32 + 1);
    }

    let mut stack = ChannelStack::empty(cam, (0, 0), h, w);
    for i in 0..h {
        for j in 0..w {
            let (u, v) = pixel_center(i, j);
            let ray = Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0).normalize();
            stack.depth[(i, j)] = zb.depth[(i, j)];
            stack.valid[(i, j)] = true;
            match zb.hit[(i, j)] {
                Some(hit) => {
                    let shade = 0.2 + 0.8 * (-hit.normal.dot(&ray)).max(0.0);
                    let base = if hit.id == 0 { [0.55, 0.5, 0.45] } else { albedo(hit.id) };
                    stack.rgb[(i, j)] = base.map(|c| c * shade);
                    stack.nrm[(i, j)] = hit.normal.into();
                    stack.instance_id[(i, j)] = hit.id;
                    if hit.id > 0 {
                        stack.abc[(i, j)] = Some(hit.abc);
                        stack.face[(i, j)] = hit.face;
                    }
                }
                None => {
                    let checker = if (i / 8 + j / 8) % 2 == 0 { 0.35 } else { 0.3 };
                    stack.rgb[(i, j)] = [checker; 3];
                    stack.nrm[(i, j)] = [0.0, 0.0, -1.0];
                }
            }
        }
    }
    fill_coordinates(&mut stack, pe_mode);
    Ok(stack)
}

/// Seeded boxes between the farthest instance and the background plane.
fn background_clutter(scene: &Scene) -> Vec<(ModelMesh, Pose)> {
    let bg = &scene.background;
    if bg.clutter_boxes == 0 {
        return Vec::new();
    }
    let far = scene.instances.iter().map(|i| i.pose.translation().z).fold(0.0, f64::max) + 0.15;
    let near_plane = bg.plane_depth - 0.05;
    if far >= near_plane {
        return Vec::new();
    }
    let mut rng = rng::substream(bg.clutter_seed, &[rng::label::BACKGROUND]);
    let cam = &scene.camera;
    (0..bg.clutter_boxes)
        .map(|_| {
            let size = core::array::from_fn(|_| rng::uniform_range(&mut rng, 0.05, 0.2));
            let z = rng::uniform_range(&mut rng, far, near_plane);
            let u = rng::uniform_range(&mut rng, 0.0, cam.width as f64);
            let v = rng::uniform_range(&mut rng, 0.0, cam.height as f64);
            let yaw = rng::uniform_range(&mut rng, 0.0, core::f64::consts::TAU);
            let center = cam.backproject_unchecked(u, v, z);
            let mut pose = Pose::rot_z(yaw);
            pose = Pose::from_translation(center.coords).compose(&pose);
            (make_box("clutter", size, 1, false), pose)
        })
        .collect()
}

/// Fills `plain_uv`, `xy` and `pe` from pixel coordinates and depth.
fn fill_coordinates(stack: &mut ChannelStack, pe_mode: PeMode) {
    let (h, w) = (stack.height(), stack.width());
    let cam = stack.camera;
    stack.pe = (0..pe_mode.channels()).map(|_| Raster::filled(h, w, 0.0)).collect();
    let mut buf = Vec::with_capacity(pe_mode.channels());
    for i in 0..h {
        for j in 0..w {
            let (u, v) = stack.uv(i, j);
            stack.plain_uv[(i, j)] = [u, v];
            pe_mode.encode(u / cam.width as f64, v / cam.height as f64, &mut buf);
            for (c, &val) in buf.iter().enumerate() {
                stack.pe[c][(i, j)] = val;
            }
        }
    }
    stack.refresh_xy();
}

/// Rebuilds the derived channels (`plain_uv`, `xy`, `nrm`, `pe`) of a stack
/// whose depth and validity are filled.
pub fn assemble_channels(stack: &ChannelStack, pe_mode: PeMode) -> ChannelStack {
    let mut out = stack.clone();
    fill_coordinates(&mut out, pe_mode);
    out.refresh_normals();
    out
}

/// Depth-derived normals for a full-image raster (`origin = (0, 0)`).
pub fn compute_normals(depth: &Raster<f64>, valid: &Raster<bool>, camera: &CameraIntrinsics) -> Raster<[f64; 3]> {
    compute_normals_at(depth, valid, camera, (0, 0))
}

/// Normal of the backprojected surface from central differences,
/// `normalize(∂P/∂u × ∂P/∂v)`, oriented toward the camera. Pixels without a
/// full valid 4-neighborhood get `(0, 0, 0)`.
pub fn compute_normals_at(
    depth: &Raster<f64>,
    valid: &Raster<bool>,
    camera: &CameraIntrinsics,
    origin: (usize, usize),
) -> Raster<[f64; 3]> {
    let (h, w) = (depth.height(), depth.width());
    let point = |i: usize, j: usize| {
        let (u, v) = pixel_center(i + origin.0, j + origin.1);
        camera.backproject_unchecked(u, v, depth[(i, j)])
    };
    Raster::from_fn(h, w, |i, j| {
        if i == 0 || j == 0 || i + 1 >= h || j + 1 >= w {
            return [0.0; 3];
        }
        if !(valid[(i, j)] && valid[(i - 1, j)] && valid[(i + 1, j)] && valid[(i, j - 1)] && valid[(i, j + 1)]) {
            return [0.0; 3];
        }
        let du = (point(i, j + 1) - point(i, j - 1)) * 0.5;
        let dv = (point(i + 1, j) - point(i - 1, j)) * 0.5;
        let n = du.cross(&dv);
        let len = n.norm();
        if !(len > 0.0) {
            return [0.0; 3];
        }
        let mut n = n / len;
        if n.dot(&point(i, j).coords) > 0.0 {
            n = -n;
        }
        n.into()
    })
}

/// Noiseless depth, XY and normal labels for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprojectedLabels {
    pub mask: Raster<bool>,
    pub depth: Raster<f64>,
    pub xy: Raster<[f64; 2]>,
    pub nrm: Raster<[f64; 3]>,
}

impl ReprojectedLabels {
    pub fn crop(&self, bbox: &BBox) -> ReprojectedLabels {
        ReprojectedLabels {
            mask: self.mask.crop(bbox),
            depth: self.depth.crop(bbox),
            xy: self.xy.crop(bbox),
            nrm: self.nrm.crop(bbox),
        }
    }
}

/// Applies `(x, y, d) = R*·(a, b, c) + T*` to every pixel of `instance`
/// in `stack`. Normals are the mesh face normals rotated by `R*`, oriented
/// toward the camera.
pub fn reproject_labels(
    mesh: &ModelMesh,
    gt: &Pose,
    stack: &ChannelStack,
    instance: u32,
) -> Result<ReprojectedLabels, RenderError> {
    let (h, w) = (stack.height(), stack.width());
    let mut labels = ReprojectedLabels {
        mask: Raster::filled(h, w, false),
        depth: Raster::filled(h, w, 0.0),
        xy: Raster::filled(h, w, [0.0; 2]),
        nrm: Raster::filled(h, w, [0.0; 3]),
    };
    for i in 0..h {
        for j in 0..w {
            if stack.instance_id[(i, j)] != instance {
                continue;
            }
            let abc = stack.abc[(i, j)].ok_or(RenderError::MissingAbc {
                instance,
                row: i + stack.origin.0,
                col: j + stack.origin.1,
            })?;
            let p = gt.apply(&Point3::from(abc));
            labels.mask[(i, j)] = true;
            labels.depth[(i, j)] = p.z;
            labels.xy[(i, j)] = [p.x, p.y];
            let f = stack.face[(i, j)];
            if f != NO_FACE && (f as usize) < mesh.triangles().len() {
                let n = gt.apply_vector(&mesh.face_normal(f as usize));
                labels.nrm[(i, j)] = if n.dot(&p.coords) > 0.0 { (-n).into() } else { n.into() };
            }
        }
    }
    Ok(labels)
}
