//! Triangle meshes in the object frame and primitive generators.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};
use nalgebra::Vector3;
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::geometry::Point3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("mesh has no vertices")]
    Empty,
    #[error("triangle {triangle} references vertex {index} but mesh has {count} vertices")]
    IndexOutOfRange { triangle: usize, index: u32, count: usize },
    #[error("vertex {0} is not finite")]
    NonFinite(usize),
    #[error("mesh diameter is zero")]
    ZeroDiameter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMesh {
    name: String,
    vertices: Vec<Point3>,
    triangles: Vec<[u32; 3]>,
    face_normals: Vec<Vector3<f64>>,
    symmetric: bool,
    diameter: f64,
}

impl ModelMesh {
    pub fn new(
        name: impl Into<String>,
        vertices: Vec<Point3>,
        triangles: Vec<[u32; 3]>,
        symmetric: bool,
    ) -> Result<Self, MeshError> {
        if vertices.is_empty() {
            return Err(MeshError::Empty);
        }
        if let Some(k) = vertices.iter().position(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFinite(k));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(MeshError::IndexOutOfRange { triangle: t, index, count: vertices.len() });
            }
        }
        let diameter = max_pairwise_distance(&vertices);
        if !(diameter > 0.0) {
            return Err(MeshError::ZeroDiameter);
        }
        let face_normals = triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                let n = (b - a).cross(&(c - a));
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vector3::zeros()
                }
            })
            .collect();
        Ok(ModelMesh { name: name.into(), vertices, triangles, face_normals, symmetric, diameter })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Unit normal of triangle `t` from its winding (zero for degenerate faces).
    pub fn face_normal(&self, t: usize) -> Vector3<f64> {
        self.face_normals[t]
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn with_symmetric(mut self, symmetric: bool) -> Self {
        self.symmetric = symmetric;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Maximum pairwise vertex distance.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = self.vertices[0];
        let mut hi = lo;
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }
}

fn max_pairwise_distance(v: &[Point3]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in v.iter().enumerate() {
        for b in &v[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Accumulates vertices and outward-wound triangles.
#[derive(Default)]
struct Builder {
    vertices: Vec<Point3>,
    triangles: Vec<[u32; 3]>,
}

impl Builder {
    fn push(&mut self, p: Point3) -> u32 {
        self.vertices.push(p);
        (self.vertices.len() - 1) as u32
    }

    /// Subdivided planar quad `origin + s·a + t·b`, `s,t ∈ [0,1]`, wound so
    /// that `a × b` is the outward side.
    fn quad(&mut self, origin: Point3, a: Vector3<f64>, b: Vector3<f64>, ns: usize, nt: usize) {
        let base = self.vertices.len() as u32;
        for it in 0..=nt {
            for is in 0..=ns {
                let p = origin + a * (is as f64 / ns as f64) + b * (it as f64 / nt as f64);
                self.vertices.push(p);
            }
        }
        let row = (ns + 1) as u32;
        for it in 0..nt as u32 {
            for is in 0..ns as u32 {
                let p00 = base + it * row + is;
                let p10 = p00 + 1;
                let p01 = p00 + row;
                let p11 = p01 + 1;
                self.triangles.push([p00, p10, p11]);
                self.triangles.push([p00, p11, p01]);
            }
        }
    }

    /// Surface of revolution about z from a profile of `(radius, z)` pairs
    /// ordered bottom to top; zero radii collapse to a single pole vertex.
    fn revolve(&mut self, profile: &[(f64, f64)], segments: usize) {
        let mut rings: Vec<Vec<u32>> = Vec::with_capacity(profile.len());
        for &(r, z) in profile {
            if r == 0.0 {
                let p = self.push(Point3::new(0.0, 0.0, z));
                rings.push(alloc::vec![p; segments]);
            } else {
                let ring = (0..segments)
                    .map(|s| {
                        let th = 2.0 * PI * s as f64 / segments as f64;
                        self.push(Point3::new(r * th.cos(), r * th.sin(), z))
                    })
                    .collect();
                rings.push(ring);
            }
        }
        for w in rings.windows(2) {
            let (lo, hi) = (&w[0], &w[1]);
            for s in 0..segments {
                let t = (s + 1) % segments;
                // Outward for a counter-clockwise ring seen from +z.
                if lo[s] != lo[t] {
                    self.triangles.push([lo[s], lo[t], hi[t]]);
                }
                if hi[s] != hi[t] {
                    self.triangles.push([lo[s], hi[t], hi[s]]);
                }
            }
        }
    }

    fn finish(self, name: &str, symmetric: bool) -> ModelMesh {
        ModelMesh::new(name, self.vertices, self.triangles, symmetric)
            .expect("primitive generators produce valid meshes")
    }
}

/// Axis-aligned box centered at the origin with every face split into
/// `subdiv × subdiv` cells.
pub fn make_box(name: &str, size: [f64; 3], subdiv: usize, symmetric: bool) -> ModelMesh {
    let n = subdiv.max(1);
    let [hx, hy, hz] = size.map(|s| s * 0.5);
    let (x, y, z) = (Vector3::new(size[0], 0.0, 0.0), Vector3::new(0.0, size[1], 0.0), Vector3::new(0.0, 0.0, size[2]));
    let mut b = Builder::default();
    b.quad(Point3::new(-hx, -hy, -hz), y, x, n, n); // -z
    b.quad(Point3::new(-hx, -hy, hz), x, y, n, n); // +z
    b.quad(Point3::new(-hx, -hy, -hz), x, z, n, n); // -y
    b.quad(Point3::new(-hx, hy, -hz), z, x, n, n); // +y
    b.quad(Point3::new(-hx, -hy, -hz), z, y, n, n); // -x
    b.quad(Point3::new(hx, -hy, -hz), y, z, n, n); // +x
    b.finish(name, symmetric)
}

/// Closed cylinder about z, centered at the origin.
pub fn make_cylinder(name: &str, radius: f64, height: f64, segments: usize, rings: usize) -> ModelMesh {
    let h = height * 0.5;
    let rings = rings.max(1);
    let mut profile = alloc::vec![(0.0, -h)];
    profile.extend((0..=rings).map(|k| (radius, -h + height * k as f64 / rings as f64)));
    profile.push((0.0, h));
    let mut b = Builder::default();
    b.revolve(&profile, segments.max(3));
    b.finish(name, true)
}

/// Cylinder with hemispherical end caps; `height` is the straight section.
pub fn make_capped_can(name: &str, radius: f64, height: f64, segments: usize, cap_rings: usize) -> ModelMesh {
    let h = height * 0.5;
    let cap_rings = cap_rings.max(1);
    let mut profile = Vec::new();
    for k in 0..=cap_rings {
        let phi = -FRAC_PI_2 + FRAC_PI_2 * k as f64 / cap_rings as f64;
        let r = if k == 0 { 0.0 } else { radius * phi.cos() };
        profile.push((r, -h + radius * phi.sin()));
    }
    for k in 0..=cap_rings {
        let phi = FRAC_PI_2 * k as f64 / cap_rings as f64;
        let r = if k == cap_rings { 0.0 } else { radius * phi.cos() };
        profile.push((r, h + radius * phi.sin()));
    }
    let mut b = Builder::default();
    b.revolve(&profile, segments.max(3));
    b.finish(name, true)
}

/// L-shaped bracket: an L profile in the xy plane (legs `length` long and
/// `thickness` thick) extruded by `depth` along z, recentered on its bounds.
pub fn make_l_bracket(name: &str, length: f64, thickness: f64, depth: f64, subdiv: usize) -> ModelMesh {
    let n = subdiv.max(1);
    let (l, t) = (length, thickness);
    // Counter-clockwise outline seen from +z.
    let outline = [(0.0, 0.0), (l, 0.0), (l, t), (t, t), (t, l), (0.0, l)];
    let off = Vector3::new(-l * 0.5, -l * 0.5, -depth * 0.5);
    let dz = Vector3::new(0.0, 0.0, depth);
    let mut b = Builder::default();
    for k in 0..outline.len() {
        let (x0, y0) = outline[k];
        let (x1, y1) = outline[(k + 1) % outline.len()];
        let edge = Vector3::new(x1 - x0, y1 - y0, 0.0);
        b.quad(Point3::new(x0, y0, 0.0) + off, edge, dz, n, n);
    }
    // Caps as two rectangles: the horizontal leg and the vertical leg above it.
    let rects = [((0.0, 0.0), (l, t)), ((0.0, t), (t, l))];
    for ((x0, y0), (x1, y1)) in rects {
        let (ex, ey) = (Vector3::new(x1 - x0, 0.0, 0.0), Vector3::new(0.0, y1 - y0, 0.0));
        b.quad(Point3::new(x0, y0, 0.0) + off, ey, ex, n, n);
        b.quad(Point3::new(x0, y0, depth) + off, ex, ey, n, n);
    }
    b.finish(name, false)
}

/// Planar square `{(±half, ±half, 0)}` with 4-fold symmetry about z.
pub fn make_square(name: &str, half: f64) -> ModelMesh {
    let v = alloc::vec![
        Point3::new(-half, -half, 0.0),
        Point3::new(half, -half, 0.0),
        Point3::new(half, half, 0.0),
        Point3::new(-half, half, 0.0),
    ];
    ModelMesh::new(name, v, alloc::vec![[0, 1, 2], [0, 2, 3]], true).expect("valid square")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signed_volume(m: &ModelMesh) -> f64 {
        m.triangles()
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| m.vertices()[i as usize].coords);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    #[test]
    fn box_volume_and_diameter() {
        let m = make_box("box", [0.1, 0.06, 0.04], 4, false);
        assert!((signed_volume(&m) - 0.1 * 0.06 * 0.04).abs() < 1e-12);
        let d = (0.1f64 * 0.1 + 0.06 * 0.06 + 0.04 * 0.04).sqrt();
        assert!((m.diameter() - d).abs() < 1e-12);
        assert_eq!(m.vertices().len(), 6 * 25);
    }

    #[test]
    fn revolved_meshes_wind_outward() {
        let c = make_cylinder("cyl", 0.03, 0.1, 32, 4);
        let v = signed_volume(&c);
        let inscribed = 0.5 * 32.0 * (2.0 * PI / 32.0).sin() * 0.03 * 0.03 * 0.1;
        assert!((v - inscribed).abs() < 1e-12, "{v} vs {inscribed}");
        let can = make_capped_can("can", 0.03, 0.06, 24, 6);
        assert!(signed_volume(&can) > 0.0);
        assert!(can.is_symmetric());
    }

    #[test]
    fn l_bracket_volume() {
        let m = make_l_bracket("l", 0.1, 0.03, 0.04, 3);
        let area = 0.1 * 0.03 + 0.03 * 0.07;
        assert!((signed_volume(&m) - area * 0.04).abs() < 1e-12);
        assert!(!m.is_symmetric());
    }

    #[test]
    fn validation_errors() {
        assert_eq!(ModelMesh::new("e", Vec::new(), Vec::new(), false), Err(MeshError::Empty));
        let v = alloc::vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)];
        assert!(matches!(
            ModelMesh::new("bad", v.clone(), alloc::vec![[0, 1, 2]], false),
            Err(MeshError::IndexOutOfRange { index: 2, .. })
        ));
        let same = alloc::vec![Point3::origin(); 3];
        assert_eq!(ModelMesh::new("z", same, Vec::new(), false), Err(MeshError::ZeroDiameter));
    }

    #[test]
    fn square_diameter() {
        let s = make_square("sq", 1.0);
        assert!((s.diameter() - 8.0f64.sqrt()).abs() < 1e-15);
    }
}
