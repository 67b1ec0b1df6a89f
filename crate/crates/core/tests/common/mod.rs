#![allow(dead_code)]

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use posebench_core::geometry::{CameraIntrinsics, Point3, Pose};
use posebench_core::mesh::{make_box, make_capped_can, make_cylinder, make_l_bracket, ModelMesh};
use posebench_core::render::{render_scene, Background, ChannelStack, Scene, SceneInstance};
use posebench_core::rng::{self, Stream};

pub fn stream(seed: u64) -> Stream {
    rng::substream(seed, &[0x7465_7374])
}

pub fn random_rotation(r: &mut Stream) -> UnitQuaternion<f64> {
    let q = Quaternion::new(rng::normal(r), rng::normal(r), rng::normal(r), rng::normal(r));
    UnitQuaternion::from_quaternion(q)
}

pub fn random_pose(r: &mut Stream) -> Pose {
    let t = Vector3::new(
        rng::uniform_range(r, -1.0, 1.0),
        rng::uniform_range(r, -1.0, 1.0),
        rng::uniform_range(r, -1.0, 1.0),
    );
    Pose::from_quaternion(random_rotation(r), t)
}

pub fn random_points(r: &mut Stream, n: usize, scale: f64) -> Vec<Point3> {
    (0..n).map(|_| Point3::new(scale * rng::normal(r), scale * rng::normal(r), scale * rng::normal(r))).collect()
}

pub fn test_meshes() -> Vec<ModelMesh> {
    vec![
        make_box("box", [0.12, 0.08, 0.06], 2, false),
        make_cylinder("cylinder", 0.04, 0.12, 24, 2),
        make_l_bracket("bracket", 0.12, 0.03, 0.05, 2),
        make_capped_can("can", 0.035, 0.08, 20, 4),
    ]
}

/// Pose that puts an object roughly at pixel `(u, v)` at depth `z`.
pub fn pose_at(r: &mut Stream, cam: &CameraIntrinsics, u: f64, v: f64, z: f64) -> Pose {
    let c = cam.backproject(u, v, z).unwrap();
    Pose::from_quaternion(random_rotation(r), c.coords)
}

/// One or two instances of the test meshes, without overlap, over the
/// background plane.
pub fn random_scene<'a>(seed: u64, meshes: &'a [ModelMesh]) -> (Scene<'a>, Vec<usize>) {
    let mut r = stream(seed);
    let cam = CameraIntrinsics::desk_default();
    let count = 1 + rng::index(&mut r, 2);
    let slots = [(45.0, 60.0), (115.0, 60.0)];
    let mut instances = Vec::new();
    let mut which = Vec::new();
    for &(u, v) in slots.iter().take(count) {
        let m = rng::index(&mut r, meshes.len());
        let z = rng::uniform_range(&mut r, 0.55, 0.8);
        let du = rng::uniform_range(&mut r, -6.0, 6.0);
        let dv = rng::uniform_range(&mut r, -6.0, 6.0);
        instances.push(SceneInstance { mesh: &meshes[m], pose: pose_at(&mut r, &cam, u + du, v + dv, z) });
        which.push(m);
    }
    (Scene { camera: cam, instances, background: Background::default() }, which)
}

pub fn render_random(seed: u64, meshes: &[ModelMesh]) -> (ChannelStack, Vec<(usize, Pose)>) {
    let (scene, which) = random_scene(seed, meshes);
    let stack = render_scene(&scene).unwrap();
    let poses = scene.instances.iter().zip(which).map(|(i, m)| (m, i.pose)).collect();
    (stack, poses)
}
