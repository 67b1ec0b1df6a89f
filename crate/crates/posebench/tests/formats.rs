use std::path::Path;

use posebench::config::ExperimentConfig;
use posebench::corpus;
use posebench::io;
use posebench_core::pipeline::oracle_annotations;

#[test]
fn stack_round_trip_preserves_channels_at_f32_precision() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();
    let meshes = cfg.build_meshes(Path::new(".")).unwrap();
    let scene = corpus::render(&cfg, &meshes, 0).unwrap();
    let patch = scene.observed.crop(&posebench_core::BBox::new(10, 20, 70, 110));
    let path = dir.path().join("patch.bin");
    io::write_stack(&path, &patch).unwrap();
    let back = io::read_stack(&path).unwrap();

    assert_eq!(back.origin, patch.origin);
    assert_eq!(back.camera, patch.camera);
    assert_eq!(back.valid, patch.valid);
    assert_eq!(back.instance_id, patch.instance_id);
    assert_eq!(back.face, patch.face);
    assert_eq!(back.pe.len(), patch.pe.len());
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * b.abs().max(1.0);
    for k in 0..patch.depth.len() {
        assert!(close(back.depth.as_slice()[k], patch.depth.as_slice()[k]));
        for c in 0..2 {
            assert!(close(back.xy.as_slice()[k][c], patch.xy.as_slice()[k][c]));
        }
        match (back.abc.as_slice()[k], patch.abc.as_slice()[k]) {
            (Some(a), Some(b)) => assert!((0..3).all(|c| close(a[c], b[c]))),
            (a, b) => assert_eq!(a.is_some(), b.is_some()),
        }
    }

    let side: io::RasterSidecar = io::read_json(&dir.path().join("patch.json")).unwrap();
    assert_eq!((side.width, side.height), (90, 60));
    assert_eq!(side.channels, side.names.len());
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 4 * 90 * 60 * side.channels);
}

#[test]
fn truncated_raster_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();
    let meshes = cfg.build_meshes(Path::new(".")).unwrap();
    let scene = corpus::render(&cfg, &meshes, 1).unwrap();
    let path = dir.path().join("s.bin");
    io::write_stack(&path, &scene.clean).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(io::read_stack(&path).is_err());
}

#[test]
fn masks_survive_run_length_encoding() {
    let cfg = ExperimentConfig::default();
    let meshes = cfg.build_meshes(Path::new(".")).unwrap();
    for i in 0..5 {
        let scene = corpus::render(&cfg, &meshes, i).unwrap();
        for ann in oracle_annotations(&scene.observed) {
            let rle = io::RleMask::encode(&ann);
            let json = serde_json::to_string(&rle).unwrap();
            let back: io::RleMask = serde_json::from_str(&json).unwrap();
            let decoded = back.decode().unwrap();
            assert_eq!(decoded.bbox, ann.bbox);
            assert_eq!(decoded.mask, ann.mask);
        }
    }
}

#[test]
fn depth_preview_matches_observed_depth() {
    let cfg = ExperimentConfig::default();
    let meshes = cfg.build_meshes(Path::new(".")).unwrap();
    let scene = corpus::render(&cfg, &meshes, 2).unwrap();
    let o = &scene.observed;
    let (d, v) = io::parse_depth_pgm(&io::depth_pgm(&o.depth, &o.valid)).unwrap();
    assert_eq!(v, o.valid);
    for k in 0..d.len() {
        if v.as_slice()[k] {
            assert!((d.as_slice()[k] - o.depth.as_slice()[k]).abs() <= 5e-4 + 1e-12);
        }
    }
}
