use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use posebench_core::estimator::LossWeights;
use posebench_core::mesh::{make_box, make_capped_can, make_cylinder, make_l_bracket, make_square, ModelMesh};
use posebench_core::noise::NoiseSpec;
use posebench_core::pipeline::FillSchedule;
use posebench_core::render::Background;
use posebench_core::CameraIntrinsics;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, FieldIssue, HarnessError, Result};

/// Which denoising steps a cell applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AblationCell {
    #[serde(rename = "box")]
    pub bbox: bool,
    pub mask: bool,
    pub depth: bool,
}

impl AblationCell {
    pub const NONE: AblationCell = AblationCell { bbox: false, mask: false, depth: false };
    pub const BOX: AblationCell = AblationCell { bbox: true, mask: false, depth: false };
    pub const BOX_MASK: AblationCell = AblationCell { bbox: true, mask: true, depth: false };
    pub const FULL: AblationCell = AblationCell { bbox: true, mask: true, depth: true };

    /// The four cumulative cells, from no denoising to all steps.
    pub fn standard() -> Vec<AblationCell> {
        vec![Self::NONE, Self::BOX, Self::BOX_MASK, Self::FULL]
    }

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.bbox, "box"), (self.mask, "mask"), (self.depth, "depth")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|&(_, n)| n)
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    pub fn parse(label: &str) -> Option<AblationCell> {
        if label == "none" {
            return Some(Self::NONE);
        }
        let mut c = Self::NONE;
        for part in label.split('+') {
            match part {
                "box" => c.bbox = true,
                "mask" => c.mask = true,
                "depth" => c.depth = true,
                _ => return None,
            }
        }
        Some(c)
    }
}

impl fmt::Display for AblationCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeshShape {
    Box {
        size: [f64; 3],
        #[serde(default = "one")]
        subdiv: usize,
    },
    Cylinder {
        radius: f64,
        height: f64,
        #[serde(default = "segments")]
        segments: usize,
        #[serde(default = "one")]
        rings: usize,
    },
    CappedCan {
        radius: f64,
        height: f64,
        #[serde(default = "segments")]
        segments: usize,
        #[serde(default = "four")]
        cap_rings: usize,
    },
    LBracket {
        length: f64,
        thickness: f64,
        depth: f64,
        #[serde(default = "one")]
        subdiv: usize,
    },
    Square {
        half: f64,
    },
    /// ASCII PLY file; relative paths resolve against the config file.
    Ply {
        path: PathBuf,
    },
}

fn one() -> usize {
    1
}
fn four() -> usize {
    4
}
fn segments() -> usize {
    24
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshDescriptor {
    pub name: String,
    #[serde(flatten)]
    pub shape: MeshShape,
    /// Whether ADD(S) scores this class with ADD-S.
    pub symmetric: bool,
}

impl MeshDescriptor {
    pub fn build(&self, base_dir: &Path) -> Result<ModelMesh> {
        let n = self.name.as_str();
        let mesh = match &self.shape {
            MeshShape::Box { size, subdiv } => make_box(n, *size, *subdiv, self.symmetric),
            MeshShape::Cylinder { radius, height, segments, rings } => {
                make_cylinder(n, *radius, *height, *segments, *rings)
            }
            MeshShape::CappedCan { radius, height, segments, cap_rings } => {
                make_capped_can(n, *radius, *height, *segments, *cap_rings)
            }
            MeshShape::LBracket { length, thickness, depth, subdiv } => {
                make_l_bracket(n, *length, *thickness, *depth, *subdiv)
            }
            MeshShape::Square { half } => make_square(n, *half),
            MeshShape::Ply { path } => crate::io::read_ply(&base_dir.join(path), n)?,
        };
        Ok(mesh.with_symmetric(self.symmetric))
    }

    /// Checks shape parameters without touching the filesystem.
    fn issues(&self, at: &str, out: &mut Vec<FieldIssue>) {
        let mut bad = |field: &str, message: &str| {
            out.push(FieldIssue { field: format!("{at}.{field}"), message: message.into() });
        };
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if self.name.trim().is_empty() {
            bad("name", "must not be empty");
        }
        match &self.shape {
            MeshShape::Box { size, subdiv } => {
                if !size.iter().all(|&s| pos(s)) {
                    bad("size", "every edge length must be positive");
                }
                if *subdiv == 0 {
                    bad("subdiv", "must be at least 1");
                }
            }
            MeshShape::Cylinder { radius, height, segments, rings } => {
                if !pos(*radius) || !pos(*height) {
                    bad("radius", "radius and height must be positive");
                }
                if *segments < 3 || *rings == 0 {
                    bad("segments", "need at least 3 segments and 1 ring");
                }
            }
            MeshShape::CappedCan { radius, height, segments, cap_rings } => {
                if !pos(*radius) || !pos(*height) {
                    bad("radius", "radius and height must be positive");
                }
                if *segments < 3 || *cap_rings == 0 {
                    bad("segments", "need at least 3 segments and 1 cap ring");
                }
            }
            MeshShape::LBracket { length, thickness, depth, subdiv } => {
                if !pos(*length) || !pos(*thickness) || !pos(*depth) || thickness >= length {
                    bad("thickness", "need 0 < thickness < length and depth > 0");
                }
                if *subdiv == 0 {
                    bad("subdiv", "must be at least 1");
                }
            }
            MeshShape::Square { half } => {
                if !pos(*half) {
                    bad("half", "must be positive");
                }
            }
            MeshShape::Ply { path } => {
                if path.as_os_str().is_empty() {
                    bad("path", "must not be empty");
                }
            }
        }
    }
}

/// Four desk-scale objects: two asymmetric, two rotationally symmetric.
pub fn default_meshes() -> Vec<MeshDescriptor> {
    vec![
        MeshDescriptor {
            name: "box".into(),
            shape: MeshShape::Box { size: [0.12, 0.08, 0.05], subdiv: 3 },
            symmetric: false,
        },
        MeshDescriptor {
            name: "bracket".into(),
            shape: MeshShape::LBracket { length: 0.11, thickness: 0.03, depth: 0.05, subdiv: 2 },
            symmetric: false,
        },
        MeshDescriptor {
            name: "can".into(),
            shape: MeshShape::CappedCan { radius: 0.035, height: 0.07, segments: 24, cap_rings: 4 },
            symmetric: true,
        },
        MeshDescriptor {
            name: "cylinder".into(),
            shape: MeshShape::Cylinder { radius: 0.04, height: 0.11, segments: 24, rings: 3 },
            symmetric: true,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scene_count: usize,
    pub meshes: Vec<MeshDescriptor>,
    pub camera: CameraIntrinsics,
    /// `noise.seed` is ignored: each scene derives its own noise seed.
    pub noise: NoiseSpec,
    pub ablation_cells: Vec<AblationCell>,
    /// Leading share of scenes used to fit depth calibration; the rest are
    /// evaluated.
    pub train_fraction: f64,
    pub output_dir: PathBuf,
    /// Upper bound on objects per scene, each in its own image slot.
    pub instances_per_scene: usize,
    /// Object depth range in meters.
    pub depth_range: [f64; 2],
    pub background: Background,
    /// Maximum correspondences per instance; 0 keeps all.
    pub subsample: usize,
    /// Gaussian noise added to the oracle abc map (meters).
    pub abc_noise: f64,
    pub crop_margin: f64,
    pub fill: FillSchedule,
    /// Randomly dilate or erode annotation masks before cropping.
    pub mask_degradation: bool,
    pub workers: usize,
    /// Calibration fractions for the real-data study.
    pub fractions: Vec<f64>,
    pub loss_weights: LossWeights,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            scene_count: 40,
            meshes: default_meshes(),
            camera: CameraIntrinsics::desk_default(),
            noise: NoiseSpec::desk_default(),
            ablation_cells: AblationCell::standard(),
            train_fraction: 0.5,
            output_dir: PathBuf::from("out"),
            instances_per_scene: 2,
            depth_range: [0.55, 0.8],
            background: Background { plane_depth: 1.5, clutter_boxes: 2, clutter_seed: 0 },
            subsample: 0,
            abc_noise: 0.0,
            crop_margin: 0.0,
            fill: FillSchedule::default(),
            mask_degradation: false,
            workers: 1,
            fractions: vec![0.0, 0.1, 0.25, 0.5, 1.0],
            loss_weights: LossWeights::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON config. Relative PLY paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<(ExperimentConfig, PathBuf), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    /// Number of leading scenes in the calibration split.
    pub fn train_count(&self) -> usize {
        (self.train_fraction * self.scene_count as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut out = Vec::new();
        let mut bad = |field: &str, message: String| out.push(FieldIssue { field: field.into(), message });

        if self.scene_count == 0 {
            bad("scene_count", "must be at least 1".into());
        }
        if self.meshes.is_empty() {
            bad("meshes", "at least one mesh is required".into());
        }
        let mut names = BTreeSet::new();
        for (k, m) in self.meshes.iter().enumerate() {
            if !names.insert(m.name.as_str()) {
                bad(&format!("meshes[{k}].name"), format!("duplicate class name {:?}", m.name));
            }
        }
        if let Err(e) = self.camera.validate() {
            bad("camera", e.to_string());
        }
        if let Err(e) = self.noise.validate() {
            bad("noise", e.to_string());
        }
        if self.ablation_cells.is_empty() {
            bad("ablation_cells", "at least one cell is required".into());
        }
        let mut seen = BTreeSet::new();
        for (k, c) in self.ablation_cells.iter().enumerate() {
            if !seen.insert(*c) {
                bad(&format!("ablation_cells[{k}]"), format!("duplicate cell {}", c.label()));
            }
            if c.mask && !c.bbox {
                bad(&format!("ablation_cells[{k}]"), "mask requires box".into());
            }
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            bad("train_fraction", "must lie in [0, 1]".into());
        } else if self.scene_count > 0 && self.train_count() >= self.scene_count {
            bad("train_fraction", format!("leaves no test scene out of {}", self.scene_count));
        }
        if !(1..=4).contains(&self.instances_per_scene) {
            bad("instances_per_scene", "must lie in 1..=4".into());
        }
        let [lo, hi] = self.depth_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            bad("depth_range", "need 0 < near <= far".into());
        } else if hi >= self.background.plane_depth {
            bad("depth_range", "objects must lie in front of the background plane".into());
        }
        if !(self.background.plane_depth > 0.0 && self.background.plane_depth.is_finite()) {
            bad("background.plane_depth", "must be positive".into());
        }
        if !(self.abc_noise >= 0.0 && self.abc_noise.is_finite()) {
            bad("abc_noise", "must be finite and >= 0".into());
        }
        if !(self.crop_margin >= 0.0 && self.crop_margin.is_finite()) {
            bad("crop_margin", "must be finite and >= 0".into());
        }
        if self.fill.kernels.is_empty() {
            bad("fill.kernels", "at least one kernel is required".into());
        }
        if self.fill.kernels.iter().any(|k| k.size % 2 == 0) {
            bad("fill.kernels", "kernel sizes must be odd".into());
        }
        if self.workers == 0 {
            bad("workers", "must be at least 1".into());
        }
        if let Some(f) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            bad("fractions", format!("{f} is outside [0, 1]"));
        }
        if self.loss_weights.validate().is_err() {
            bad("loss_weights", "weights must be finite and >= 0".into());
        }
        for (k, m) in self.meshes.iter().enumerate() {
            m.issues(&format!("meshes[{k}]"), &mut out);
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(out))
        }
    }

    pub fn build_meshes(&self, base_dir: &Path) -> Result<Vec<ModelMesh>> {
        self.meshes.iter().map(|m| m.build(base_dir)).collect()
    }
}

impl From<Vec<FieldIssue>> for HarnessError {
    fn from(v: Vec<FieldIssue>) -> Self {
        HarnessError::Config(ConfigError::Invalid(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_labels_round_trip() {
        for c in AblationCell::standard() {
            assert_eq!(AblationCell::parse(&c.label()), Some(c));
        }
        assert_eq!(AblationCell::FULL.label(), "box+mask+depth");
        assert_eq!(AblationCell::parse("mask+sparkle"), None);
    }

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), c);
    }

    #[test]
    fn issues_name_their_fields() {
        let c = ExperimentConfig {
            scene_count: 0,
            train_fraction: 1.5,
            ablation_cells: vec![AblationCell::NONE, AblationCell::NONE],
            workers: 0,
            ..ExperimentConfig::default()
        };
        let err = c.validate().unwrap_err();
        let fields: Vec<&str> = err.issues().iter().map(|i| i.field.as_str()).collect();
        assert!(fields.contains(&"scene_count"));
        assert!(fields.contains(&"train_fraction"));
        assert!(fields.contains(&"ablation_cells[1]"));
        assert!(fields.contains(&"workers"));
    }

    #[test]
    fn train_split_must_leave_a_test_scene() {
        let c = ExperimentConfig { scene_count: 1, train_fraction: 1.0, ..ExperimentConfig::default() };
        assert_eq!(c.validate().unwrap_err().issues()[0].field, "train_fraction");
        let c = ExperimentConfig { scene_count: 1, train_fraction: 0.9, ..ExperimentConfig::default() };
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"seed": 3, "scene_count": 5}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.meshes.len(), 4);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sead": 3}"#).is_err());
    }
}
