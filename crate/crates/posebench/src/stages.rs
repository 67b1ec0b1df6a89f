//! File-backed pipeline stages behind the CLI. Each stage reads the previous
//! stage's outputs from the run directory:
//!
//! ```text
//! meshes/<class>.ply
//! scenes/NNNN/spec.json, clean.{bin,json}           simulate
//! scenes/NNNN/observed.{bin,json}, depth.pgm, masks.json   corrupt
//! calibration.json, patches/<cell>/NNNN_<id>.{bin,json}     denoise
//! estimates.json                                     estimate
//! report.csv, report.json                            evaluate
//! ```

use std::path::{Path, PathBuf};

use posebench_core::mesh::ModelMesh;
use posebench_core::noise::corrupt as corrupt_stack;
use posebench_core::pipeline::InstanceAnnotation;
use posebench_core::render::reproject_labels;
use serde::{Deserialize, Serialize};

use crate::config::{AblationCell, ExperimentConfig};
use crate::corpus::{self, SceneRender, SceneSpec};
use crate::error::{HarnessError, Result};
use crate::experiments::{self, CellReport, EstimateRecord, Losses};
use crate::io;

pub fn scene_dir(out: &Path, index: usize) -> PathBuf {
    out.join("scenes").join(format!("{index:04}"))
}

pub fn patch_path(out: &Path, cell: AblationCell, scene: usize, id: u32) -> PathBuf {
    out.join("patches").join(cell.label()).join(format!("{scene:04}_{id}.bin"))
}

fn load_scene(out: &Path, index: usize) -> Result<SceneRender> {
    let dir = scene_dir(out, index);
    Ok(SceneRender {
        spec: io::read_json(&dir.join("spec.json"))?,
        clean: io::read_stack(&dir.join("clean.bin"))?,
        observed: io::read_stack(&dir.join("observed.bin"))?,
    })
}

/// Renders every scene and writes meshes, specs and clean stacks.
pub fn simulate(cfg: &ExperimentConfig, meshes: &[ModelMesh], out: &Path) -> Result<()> {
    for m in meshes {
        io::write_ply(&out.join("meshes").join(format!("{}.ply", m.name())), m)?;
    }
    io::write_json(&out.join("config.json"), cfg)?;
    experiments::with_pool(cfg.workers, || {
        use rayon::prelude::*;
        (0..cfg.scene_count).into_par_iter().try_for_each(|i| {
            let spec = corpus::scene_spec(cfg, i);
            let clean = corpus::render_clean(cfg, meshes, &spec)?;
            let dir = scene_dir(out, i);
            io::write_json(&dir.join("spec.json"), &spec)?;
            io::write_stack(&dir.join("clean.bin"), &clean)
        })
    })?
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskFile {
    masks: Vec<io::RleMask>,
}

/// Applies each scene's noise to its clean stack; writes the observed
/// stack, a PGM depth preview and visible-instance masks.
pub fn corrupt(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    experiments::with_pool(cfg.workers, || {
        use rayon::prelude::*;
        (0..cfg.scene_count).into_par_iter().try_for_each(|i| {
            let dir = scene_dir(out, i);
            let spec: SceneSpec = io::read_json(&dir.join("spec.json"))?;
            let clean = io::read_stack(&dir.join("clean.bin"))?;
            let observed = corrupt_stack(&clean, &spec.noise);
            io::write_stack(&dir.join("observed.bin"), &observed)?;
            io::write_depth_pgm(&dir.join("depth.pgm"), &observed.depth, &observed.valid)?;
            let scene = SceneRender { spec, clean, observed };
            let masks = experiments::visible_annotations(cfg, &scene).iter().map(io::RleMask::encode).collect();
            io::write_json(&dir.join("masks.json"), &MaskFile { masks })
        })
    })?
}

fn load_masks(out: &Path, index: usize) -> Result<Vec<InstanceAnnotation>> {
    let path = scene_dir(out, index).join("masks.json");
    let file: MaskFile = io::read_json(&path)?;
    file.masks
        .iter()
        .map(|m| m.decode().ok_or_else(|| HarnessError::format(&path, "run lengths do not cover the frame")))
        .collect()
}

/// Fits calibration on the training scenes and writes one patch per test
/// instance and cell. Cells that cannot run for an instance write nothing.
pub fn denoise(cfg: &ExperimentConfig, meshes: &[ModelMesh], out: &Path) -> Result<()> {
    experiments::with_pool(cfg.workers, || -> Result<()> {
        use rayon::prelude::*;
        let samples: Vec<_> = (0..cfg.train_count())
            .into_par_iter()
            .map(|i| experiments::calibration_samples(cfg, meshes, &load_scene(out, i)?))
            .collect::<Vec<Result<_>>>()
            .into_iter()
            .collect::<Result<_>>()?;
        let table = experiments::fit_table(&samples);
        io::write_calibration(&out.join("calibration.json"), &table)?;
        (cfg.train_count()..cfg.scene_count).into_par_iter().try_for_each(|i| {
            let scene = load_scene(out, i)?;
            let anns = load_masks(out, i)?;
            for id in scene.rendered_instances() {
                let class = meshes[scene.spec.instances[id as usize - 1].mesh].name();
                let base = experiments::oracle_stack(&scene, id);
                let ann = anns.iter().find(|a| a.instance_id == id);
                for &cell in &cfg.ablation_cells {
                    let calib = experiments::calibration_for(&table, class);
                    if let Some(p) = experiments::evaluation_patch(cfg, &base, ann, cell, &calib) {
                        io::write_stack(&patch_path(out, cell, i, id), &p)?;
                    }
                }
            }
            Ok(())
        })
    })?
}

/// Fits a pose to every denoised patch; missing patches are failed fits.
pub fn estimate(cfg: &ExperimentConfig, meshes: &[ModelMesh], out: &Path) -> Result<Vec<EstimateRecord>> {
    let per_scene = experiments::with_pool(cfg.workers, || {
        use rayon::prelude::*;
        (cfg.train_count()..cfg.scene_count)
            .into_par_iter()
            .map(|i| -> Result<Vec<EstimateRecord>> {
                let dir = scene_dir(out, i);
                let spec: SceneSpec = io::read_json(&dir.join("spec.json"))?;
                let clean = io::read_stack(&dir.join("clean.bin"))?;
                let mut recs = Vec::new();
                for &cell in &cfg.ablation_cells {
                    for id in clean.instance_ids() {
                        let placed = spec.instances[id as usize - 1];
                        let mesh = &meshes[placed.mesh];
                        let path = patch_path(out, cell, i, id);
                        let (pose, losses) = if path.exists() {
                            let patch = io::read_stack(&path)?;
                            let input = experiments::estimator_input(cfg, spec.scene_seed, id, &patch);
                            let pose = experiments::estimate_pose(cfg, spec.scene_seed, id, &input);
                            let labels = reproject_labels(mesh, &placed.pose, &clean, id)?;
                            let l = experiments::losses(
                                cfg,
                                mesh,
                                &placed.pose,
                                pose.as_ref(),
                                &patch,
                                &input,
                                &labels,
                                id,
                            );
                            (pose, l)
                        } else {
                            (None, Losses::default())
                        };
                        let mut rec = EstimateRecord {
                            scene: i,
                            scene_seed: spec.scene_seed,
                            instance: id,
                            class: mesh.name().into(),
                            cell: cell.label(),
                            pose,
                            gt: placed.pose,
                            add: None,
                            adds: None,
                            losses,
                        };
                        let r = rec.result(mesh);
                        rec.add = r.add.is_finite().then_some(r.add);
                        rec.adds = r.adds.is_finite().then_some(r.adds);
                        recs.push(rec);
                    }
                }
                Ok(recs)
            })
            .collect::<Vec<_>>()
    })?;
    let mut records = Vec::new();
    for r in per_scene {
        records.extend(r?);
    }
    // Group by cell, keeping scene order within each cell.
    let order = |label: &str| cfg.ablation_cells.iter().position(|c| c.label() == label);
    records.sort_by_key(|r| (order(&r.cell), r.scene, r.instance));
    io::write_json(&out.join("estimates.json"), &records)?;
    Ok(records)
}

/// Scores estimates per cell, in order of first appearance.
pub fn evaluate(
    meshes: &[ModelMesh],
    records: &[EstimateRecord],
) -> Result<Vec<(String, posebench_core::metrics::MetricReport)>> {
    let mut cells: Vec<String> = Vec::new();
    for r in records {
        if !cells.contains(&r.cell) {
            cells.push(r.cell.clone());
        }
    }
    cells
        .into_iter()
        .map(|cell| {
            let results = records
                .iter()
                .filter(|r| r.cell == cell)
                .map(|r| {
                    let mesh = meshes
                        .iter()
                        .find(|m| m.name() == r.class)
                        .ok_or_else(|| HarnessError::format("estimates", format!("unknown class {:?}", r.class)))?;
                    Ok(r.result(mesh))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((cell, posebench_core::metrics::aggregate_report(results)?))
        })
        .collect()
}

pub fn write_evaluation(out: &Path, reports: &[(String, posebench_core::metrics::MetricReport)]) -> Result<()> {
    io::write_cell_reports(&out.join("report.csv"), reports.iter().map(|(c, r)| (c.clone(), r)))?;
    io::write_json(&out.join("report.json"), reports)
}

/// Writes the ablation table (CSV and JSON), calibration and poses.
pub fn write_ablation(out: &Path, outcome: &experiments::AblationOutcome) -> Result<()> {
    io::write_cell_reports(&out.join("ablation.csv"), outcome.cells.iter().map(|c| (c.cell.label(), &c.report)))?;
    let summary: Vec<&CellReport> = outcome.cells.iter().collect();
    io::write_json(&out.join("ablation.json"), &summary)?;
    io::write_calibration(&out.join("calibration.json"), &outcome.calibration)?;
    io::write_json(&out.join("poses.json"), &outcome.estimates)
}

pub fn write_fractions(out: &Path, rows: &[experiments::FractionRow]) -> Result<()> {
    io::write_fraction_table(&out.join("fractions.csv"), rows)?;
    io::write_json(&out.join("fractions.json"), rows)
}

pub fn write_stats(out: &Path, stats: &posebench_core::noise::ErrorStats) -> Result<()> {
    io::write_histogram(&out.join("noise_hist.csv"), &stats.histogram)?;
    io::write_json(&out.join("noise_stats.json"), stats)
}
