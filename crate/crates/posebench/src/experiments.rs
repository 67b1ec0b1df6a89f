//! Ablation grid, calibration-fraction study and depth error statistics.
//!
//! Every cell starts from the same evaluation stack: the observed scene with
//! the object-coordinate oracle (`abc` and the instance footprint) taken from
//! the clean render. Cells then differ only in what they crop, mask and
//! repair, so score differences are attributable to the denoising steps.

use std::collections::BTreeMap;

use posebench_core::estimator::{
    build_correspondences, corrupt_abc, fit_pose, loss_abc, loss_depth, loss_rt, loss_total, DepthFields,
};
use posebench_core::mesh::ModelMesh;
use posebench_core::metrics::{aggregate_report, InstanceResult, MetricReport};
use posebench_core::noise::{ErrorPool, ErrorStats, HIST_BINS, HIST_BIN_WIDTH};
use posebench_core::pipeline::{
    apply_calibration, crop_and_mask, crop_box, fill_holes, fit_calibration, oracle_annotations, random_degradation,
    CalibrationModel, CalibrationSample, InstanceAnnotation,
};
use posebench_core::raster::{BBox, Raster};
use posebench_core::render::{reproject_labels, ChannelStack, ReprojectedLabels};
use posebench_core::rng::{self, label};
use posebench_core::Pose;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AblationCell, ExperimentConfig};
use crate::corpus::{self, SceneRender};
use crate::error::{HarnessError, Result};

/// Per-class depth calibration, keyed by class name.
pub type CalibrationTable = BTreeMap<String, CalibrationModel>;

/// Calibration for `class`, identity when none was fit.
pub fn calibration_for(table: &CalibrationTable, class: &str) -> CalibrationModel {
    table.get(class).copied().unwrap_or(CalibrationModel::IDENTITY)
}

/// Runs `f` on a pool of `workers` threads.
pub fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Ordered parallel map over scene indices, failing on the first error in
/// index order.
fn par_scenes<T: Send>(range: std::ops::Range<usize>, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    let out: Vec<Result<T>> = range.into_par_iter().map(f).collect();
    out.into_iter().collect()
}

/// Visible-instance annotations of the observed frame, optionally degraded.
pub fn visible_annotations(cfg: &ExperimentConfig, scene: &SceneRender) -> Vec<InstanceAnnotation> {
    let anns = oracle_annotations(&scene.observed);
    if !cfg.mask_degradation {
        return anns;
    }
    let seed = rng::derive_key(scene.spec.scene_seed, &[label::MASK]);
    anns.iter().map(|a| random_degradation(a, seed)).collect()
}

/// Observed channels with the clean footprint and `abc` of instance `id`;
/// every other pixel is background.
pub fn oracle_stack(scene: &SceneRender, id: u32) -> ChannelStack {
    let mut s = scene.observed.clone();
    let clean_ids = scene.clean.instance_id.as_slice();
    let clean_abc = scene.clean.abc.as_slice();
    for (k, (sid, sabc)) in s.instance_id.as_mut_slice().iter_mut().zip(s.abc.as_mut_slice()).enumerate() {
        let own = clean_ids[k] == id;
        *sid = if own { id } else { 0 };
        *sabc = if own { clean_abc[k] } else { None };
    }
    s
}

/// Applies the cell's denoising steps to the evaluation stack of one
/// instance. `None` when a step cannot run (no visible annotation, nothing
/// left to fill).
pub fn evaluation_patch(
    cfg: &ExperimentConfig,
    base: &ChannelStack,
    ann: Option<&InstanceAnnotation>,
    cell: AblationCell,
    calibration: &CalibrationModel,
) -> Option<ChannelStack> {
    let mut patch = match (cell.bbox, cell.mask) {
        (false, _) => base.clone(),
        (true, false) => crop_box(base, ann?, cfg.crop_margin).ok()?,
        (true, true) => crop_and_mask(base, ann?, cfg.crop_margin).ok()?,
    };
    if cell.depth {
        patch = fill_holes(&patch, &cfg.fill).ok()?;
        patch = apply_calibration(&patch, calibration);
    }
    Some(patch)
}

/// The patch as the estimator sees it: `abc` perturbed when the config
/// simulates an imperfect abc head.
pub fn estimator_input(cfg: &ExperimentConfig, scene_seed: u64, id: u32, patch: &ChannelStack) -> ChannelStack {
    if cfg.abc_noise > 0.0 {
        corrupt_abc(patch, cfg.abc_noise, rng::derive_key(scene_seed, &[label::ABC, id as u64]))
    } else {
        patch.clone()
    }
}

/// Fits a pose to the input's correspondences; `None` when the fit fails.
pub fn estimate_pose(cfg: &ExperimentConfig, scene_seed: u64, id: u32, input: &ChannelStack) -> Option<Pose> {
    let seed = rng::derive_key(scene_seed, &[label::SUBSAMPLE, id as u64]);
    let c = build_correspondences(input, cfg.subsample, seed).ok()?;
    fit_pose(&c).ok()
}

/// Training-loss terms evaluated on the final patch and pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub rt: Option<f64>,
    pub abc: Option<f64>,
    pub depth: Option<f64>,
    pub total: Option<f64>,
}

fn patch_box(p: &ChannelStack) -> BBox {
    BBox::new(p.origin.0, p.origin.1, p.origin.0 + p.height(), p.origin.1 + p.width())
}

fn abc_map(s: &ChannelStack) -> Raster<[f64; 3]> {
    s.abc.map(|v| v.unwrap_or([0.0; 3]))
}

/// Loss terms of one estimate. `patch` carries the oracle `abc`, `input`
/// what the estimator consumed.
#[allow(clippy::too_many_arguments)]
pub fn losses(
    cfg: &ExperimentConfig,
    mesh: &ModelMesh,
    gt: &Pose,
    pose: Option<&Pose>,
    patch: &ChannelStack,
    input: &ChannelStack,
    labels: &ReprojectedLabels,
    id: u32,
) -> Losses {
    let rt = pose.map(|p| loss_rt(p, gt, mesh));
    let labels = labels.crop(&patch_box(patch));
    let own = patch.instance_id.map(|&v| v == id);
    let abc_mask = Raster::from_fn(patch.height(), patch.width(), |i, j| own[(i, j)] && patch.abc[(i, j)].is_some());
    let abc = loss_abc(&abc_map(input), &abc_map(patch), &abc_mask).ok();
    let depth_mask = Raster::from_fn(patch.height(), patch.width(), |i, j| {
        own[(i, j)] && patch.valid[(i, j)] && labels.mask[(i, j)]
    });
    let depth = loss_depth(DepthFields::of_stack(patch), DepthFields::of_labels(&labels), &depth_mask).ok();
    let total = match (rt, abc, depth) {
        (Some(a), Some(b), Some(c)) => Some(loss_total(a, b, c, &cfg.loss_weights)),
        _ => None,
    };
    Losses { rt, abc, depth, total }
}

/// One pose estimate, with enough context to recompute it in isolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub scene: usize,
    pub scene_seed: u64,
    pub instance: u32,
    pub class: String,
    pub cell: String,
    /// `None` when the fit failed; scored as infinite error.
    pub pose: Option<Pose>,
    pub gt: Pose,
    pub add: Option<f64>,
    pub adds: Option<f64>,
    pub losses: Losses,
}

impl EstimateRecord {
    pub fn result(&self, mesh: &ModelMesh) -> InstanceResult {
        InstanceResult::score(self.scene as u64, self.instance, mesh, self.pose.as_ref(), &self.gt)
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// An evaluation variant: a cell and the calibration table its depth step uses.
#[derive(Debug, Clone, Copy)]
struct Variant<'a> {
    cell: AblationCell,
    table: &'a CalibrationTable,
}

/// Evaluates every rendered instance of one scene under each variant.
fn evaluate_scene(
    cfg: &ExperimentConfig,
    meshes: &[ModelMesh],
    scene: &SceneRender,
    variants: &[Variant],
) -> Result<Vec<Vec<EstimateRecord>>> {
    let anns = visible_annotations(cfg, scene);
    let mut out = vec![Vec::new(); variants.len()];
    for id in scene.rendered_instances() {
        let placed = scene.spec.instances[id as usize - 1];
        let mesh = &meshes[placed.mesh];
        let gt = placed.pose;
        let labels = reproject_labels(mesh, &gt, &scene.clean, id)?;
        let base = oracle_stack(scene, id);
        let ann = anns.iter().find(|a| a.instance_id == id);
        for (v, records) in variants.iter().zip(out.iter_mut()) {
            let calib = calibration_for(v.table, mesh.name());
            let patch = evaluation_patch(cfg, &base, ann, v.cell, &calib);
            let (pose, l) = match &patch {
                Some(p) => {
                    let input = estimator_input(cfg, scene.spec.scene_seed, id, p);
                    let pose = estimate_pose(cfg, scene.spec.scene_seed, id, &input);
                    let l = losses(cfg, mesh, &gt, pose.as_ref(), p, &input, &labels, id);
                    (pose, l)
                }
                None => (None, Losses::default()),
            };
            let scored = InstanceResult::score(scene.spec.index as u64, id, mesh, pose.as_ref(), &gt);
            records.push(EstimateRecord {
                scene: scene.spec.index,
                scene_seed: scene.spec.scene_seed,
                instance: id,
                class: mesh.name().into(),
                cell: v.cell.label(),
                pose,
                gt,
                add: finite(scored.add),
                adds: finite(scored.adds),
                losses: l,
            });
        }
    }
    Ok(out)
}

/// Depth samples of one instance for fitting calibration.
#[derive(Debug, Clone)]
pub struct OwnedSample {
    pub class: String,
    pub observed: Raster<f64>,
    pub valid: Raster<bool>,
    pub dprime: Raster<f64>,
    pub mask: Raster<bool>,
}

impl OwnedSample {
    pub fn borrow(&self) -> CalibrationSample<'_> {
        CalibrationSample { observed: &self.observed, valid: &self.valid, dprime: &self.dprime, mask: &self.mask }
    }
}

/// Calibration samples from the visible, masked patch of every instance:
/// measured depth on originally valid pixels against reprojected labels.
pub fn calibration_samples(
    cfg: &ExperimentConfig,
    meshes: &[ModelMesh],
    scene: &SceneRender,
) -> Result<Vec<OwnedSample>> {
    let mut out = Vec::new();
    for ann in visible_annotations(cfg, scene) {
        let id = ann.instance_id;
        let placed = scene.spec.instances[id as usize - 1];
        let mesh = &meshes[placed.mesh];
        let labels = reproject_labels(mesh, &placed.pose, &scene.clean, id)?;
        let Ok(patch) = crop_and_mask(&scene.observed, &ann, cfg.crop_margin) else { continue };
        let labels = labels.crop(&patch_box(&patch));
        let mask = Raster::from_fn(patch.height(), patch.width(), |i, j| {
            labels.mask[(i, j)] && patch.instance_id[(i, j)] == id
        });
        out.push(OwnedSample {
            class: mesh.name().into(),
            observed: patch.depth,
            valid: patch.valid,
            dprime: labels.depth,
            mask,
        });
    }
    Ok(out)
}

/// Fits one model per class from `scenes` (in order). Classes whose fit is
/// degenerate keep the identity.
pub fn fit_table(scenes: &[Vec<OwnedSample>]) -> CalibrationTable {
    let mut by_class: BTreeMap<&str, Vec<CalibrationSample>> = BTreeMap::new();
    for s in scenes.iter().flatten() {
        by_class.entry(s.class.as_str()).or_default().push(s.borrow());
    }
    by_class
        .into_iter()
        .map(|(class, samples)| (class.to_string(), fit_calibration(&samples).unwrap_or(CalibrationModel::IDENTITY)))
        .collect()
}

fn train_samples(cfg: &ExperimentConfig, meshes: &[ModelMesh], n: usize) -> Result<Vec<Vec<OwnedSample>>> {
    par_scenes(0..n, |i| calibration_samples(cfg, meshes, &corpus::render(cfg, meshes, i)?))
}

fn evaluate_test(
    cfg: &ExperimentConfig,
    meshes: &[ModelMesh],
    variants: &[Variant],
) -> Result<Vec<Vec<EstimateRecord>>> {
    let per_scene = par_scenes(cfg.train_count()..cfg.scene_count, |i| {
        evaluate_scene(cfg, meshes, &corpus::render(cfg, meshes, i)?, variants)
    })?;
    let mut out = vec![Vec::new(); variants.len()];
    for scene in per_scene {
        for (acc, recs) in out.iter_mut().zip(scene) {
            acc.extend(recs);
        }
    }
    Ok(out)
}

fn report(meshes: &[ModelMesh], records: &[EstimateRecord]) -> Result<MetricReport> {
    let results = records
        .iter()
        .map(|r| {
            let mesh = meshes.iter().find(|m| m.name() == r.class).expect("record class comes from the mesh list");
            r.result(mesh)
        })
        .collect();
    Ok(aggregate_report(results)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: AblationCell,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub cells: Vec<CellReport>,
    pub calibration: CalibrationTable,
    pub estimates: Vec<EstimateRecord>,
}

/// Fits calibration on the training scenes, then scores every cell on the
/// test scenes.
pub fn run_ablation(cfg: &ExperimentConfig, meshes: &[ModelMesh]) -> Result<AblationOutcome> {
    cfg.validate()?;
    with_pool(cfg.workers, || {
        let table = fit_table(&train_samples(cfg, meshes, cfg.train_count())?);
        let variants: Vec<Variant> = cfg.ablation_cells.iter().map(|&cell| Variant { cell, table: &table }).collect();
        let records = evaluate_test(cfg, meshes, &variants)?;
        let cells = cfg
            .ablation_cells
            .iter()
            .zip(&records)
            .map(|(&cell, recs)| Ok(CellReport { cell, report: report(meshes, recs)? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(AblationOutcome { cells, calibration: table.clone(), estimates: records.into_iter().flatten().collect() })
    })?
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionRow {
    pub fraction: f64,
    /// Training scenes the calibration was fit on.
    pub calibration_scenes: usize,
    pub cell: AblationCell,
    pub report: MetricReport,
}

/// Number of training scenes used at `fraction`.
pub fn fraction_scenes(cfg: &ExperimentConfig, fraction: f64) -> usize {
    (fraction * cfg.train_count() as f64).round() as usize
}

/// Scores every cell with calibration fit on leading subsets of the
/// training scenes. Cells without the depth step do not depend on the
/// fraction and are evaluated once.
pub fn run_real_fraction_study(
    cfg: &ExperimentConfig,
    meshes: &[ModelMesh],
    fractions: &[f64],
) -> Result<Vec<FractionRow>> {
    cfg.validate()?;
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(vec![crate::error::FieldIssue {
            field: "fractions".into(),
            message: format!("{f} is outside [0, 1]"),
        }]
        .into());
    }
    with_pool(cfg.workers, || {
        let samples = train_samples(cfg, meshes, cfg.train_count())?;
        let tables: Vec<CalibrationTable> =
            fractions.iter().map(|&f| fit_table(&samples[..fraction_scenes(cfg, f)])).collect();
        let identity = CalibrationTable::new();

        let mut variants = Vec::new();
        let mut slot = Vec::new();
        for &cell in &cfg.ablation_cells {
            if cell.depth {
                let mut idx = Vec::new();
                for t in &tables {
                    idx.push(variants.len());
                    variants.push(Variant { cell, table: t });
                }
                slot.push(idx);
            } else {
                slot.push(vec![variants.len(); fractions.len()]);
                variants.push(Variant { cell, table: &identity });
            }
        }
        let records = evaluate_test(cfg, meshes, &variants)?;
        let reports = records.iter().map(|r| report(meshes, r)).collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for (k, &f) in fractions.iter().enumerate() {
            for (c, &cell) in cfg.ablation_cells.iter().enumerate() {
                rows.push(FractionRow {
                    fraction: f,
                    calibration_scenes: fraction_scenes(cfg, f),
                    cell,
                    report: reports[slot[c][k]].clone(),
                });
            }
        }
        Ok(rows)
    })?
}

/// Observed depth minus reprojected label depth over every visible
/// instance pixel of every scene, pooled.
pub fn run_noise_stats(cfg: &ExperimentConfig, meshes: &[ModelMesh]) -> Result<ErrorStats> {
    cfg.validate()?;
    let per_scene = with_pool(cfg.workers, || {
        par_scenes(0..cfg.scene_count, |i| {
            let scene = corpus::render(cfg, meshes, i)?;
            let mut out = Vec::new();
            for id in scene.observed.instance_ids() {
                let placed = scene.spec.instances[id as usize - 1];
                let labels = reproject_labels(&meshes[placed.mesh], &placed.pose, &scene.clean, id)?;
                let mask = Raster::from_fn(labels.mask.height(), labels.mask.width(), |r, c| {
                    labels.mask[(r, c)] && scene.observed.instance_id[(r, c)] == id
                });
                out.push((mask, labels.depth));
            }
            Ok((scene.observed.depth, scene.observed.valid, out))
        })
    })??;
    let mut pool = ErrorPool::new();
    for (depth, valid, instances) in &per_scene {
        for (mask, dprime) in instances {
            if mask.as_slice().iter().any(|&m| m) {
                pool.add(depth, valid, dprime, mask)?;
            }
        }
    }
    Ok(pool.stats(HIST_BIN_WIDTH, HIST_BINS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use posebench_core::metrics::AvgWeighting;
    use posebench_core::noise::NoiseSpec;
    use std::path::Path;

    fn small(noise: NoiseSpec, n: usize) -> (ExperimentConfig, Vec<ModelMesh>) {
        let cfg = ExperimentConfig { scene_count: n, noise, ..ExperimentConfig::default() };
        let meshes = cfg.build_meshes(Path::new(".")).unwrap();
        (cfg, meshes)
    }

    #[test]
    fn zero_noise_scores_perfectly_in_every_cell() {
        let (cfg, meshes) = small(NoiseSpec::zero(), 6);
        let out = run_ablation(&cfg, &meshes).unwrap();
        assert_eq!(out.cells.len(), 4);
        for c in &out.cells {
            for r in &c.report.per_instance {
                assert!(r.add < 1e-6, "{} add {}", c.cell, r.add);
            }
            assert!((c.report.avg(AvgWeighting::Class).auc_adds - 100.0).abs() < 0.01);
        }
        for m in out.calibration.values() {
            assert!((m.alpha - 1.0).abs() < 1e-9 && m.beta.abs() < 1e-9);
        }
    }

    #[test]
    fn full_fraction_matches_ablation() {
        let (cfg, meshes) = small(NoiseSpec::desk_default(), 8);
        let ab = run_ablation(&cfg, &meshes).unwrap();
        let fr = run_real_fraction_study(&cfg, &meshes, &[0.0, 1.0]).unwrap();
        for c in &ab.cells {
            let row = fr.iter().find(|r| r.fraction == 1.0 && r.cell == c.cell).unwrap();
            assert_eq!(row.report, c.report);
        }
        let base0 = fr.iter().find(|r| r.fraction == 0.0 && r.cell == AblationCell::NONE).unwrap();
        let base1 = fr.iter().find(|r| r.fraction == 1.0 && r.cell == AblationCell::NONE).unwrap();
        assert_eq!(base0.report, base1.report);
    }

    #[test]
    fn noise_stats_match_the_generating_noise() {
        let noise = NoiseSpec {
            depth_scale_error: 0.0,
            depth_offset: 0.0,
            quantization_step: 0.0,
            clutter_count: 0,
            ..NoiseSpec::desk_default()
        };
        let (cfg, meshes) = small(noise, 20);
        let s = run_noise_stats(&cfg, &meshes).unwrap();
        assert!((s.signed_std - 0.005).abs() < 0.02 * 0.005, "std {}", s.signed_std);
        let n = (s.pixels + s.holes) as f64;
        let sd = (0.2 * 0.8 / n).sqrt();
        assert!((s.hole_fraction - 0.2).abs() < 3.0 * sd, "holes {}", s.hole_fraction);

        let (cfg, meshes) = small(NoiseSpec::zero(), 4);
        let s = run_noise_stats(&cfg, &meshes).unwrap();
        assert!(s.signed_std < 1e-9 && s.hole_fraction == 0.0);
        assert_eq!(s.histogram.counts[0], s.histogram.total());
    }

    #[test]
    fn outputs_do_not_depend_on_worker_count() {
        let (cfg, meshes) = small(NoiseSpec::desk_default(), 6);
        let a = run_ablation(&cfg, &meshes).unwrap();
        let b = run_ablation(&ExperimentConfig { workers: 3, ..cfg }, &meshes).unwrap();
        assert_eq!(a, b);
    }
}
