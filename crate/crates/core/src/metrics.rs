//! ADD-family pose metrics, AUC / ACC aggregation and mask IoU.

use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Pose};
use crate::mesh::ModelMesh;
use crate::raster::Raster;

/// Maximum threshold of the accuracy-threshold curve (meters).
pub const AUC_TAU_MAX: f64 = 0.1;
/// Diameter fraction used by ACC-0.1d.
pub const ACC_DIAMETER_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no values to aggregate")]
    EmptyInput,
    #[error("input lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("threshold must be positive and finite")]
    InvalidThreshold,
    #[error("mask shapes differ")]
    ShapeMismatch,
}

/// Exact nearest-neighbour search over a fixed point set (3-d tree).
#[derive(Debug, Clone)]
pub struct NearestNeighborIndex {
    points: Vec<Point3>,
    /// Point indices laid out as an implicit balanced tree: the node for
    /// `order[lo..hi]` is `order[(lo + hi) / 2]`.
    order: Vec<u32>,
    axes: Vec<u8>,
}

impl NearestNeighborIndex {
    pub fn new(points: Vec<Point3>) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = alloc::vec![0u8; points.len()];
        build(&points, &mut order, &mut axes);
        NearestNeighborIndex { points, order, axes }
    }

    /// Vertices of `mesh` under `pose`.
    pub fn from_mesh(mesh: &ModelMesh, pose: &Pose) -> Self {
        NearestNeighborIndex::new(mesh.vertices().iter().map(|v| pose.apply(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Index and distance of the closest point; ties go to the first found.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), &mut best);
        Some((best.0, best.1.sqrt()))
    }

    fn search(&self, q: &Point3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid] as usize;
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 {
            *best = (idx, d2);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, best);
        if diff * diff < best.1 {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn build(points: &[Point3], order: &mut [u32], axes: &mut [u8]) {
    if order.len() <= 1 {
        if let Some(a) = axes.first_mut() {
            *a = 0;
        }
        return;
    }
    // Split on the axis of widest spread.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = &points[i as usize];
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a as usize][axis].total_cmp(&points[b as usize][axis]));
    axes[mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (al, arest) = axes.split_at_mut(mid);
    build(points, left, al);
    build(points, &mut rest[1..], &mut arest[1..]);
}

/// Mean distance between corresponding vertices under both poses.
pub fn add(pred: &Pose, gt: &Pose, mesh: &ModelMesh) -> f64 {
    let v = mesh.vertices();
    let sum: f64 = v.iter().map(|x| (pred.apply(x) - gt.apply(x)).norm()).sum();
    sum / v.len() as f64
}

/// Mean closest-point distance from predicted vertices to the
/// ground-truth-transformed vertex set.
pub fn adds(pred: &Pose, gt: &Pose, mesh: &ModelMesh) -> f64 {
    adds_with_index(pred, mesh, &NearestNeighborIndex::from_mesh(mesh, gt))
}

/// [`adds`] against a prebuilt index over the ground-truth vertices.
pub fn adds_with_index(pred: &Pose, mesh: &ModelMesh, gt_index: &NearestNeighborIndex) -> f64 {
    let v = mesh.vertices();
    let sum: f64 = v.iter().map(|x| gt_index.nearest(&pred.apply(x)).map_or(f64::INFINITY, |(_, d)| d)).sum();
    sum / v.len() as f64
}

/// ADD-S for symmetric meshes, ADD otherwise.
pub fn add_s(pred: &Pose, gt: &Pose, mesh: &ModelMesh) -> f64 {
    if mesh.is_symmetric() {
        adds(pred, gt, mesh)
    } else {
        add(pred, gt, mesh)
    }
}

/// Area under the accuracy-threshold curve on `[0, tau_max]`, in percent.
/// Accuracy at `τ` counts errors strictly below `τ`; the integral is exact:
/// `100 / (n·τ_max) · Σ (τ_max − min(eᵢ, τ_max))`.
pub fn auc(errors: &[f64], tau_max: f64) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if !(tau_max > 0.0 && tau_max.is_finite()) {
        return Err(MetricsError::InvalidThreshold);
    }
    let total: f64 = errors.iter().map(|&e| tau_max - e.max(0.0).min(tau_max)).sum();
    Ok(100.0 * total / (errors.len() as f64 * tau_max))
}

/// Percentage of errors strictly below `fraction` of their object's diameter.
pub fn acc_threshold(errors: &[f64], diameters: &[f64], fraction: f64) -> Result<f64, MetricsError> {
    if errors.len() != diameters.len() {
        return Err(MetricsError::LengthMismatch(errors.len(), diameters.len()));
    }
    if errors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = errors.iter().zip(diameters).filter(|&(&e, &d)| e < fraction * d).count();
    Ok(100.0 * hits as f64 / errors.len() as f64)
}

/// Mean IoU over paired masks; a pair with an empty union scores 1.
pub fn miou(pred: &[Raster<bool>], gt: &[Raster<bool>]) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        if !p.same_shape(g) {
            return Err(MetricsError::ShapeMismatch);
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in p.as_slice().iter().zip(g.as_slice()) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        sum += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    Ok(sum / pred.len() as f64)
}

/// Scored pose of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub scene: u64,
    pub instance: u32,
    pub class: String,
    pub add: f64,
    pub adds: f64,
    /// True when ADD(S) resolves to ADD-S for this class.
    pub add_s_used: bool,
    pub diameter: f64,
}

impl InstanceResult {
    /// Scores `pred` against `gt`. A failed fit scores infinite error.
    pub fn score(scene: u64, instance: u32, mesh: &ModelMesh, pred: Option<&Pose>, gt: &Pose) -> Self {
        let (add, adds) = match pred {
            Some(p) => (self::add(p, gt, mesh), self::adds(p, gt, mesh)),
            None => (f64::INFINITY, f64::INFINITY),
        };
        InstanceResult {
            scene,
            instance,
            class: mesh.name().into(),
            add,
            adds,
            add_s_used: mesh.is_symmetric(),
            diameter: mesh.diameter(),
        }
    }

    pub fn add_s(&self) -> f64 {
        if self.add_s_used {
            self.adds
        } else {
            self.add
        }
    }
}

/// One row of a report: AUC ADD-S, AUC ADD(S) and ACC ADD(S)-0.1d in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub class: String,
    pub count: usize,
    pub auc_adds: f64,
    pub auc_add_s: f64,
    pub acc_0_1d: f64,
}

impl ReportRow {
    fn over(class: String, items: &[&InstanceResult]) -> Result<ReportRow, MetricsError> {
        let adds: Vec<f64> = items.iter().map(|r| r.adds).collect();
        let mixed: Vec<f64> = items.iter().map(|r| r.add_s()).collect();
        let diam: Vec<f64> = items.iter().map(|r| r.diameter).collect();
        Ok(ReportRow {
            class,
            count: items.len(),
            auc_adds: auc(&adds, AUC_TAU_MAX)?,
            auc_add_s: auc(&mixed, AUC_TAU_MAX)?,
            acc_0_1d: acc_threshold(&mixed, &diam, ACC_DIAMETER_FRACTION)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvgWeighting {
    /// Mean of the per-class rows.
    #[default]
    Class,
    /// Pooled over all instances.
    Instance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_instance: Vec<InstanceResult>,
    /// Sorted by class name.
    pub per_class: Vec<ReportRow>,
    pub avg_class_weighted: ReportRow,
    pub avg_instance_weighted: ReportRow,
}

impl MetricReport {
    pub fn avg(&self, weighting: AvgWeighting) -> &ReportRow {
        match weighting {
            AvgWeighting::Class => &self.avg_class_weighted,
            AvgWeighting::Instance => &self.avg_instance_weighted,
        }
    }
}

/// Per-class rows plus both Avg rows.
pub fn aggregate_report(results: Vec<InstanceResult>) -> Result<MetricReport, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut classes: Vec<&str> = results.iter().map(|r| r.class.as_str()).collect();
    classes.sort_unstable();
    classes.dedup();
    let per_class = classes
        .iter()
        .map(|&c| {
            let items: Vec<&InstanceResult> = results.iter().filter(|r| r.class == c).collect();
            ReportRow::over(c.into(), &items)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let all: Vec<&InstanceResult> = results.iter().collect();
    let avg_instance_weighted = ReportRow::over("Avg".into(), &all)?;
    let k = per_class.len() as f64;
    let avg_class_weighted = ReportRow {
        class: "Avg".into(),
        count: results.len(),
        auc_adds: per_class.iter().map(|r| r.auc_adds).sum::<f64>() / k,
        auc_add_s: per_class.iter().map(|r| r.auc_add_s).sum::<f64>() / k,
        acc_0_1d: per_class.iter().map(|r| r.acc_0_1d).sum::<f64>() / k,
    };
    Ok(MetricReport { per_instance: results, per_class, avg_class_weighted, avg_instance_weighted })
}
