//! File formats: ASCII PLY meshes, planar f32 rasters with a JSON sidecar,
//! 16-bit PGM depth, run-length masks, CSV tables and JSON results.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use posebench_core::geometry::{CameraIntrinsics, Point3};
use posebench_core::mesh::ModelMesh;
use posebench_core::metrics::{MetricReport, ReportRow};
use posebench_core::noise::Histogram;
use posebench_core::pipeline::{AnnotationSource, InstanceAnnotation};
use posebench_core::raster::Raster;
use posebench_core::render::{ChannelStack, NO_FACE};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::experiments::{CalibrationTable, FractionRow};

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| HarnessError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::format(path, e.to_string()))
}

// ---- PLY ----

/// Reads the ASCII PLY subset: `vertex` elements whose first three
/// properties are x, y, z and `face` elements with three indices.
pub fn read_ply(path: &Path, name: &str) -> Result<ModelMesh> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_ply(&text, name).map_err(|m| HarnessError::format(path, m))
}

pub fn parse_ply(text: &str, name: &str) -> std::result::Result<ModelMesh, String> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err("missing ply magic".into());
    }
    let (mut nv, mut nf) = (None, None);
    let mut vertex_props = 0usize;
    let mut current = "";
    loop {
        let line = lines.next().ok_or("header ends before end_header")?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => {}
            ["format", f, ..] => return Err(format!("unsupported format {f}")),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                nv = Some(n.parse::<usize>().map_err(|e| e.to_string())?);
                current = "vertex";
            }
            ["element", "face", n] => {
                nf = Some(n.parse::<usize>().map_err(|e| e.to_string())?);
                current = "face";
            }
            ["element", other, _] => return Err(format!("unsupported element {other}")),
            ["property", "list", ..] if current == "face" => {}
            ["property", _, _] if current == "vertex" => vertex_props += 1,
            ["property", ..] => return Err(format!("unexpected property line {line:?}")),
            ["end_header"] => break,
            _ => return Err(format!("unrecognised header line {line:?}")),
        }
    }
    let nv = nv.ok_or("no vertex element")?;
    let nf = nf.unwrap_or(0);
    if vertex_props < 3 {
        return Err("vertices need x y z".into());
    }
    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let line = lines.next().ok_or_else(|| format!("missing vertex {k}"))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f64>().map_err(|e| format!("vertex {k}: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        if v.len() < 3 {
            return Err(format!("vertex {k} has fewer than 3 coordinates"));
        }
        vertices.push(Point3::new(v[0], v[1], v[2]));
    }
    let mut triangles = Vec::with_capacity(nf);
    for k in 0..nf {
        let line = lines.next().ok_or_else(|| format!("missing face {k}"))?;
        let t: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|e| format!("face {k}: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        if t.len() != 4 || t[0] != 3 {
            return Err(format!("face {k} is not a triangle"));
        }
        triangles.push([t[1], t[2], t[3]]);
    }
    ModelMesh::new(name, vertices, triangles, false).map_err(|e| e.to_string())
}

pub fn ply_string(mesh: &ModelMesh) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\ncomment {}\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.name(),
        mesh.vertices().len(),
        mesh.triangles().len()
    );
    for v in mesh.vertices() {
        s.push_str(&format!("{:?} {:?} {:?}\n", v.x, v.y, v.z));
    }
    for t in mesh.triangles() {
        s.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    s
}

pub fn write_ply(path: &Path, mesh: &ModelMesh) -> Result<()> {
    write_bytes(path, ply_string(mesh).as_bytes())
}

// ---- raster planes ----

/// Sidecar describing a planar little-endian f32 raster file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterSidecar {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraIntrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<(usize, usize)>,
}

/// Named `f32` planes, all `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub height: usize,
    pub width: usize,
    pub names: Vec<String>,
    pub data: Vec<Vec<f32>>,
}

impl Planes {
    fn plane(&self, name: &str) -> Option<&[f32]> {
        self.names.iter().position(|n| n == name).map(|k| self.data[k].as_slice())
    }
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes `<stem>.bin` and the `<stem>.json` sidecar next to it.
pub fn write_planes(
    bin: &Path,
    planes: &Planes,
    camera: Option<CameraIntrinsics>,
    origin: Option<(usize, usize)>,
) -> Result<()> {
    let n = planes.height * planes.width;
    let mut bytes = Vec::with_capacity(4 * n * planes.data.len());
    for p in &planes.data {
        if p.len() != n {
            return Err(HarnessError::format(bin, "plane size does not match raster shape"));
        }
        for v in p {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_bytes(bin, &bytes)?;
    let side = RasterSidecar {
        width: planes.width,
        height: planes.height,
        channels: planes.data.len(),
        names: planes.names.clone(),
        camera,
        origin,
    };
    write_json(&sidecar_path(bin), &side)
}

pub fn read_planes(bin: &Path) -> Result<(Planes, RasterSidecar)> {
    let side: RasterSidecar = read_json(&sidecar_path(bin))?;
    if side.names.len() != side.channels {
        return Err(HarnessError::format(bin, "sidecar names and channel count disagree"));
    }
    let bytes = read_bytes(bin)?;
    let n = side.width * side.height;
    if bytes.len() != 4 * n * side.channels {
        return Err(HarnessError::format(
            bin,
            format!(
                "expected {} bytes for {} planes of {}x{}, found {}",
                4 * n * side.channels,
                side.channels,
                side.height,
                side.width,
                bytes.len()
            ),
        ));
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let data = values.chunks(n.max(1)).take(side.channels).map(<[f32]>::to_vec).collect();
    let planes = Planes { height: side.height, width: side.width, names: side.names.clone(), data };
    Ok((planes, side))
}

const STACK_FIXED: [&str; 12] = ["r", "g", "b", "depth", "valid", "plain_u", "plain_v", "x", "y", "nx", "ny", "nz"];
const STACK_TAIL: [&str; 5] = ["instance_id", "abc_a", "abc_b", "abc_c", "face"];

/// Channel stack as planes: rgb, depth, valid, plain uv, xy, normals, PE
/// channels, instance id, abc (NaN where undefined) and face (-1 for none).
pub fn stack_planes(s: &ChannelStack) -> Planes {
    let f = |x: f64| x as f32;
    let mut data: Vec<Vec<f32>> = Vec::new();
    for c in 0..3 {
        data.push(s.rgb.as_slice().iter().map(|v| f(v[c])).collect());
    }
    data.push(s.depth.as_slice().iter().map(|&v| f(v)).collect());
    data.push(s.valid.as_slice().iter().map(|&v| if v { 1.0 } else { 0.0 }).collect());
    for c in 0..2 {
        data.push(s.plain_uv.as_slice().iter().map(|v| f(v[c])).collect());
    }
    for c in 0..2 {
        data.push(s.xy.as_slice().iter().map(|v| f(v[c])).collect());
    }
    for c in 0..3 {
        data.push(s.nrm.as_slice().iter().map(|v| f(v[c])).collect());
    }
    for pe in &s.pe {
        data.push(pe.as_slice().iter().map(|&v| f(v)).collect());
    }
    data.push(s.instance_id.as_slice().iter().map(|&v| v as f32).collect());
    for c in 0..3 {
        data.push(s.abc.as_slice().iter().map(|v| v.map_or(f32::NAN, |a| f(a[c]))).collect());
    }
    data.push(s.face.as_slice().iter().map(|&v| if v == NO_FACE { -1.0 } else { v as f32 }).collect());
    let mut names: Vec<String> = STACK_FIXED.iter().map(|s| s.to_string()).collect();
    names.extend((0..s.pe.len()).map(|k| format!("pe_{k}")));
    names.extend(STACK_TAIL.iter().map(|s| s.to_string()));
    Planes { height: s.height(), width: s.width(), names, data }
}

pub fn stack_from_planes(
    p: &Planes,
    camera: CameraIntrinsics,
    origin: (usize, usize),
) -> std::result::Result<ChannelStack, String> {
    let (h, w) = (p.height, p.width);
    let get = |name: &str| p.plane(name).ok_or_else(|| format!("missing plane {name}"));
    let scalar = |name: &str| -> std::result::Result<Raster<f64>, String> {
        Ok(Raster::from_vec(h, w, get(name)?.iter().map(|&v| v as f64).collect()))
    };
    let vec_of =
        |names: &[&str]| -> std::result::Result<Vec<&[f32]>, String> { names.iter().map(|n| get(n)).collect() };

    let mut s = ChannelStack::empty(camera, origin, h, w);
    let rgb = vec_of(&["r", "g", "b"])?;
    s.rgb = Raster::from_fn(h, w, |i, j| core::array::from_fn(|c| rgb[c][i * w + j] as f64));
    s.depth = scalar("depth")?;
    s.valid = Raster::from_vec(h, w, get("valid")?.iter().map(|&v| v != 0.0).collect());
    let uv = vec_of(&["plain_u", "plain_v"])?;
    s.plain_uv = Raster::from_fn(h, w, |i, j| core::array::from_fn(|c| uv[c][i * w + j] as f64));
    let xy = vec_of(&["x", "y"])?;
    s.xy = Raster::from_fn(h, w, |i, j| core::array::from_fn(|c| xy[c][i * w + j] as f64));
    let n = vec_of(&["nx", "ny", "nz"])?;
    s.nrm = Raster::from_fn(h, w, |i, j| core::array::from_fn(|c| n[c][i * w + j] as f64));
    let mut k = 0;
    while let Some(pe) = p.plane(&format!("pe_{k}")) {
        s.pe.push(Raster::from_vec(h, w, pe.iter().map(|&v| v as f64).collect()));
        k += 1;
    }
    s.instance_id = Raster::from_vec(h, w, get("instance_id")?.iter().map(|&v| v as u32).collect());
    let abc = vec_of(&["abc_a", "abc_b", "abc_c"])?;
    s.abc = Raster::from_fn(h, w, |i, j| {
        let a = abc[0][i * w + j];
        (!a.is_nan()).then(|| core::array::from_fn(|c| abc[c][i * w + j] as f64))
    });
    s.face = Raster::from_vec(h, w, get("face")?.iter().map(|&v| if v < 0.0 { NO_FACE } else { v as u32 }).collect());
    Ok(s)
}

pub fn write_stack(bin: &Path, s: &ChannelStack) -> Result<()> {
    write_planes(bin, &stack_planes(s), Some(s.camera), Some(s.origin))
}

pub fn read_stack(bin: &Path) -> Result<ChannelStack> {
    let (planes, side) = read_planes(bin)?;
    let camera = side.camera.ok_or_else(|| HarnessError::format(bin, "sidecar has no camera"))?;
    stack_from_planes(&planes, camera, side.origin.unwrap_or((0, 0))).map_err(|m| HarnessError::format(bin, m))
}

// ---- PGM ----

/// Depth in millimetres as binary 16-bit PGM; invalid pixels are 0.
pub fn depth_pgm(depth: &Raster<f64>, valid: &Raster<bool>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width(), depth.height()).into_bytes();
    for (&d, &v) in depth.as_slice().iter().zip(valid.as_slice()) {
        let mm = if v { (d * 1000.0).round().clamp(0.0, 65535.0) as u16 } else { 0 };
        out.extend_from_slice(&mm.to_be_bytes());
    }
    out
}

pub fn write_depth_pgm(path: &Path, depth: &Raster<f64>, valid: &Raster<bool>) -> Result<()> {
    write_bytes(path, &depth_pgm(depth, valid))
}

/// Parses a 16-bit PGM back to metres; zero means invalid.
pub fn parse_depth_pgm(bytes: &[u8]) -> std::result::Result<(Raster<f64>, Raster<bool>), String> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err("expected a 16-bit P5 image".into());
    }
    let w: usize = fields[1].parse().map_err(|_| "bad width")?;
    let h: usize = fields[2].parse().map_err(|_| "bad height")?;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != 2 * w * h {
        return Err(format!("expected {} pixel bytes, found {}", 2 * w * h, body.len()));
    }
    let mm: Vec<u16> = body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    let depth = Raster::from_vec(h, w, mm.iter().map(|&m| m as f64 / 1000.0).collect());
    let valid = Raster::from_vec(h, w, mm.iter().map(|&m| m > 0).collect());
    Ok((depth, valid))
}

// ---- RLE masks ----

/// Full-frame run-length mask: row-major runs alternating false/true,
/// starting with a (possibly empty) false run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub instance_id: u32,
    pub size: [usize; 2],
    pub counts: Vec<usize>,
}

impl RleMask {
    pub fn encode(ann: &InstanceAnnotation) -> RleMask {
        let full = ann.full_mask();
        let mut counts = Vec::new();
        let (mut current, mut run) = (false, 0usize);
        for &v in full.as_slice() {
            if v != current {
                counts.push(run);
                current = v;
                run = 0;
            }
            run += 1;
        }
        counts.push(run);
        RleMask { instance_id: ann.instance_id, size: [full.height(), full.width()], counts }
    }

    pub fn decode(&self) -> Option<InstanceAnnotation> {
        let [h, w] = self.size;
        if self.counts.iter().sum::<usize>() != h * w {
            return None;
        }
        let mut data = Vec::with_capacity(h * w);
        for (k, &c) in self.counts.iter().enumerate() {
            data.extend(std::iter::repeat_n(k % 2 == 1, c));
        }
        InstanceAnnotation::from_full_mask(self.instance_id, &Raster::from_vec(h, w, data), AnnotationSource::Oracle)
    }
}

// ---- CSV ----

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<fs::File>>> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

fn row_fields(r: &ReportRow, class: &str) -> Vec<String> {
    vec![class.to_string(), r.count.to_string(), fmt(r.auc_adds), fmt(r.auc_add_s), fmt(r.acc_0_1d)]
}

/// Per-class rows, then `Avg` (class-weighted) and `Avg_instance`.
pub fn report_rows(report: &MetricReport) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = report.per_class.iter().map(|r| row_fields(r, &r.class)).collect();
    rows.push(row_fields(&report.avg_class_weighted, "Avg"));
    rows.push(row_fields(&report.avg_instance_weighted, "Avg_instance"));
    rows
}

pub const REPORT_HEADER: [&str; 5] = ["class", "count", "auc_adds", "auc_add_s", "acc_0_1d"];

/// One report per cell, cells in order, with a leading `cell` column.
pub fn write_cell_reports<'a>(
    path: &Path,
    reports: impl IntoIterator<Item = (String, &'a MetricReport)>,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["cell"];
    header.extend(REPORT_HEADER);
    w.write_record(&header)?;
    for (cell, report) in reports {
        for row in report_rows(report) {
            let mut rec = vec![cell.clone()];
            rec.extend(row);
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(REPORT_HEADER)?;
    for row in report_rows(report) {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_histogram(path: &Path, hist: &Histogram) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["bin_low", "bin_high", "count"])?;
    for (lo, hi, n) in hist.rows() {
        w.write_record([fmt(lo), fmt(hi), n.to_string()])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_fraction_table(path: &Path, rows: &[FractionRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["fraction", "calibration_scenes", "cell"];
    header.extend(REPORT_HEADER);
    w.write_record(&header)?;
    for r in rows {
        for fields in report_rows(&r.report) {
            let mut rec = vec![fmt(r.fraction), r.calibration_scenes.to_string(), r.cell.label()];
            rec.extend(fields);
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[derive(Serialize)]
struct CalibrationEntry<'a> {
    class: &'a str,
    alpha: f64,
    beta: f64,
    fit_residual: f64,
}

pub fn write_calibration(path: &Path, table: &CalibrationTable) -> Result<()> {
    let entries: Vec<CalibrationEntry> = table
        .iter()
        .map(|(class, m)| CalibrationEntry { class, alpha: m.alpha, beta: m.beta, fit_residual: m.fit_residual })
        .collect();
    write_json(path, &entries)
}

pub fn read_calibration(path: &Path) -> Result<CalibrationTable> {
    #[derive(Deserialize)]
    struct Entry {
        class: String,
        alpha: f64,
        beta: f64,
        fit_residual: f64,
    }
    let entries: Vec<Entry> = read_json(path)?;
    Ok(entries
        .into_iter()
        .map(|e| {
            let m = posebench_core::pipeline::CalibrationModel {
                alpha: e.alpha,
                beta: e.beta,
                fit_residual: e.fit_residual,
            };
            (e.class, m)
        })
        .collect())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}
