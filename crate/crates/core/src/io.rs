//! File formats: plain-text point clouds, PLY export, TOML model files and
//! removed-index lists.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{PartsModel, Shape};
use crate::geometry::{PointCloud, Pose, Superquadric, Vec3};
use crate::spa::AssignmentLogits;

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Parses `x y z [label]` lines; `#` starts a comment. Either every point
/// has a label or none does.
pub fn parse_cloud(text: &str, path: &Path) -> Result<PointCloud> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(parse_err(i + 1, format!("expected 3 or 4 fields, got {}", fields.len())));
        }
        let mut xyz = [0.0; 3];
        for (v, f) in xyz.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| parse_err(i + 1, format!("bad coordinate {f:?}")))?;
        }
        if fields.len() == 4 {
            labels.push(
                fields[3]
                    .parse::<usize>()
                    .map_err(|_| parse_err(i + 1, format!("bad label {:?}", fields[3])))?,
            );
        }
        points.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
        if !labels.is_empty() && labels.len() != points.len() {
            return Err(parse_err(i + 1, "labelled and unlabelled points mixed".into()));
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if labels.is_empty() {
        PointCloud::new(points)
    } else {
        PointCloud::with_labels(points, labels)
    }
}

pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(l) = cloud.labels() {
            let _ = write!(out, " {}", l[i]);
        }
        out.push('\n');
    }
    out
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    parse_cloud(&read_text(path)?, path)
}

/// Writes text, or ASCII PLY when the extension is `.ply`.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let text = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
        format_ply(cloud)
    } else {
        format_cloud(cloud)
    };
    write_text(path, &text)
}

/// ASCII PLY vertices; labels become an integer `part` property.
pub fn format_ply(cloud: &PointCloud) -> String {
    let mut out = String::from("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.labels().is_some() {
        out.push_str("property int part\n");
    }
    out.push_str("end_header\n");
    out.push_str(&format_cloud(cloud));
    out
}

pub fn format_indices(indices: &[usize]) -> String {
    indices.iter().map(|i| format!("{i}\n")).collect()
}

pub fn parse_indices(text: &str, path: &Path) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad index {l:?}"),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeRecord {
    alpha: [f64; 3],
    eps: [f64; 2],
    taper: [f64; 2],
    points: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    q: [f64; 4],
    t: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    tau: f64,
    /// Logits, one row per shape.
    logits: Vec<Vec<f64>>,
    shapes: Vec<ShapeRecord>,
    poses: Vec<PoseRecord>,
}

pub fn format_model(model: &PartsModel) -> String {
    let file = ModelFile {
        version: MODEL_FORMAT_VERSION,
        tau: model.tau,
        logits: model.logits.0.row_iter().map(|r| r.iter().copied().collect()).collect(),
        shapes: model
            .shapes
            .iter()
            .map(|s| ShapeRecord {
                alpha: s.primitive.alpha.into(),
                eps: s.primitive.eps,
                taper: s.primitive.taper,
                points: s.points.iter().map(|p| (*p).into()).collect(),
            })
            .collect(),
        poses: model
            .poses
            .iter()
            .map(|p| PoseRecord {
                q: p.q,
                t: p.t.into(),
            })
            .collect(),
    };
    toml::to_string(&file).expect("model records serialise")
}

pub fn parse_model(text: &str, path: &Path) -> Result<PartsModel> {
    let file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
        msg: e.message().to_string(),
    })?;
    if file.version != MODEL_FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "{}: model format version {} is not supported",
            path.display(),
            file.version
        )));
    }
    let m_s = file.logits.len();
    let m_t = file.logits.first().map_or(0, Vec::len);
    if file.logits.iter().any(|r| r.len() != m_t) {
        return Err(Error::dims("ragged logit rows"));
    }
    let logits = DMatrix::from_fn(m_s, m_t, |i, j| file.logits[i][j]);
    let shapes = file
        .shapes
        .into_iter()
        .map(|s| {
            Ok(Shape {
                primitive: Superquadric::new(Vec3::from(s.alpha), s.eps, s.taper)?,
                points: s.points.into_iter().map(Vec3::from).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let poses = file
        .poses
        .into_iter()
        .map(|p| {
            let pose = Pose {
                q: p.q,
                t: Vec3::from(p.t),
            };
            // stored quaternions are kept verbatim; only a zero one is rejected
            crate::geometry::quat_to_rotation(&pose.q)?;
            Ok(pose)
        })
        .collect::<Result<Vec<_>>>()?;
    PartsModel::new(shapes, poses, AssignmentLogits(logits), file.tau)
}

pub fn read_model(path: &Path) -> Result<PartsModel> {
    parse_model(&read_text(path)?, path)
}

pub fn write_model(path: &Path, model: &PartsModel) -> Result<()> {
    write_text(path, &format_model(model))
}
