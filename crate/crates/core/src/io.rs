//! Text and binary file formats: TUM trajectories, PLY clouds, feature
//! frames, keyframe observation streams, `key = value` configuration and
//! session manifests.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::cloudops::GaussianFilterParams;
use crate::evaluation::Trajectory;
use crate::features::{Descriptor, FrameFeatures, Homography, Keypoint, MatchConfig};
use crate::geometry::{Point3, Pose, Quaternion};
use crate::keyframe::{FrameObservation, KeyframeConfig};
use crate::registration::GicpParams;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: timestamp {next} does not follow {previous}")]
    Ordering { line: usize, previous: f64, next: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("unknown keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("key {key}: expected {expected}, got {value:?}")]
    TypeMismatch {
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("invalid value: {0}")]
    Invalid(String),
}

fn parse_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse { line, msg: msg.into() }
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_f64s(line: usize, fields: &[&str]) -> Result<Vec<f64>, IoError> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("not a finite number: {f:?}")))
        })
        .collect()
}

/// Quaternion normalized on read; deviations above 1e-6 are logged.
fn quaternion_from(line: usize, v: &[f64]) -> Result<Quaternion, IoError> {
    let q = Quaternion {
        x: v[0],
        y: v[1],
        z: v[2],
        w: v[3],
    };
    let n = q.norm();
    if (n - 1.0).abs() > 1e-6 {
        log::warn!("line {line}: quaternion norm {n} renormalized");
    }
    q.normalized().map_err(|e| parse_err(line, e.to_string()))
}

/// `tx ty tz qx qy qz qw` → pose.
pub fn parse_pose_fields(line: usize, fields: &[&str]) -> Result<Pose, IoError> {
    if fields.len() != 7 {
        return Err(parse_err(line, format!("expected 7 pose fields, got {}", fields.len())));
    }
    let v = parse_f64s(line, fields)?;
    let q = quaternion_from(line, &v[3..7])?;
    Ok(Pose::from_quaternion(q, Vector3::new(v[0], v[1], v[2])))
}

pub fn format_pose(p: &Pose) -> String {
    let q = p.quaternion();
    let t = p.translation;
    format!("{} {} {} {} {} {} {}", t.x, t.y, t.z, q.x, q.y, q.z, q.w)
}

// ---------------------------------------------------------------- TUM

pub fn parse_tum(text: &str) -> Result<Trajectory, IoError> {
    let mut samples: Vec<(f64, Pose)> = Vec::new();
    for (line, l) in data_lines(text) {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(parse_err(line, format!("expected 8 fields, got {}", fields.len())));
        }
        let stamp = parse_f64s(line, &fields[..1])?[0];
        let pose = parse_pose_fields(line, &fields[1..])?;
        if let Some(&(prev, _)) = samples.last() {
            if !(stamp > prev) {
                return Err(IoError::Ordering {
                    line,
                    previous: prev,
                    next: stamp,
                });
            }
        }
        samples.push((stamp, pose));
    }
    Trajectory::new(samples).map_err(|e| IoError::Format(e.to_string()))
}

pub fn format_tum(traj: &Trajectory) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in traj.samples() {
        let _ = writeln!(out, "{} {}", t, format_pose(p));
    }
    out
}

pub fn read_tum(path: &Path) -> Result<Trajectory, IoError> {
    parse_tum(&read_text(path)?)
}

pub fn write_tum(traj: &Trajectory, path: &Path) -> Result<(), IoError> {
    write_bytes(path, format_tum(traj).as_bytes())
}

// ---------------------------------------------------------------- PLY

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug)]
struct PlyProperty {
    name: String,
    ty: ScalarType,
}

#[derive(Debug)]
struct PlyHeader {
    format: PlyFormat,
    vertex_count: usize,
    properties: Vec<PlyProperty>,
    trailing_elements: bool,
    body_offset: usize,
}

fn parse_ply_header(bytes: &[u8]) -> Result<PlyHeader, IoError> {
    let fmt_err = |m: String| IoError::Format(m);
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(fmt_err("PLY header is not terminated by end_header".into()));
        };
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| fmt_err("PLY header is not valid UTF-8".into()))?
            .trim_end_matches('\r')
            .to_string();
        offset += nl + 1;
        let done = line.trim() == "end_header";
        lines.push(line);
        if done {
            break;
        }
    }
    if lines.first().map(|l| l.trim()) != Some("ply") {
        return Err(fmt_err("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut vertex: Option<(usize, Vec<PlyProperty>)> = None;
    let mut current: Option<String> = None;
    let mut trailing_elements = false;
    for line in &lines[1..lines.len() - 1] {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLe),
            ["format", other, ..] => return Err(fmt_err(format!("unsupported PLY format {other}"))),
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| fmt_err(format!("bad element count {count:?}")))?;
                if *name == "vertex" {
                    if vertex.is_some() {
                        return Err(fmt_err("duplicate vertex element".into()));
                    }
                    vertex = Some((count, Vec::new()));
                } else if vertex.is_none() {
                    if count > 0 {
                        return Err(fmt_err(format!("element {name} before vertex is not supported")));
                    }
                } else if count > 0 {
                    trailing_elements = true;
                }
                current = Some(name.to_string());
            }
            ["property", "list", .., name] => {
                if current.as_deref() == Some("vertex") {
                    return Err(fmt_err(format!("unsupported list property {name} in vertex element")));
                }
            }
            ["property", ty, name] => {
                if current.as_deref() == Some("vertex") {
                    let ty = ScalarType::parse(ty)
                        .ok_or_else(|| fmt_err(format!("unsupported type {ty} for property {name}")))?;
                    vertex.as_mut().unwrap().1.push(PlyProperty {
                        name: name.to_string(),
                        ty,
                    });
                }
            }
            _ => return Err(fmt_err(format!("unrecognized header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| fmt_err("missing format line".into()))?;
    let (vertex_count, properties) = vertex.ok_or_else(|| fmt_err("missing vertex element".into()))?;
    Ok(PlyHeader {
        format,
        vertex_count,
        properties,
        trailing_elements,
        body_offset: offset,
    })
}

fn read_scalar(ty: ScalarType, b: &[u8]) -> f64 {
    match ty {
        ScalarType::I8 => b[0] as i8 as f64,
        ScalarType::U8 => b[0] as f64,
        ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
        ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
        ScalarType::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
        ScalarType::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
        ScalarType::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
        ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud, IoError> {
    let header = parse_ply_header(bytes)?;
    let find = |name: &str| header.properties.iter().position(|p| p.name == name);
    let mut xyz = [0usize; 3];
    for (slot, name) in xyz.iter_mut().zip(["x", "y", "z"]) {
        let i = find(name).ok_or_else(|| IoError::Format(format!("vertex property {name} missing")))?;
        if !matches!(header.properties[i].ty, ScalarType::F32 | ScalarType::F64) {
            return Err(IoError::Format(format!("unsupported type for property {name}")));
        }
        *slot = i;
    }
    let rgb: Option<[usize; 3]> = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => {
            for (i, name) in [(r, "red"), (g, "green"), (b, "blue")] {
                if header.properties[i].ty != ScalarType::U8 {
                    return Err(IoError::Format(format!("unsupported type for property {name}")));
                }
            }
            Some([r, g, b])
        }
        (None, None, None) => None,
        _ => return Err(IoError::Format("incomplete red/green/blue properties".into())),
    };

    let n = header.vertex_count;
    let mut points = Vec::with_capacity(n);
    let mut colors = rgb.map(|_| Vec::with_capacity(n));
    let body = &bytes[header.body_offset..];
    match header.format {
        PlyFormat::BinaryLe => {
            let offsets: Vec<usize> = header
                .properties
                .iter()
                .scan(0, |acc, p| {
                    let o = *acc;
                    *acc += p.ty.size();
                    Some(o)
                })
                .collect();
            let stride: usize = header.properties.iter().map(|p| p.ty.size()).sum();
            let needed = stride * n;
            if body.len() < needed || (!header.trailing_elements && body.len() != needed) {
                return Err(IoError::Format(format!(
                    "header declares {n} vertices ({needed} bytes) but body has {} bytes",
                    body.len()
                )));
            }
            for rec in body[..needed].chunks_exact(stride.max(1)).take(n) {
                let get = |i: usize| read_scalar(header.properties[i].ty, &rec[offsets[i]..]);
                points.push(Point3::new(get(xyz[0]), get(xyz[1]), get(xyz[2])));
                if let (Some(c), Some(idx)) = (colors.as_mut(), rgb) {
                    c.push([get(idx[0]) as u8, get(idx[1]) as u8, get(idx[2]) as u8]);
                }
            }
        }
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| IoError::Format("ASCII body is not UTF-8".into()))?;
            let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
            for v in 0..n {
                let line = lines
                    .next()
                    .ok_or_else(|| IoError::Format(format!("header declares {n} vertices but body has {v}")))?;
                let tok: Vec<&str> = line.split_whitespace().collect();
                if tok.len() != header.properties.len() {
                    return Err(IoError::Format(format!(
                        "vertex {v}: expected {} values, got {}",
                        header.properties.len(),
                        tok.len()
                    )));
                }
                let num = |i: usize| -> Result<f64, IoError> {
                    tok[i]
                        .parse::<f64>()
                        .map_err(|_| IoError::Format(format!("vertex {v}: bad value {:?}", tok[i])))
                };
                let coord = |i: usize| -> Result<f64, IoError> {
                    let x = num(i)?;
                    Ok(if header.properties[i].ty == ScalarType::F32 {
                        x as f32 as f64
                    } else {
                        x
                    })
                };
                points.push(Point3::new(coord(xyz[0])?, coord(xyz[1])?, coord(xyz[2])?));
                if let (Some(c), Some(idx)) = (colors.as_mut(), rgb) {
                    let byte = |i: usize| -> Result<u8, IoError> {
                        tok[i]
                            .parse::<u8>()
                            .map_err(|_| IoError::Format(format!("vertex {v}: bad color {:?}", tok[i])))
                    };
                    c.push([byte(idx[0])?, byte(idx[1])?, byte(idx[2])?]);
                }
            }
            if !header.trailing_elements && lines.next().is_some() {
                return Err(IoError::Format(format!("body has more than the declared {n} vertices")));
            }
        }
    }
    let cloud = PointCloud { points, colors };
    cloud.validate().map_err(|e| IoError::Format(e.to_string()))?;
    Ok(cloud)
}

/// Coordinates are stored as 32-bit floats.
pub fn format_ply(cloud: &PointCloud, ascii: bool) -> Vec<u8> {
    let mut header = String::from("ply\n");
    header += if ascii {
        "format ascii 1.0\n"
    } else {
        "format binary_little_endian 1.0\n"
    };
    let _ = write!(
        header,
        "comment mrslam\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if cloud.colors.is_some() {
        header += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    header += "end_header\n";
    let mut out = header.into_bytes();
    for (i, p) in cloud.points.iter().enumerate() {
        let xyz = [p.x as f32, p.y as f32, p.z as f32];
        if ascii {
            let mut line = format!("{} {} {}", xyz[0], xyz[1], xyz[2]);
            if let Some(c) = cloud.color(i) {
                let _ = write!(line, " {} {} {}", c[0], c[1], c[2]);
            }
            line.push('\n');
            out.extend_from_slice(line.as_bytes());
        } else {
            for v in xyz {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(c) = cloud.color(i) {
                out.extend_from_slice(&c);
            }
        }
    }
    out
}

pub fn read_ply(path: &Path) -> Result<PointCloud, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ply(&bytes)
}

pub fn write_ply(cloud: &PointCloud, path: &Path, ascii: bool) -> Result<(), IoError> {
    write_bytes(path, &format_ply(cloud, ascii))
}

// ---------------------------------------------------------------- feature frames

/// Header `width height count`, then `u v <64 hex chars>` per keypoint.
pub fn parse_frame(text: &str, cell_size: f64) -> Result<FrameFeatures, IoError> {
    let mut lines = data_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    let parse_u = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| parse_err(hline, format!("bad integer {s:?}")))
    };
    if h.len() != 3 {
        return Err(parse_err(hline, "header must be 'width height count'"));
    }
    let (width, height, count) = (parse_u(h[0])?, parse_u(h[1])?, parse_u(h[2])?);
    let mut keypoints = Vec::with_capacity(count);
    let mut descriptors = Vec::with_capacity(count);
    for (line, l) in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(parse_err(line, "expected 'u v descriptor'"));
        }
        let uv = parse_f64s(line, &f[..2])?;
        keypoints.push(Keypoint::new(uv[0], uv[1]));
        descriptors.push(Descriptor::from_hex(f[2]).map_err(|e| parse_err(line, e.to_string()))?);
    }
    if keypoints.len() != count {
        return Err(IoError::Format(format!(
            "header declares {count} keypoints, found {}",
            keypoints.len()
        )));
    }
    FrameFeatures::new(width as u32, height as u32, keypoints, descriptors, cell_size)
        .map_err(|e| IoError::Format(e.to_string()))
}

pub fn format_frame(frame: &FrameFeatures) -> String {
    let mut out = format!("{} {} {}\n", frame.width, frame.height, frame.len());
    for (k, d) in frame.keypoints.iter().zip(&frame.descriptors) {
        let _ = writeln!(out, "{} {} {}", k.u, k.v, d.to_hex());
    }
    out
}

pub fn read_frame(path: &Path, cell_size: f64) -> Result<FrameFeatures, IoError> {
    parse_frame(&read_text(path)?, cell_size)
}

pub fn write_frame(frame: &FrameFeatures, path: &Path) -> Result<(), IoError> {
    write_bytes(path, format_frame(frame).as_bytes())
}

/// Pixel mapping file: `identity`, or `homography` followed by the nine
/// row-major entries of the B→A matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProjectionSpec {
    Identity,
    Homography(Matrix3<f64>),
}

pub fn parse_projection(text: &str) -> Result<ProjectionSpec, IoError> {
    let tokens: Vec<(usize, &str)> = data_lines(text)
        .flat_map(|(line, l)| l.split_whitespace().map(move |t| (line, t)))
        .collect();
    match tokens.first() {
        Some((_, "identity")) if tokens.len() == 1 => Ok(ProjectionSpec::Identity),
        Some((line, "homography")) => {
            if tokens.len() != 10 {
                return Err(parse_err(*line, "homography needs 9 values"));
            }
            let vals: Vec<&str> = tokens[1..].iter().map(|t| t.1).collect();
            let v = parse_f64s(*line, &vals)?;
            let m = Matrix3::from_row_slice(&v);
            Homography::new(m).ok_or_else(|| parse_err(*line, "homography is singular"))?;
            Ok(ProjectionSpec::Homography(m))
        }
        Some((line, other)) => Err(parse_err(*line, format!("unknown projection {other:?}"))),
        None => Err(parse_err(1, "empty projection file")),
    }
}

pub fn format_projection(spec: &ProjectionSpec) -> String {
    match spec {
        ProjectionSpec::Identity => "identity\n".into(),
        ProjectionSpec::Homography(m) => {
            let mut s = String::from("homography\n");
            for r in 0..3 {
                let _ = writeln!(s, "{} {} {}", m[(r, 0)], m[(r, 1)], m[(r, 2)]);
            }
            s
        }
    }
}

/// Index pairs, one `a b` per line.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, usize)>, IoError> {
    data_lines(text)
        .map(|(line, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            match f.as_slice() {
                [a, b] => Ok((
                    a.parse().map_err(|_| parse_err(line, format!("bad index {a:?}")))?,
                    b.parse().map_err(|_| parse_err(line, format!("bad index {b:?}")))?,
                )),
                _ => Err(parse_err(line, "expected 'index_a index_b'")),
            }
        })
        .collect()
}

pub fn format_pairs(pairs: &[(usize, usize)]) -> String {
    let mut s = String::from("# index_a index_b\n");
    for (a, b) in pairs {
        let _ = writeln!(s, "{a} {b}");
    }
    s
}

// ---------------------------------------------------------------- observation streams

/// `frame_index tx ty tz qx qy qz qw tracked shared` per line (pose is camera-from-world).
pub fn parse_observations(text: &str) -> Result<Vec<FrameObservation>, IoError> {
    data_lines(text)
        .map(|(line, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 10 {
                return Err(parse_err(line, format!("expected 10 fields, got {}", f.len())));
            }
            let int = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| parse_err(line, format!("bad integer {s:?}")))
            };
            let frame_index = int(f[0])?;
            let pose = parse_pose_fields(line, &f[1..8])?;
            let tracked = int(f[8])? as usize;
            let shared = int(f[9])? as usize;
            if shared > tracked {
                return Err(parse_err(line, "shared exceeds tracked"));
            }
            Ok(FrameObservation {
                frame_index,
                pose,
                tracked_points: tracked,
                shared_with_reference: shared,
            })
        })
        .collect()
}

pub fn format_observations(stream: &[FrameObservation]) -> String {
    let mut s = String::from("# frame_index tx ty tz qx qy qz qw tracked shared\n");
    for o in stream {
        let _ = writeln!(
            s,
            "{} {} {} {}",
            o.frame_index,
            format_pose(&o.pose),
            o.tracked_points,
            o.shared_with_reference
        );
    }
    s
}

// ---------------------------------------------------------------- key = value

/// `key = value` entries with their line numbers. Duplicate keys are errors.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>, IoError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, l) in data_lines(text) {
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| parse_err(line, "expected 'key = value'"))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(parse_err(line, "empty key"));
        }
        if !seen.insert(k.to_string()) {
            return Err(parse_err(line, format!("duplicate key {k}")));
        }
        out.push((line, k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Flat `key = value` report text.
pub fn format_key_values(entries: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Every tunable parameter, with module defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Config {
    pub matching: MatchConfig,
    pub keyframe: KeyframeConfig,
    pub gicp: GicpParams,
    pub overlap_radius: f64,
    pub voxel_size: f64,
    pub filter: GaussianFilterParams,
    pub ate_max_dt: f64,
}

impl Default for Config {
    fn default() -> Self {
        let overlap_radius = 0.05;
        Self {
            matching: MatchConfig::default(),
            keyframe: KeyframeConfig::default(),
            gicp: GicpParams {
                max_correspondence_dist: 5.0 * overlap_radius,
                ..GicpParams::default()
            },
            overlap_radius,
            voxel_size: 0.05,
            filter: GaussianFilterParams::default(),
            ate_max_dt: 0.02,
        }
    }
}

fn as_f64(key: &str, v: &str) -> Result<f64, IoError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| IoError::TypeMismatch {
            key: key.into(),
            expected: "number",
            value: v.into(),
        })
}

fn as_usize(key: &str, v: &str) -> Result<usize, IoError> {
    v.parse::<usize>().map_err(|_| IoError::TypeMismatch {
        key: key.into(),
        expected: "non-negative integer",
        value: v.into(),
    })
}

fn as_u32(key: &str, v: &str) -> Result<u32, IoError> {
    v.parse::<u32>().map_err(|_| IoError::TypeMismatch {
        key: key.into(),
        expected: "non-negative integer",
        value: v.into(),
    })
}

impl Config {
    pub const KEYS: &'static [&'static str] = &[
        "match.cell_size",
        "match.radius_stage1",
        "match.radius_stage2",
        "match.max_hamming",
        "match.ratio_threshold",
        "keyframe.alpha",
        "keyframe.beta",
        "keyframe.gamma",
        "keyframe.delta",
        "keyframe.weights",
        "keyframe.q",
        "keyframe.norm_frames",
        "keyframe.norm_trans",
        "keyframe.norm_rot",
        "overlap.radius",
        "voxel.size",
        "gicp.k_neighbors",
        "gicp.epsilon",
        "gicp.max_iterations",
        "gicp.translation_tol",
        "gicp.rotation_tol",
        "gicp.max_correspondence_dist",
        "filter.k_neighbors",
        "filter.reg",
        "ate.max_dt",
    ];

    /// Sets one key. Returns `Ok(false)` for keys this config does not know.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool, IoError> {
        match key {
            "match.cell_size" => self.matching.cell_size = as_f64(key, v)?,
            "match.radius_stage1" => self.matching.radius_stage1 = as_f64(key, v)?,
            "match.radius_stage2" => self.matching.radius_stage2 = as_f64(key, v)?,
            "match.max_hamming" => self.matching.max_hamming = as_u32(key, v)?,
            "match.ratio_threshold" => self.matching.ratio_threshold = as_f64(key, v)?,
            "keyframe.alpha" => self.keyframe.alpha = as_f64(key, v)?,
            "keyframe.beta" => self.keyframe.beta = as_f64(key, v)?,
            "keyframe.gamma" => self.keyframe.gamma = as_f64(key, v)?,
            "keyframe.delta" => self.keyframe.delta = as_f64(key, v)?,
            "keyframe.weights" => {
                let w: Vec<f64> = v
                    .split_whitespace()
                    .map(|x| as_f64(key, x))
                    .collect::<Result<_, _>>()
                    .map_err(|_| IoError::TypeMismatch {
                        key: key.into(),
                        expected: "4 numbers",
                        value: v.into(),
                    })?;
                self.keyframe.weights = w.try_into().map_err(|_| IoError::TypeMismatch {
                    key: key.into(),
                    expected: "4 numbers",
                    value: v.into(),
                })?;
            }
            "keyframe.q" => self.keyframe.q = as_f64(key, v)?,
            "keyframe.norm_frames" => self.keyframe.norm_frames = as_f64(key, v)?,
            "keyframe.norm_trans" => self.keyframe.norm_trans = as_f64(key, v)?,
            "keyframe.norm_rot" => self.keyframe.norm_rot = as_f64(key, v)?,
            "overlap.radius" => self.overlap_radius = as_f64(key, v)?,
            "voxel.size" => self.voxel_size = as_f64(key, v)?,
            "gicp.k_neighbors" => self.gicp.k_neighbors = as_usize(key, v)?,
            "gicp.epsilon" => self.gicp.epsilon = as_f64(key, v)?,
            "gicp.max_iterations" => self.gicp.max_iterations = as_usize(key, v)?,
            "gicp.translation_tol" => self.gicp.translation_tol = as_f64(key, v)?,
            "gicp.rotation_tol" => self.gicp.rotation_tol = as_f64(key, v)?,
            "gicp.max_correspondence_dist" => self.gicp.max_correspondence_dist = as_f64(key, v)?,
            "filter.k_neighbors" => self.filter.k_neighbors = as_usize(key, v)?,
            "filter.reg" => self.filter.reg = as_f64(key, v)?,
            "ate.max_dt" => self.ate_max_dt = as_f64(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Defaults overridden by `entries`; see [`Config::with_overrides`].
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, IoError> {
        Config::default().with_overrides(entries)
    }

    /// Applies entries on top of `self`; unknown keys are collected and
    /// reported together. When `overlap.radius` changes and
    /// `gicp.max_correspondence_dist` is not given, the latter keeps its
    /// ratio to the radius.
    pub fn with_overrides<'a>(&self, entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, IoError> {
        let mut cfg = *self;
        let ratio = self.gicp.max_correspondence_dist / self.overlap_radius;
        let mut unknown = Vec::new();
        let mut explicit_corr = false;
        for (k, v) in entries {
            explicit_corr |= k == "gicp.max_correspondence_dist";
            if !cfg.set(k, v)? {
                unknown.push(k.to_string());
            }
        }
        if !unknown.is_empty() {
            return Err(IoError::UnknownKeys(unknown));
        }
        if !explicit_corr && cfg.overlap_radius != self.overlap_radius {
            cfg.gicp.max_correspondence_dist = ratio * cfg.overlap_radius;
        }
        Ok(cfg)
    }

    /// All keys with their effective values.
    pub fn to_entries(&self) -> Vec<(String, String)> {
        let k = &self.keyframe;
        let w = k.weights;
        let vals: Vec<String> = vec![
            self.matching.cell_size.to_string(),
            self.matching.radius_stage1.to_string(),
            self.matching.radius_stage2.to_string(),
            self.matching.max_hamming.to_string(),
            self.matching.ratio_threshold.to_string(),
            k.alpha.to_string(),
            k.beta.to_string(),
            k.gamma.to_string(),
            k.delta.to_string(),
            format!("{} {} {} {}", w[0], w[1], w[2], w[3]),
            k.q.to_string(),
            k.norm_frames.to_string(),
            k.norm_trans.to_string(),
            k.norm_rot.to_string(),
            self.overlap_radius.to_string(),
            self.voxel_size.to_string(),
            self.gicp.k_neighbors.to_string(),
            self.gicp.epsilon.to_string(),
            self.gicp.max_iterations.to_string(),
            self.gicp.translation_tol.to_string(),
            self.gicp.rotation_tol.to_string(),
            self.gicp.max_correspondence_dist.to_string(),
            self.filter.k_neighbors.to_string(),
            self.filter.reg.to_string(),
            self.ate_max_dt.to_string(),
        ];
        Self::KEYS.iter().map(|k| k.to_string()).zip(vals).collect()
    }
}

pub fn parse_config(text: &str) -> Result<Config, IoError> {
    let entries = parse_key_values(text)?;
    Config::from_entries(entries.iter().map(|(_, k, v)| (k.as_str(), v.as_str())))
}

pub fn read_config(path: &Path) -> Result<Config, IoError> {
    parse_config(&read_text(path)?)
}

// ---------------------------------------------------------------- session manifests

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RobotEntry {
    pub cloud: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    /// World-to-robot.
    pub pose: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionManifest {
    pub robots: BTreeMap<String, RobotEntry>,
    pub config: Config,
}

/// `robot.<id>.{cloud,trajectory,pose}` entries plus [`Config`] keys.
/// Relative paths are resolved against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<SessionManifest, IoError> {
    let entries = parse_key_values(text)?;
    let mut robots: BTreeMap<String, RobotEntry> = BTreeMap::new();
    let mut rest = Vec::new();
    for (line, k, v) in &entries {
        let Some(tail) = k.strip_prefix("robot.") else {
            rest.push((k.as_str(), v.as_str()));
            continue;
        };
        let (id, field) = tail
            .rsplit_once('.')
            .ok_or_else(|| parse_err(*line, format!("malformed robot key {k}")))?;
        if id.is_empty() {
            return Err(parse_err(*line, "empty robot id"));
        }
        let entry = robots.entry(id.to_string()).or_default();
        let path = || {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        match field {
            "cloud" => entry.cloud = Some(path()),
            "trajectory" => entry.trajectory = Some(path()),
            "pose" => {
                let f: Vec<&str> = v.split_whitespace().collect();
                entry.pose = Some(parse_pose_fields(*line, &f)?);
            }
            _ => return Err(IoError::UnknownKeys(vec![k.clone()])),
        }
    }
    Ok(SessionManifest {
        robots,
        config: Config::from_entries(rest)?,
    })
}

pub fn read_manifest(path: &Path) -> Result<SessionManifest, IoError> {
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&read_text(path)?, base)
}
