//! Skeleton ingestion: OpenPose COCO keypoint JSON, Kinect and generic CSV,
//! frame cleaning, dataset manifests and trajectory CSV export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::curve::Trajectory;
use crate::error::{Error, Result};
use crate::manifold::{center_landmarks_with_tol, LandmarkConfig, DEFAULT_RANK_TOL};

/// Default minimum joint confidence kept by [`clean_frames`].
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.1;

/// Skeleton layouts with a fixed joint count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// OpenPose COCO, 18 joints in 2D.
    Coco18,
    /// Kinect v1, 20 joints in 3D.
    Kinect20,
    /// Any joint count, constant within a sequence.
    Generic,
}

impl Layout {
    pub fn joint_count(self) -> Option<usize> {
        match self {
            Layout::Coco18 => Some(18),
            Layout::Kinect20 => Some(20),
            Layout::Generic => None,
        }
    }

    pub fn dim(self) -> Option<usize> {
        match self {
            Layout::Coco18 => Some(2),
            Layout::Kinect20 => Some(3),
            Layout::Generic => None,
        }
    }
}

/// File format of a manifest entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// A JSON file holding one frame or an array of frames, or a directory
    /// of per-frame JSON files read in file-name order.
    Openpose,
    /// Generic CSV checked against the Kinect layout.
    Kinect,
    /// Generic CSV.
    Csv,
}

impl Format {
    pub fn layout(self) -> Layout {
        match self {
            Format::Openpose => Layout::Coco18,
            Format::Kinect => Layout::Kinect20,
            Format::Csv => Layout::Generic,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "openpose" => Ok(Format::Openpose),
            "kinect" => Ok(Format::Kinect),
            "csv" => Ok(Format::Csv),
            other => Err(Error::InvalidParameter(format!("unknown format {other:?}"))),
        }
    }
}

/// One observed skeleton. Joint `j` occupies `coords[j*dim..(j+1)*dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    /// Original frame index (or time stamp).
    pub frame_index: f64,
    pub dim: usize,
    pub coords: Vec<f64>,
    pub confidence: Vec<Option<f64>>,
    pub missing: Vec<bool>,
}

impl RawFrame {
    pub fn joint_count(&self) -> usize {
        self.missing.len()
    }

    pub fn joint(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dim..(j + 1) * self.dim]
    }

    /// Joints as an n×d matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.joint_count(), self.dim, &self.coords)
    }

    fn is_clean(&self, min_confidence: f64) -> bool {
        !self.missing.iter().any(|&m| m)
            && self.confidence.iter().all(|c| c.is_none_or(|c| c >= min_confidence))
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedDocument(msg.into())
}

fn openpose_frame(frame: &Value, index: usize) -> Result<RawFrame> {
    let people = frame
        .get("people")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(format!("frame {index}: missing \"people\" array")))?;
    let joints = 18;
    let Some(person) = people.first() else {
        return Ok(RawFrame {
            frame_index: index as f64,
            dim: 2,
            coords: vec![0.0; 2 * joints],
            confidence: vec![Some(0.0); joints],
            missing: vec![true; joints],
        });
    };
    let flat = person
        .get("pose_keypoints_2d")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(format!("frame {index}: missing \"pose_keypoints_2d\"")))?;
    if flat.len() % 3 != 0 {
        return Err(malformed(format!(
            "frame {index}: keypoint array length {} is not a multiple of 3",
            flat.len()
        )));
    }
    if flat.len() / 3 != joints {
        return Err(Error::WrongJointCount {
            expected: joints,
            got: flat.len() / 3,
        });
    }
    let values = flat
        .iter()
        .map(|v| v.as_f64().ok_or_else(|| malformed(format!("frame {index}: non-numeric keypoint"))))
        .collect::<Result<Vec<f64>>>()?;
    let mut coords = Vec::with_capacity(2 * joints);
    let mut confidence = Vec::with_capacity(joints);
    let mut missing = Vec::with_capacity(joints);
    for triple in values.chunks_exact(3) {
        coords.extend_from_slice(&triple[..2]);
        confidence.push(Some(triple[2]));
        missing.push(triple[2] == 0.0);
    }
    Ok(RawFrame {
        frame_index: index as f64,
        dim: 2,
        coords,
        confidence,
        missing,
    })
}

/// Parses an OpenPose keypoint document: a single frame object or an array
/// of frame objects. Only the first detected person is used; a frame with
/// nobody detected has every joint missing.
pub fn parse_openpose_json(document: &str) -> Result<Vec<RawFrame>> {
    let value: Value = serde_json::from_str(document).map_err(|e| malformed(e.to_string()))?;
    match &value {
        Value::Array(frames) => frames.iter().enumerate().map(|(i, f)| openpose_frame(f, i)).collect(),
        Value::Object(_) => Ok(vec![openpose_frame(&value, 0)?]),
        _ => Err(malformed("expected a frame object or an array of frames")),
    }
}

/// Parses CSV with header `frame,joint,x,y[,z][,confidence]`.
///
/// Rows are grouped by frame and sorted by frame; each frame must list joints
/// `0..J` exactly once. Non-finite coordinates mark the joint missing.
pub fn parse_csv_sequence(text: &str) -> Result<Vec<RawFrame>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() <= 1 && header.iter().all(|h| h.is_empty()) {
        return Ok(Vec::new());
    }
    let has_conf = header.last().map(String::as_str) == Some("confidence");
    let ncoord = header.len() - 2 - usize::from(has_conf);
    let expected: &[&str] = match ncoord {
        2 => &["frame", "joint", "x", "y"],
        3 => &["frame", "joint", "x", "y", "z"],
        _ => return Err(malformed(format!("unsupported CSV header {header:?}"))),
    };
    if header[..2 + ncoord] != *expected {
        return Err(malformed(format!("expected header {}", expected.join(","))));
    }

    let mut rows_all: Vec<(f64, i64, Vec<f64>, Option<f64>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::RaggedRows(format!(
                "row {} has {} fields, header has {}",
                line + 2,
                record.len(),
                header.len()
            )));
        }
        let num = |k: usize| -> Result<f64> {
            let s = &record[k];
            if s.is_empty() {
                return Ok(f64::NAN);
            }
            s.parse::<f64>()
                .map_err(|_| malformed(format!("row {}: bad number {s:?}", line + 2)))
        };
        let frame = num(0)?;
        if !frame.is_finite() {
            return Err(malformed(format!("row {}: bad frame index", line + 2)));
        }
        let joint: i64 = record[1]
            .parse()
            .map_err(|_| malformed(format!("row {}: bad joint index {:?}", line + 2, &record[1])))?;
        let xyz = (0..ncoord).map(|k| num(2 + k)).collect::<Result<Vec<_>>>()?;
        let conf = if has_conf { Some(num(2 + ncoord)?) } else { None };
        rows_all.push((frame, joint, xyz, conf));
    }
    rows_all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut out = Vec::new();
    let mut joint_count = None;
    for rows in rows_all.chunk_by(|a, b| a.0 == b.0) {
        let frame = rows[0].0;
        for (expect, row) in rows.iter().enumerate() {
            if row.1 != expect as i64 {
                return Err(Error::NonContiguousJoints {
                    frame,
                    detail: format!("expected joint {expect}, found {}", row.1),
                });
            }
        }
        match joint_count {
            None => joint_count = Some(rows.len()),
            Some(j) if j != rows.len() => {
                return Err(Error::WrongJointCount {
                    expected: j,
                    got: rows.len(),
                })
            }
            _ => {}
        }
        let mut coords = Vec::with_capacity(rows.len() * ncoord);
        let mut confidence = Vec::with_capacity(rows.len());
        let mut missing = Vec::with_capacity(rows.len());
        for (_, _, xyz, conf) in rows {
            missing.push(xyz.iter().any(|v| !v.is_finite()) || conf.is_some_and(|c| !c.is_finite()));
            coords.extend_from_slice(xyz);
            confidence.push(*conf);
        }
        out.push(RawFrame {
            frame_index: frame,
            dim: ncoord,
            coords,
            confidence,
            missing,
        });
    }
    Ok(out)
}

/// Drops every frame with a missing joint or a joint below `min_confidence`.
pub fn clean_frames(frames: Vec<RawFrame>, min_confidence: f64) -> Result<Vec<RawFrame>> {
    let kept: Vec<RawFrame> = frames.into_iter().filter(|f| f.is_clean(min_confidence)).collect();
    if kept.is_empty() {
        return Err(Error::AllFramesDropped);
    }
    Ok(kept)
}

/// Checks joint count and dimension against a layout.
pub fn check_layout(frames: &[RawFrame], layout: Layout) -> Result<()> {
    for f in frames {
        if let Some(j) = layout.joint_count() {
            if f.joint_count() != j {
                return Err(Error::WrongJointCount {
                    expected: j,
                    got: f.joint_count(),
                });
            }
        }
        if let Some(d) = layout.dim() {
            if f.dim != d {
                return Err(Error::DimensionMismatch(format!("layout expects d = {d}, file has d = {}", f.dim)));
            }
        }
    }
    Ok(())
}

/// Loading options shared by all files of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub min_confidence: f64,
    /// Scale every centered frame to unit Frobenius norm.
    pub unit_norm: bool,
    /// Fail on the first bad file instead of skipping it.
    pub strict: bool,
    pub rank_tol: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            unit_norm: false,
            strict: false,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

/// Centers each frame and assembles a trajectory whose knot times are the
/// original frame indices.
pub fn frames_to_trajectory(frames: &[RawFrame], options: &LoadOptions) -> Result<Trajectory> {
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    let points = frames
        .iter()
        .map(|f| {
            let centered = center_landmarks_with_tol(&f.to_matrix(), options.rank_tol)?;
            if options.unit_norm {
                let norm = centered.coords().norm();
                LandmarkConfig::new(centered.into_coords() / norm)
            } else {
                Ok(centered)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(points, frames.iter().map(|f| f.frame_index).collect())
}

/// Frames of a trajectory, exactly as stored (no re-centering).
pub fn trajectory_to_frames(traj: &Trajectory) -> Vec<RawFrame> {
    traj.points()
        .iter()
        .zip(traj.times())
        .map(|(p, &t)| {
            let z = p.coords();
            RawFrame {
                frame_index: t,
                dim: z.ncols(),
                coords: z.transpose().iter().copied().collect(),
                confidence: vec![None; z.nrows()],
                missing: vec![false; z.nrows()],
            }
        })
        .collect()
}

/// Writes a trajectory as generic CSV. Floats use shortest round-trip
/// formatting, so parsing the output reproduces every coordinate exactly.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let mut s = String::from(if traj.d() == 3 { "frame,joint,x,y,z\n" } else { "frame,joint,x,y\n" });
    for (p, t) in traj.points().iter().zip(traj.times()) {
        let z = p.coords();
        for j in 0..z.nrows() {
            let _ = write!(s, "{t},{j}");
            for k in 0..z.ncols() {
                let _ = write!(s, ",{}", z[(j, k)]);
            }
            s.push('\n');
        }
    }
    s
}

/// Reads the frames of one sequence, in file order.
pub fn read_frames(path: &Path, format: Format) -> Result<Vec<RawFrame>> {
    let frames = match format {
        Format::Openpose if path.is_dir() => {
            let mut files: Vec<PathBuf> = fs::read_dir(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|p| p.extension().is_some_and(|e| e == "json"));
            files.sort();
            let mut frames = Vec::with_capacity(files.len());
            for file in files {
                let text = fs::read_to_string(&file)?;
                for mut f in parse_openpose_json(&text)? {
                    f.frame_index = frames.len() as f64;
                    frames.push(f);
                }
            }
            frames
        }
        Format::Openpose => parse_openpose_json(&fs::read_to_string(path)?)?,
        Format::Kinect | Format::Csv => parse_csv_sequence(&fs::read_to_string(path)?)?,
    };
    check_layout(&frames, format.layout())?;
    Ok(frames)
}

/// One sequence of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub subject: Option<String>,
    pub format: Format,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.is_empty()))
}

/// CSV manifest with header `path,label,subject,format`. Relative paths are
/// resolved against `base_dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != ["path", "label", "subject", "format"] {
            return Err(malformed("manifest header must be path,label,subject,format"));
        }
        let entries = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        if let Some(i) = entries.iter().position(|e| e.label.is_empty()) {
            return Err(malformed(format!("manifest row {} has an empty label", i + 2)));
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| e.in_file(path))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            writer.serialize(e)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    /// Subjects are needed on every entry for leave-one-actor-out.
    pub fn has_subjects(&self) -> bool {
        self.entries.iter().all(|e| e.subject.is_some())
    }
}

/// Loaded trajectories plus the entries that were skipped.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    /// Manifest path of each trajectory.
    pub ids: Vec<String>,
    pub skipped: Vec<(String, String)>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<String> {
        self.trajectories.iter().map(|t| t.label.clone().unwrap_or_default()).collect()
    }

    pub fn subjects(&self) -> Vec<Option<String>> {
        self.trajectories.iter().map(|t| t.subject.clone()).collect()
    }
}

pub fn load_entry(manifest: &DatasetManifest, entry: &ManifestEntry, options: &LoadOptions) -> Result<Trajectory> {
    let path = manifest.resolve(entry);
    let load = || -> Result<Trajectory> {
        let frames = clean_frames(read_frames(&path, entry.format)?, options.min_confidence)?;
        let mut traj = frames_to_trajectory(&frames, options)?.with_label(entry.label.clone());
        traj.subject = entry.subject.clone();
        Ok(traj)
    };
    load().map_err(|e| e.in_file(path))
}

/// Parses, cleans and centers every manifest entry, in parallel per file.
/// Output order follows the manifest.
pub fn load_dataset(manifest: &DatasetManifest, options: &LoadOptions) -> Result<Dataset> {
    let results: Vec<Result<Trajectory>> = manifest
        .entries
        .par_iter()
        .map(|e| load_entry(manifest, e, options))
        .collect();
    let mut dataset = Dataset {
        trajectories: Vec::new(),
        ids: Vec::new(),
        skipped: Vec::new(),
    };
    for (entry, result) in manifest.entries.iter().zip(results) {
        match result {
            Ok(t) => {
                dataset.trajectories.push(t);
                dataset.ids.push(entry.path.clone());
            }
            Err(e) if options.strict => return Err(e),
            Err(e) => {
                log::warn!("skipping {}", e);
                dataset.skipped.push((entry.path.clone(), e.to_string()));
            }
        }
    }
    if dataset.trajectories.is_empty() && !dataset.skipped.is_empty() {
        return Err(Error::Dataset(dataset.skipped.len(), dataset.skipped[0].1.clone()));
    }
    Ok(dataset)
}
