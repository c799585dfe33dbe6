//! Reading and writing point clouds, uniform downsampling and synthetic
//! labeled shapes.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cloud::{LabelMap, PointCloud};
use crate::error::{Error, Result};

mod ply;
mod sample;
mod synth;
mod text;

pub use ply::{read_ply, write_labeled_ply, PALETTE};
pub use sample::downsample_uniform;
pub use synth::{make_synthetic, SynthKind, SynthParams, HUMANOID_HEIGHT, HUMANOID_PARTS};
pub use text::{read_obj_vertices, read_shapenet, read_xyz, shapenet_label_path};

/// A cloud with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub truth: Option<LabelMap>,
    pub name: String,
}

impl LabeledCloud {
    pub fn new(cloud: PointCloud, truth: Option<LabelMap>, name: impl Into<String>) -> Result<Self> {
        if let Some(t) = &truth {
            if t.len() != cloud.len() {
                return Err(Error::LengthMismatch {
                    what: "truth labels vs points",
                    left: t.len(),
                    right: cloud.len(),
                });
            }
        }
        Ok(LabeledCloud {
            cloud,
            truth,
            name: name.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    PlyBinaryLe,
    ObjVertices,
    XyzText,
    ShapenetPtsSeg,
}

impl CloudFormat {
    /// Guess from the extension; PLY flavor is read from the header.
    pub fn detect(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "ply" => ply::sniff(path),
            "obj" => Ok(CloudFormat::ObjVertices),
            "xyz" | "txt" | "asc" => Ok(CloudFormat::XyzText),
            "pts" => Ok(CloudFormat::ShapenetPtsSeg),
            _ => Err(FormatError::Unsupported {
                path: path.to_path_buf(),
                msg: format!("cannot infer a point cloud format from extension {ext:?}"),
            }
            .into()),
        }
    }
}

impl std::str::FromStr for CloudFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ply_ascii" => Ok(CloudFormat::PlyAscii),
            "ply_binary_le" => Ok(CloudFormat::PlyBinaryLe),
            "obj_vertices" => Ok(CloudFormat::ObjVertices),
            "xyz_text" => Ok(CloudFormat::XyzText),
            "shapenet_pts_seg" => Ok(CloudFormat::ShapenetPtsSeg),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

/// Where in a file something went wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Offset(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Offset(o) => write!(f, "byte offset {o}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: malformed header at line {line}: {msg}", path = .path.display())]
    Header {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {at}: {msg}", path = .path.display())]
    Parse {
        path: PathBuf,
        at: Location,
        msg: String,
    },
    #[error("{path}: expected {expected} {what}, found {found}", path = .path.display())]
    CountMismatch {
        path: PathBuf,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{path}: non-finite value at {at}", path = .path.display())]
    NonFinite { path: PathBuf, at: Location },
    #[error("{path}: {msg}", path = .path.display())]
    Unsupported { path: PathBuf, msg: String },
}

/// Reads a cloud in the given format. The name is the file stem.
pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<LabeledCloud> {
    match format {
        CloudFormat::PlyAscii | CloudFormat::PlyBinaryLe => {
            let got = ply::sniff(path)?;
            if got != format {
                return Err(FormatError::Unsupported {
                    path: path.to_path_buf(),
                    msg: format!("expected {format:?}, file is {got:?}"),
                }
                .into());
            }
            read_ply(path)
        }
        CloudFormat::ObjVertices => read_obj_vertices(path),
        CloudFormat::XyzText => read_xyz(path),
        CloudFormat::ShapenetPtsSeg => {
            let seg = shapenet_label_path(path).ok_or_else(|| FormatError::Unsupported {
                path: path.to_path_buf(),
                msg: "no matching .seg label file found".into(),
            })?;
            read_shapenet(path, &seg)
        }
    }
}

/// [`read_cloud`] with [`CloudFormat::detect`].
pub fn read_cloud_auto(path: &Path) -> Result<LabeledCloud> {
    read_cloud(path, CloudFormat::detect(path)?)
}

pub(crate) fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("cloud")
        .to_string()
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Cloud from parsed columns; normals are renormalized, or dropped with a
/// warning when any is zero.
pub(crate) fn assemble(
    path: &Path,
    positions: Vec<[f64; 3]>,
    normals: Option<Vec<[f64; 3]>>,
) -> Result<PointCloud> {
    if positions.is_empty() {
        return Err(FormatError::Unsupported {
            path: path.to_path_buf(),
            msg: "file contains no points".into(),
        }
        .into());
    }
    let normals = normals.and_then(|ns| {
        let fixed: Option<Vec<[f64; 3]>> = ns.iter().map(|&n| crate::geom::normalize(n)).collect();
        if fixed.is_none() {
            log::warn!("{}: zero-length normals present; ignoring normals", path.display());
        }
        fixed
    });
    Ok(PointCloud::from_raw(positions, normals))
}
