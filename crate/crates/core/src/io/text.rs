//! Whitespace-separated text formats: `.xyz`, OBJ vertices and ShapeNet
//! `.pts` + `.seg` pairs.

use std::path::{Path, PathBuf};

use super::{assemble, read_to_string, stem, FormatError, LabeledCloud, Location};
use crate::cloud::LabelMap;
use crate::error::Result;
use crate::geom::Vec3;

fn parse_floats(path: &Path, line_no: usize, words: &[&str]) -> Result<Vec<f64>> {
    words
        .iter()
        .map(|w| {
            let v: f64 = w.parse().map_err(|_| FormatError::Parse {
                path: path.to_path_buf(),
                at: Location::Line(line_no),
                msg: format!("cannot parse {w:?} as a number"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(FormatError::NonFinite {
                    path: path.to_path_buf(),
                    at: Location::Line(line_no),
                }
                .into())
            }
        })
        .collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#') && !l.starts_with("//"))
}

/// One point per line: `x y z` or `x y z nx ny nz`; extra columns are
/// ignored. Normals are taken only when every row has six or more values.
pub fn read_xyz(path: &Path) -> Result<LabeledCloud> {
    let text = read_to_string(path)?;
    let mut positions = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut all_normals = true;
    for (line_no, line) in content_lines(&text) {
        let words: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|w| !w.is_empty()).collect();
        if words.len() < 3 {
            return Err(FormatError::Parse {
                path: path.to_path_buf(),
                at: Location::Line(line_no),
                msg: format!("expected at least 3 values, found {}", words.len()),
            }
            .into());
        }
        let take = if words.len() >= 6 { 6 } else { 3 };
        let v = parse_floats(path, line_no, &words[..take])?;
        positions.push([v[0], v[1], v[2]]);
        if take == 6 {
            normals.push([v[3], v[4], v[5]]);
        } else {
            all_normals = false;
        }
    }
    let normals = (all_normals && !positions.is_empty()).then_some(normals);
    let cloud = assemble(path, positions, normals)?;
    LabeledCloud::new(cloud, None, stem(path))
}

/// The `v x y z` lines of an OBJ file, plus `vn` normals when there is exactly
/// one per vertex. Faces and everything else are ignored.
pub fn read_obj_vertices(path: &Path) -> Result<LabeledCloud> {
    let text = read_to_string(path)?;
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let mut words = line.split_whitespace();
        let tag = words.next().unwrap_or("");
        if tag != "v" && tag != "vn" {
            continue;
        }
        let rest: Vec<&str> = words.collect();
        if rest.len() < 3 {
            return Err(FormatError::Parse {
                path: path.to_path_buf(),
                at: Location::Line(line_no),
                msg: format!("{tag} needs 3 coordinates"),
            }
            .into());
        }
        // Vertex colors may follow x y z; ignore them.
        let v = parse_floats(path, line_no, &rest[..3])?;
        let p = [v[0], v[1], v[2]];
        if tag == "v" {
            positions.push(p);
        } else {
            normals.push(p);
        }
    }
    let normals = (!normals.is_empty() && normals.len() == positions.len()).then_some(normals);
    let cloud = assemble(path, positions, normals)?;
    LabeledCloud::new(cloud, None, stem(path))
}

/// The label file paired with a ShapeNet `.pts` file: a sibling with the
/// `.seg` extension, or `../points_label/<stem>.seg` as in the ShapeNet part
/// benchmark layout.
pub fn shapenet_label_path(pts: &Path) -> Option<PathBuf> {
    let sibling = pts.with_extension("seg");
    if sibling.is_file() {
        return Some(sibling);
    }
    let name = format!("{}.seg", pts.file_stem()?.to_str()?);
    let benchmark = pts.parent()?.parent()?.join("points_label").join(name);
    benchmark.is_file().then_some(benchmark)
}

/// A `.pts` file of `x y z` lines and a `.seg` file with one integer label per
/// line.
pub fn read_shapenet(pts: &Path, seg: &Path) -> Result<LabeledCloud> {
    let text = read_to_string(pts)?;
    let mut positions = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.len() < 3 {
            return Err(FormatError::Parse {
                path: pts.to_path_buf(),
                at: Location::Line(line_no),
                msg: format!("expected 3 values, found {}", words.len()),
            }
            .into());
        }
        let v = parse_floats(pts, line_no, &words[..3])?;
        positions.push([v[0], v[1], v[2]]);
    }

    let text = read_to_string(seg)?;
    let mut labels = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let v: i64 = line.parse().map_err(|_| FormatError::Parse {
            path: seg.to_path_buf(),
            at: Location::Line(line_no),
            msg: format!("cannot parse {line:?} as an integer label"),
        })?;
        labels.push(v);
    }
    if labels.len() != positions.len() {
        return Err(FormatError::CountMismatch {
            path: seg.to_path_buf(),
            what: "labels",
            expected: positions.len(),
            found: labels.len(),
        }
        .into());
    }
    let cloud = assemble(pts, positions, None)?;
    LabeledCloud::new(cloud, Some(LabelMap::from_raw(&labels)), stem(pts))
}
