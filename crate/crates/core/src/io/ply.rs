//! PLY point clouds.
//!
//! Reading understands ASCII and binary little-endian files. From the
//! `vertex` element it takes `x y z`, optionally `nx ny nz`, and optionally
//! an integer label property (`label`, `scalar_label`, `class` or `part`).
//! Every other element and property is skipped.
//!
//! Writing always produces ASCII with 9 significant digits per coordinate:
//!
//! ```text
//! ply
//! format ascii 1.0
//! comment pointseg labeled cloud
//! element vertex <N>
//! property double x
//! property double y
//! property double z
//! property double nx        (only when the cloud has normals)
//! property double ny
//! property double nz
//! property int label
//! property uchar red
//! property uchar green
//! property uchar blue
//! end_header
//! ```
//!
//! Colors come from [`PALETTE`], indexed by `label % 12`.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::{assemble, stem, CloudFormat, FormatError, LabeledCloud, Location};
use crate::cloud::{LabelMap, PointCloud};
use crate::error::{Error, Result};

/// Label colors, cycled by label value.
pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];

const LABEL_NAMES: [&str; 4] = ["label", "scalar_label", "class", "part"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: CloudFormat,
    elements: Vec<Element>,
    /// Lines consumed, including `end_header`.
    lines: usize,
    /// Bytes consumed, including the newline after `end_header`.
    bytes: usize,
}

/// The PLY flavor of `path`, from its header.
pub(super) fn sniff(path: &Path) -> Result<CloudFormat> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_header(path, &mut BufReader::new(file))?.format)
}

fn parse_header(path: &Path, reader: &mut impl BufRead) -> Result<Header> {
    let err = |line: usize, msg: String| -> Error {
        FormatError::Header {
            path: path.to_path_buf(),
            line,
            msg,
        }
        .into()
    };
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut bytes = 0;
    let mut raw = Vec::new();
    for line_no in 1.. {
        raw.clear();
        let read = reader
            .read_until(b'\n', &mut raw)
            .map_err(|e| Error::io(path, e))?;
        if read == 0 {
            return Err(err(line_no, "end of file before end_header".into()));
        }
        bytes += read;
        let line = String::from_utf8_lossy(&raw);
        let line = line.trim();
        let mut words = line.split_whitespace();
        let keyword = words.next().unwrap_or("");
        if line_no == 1 {
            if line != "ply" {
                return Err(err(1, "file does not start with \"ply\"".into()));
            }
            continue;
        }
        match keyword {
            "format" => {
                format = Some(match words.next() {
                    Some("ascii") => CloudFormat::PlyAscii,
                    Some("binary_little_endian") => CloudFormat::PlyBinaryLe,
                    Some(other) => {
                        return Err(FormatError::Unsupported {
                            path: path.to_path_buf(),
                            msg: format!("PLY format {other} is not supported"),
                        }
                        .into())
                    }
                    None => return Err(err(line_no, "format line without a format".into())),
                })
            }
            "comment" | "obj_info" | "" => {}
            "element" => {
                let (Some(name), Some(count)) = (words.next(), words.next()) else {
                    return Err(err(line_no, "element needs a name and a count".into()));
                };
                let count = count
                    .parse()
                    .map_err(|_| err(line_no, format!("bad element count {count:?}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| err(line_no, "property before any element".into()))?;
                let words: Vec<&str> = words.collect();
                let prop = match words.as_slice() {
                    ["list", count, item, _name] => Property::List {
                        count: Scalar::parse(count)
                            .ok_or_else(|| err(line_no, format!("unknown type {count:?}")))?,
                        item: Scalar::parse(item)
                            .ok_or_else(|| err(line_no, format!("unknown type {item:?}")))?,
                    },
                    [ty, name] => Property::Scalar {
                        name: name.to_string(),
                        ty: Scalar::parse(ty)
                            .ok_or_else(|| err(line_no, format!("unknown type {ty:?}")))?,
                    },
                    _ => return Err(err(line_no, format!("malformed property {line:?}"))),
                };
                elem.props.push(prop);
            }
            "end_header" => {
                let format =
                    format.ok_or_else(|| err(line_no, "missing format line".into()))?;
                return Ok(Header {
                    format,
                    elements,
                    lines: line_no,
                    bytes,
                });
            }
            other => return Err(err(line_no, format!("unknown header keyword {other:?}"))),
        }
    }
    unreachable!()
}

/// Column positions of the properties we care about.
struct VertexLayout {
    xyz: [usize; 3],
    normal: Option<[usize; 3]>,
    label: Option<usize>,
}

fn vertex_layout(path: &Path, header: &Header, elem: &Element) -> Result<VertexLayout> {
    let find = |want: &str| {
        elem.props
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == want))
    };
    let missing = |what: &str| -> Error {
        FormatError::Header {
            path: path.to_path_buf(),
            line: header.lines,
            msg: format!("vertex element lacks property {what}"),
        }
        .into()
    };
    let xyz = [
        find("x").ok_or_else(|| missing("x"))?,
        find("y").ok_or_else(|| missing("y"))?,
        find("z").ok_or_else(|| missing("z"))?,
    ];
    let normal = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let label = LABEL_NAMES.iter().find_map(|n| find(n));
    Ok(VertexLayout { xyz, normal, label })
}

pub fn read_ply(path: &Path) -> Result<LabeledCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = std::io::Cursor::new(&bytes[..]);
    let header = parse_header(path, &mut cursor)?;
    let body = &bytes[header.bytes..];
    let vertex_at = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| FormatError::Header {
            path: path.to_path_buf(),
            line: header.lines,
            msg: "no vertex element".into(),
        })?;
    let vertex = &header.elements[vertex_at];
    let layout = vertex_layout(path, &header, vertex)?;

    let rows = match header.format {
        CloudFormat::PlyAscii => ascii_rows(path, &header, vertex_at, body)?,
        _ => binary_rows(path, &header, vertex_at, body)?,
    };

    let mut positions = Vec::with_capacity(rows.len());
    let mut normals = layout.normal.map(|_| Vec::with_capacity(rows.len()));
    let mut labels = layout.label.map(|_| Vec::with_capacity(rows.len()));
    for (row, at) in &rows {
        let get = |c: usize| -> Result<f64> {
            let v = row[c];
            if v.is_finite() {
                Ok(v)
            } else {
                Err(FormatError::NonFinite {
                    path: path.to_path_buf(),
                    at: *at,
                }
                .into())
            }
        };
        positions.push([get(layout.xyz[0])?, get(layout.xyz[1])?, get(layout.xyz[2])?]);
        if let (Some(ns), Some(c)) = (normals.as_mut(), layout.normal) {
            ns.push([get(c[0])?, get(c[1])?, get(c[2])?]);
        }
        if let (Some(ls), Some(c)) = (labels.as_mut(), layout.label) {
            let v = get(c)?;
            if v.fract() != 0.0 {
                return Err(FormatError::Parse {
                    path: path.to_path_buf(),
                    at: *at,
                    msg: format!("label {v} is not an integer"),
                }
                .into());
            }
            ls.push(v as i64);
        }
    }
    let cloud = assemble(path, positions, normals)?;
    let truth = labels.map(|l| LabelMap::from_raw(&l));
    LabeledCloud::new(cloud, truth, stem(path))
}

type Row = (Vec<f64>, Location);

fn ascii_rows(path: &Path, header: &Header, vertex_at: usize, body: &[u8]) -> Result<Vec<Row>> {
    let text = std::str::from_utf8(body).map_err(|e| FormatError::Parse {
        path: path.to_path_buf(),
        at: Location::Offset(header.bytes + e.valid_up_to()),
        msg: "invalid UTF-8 in ASCII body".into(),
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (header.lines + 1 + i, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut rows = Vec::new();
    for (e, elem) in header.elements.iter().enumerate() {
        for found in 0..elem.count {
            let Some((line_no, line)) = lines.next() else {
                return Err(FormatError::CountMismatch {
                    path: path.to_path_buf(),
                    what: "rows",
                    expected: elem.count,
                    found,
                }
                .into());
            };
            if e != vertex_at {
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|w| {
                    w.parse::<f64>().map_err(|_| FormatError::Parse {
                        path: path.to_path_buf(),
                        at: Location::Line(line_no),
                        msg: format!("cannot parse {w:?} as a number"),
                    })
                })
                .collect::<std::result::Result<_, _>>()?;
            if values.len() < elem.props.len() {
                return Err(FormatError::Parse {
                    path: path.to_path_buf(),
                    at: Location::Line(line_no),
                    msg: format!("expected {} values, found {}", elem.props.len(), values.len()),
                }
                .into());
            }
            rows.push((values, Location::Line(line_no)));
        }
        if e == vertex_at {
            break;
        }
    }
    Ok(rows)
}

fn binary_rows(path: &Path, header: &Header, vertex_at: usize, body: &[u8]) -> Result<Vec<Row>> {
    let mut reader = body;
    let mut offset = header.bytes;
    let mut take = |n: usize, offset: &mut usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        reader.read_exact(&mut buf).map_err(|_| FormatError::Parse {
            path: path.to_path_buf(),
            at: Location::Offset(*offset),
            msg: "unexpected end of binary data".into(),
        })?;
        *offset += n;
        Ok(buf)
    };
    let mut rows = Vec::new();
    for (e, elem) in header.elements.iter().enumerate() {
        for _ in 0..elem.count {
            let start = offset;
            let mut values = Vec::with_capacity(elem.props.len());
            for prop in &elem.props {
                match *prop {
                    Property::Scalar { ty, .. } => {
                        let b = take(ty.size(), &mut offset)?;
                        values.push(ty.read_le(&b));
                    }
                    Property::List { count, item } => {
                        let b = take(count.size(), &mut offset)?;
                        let len = count.read_le(&b) as usize;
                        take(len * item.size(), &mut offset)?;
                        values.push(f64::NAN);
                    }
                }
            }
            if e == vertex_at {
                rows.push((values, Location::Offset(start)));
            }
        }
        if e == vertex_at {
            break;
        }
    }
    Ok(rows)
}

/// ASCII PLY with positions, normals (when present), labels and palette
/// colors.
pub fn write_labeled_ply(path: &Path, cloud: &PointCloud, labels: &LabelMap) -> Result<()> {
    if labels.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            what: "labels vs points",
            left: labels.len(),
            right: cloud.len(),
        });
    }
    let mut out = String::with_capacity(cloud.len() * 96 + 256);
    out.push_str("ply\nformat ascii 1.0\ncomment pointseg labeled cloud\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(out, "property double {p}");
    }
    if cloud.has_normals() {
        for p in ["nx", "ny", "nz"] {
            let _ = writeln!(out, "property double {p}");
        }
    }
    out.push_str("property int label\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for i in 0..cloud.len() {
        let p = cloud.position(i);
        let _ = write!(out, "{} {} {}", g9(p[0]), g9(p[1]), g9(p[2]));
        if let Some(ns) = cloud.normals() {
            let n = ns[i];
            let _ = write!(out, " {} {} {}", g9(n[0]), g9(n[1]), g9(n[2]));
        }
        let l = labels.get(i);
        let [r, g, b] = PALETTE[l % PALETTE.len()];
        let _ = writeln!(out, " {l} {r} {g} {b}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Nine significant digits, `%.9g` style.
pub(crate) fn g9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..9).contains(&exp) {
        trim(&format!("{:.*}", (8 - exp) as usize, x))
    } else {
        format!("{}e{}", trim(mantissa), exp)
    }
}
