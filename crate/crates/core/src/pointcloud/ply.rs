//! PLY 1.0 reader and writer for vertex clouds.
//!
//! Accepted input: `ascii 1.0` and `binary_little_endian 1.0`, a `vertex`
//! element with float/double `x`, `y`, `z` and optional uchar `red`, `green`,
//! `blue`. Other fixed-size properties are skipped; list properties inside
//! the vertex element (or in any element that precedes it in a binary file)
//! cannot be skipped and are rejected.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{CloudError, Point3, PointCloud, Rgb};

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PLY content: {0}")]
    UnsupportedFormat(String),
    #[error("PLY body truncated: header declares {expected} vertices, found {found}")]
    TruncatedBody { expected: usize, found: usize },
    #[error("malformed PLY body at vertex {vertex}: {reason}")]
    MalformedBody { vertex: usize, reason: String },
    #[error("vertex {index} has a non-finite coordinate")]
    NonFiniteCoordinate { index: usize },
    #[error("refusing to write an empty cloud")]
    EmptyCloud,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn decode_le(self, b: &[u8]) -> f64 {
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
    List { name: String },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

impl Element {
    fn fixed_size(&self) -> Option<usize> {
        self.properties
            .iter()
            .map(|p| match p {
                Property::Scalar { ty, .. } => Some(ty.size()),
                Property::List { .. } => None,
            })
            .sum()
    }
}

#[derive(Debug)]
struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header, PlyError> {
    let mut line = String::new();
    let next_line = |r: &mut R, line: &mut String| -> Result<bool, PlyError> {
        line.clear();
        Ok(r.read_line(line)? > 0)
    };

    if !next_line(r, &mut line)? || line.trim_end() != "ply" {
        return Err(PlyError::MalformedHeader("missing 'ply' magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next_line(r, &mut line)? {
            return Err(PlyError::MalformedHeader("missing end_header".into()));
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            None => continue,
            Some("end_header") => break,
            Some("comment") | Some("obj_info") => continue,
            Some("format") => {
                let kind = tokens.next().unwrap_or("");
                let version = tokens.next().unwrap_or("");
                if version != "1.0" {
                    return Err(PlyError::UnsupportedFormat(format!("version '{version}'")));
                }
                encoding = Some(match kind {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLe,
                    "binary_big_endian" => {
                        return Err(PlyError::UnsupportedFormat("binary_big_endian".into()))
                    }
                    other => {
                        return Err(PlyError::MalformedHeader(format!("unknown format '{other}'")))
                    }
                });
            }
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| PlyError::MalformedHeader("element without name".into()))?;
                let count = tokens
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| {
                        PlyError::MalformedHeader(format!("element '{name}' has no valid count"))
                    })?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements.last_mut().ok_or_else(|| {
                    PlyError::MalformedHeader("property before any element".into())
                })?;
                let ty = tokens
                    .next()
                    .ok_or_else(|| PlyError::MalformedHeader("property without type".into()))?;
                let prop = if ty == "list" {
                    let _count_ty = tokens.next();
                    let _item_ty = tokens.next();
                    let name = tokens.next().ok_or_else(|| {
                        PlyError::MalformedHeader("list property without name".into())
                    })?;
                    Property::List {
                        name: name.to_string(),
                    }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| {
                        PlyError::UnsupportedFormat(format!("property type '{ty}'"))
                    })?;
                    let name = tokens
                        .next()
                        .ok_or_else(|| PlyError::MalformedHeader("property without name".into()))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.properties.push(prop);
            }
            Some(other) => {
                return Err(PlyError::MalformedHeader(format!("unexpected keyword '{other}'")))
            }
        }
    }
    let encoding = encoding.ok_or_else(|| PlyError::MalformedHeader("missing format line".into()))?;
    Ok(Header { encoding, elements })
}

/// Where each field of interest lives inside one vertex record.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
    types: Vec<Scalar>,
    offsets: Vec<usize>,
    stride: usize,
}

fn vertex_layout(element: &Element) -> Result<VertexLayout, PlyError> {
    let mut types = Vec::with_capacity(element.properties.len());
    let mut offsets = Vec::with_capacity(element.properties.len());
    let mut stride = 0;
    for p in &element.properties {
        match p {
            Property::Scalar { ty, .. } => {
                types.push(*ty);
                offsets.push(stride);
                stride += ty.size();
            }
            Property::List { name } => {
                return Err(PlyError::UnsupportedFormat(format!(
                    "list property '{name}' in vertex element"
                )))
            }
        }
    }
    let find = |name: &str| element.properties.iter().position(|p| p.name() == name);
    let mut xyz = [0; 3];
    for (slot, name) in xyz.iter_mut().zip(["x", "y", "z"]) {
        let i = find(name)
            .ok_or_else(|| PlyError::MalformedHeader(format!("vertex has no '{name}' property")))?;
        if !matches!(types[i], Scalar::F32 | Scalar::F64) {
            return Err(PlyError::UnsupportedFormat(format!(
                "coordinate '{name}' must be float or double"
            )));
        }
        *slot = i;
    }
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b))
            if [r, g, b].iter().all(|&i| types[i] == Scalar::U8) =>
        {
            Some([r, g, b])
        }
        _ => None,
    };
    Ok(VertexLayout {
        xyz,
        rgb,
        types,
        offsets,
        stride,
    })
}

/// Parses a PLY stream into a point cloud.
pub fn read_ply<R: BufRead>(mut r: R) -> Result<PointCloud, PlyError> {
    let header = read_header(&mut r)?;
    let vpos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::MalformedHeader("no vertex element".into()))?;
    let vertex = &header.elements[vpos];
    let layout = vertex_layout(vertex)?;
    let n = vertex.count;

    let mut points = Vec::with_capacity(n);
    let mut colors = layout.rgb.map(|_| Vec::with_capacity(n));

    match header.encoding {
        Encoding::Ascii => {
            let mut lines = r.lines();
            for e in &header.elements[..vpos] {
                for _ in 0..e.count {
                    if lines.next().transpose()?.is_none() {
                        return Err(PlyError::TruncatedBody {
                            expected: n,
                            found: 0,
                        });
                    }
                }
            }
            let mut values = vec![0.0; layout.types.len()];
            for v in 0..n {
                let line = loop {
                    match lines.next().transpose()? {
                        None => return Err(PlyError::TruncatedBody { expected: n, found: v }),
                        Some(l) if l.trim().is_empty() => continue,
                        Some(l) => break l,
                    }
                };
                let mut tokens = line.split_whitespace();
                for (slot, ty) in values.iter_mut().zip(&layout.types) {
                    let tok = tokens.next().ok_or_else(|| PlyError::MalformedBody {
                        vertex: v,
                        reason: "too few values".into(),
                    })?;
                    *slot = parse_ascii(tok, *ty).ok_or_else(|| PlyError::MalformedBody {
                        vertex: v,
                        reason: format!("cannot parse '{tok}'"),
                    })?;
                }
                push_vertex(&layout, &values, v, &mut points, colors.as_mut())?;
            }
        }
        Encoding::BinaryLe => {
            for e in &header.elements[..vpos] {
                let size = e.fixed_size().ok_or_else(|| {
                    PlyError::UnsupportedFormat(format!(
                        "element '{}' with list properties precedes vertex data",
                        e.name
                    ))
                })?;
                let skip = (size * e.count) as u64;
                let skipped = io::copy(&mut (&mut r).take(skip), &mut io::sink())?;
                if skipped != skip {
                    return Err(PlyError::TruncatedBody {
                        expected: n,
                        found: 0,
                    });
                }
            }
            let mut record = vec![0u8; layout.stride];
            let mut values = vec![0.0; layout.types.len()];
            for v in 0..n {
                if let Err(e) = r.read_exact(&mut record) {
                    return Err(if e.kind() == io::ErrorKind::UnexpectedEof {
                        PlyError::TruncatedBody { expected: n, found: v }
                    } else {
                        e.into()
                    });
                }
                for (i, slot) in values.iter_mut().enumerate() {
                    *slot = layout.types[i].decode_le(&record[layout.offsets[i]..]);
                }
                push_vertex(&layout, &values, v, &mut points, colors.as_mut())?;
            }
        }
    }

    PointCloud::new(points, colors).map_err(|e| match e {
        CloudError::NonFiniteCoordinate { index } => PlyError::NonFiniteCoordinate { index },
        other => PlyError::MalformedHeader(other.to_string()),
    })
}

fn parse_ascii(tok: &str, ty: Scalar) -> Option<f64> {
    match ty {
        Scalar::F32 | Scalar::F64 => tok.parse::<f64>().ok(),
        _ => tok.parse::<i64>().ok().map(|v| v as f64),
    }
}

fn push_vertex(
    layout: &VertexLayout,
    values: &[f64],
    index: usize,
    points: &mut Vec<Point3>,
    colors: Option<&mut Vec<Rgb>>,
) -> Result<(), PlyError> {
    let p = Point3::new(
        values[layout.xyz[0]],
        values[layout.xyz[1]],
        values[layout.xyz[2]],
    );
    if !p.coords.iter().all(|c| c.is_finite()) {
        return Err(PlyError::NonFiniteCoordinate { index });
    }
    points.push(p);
    if let (Some(colors), Some([r, g, b])) = (colors, layout.rgb) {
        let ch = |i: usize| values[i].clamp(0.0, 255.0) as u8;
        colors.push(Rgb([ch(r), ch(g), ch(b)]));
    }
    Ok(())
}

/// Loads a cloud from disk; the label is the file stem.
pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud, PlyError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let cloud = read_ply(BufReader::new(file))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(cloud.with_label(label))
}

/// Serializes a cloud. Coordinates are written as doubles in both encodings,
/// so binary output round-trips bit for bit and ascii output uses the
/// shortest representation that parses back to the same value.
pub fn write_ply<W: Write>(cloud: &PointCloud, mut w: W, binary: bool) -> Result<(), PlyError> {
    if cloud.is_empty() {
        return Err(PlyError::EmptyCloud);
    }
    let format = if binary { "binary_little_endian" } else { "ascii" };
    writeln!(w, "ply")?;
    writeln!(w, "format {format} 1.0")?;
    if !cloud.label.is_empty() && !cloud.label.contains('\n') {
        writeln!(w, "comment label {}", cloud.label)?;
    }
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}")?;
    }
    if cloud.colors().is_some() {
        for ch in ["red", "green", "blue"] {
            writeln!(w, "property uchar {ch}")?;
        }
    }
    writeln!(w, "end_header")?;

    let colors = cloud.colors();
    for (i, p) in cloud.points().iter().enumerate() {
        if binary {
            for c in [p.x, p.y, p.z] {
                w.write_all(&c.to_le_bytes())?;
            }
            if let Some(colors) = colors {
                w.write_all(&colors[i].0)?;
            }
        } else {
            write!(w, "{} {} {}", p.x, p.y, p.z)?;
            if let Some(colors) = colors {
                let [r, g, b] = colors[i].0;
                write!(w, " {r} {g} {b}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>, binary: bool) -> Result<(), PlyError> {
    if cloud.is_empty() {
        return Err(PlyError::EmptyCloud);
    }
    let file = File::create(path)?;
    write_ply(cloud, BufWriter::new(file), binary)
}
