//! Minimal PLY reader/writer for vertex positions.
//!
//! Reads `ascii 1.0` and `binary_little_endian 1.0`. Only the `x`, `y`, `z`
//! properties of the `vertex` element are kept; every other element and
//! property is parsed and skipped. Writes always use `double` coordinates so
//! the binary form roundtrips bit-exactly.

use std::io::Write;
use std::path::Path;

use super::{GeometryError, Point3, PointCloud, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
    body_line: usize,
}

struct ParseCtx<'a> {
    path: &'a Path,
}

impl ParseCtx<'_> {
    fn err(&self, location: impl Into<String>, message: impl Into<String>) -> GeometryError {
        GeometryError::Parse {
            path: self.path.to_path_buf(),
            location: location.into(),
            message: message.into(),
        }
    }
}

fn parse_header(ctx: &ParseCtx, data: &[u8]) -> Result<Header> {
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line_no += 1;
        let rest = &data[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(ctx.err(format!("line {line_no}"), "header is missing end_header"));
        };
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| ctx.err(format!("line {line_no}"), "header is not valid text"))?
            .trim_end_matches('\r')
            .trim();
        offset += nl + 1;
        let loc = format!("line {line_no}");
        let mut tok = line.split_whitespace();
        let keyword = tok.next().unwrap_or("");
        if line_no == 1 {
            if line != "ply" {
                return Err(ctx.err(loc, "missing `ply` magic"));
            }
            continue;
        }
        match keyword {
            "" | "comment" | "obj_info" => {}
            "format" => {
                let kind = tok.next().unwrap_or("");
                format = Some(match kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(ctx.err(loc, format!("unsupported format `{other}`")));
                    }
                });
            }
            "element" => {
                let name = tok
                    .next()
                    .ok_or_else(|| ctx.err(&loc, "element without a name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| ctx.err(&loc, "element count is not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| ctx.err(&loc, "property before any element"))?;
                let first = tok.next().unwrap_or("");
                let prop = if first == "list" {
                    let count = tok.next().and_then(Scalar::parse);
                    let item = tok.next().and_then(Scalar::parse);
                    match (count, item, tok.next()) {
                        (Some(count), Some(item), Some(_)) => Property::List { count, item },
                        _ => return Err(ctx.err(loc, "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(first)
                        .ok_or_else(|| ctx.err(&loc, format!("unknown type `{first}`")))?;
                    let name = tok
                        .next()
                        .ok_or_else(|| ctx.err(&loc, "property without a name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.properties.push(prop);
            }
            "end_header" => break,
            other => return Err(ctx.err(loc, format!("unexpected header keyword `{other}`"))),
        }
    }
    let format = format.ok_or_else(|| ctx.err("header", "missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
        body_line: line_no + 1,
    })
}

/// Parses PLY bytes. `path` is only used to label errors.
pub fn read_ply(data: &[u8], path: &Path) -> Result<PointCloud> {
    let ctx = ParseCtx { path };
    let header = parse_header(&ctx, data)?;
    let vertex_idx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| ctx.err("header", "no `vertex` element"))?;
    let vertex = &header.elements[vertex_idx];
    let mut slots = [None; 3];
    for (i, prop) in vertex.properties.iter().enumerate() {
        if let Property::Scalar { name, ty } = prop {
            let axis = match name.as_str() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => continue,
            };
            if !ty.is_float() {
                return Err(ctx.err("header", format!("property `{name}` is not a float type")));
            }
            slots[axis] = Some(i);
        }
    }
    let slots: [usize; 3] = match slots {
        [Some(x), Some(y), Some(z)] => [x, y, z],
        _ => {
            let missing: Vec<&str> = ["x", "y", "z"]
                .iter()
                .zip(slots.iter())
                .filter(|(_, s)| s.is_none())
                .map(|(n, _)| *n)
                .collect();
            return Err(ctx.err(
                "header",
                format!("vertex element is missing propert{} {}", if missing.len() == 1 { "y" } else { "ies" }, missing.join(", ")),
            ));
        }
    };

    let body = &data[header.body_offset..];
    let points = match header.format {
        PlyFormat::Ascii => read_ascii_body(&ctx, &header, body, vertex_idx, slots)?,
        PlyFormat::BinaryLittleEndian => {
            read_binary_body(&ctx, &header, body, vertex_idx, slots)?
        }
    };
    if points.len() != vertex.count {
        return Err(ctx.err(
            "body",
            format!(
                "vertex count mismatch: header declares {}, found {}",
                vertex.count,
                points.len()
            ),
        ));
    }
    PointCloud::new(points).map_err(|e| match e {
        GeometryError::NonFinite { index } => {
            ctx.err(format!("vertex {index}"), "non-finite coordinate")
        }
        GeometryError::Empty => ctx.err("body", "no vertices"),
        other => other,
    })
}

fn read_ascii_body(
    ctx: &ParseCtx,
    header: &Header,
    body: &[u8],
    vertex_idx: usize,
    slots: [usize; 3],
) -> Result<Vec<Point3>> {
    let text = std::str::from_utf8(body)
        .map_err(|_| ctx.err(format!("line {}", header.body_line), "body is not valid text"))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (header.body_line + i, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut points = Vec::new();
    for (ei, element) in header.elements.iter().enumerate() {
        for row in 0..element.count {
            let Some((line_no, line)) = lines.next() else {
                return Err(ctx.err(
                    "end of file",
                    format!(
                        "{} count mismatch: expected {} rows, found {row}",
                        element.name, element.count
                    ),
                ));
            };
            let loc = format!("line {line_no}");
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| ctx.err(&loc, "invalid number"))?;
            let mut cursor = 0usize;
            let mut xyz = [0.0; 3];
            for (pi, prop) in element.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { .. } => {
                        let v = *values
                            .get(cursor)
                            .ok_or_else(|| ctx.err(&loc, "too few values on line"))?;
                        if ei == vertex_idx {
                            if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                if !v.is_finite() {
                                    return Err(ctx.err(&loc, "non-finite coordinate"));
                                }
                                xyz[axis] = v;
                            }
                        }
                        cursor += 1;
                    }
                    Property::List { .. } => {
                        let n = *values
                            .get(cursor)
                            .ok_or_else(|| ctx.err(&loc, "too few values on line"))?;
                        cursor += 1 + n as usize;
                    }
                }
            }
            if cursor > values.len() {
                return Err(ctx.err(&loc, "too few values on line"));
            }
            if ei == vertex_idx {
                points.push(xyz);
            }
        }
        if ei == vertex_idx {
            break;
        }
    }
    Ok(points)
}

fn read_binary_body(
    ctx: &ParseCtx,
    header: &Header,
    body: &[u8],
    vertex_idx: usize,
    slots: [usize; 3],
) -> Result<Vec<Point3>> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<std::ops::Range<usize>> {
        if *pos + n > body.len() {
            return Err(ctx.err(
                format!("byte {}", header.body_offset + *pos),
                format!("unexpected end of data reading {what}"),
            ));
        }
        let r = *pos..*pos + n;
        *pos += n;
        Ok(r)
    };
    let mut points = Vec::new();
    for (ei, element) in header.elements.iter().enumerate() {
        for _ in 0..element.count {
            let row_start = pos;
            let mut xyz = [0.0; 3];
            for (pi, prop) in element.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => {
                        let r = take(&mut pos, ty.size(), &element.name)?;
                        if ei == vertex_idx {
                            if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                let v = ty.read_le(&body[r]);
                                if !v.is_finite() {
                                    return Err(ctx.err(
                                        format!("byte {}", header.body_offset + row_start),
                                        "non-finite coordinate",
                                    ));
                                }
                                xyz[axis] = v;
                            }
                        }
                    }
                    Property::List { count, item } => {
                        let r = take(&mut pos, count.size(), &element.name)?;
                        let n = count.read_le(&body[r]);
                        if n < 0.0 {
                            return Err(ctx.err(
                                format!("byte {}", header.body_offset + row_start),
                                "negative list length",
                            ));
                        }
                        take(&mut pos, n as usize * item.size(), &element.name)?;
                    }
                }
            }
            if ei == vertex_idx {
                points.push(xyz);
            }
        }
        if ei == vertex_idx {
            break;
        }
    }
    Ok(points)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|source| GeometryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_ply(&data, path)
}

/// Serializes `cloud` as PLY bytes with `double` x/y/z properties.
pub fn write_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::with_capacity(128 + cloud.len() * 24);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        out,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )
    .unwrap();
    match format {
        PlyFormat::Ascii => {
            for p in cloud.points() {
                writeln!(out, "{} {} {}", p[0], p[1], p[2]).unwrap();
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for p in cloud.points() {
                for c in p {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_ply(cloud, format)).map_err(|source| GeometryError::Io {
        path: path.to_path_buf(),
        source,
    })
}
