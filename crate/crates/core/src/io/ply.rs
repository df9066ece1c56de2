//! PLY reader/writer for point positions.
//!
//! Reads ASCII and binary-little-endian PLY, extracting the float or
//! double x/y/z properties of the "vertex" element and skipping every
//! other element and property by size arithmetic (scene formats attach
//! arbitrary per-vertex attributes; only geometry is ingested).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Raw positions in world units plus a provenance label.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCloud {
    pub positions: Vec<[f64; 3]>,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyMode {
    Ascii,
    BinaryLittleEndian,
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
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return Err(Error::ParseError(format!("unknown PLY scalar type '{}'", s))),
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn is_real(self) -> bool {
        matches!(self, ScalarType::F32 | ScalarType::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(ScalarType, String),
    List(ScalarType, ScalarType),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn read_header_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut buf = Vec::new();
    let n = r.read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Err(Error::ParseError("unexpected end of file in PLY header".into()));
    }
    while matches!(buf.last(), Some(b'\n') | Some(b'\r')) {
        buf.pop();
    }
    String::from_utf8(buf).map_err(|_| Error::ParseError("non-UTF-8 PLY header line".into()))
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<(PlyMode, Vec<Element>)> {
    if read_header_line(r)?.trim() != "ply" {
        return Err(Error::ParseError("missing 'ply' magic line".into()));
    }
    let mut mode = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = read_header_line(r)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                if tokens.len() != 3 || tokens[2] != "1.0" {
                    return Err(Error::ParseError(format!("bad format line '{}'", line)));
                }
                mode = Some(match tokens[1] {
                    "ascii" => PlyMode::Ascii,
                    "binary_little_endian" => PlyMode::BinaryLittleEndian,
                    other => {
                        return Err(Error::ParseError(format!(
                            "unsupported PLY format '{}'",
                            other
                        )))
                    }
                });
            }
            Some("element") => {
                if tokens.len() != 3 {
                    return Err(Error::ParseError(format!("bad element line '{}'", line)));
                }
                let count = tokens[2]
                    .parse::<usize>()
                    .map_err(|_| Error::ParseError(format!("bad element count '{}'", tokens[2])))?;
                elements.push(Element { name: tokens[1].to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::ParseError("property before any element".into()))?;
                if tokens.len() == 5 && tokens[1] == "list" {
                    el.props.push(Property::List(
                        ScalarType::parse(tokens[2])?,
                        ScalarType::parse(tokens[3])?,
                    ));
                } else if tokens.len() == 3 {
                    el.props.push(Property::Scalar(ScalarType::parse(tokens[1])?, tokens[2].to_string()));
                } else {
                    return Err(Error::ParseError(format!("bad property line '{}'", line)));
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::ParseError(format!("unknown header keyword '{}'", other)))
            }
        }
    }
    let mode = mode.ok_or_else(|| Error::ParseError("PLY header has no format line".into()))?;
    Ok((mode, elements))
}

/// Per-axis location of x/y/z among the vertex properties.
fn position_slots(el: &Element) -> Result<[usize; 3]> {
    let mut slots = [usize::MAX; 3];
    for (i, p) in el.props.iter().enumerate() {
        if let Property::Scalar(t, name) = p {
            let axis = match name.as_str() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => continue,
            };
            if t.is_real() {
                slots[axis] = i;
            }
        }
    }
    if slots.contains(&usize::MAX) {
        return Err(Error::MissingPositions);
    }
    Ok(slots)
}

fn read_scalar_le<R: Read>(r: &mut R, t: ScalarType) -> Result<f64> {
    let mut buf = [0u8; 8];
    let take = &mut buf[..t.size()];
    r.read_exact(take).map_err(|_| Error::ParseError("unexpected end of PLY body".into()))?;
    Ok(match t {
        ScalarType::I8 => buf[0] as i8 as f64,
        ScalarType::U8 => buf[0] as f64,
        ScalarType::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
        ScalarType::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
        ScalarType::I32 => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
        ScalarType::U32 => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
        ScalarType::F32 => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
        ScalarType::F64 => f64::from_le_bytes(buf),
    })
}

fn skip_bytes<R: Read>(r: &mut R, n: usize) -> Result<()> {
    let mut remaining = n as u64;
    let copied = std::io::copy(&mut r.take(remaining), &mut std::io::sink())?;
    remaining -= copied;
    if remaining > 0 {
        return Err(Error::ParseError("unexpected end of PLY body".into()));
    }
    Ok(())
}

fn read_body_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut buf = Vec::new();
    let n = r.read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Err(Error::ParseError("unexpected end of PLY body".into()));
    }
    String::from_utf8(buf).map_err(|_| Error::ParseError("non-UTF-8 PLY body line".into()))
}

pub fn read_ply<P: AsRef<Path>>(path: P) -> Result<RawCloud> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let (mode, elements) = parse_header(&mut r)?;
    let vertex = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or(Error::MissingPositions)?;
    let slots = position_slots(vertex)?;
    let mut positions: Vec<[f64; 3]> = Vec::new();

    for el in &elements {
        let is_vertex = el.name == "vertex";
        if is_vertex {
            positions.reserve(el.count);
        }
        for _ in 0..el.count {
            let mut pos = [0.0f64; 3];
            match mode {
                PlyMode::Ascii => {
                    let line = read_body_line(&mut r)?;
                    let mut tokens = line.split_whitespace();
                    let mut next = |what: &str| {
                        tokens.next().ok_or_else(|| {
                            Error::ParseError(format!("missing {} token in PLY row", what))
                        })
                    };
                    for (pi, prop) in el.props.iter().enumerate() {
                        match prop {
                            Property::Scalar(_, _) => {
                                let tok = next("scalar")?;
                                if is_vertex {
                                    if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                        pos[axis] = tok.parse::<f64>().map_err(|_| {
                                            Error::ParseError(format!("bad coordinate '{}'", tok))
                                        })?;
                                    }
                                }
                            }
                            Property::List(_, _) => {
                                let n = next("list count")?.parse::<usize>().map_err(|_| {
                                    Error::ParseError("bad list count in PLY row".into())
                                })?;
                                for _ in 0..n {
                                    next("list item")?;
                                }
                            }
                        }
                    }
                }
                PlyMode::BinaryLittleEndian => {
                    for (pi, prop) in el.props.iter().enumerate() {
                        match prop {
                            Property::Scalar(t, _) => {
                                if is_vertex {
                                    if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                        pos[axis] = read_scalar_le(&mut r, *t)?;
                                        continue;
                                    }
                                }
                                skip_bytes(&mut r, t.size())?;
                            }
                            Property::List(ct, it) => {
                                let n = read_scalar_le(&mut r, *ct)?;
                                if n < 0.0 || n.fract() != 0.0 {
                                    return Err(Error::ParseError("bad PLY list count".into()));
                                }
                                skip_bytes(&mut r, n as usize * it.size())?;
                            }
                        }
                    }
                }
            }
            if is_vertex {
                if pos.iter().any(|c| !c.is_finite()) {
                    return Err(Error::ParseError("non-finite vertex coordinate".into()));
                }
                positions.push(pos);
            }
        }
    }
    let source = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(RawCloud { positions, source })
}

/// Writes positions as f32 x/y/z. `read_ply(write_ply(c))` recovers the
/// cloud up to f32 storage rounding.
pub fn write_ply<P: AsRef<Path>>(cloud: &RawCloud, path: P, mode: PlyMode) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let format = match mode {
        PlyMode::Ascii => "ascii",
        PlyMode::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        w,
        "ply\nformat {} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        format,
        cloud.positions.len()
    )?;
    for p in &cloud.positions {
        match mode {
            PlyMode::Ascii => {
                writeln!(w, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32)?;
            }
            PlyMode::BinaryLittleEndian => {
                for &c in p {
                    w.write_all(&(c as f32).to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
