//! Splat PLY files.
//!
//! Vertex properties understood (all others are skipped with a warning):
//!
//! | property              | meaning                                      |
//! |-----------------------|----------------------------------------------|
//! | `x y z`               | center                                       |
//! | `f_dc_0..2`           | SH band 0, RGB                               |
//! | `f_rest_0..3K-1`      | higher SH bands, channel-major (all R, G, B) |
//! | `opacity`             | logit of opacity                             |
//! | `scale_0..2`          | log of per-axis standard deviation           |
//! | `rot_0..3`            | quaternion `(w, x, y, z)`                    |
//! | `sh_rot_0..3`         | optional SH view rotation `(w, x, y, z)`     |
//!
//! `K = (L + 1)² − 1` for SH degree `L ≤ 3`. Files are written as binary
//! little-endian float32 with zero `nx ny nz` normals for viewer compatibility.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Quaternion;

use super::{sh_degree_for_len, GaussianCloud, GaussianKernel, QUATERNION_NORM_TOL};
use crate::error::{Result, SimError};
use crate::math::Vec3;

const OPACITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    BinaryLittleEndian,
    Ascii,
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { name: String, count: ScalarType, item: ScalarType },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
}

fn parse_err(msg: impl Into<String>) -> SimError {
    SimError::PlyParse(msg.into())
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut line = String::new();
    let next_line = |reader: &mut R, line: &mut String| -> Result<bool> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| parse_err(format!("reading header: {e}")))?;
        Ok(n > 0)
    };

    if !next_line(reader, &mut line)? || line.trim() != "ply" {
        return Err(parse_err("missing `ply` magic line"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next_line(reader, &mut line)? {
            return Err(parse_err("header ended without `end_header`"));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => continue,
            ["format", fmt, _version] => {
                format = Some(match *fmt {
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "ascii" => PlyFormat::Ascii,
                    other => return Err(parse_err(format!("unsupported format `{other}`"))),
                });
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(format!("bad element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err("property before any element"))?;
                element.properties.push(Property::List {
                    name: name.to_string(),
                    count: ScalarType::parse(count)
                        .ok_or_else(|| parse_err(format!("unknown type `{count}`")))?,
                    item: ScalarType::parse(item)
                        .ok_or_else(|| parse_err(format!("unknown type `{item}`")))?,
                });
            }
            ["property", ty, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err("property before any element"))?;
                element.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty: ScalarType::parse(ty)
                        .ok_or_else(|| parse_err(format!("unknown type `{ty}`")))?,
                });
            }
            _ => return Err(parse_err(format!("unrecognized header line `{}`", line.trim()))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| parse_err("missing `format` line"))?,
        elements,
    })
}

/// Values of every scalar property of one element, in declaration order.
/// List properties are consumed and dropped.
struct ElementReader<'a, R> {
    reader: &'a mut R,
    format: PlyFormat,
    tokens: std::vec::IntoIter<String>,
}

impl<'a, R: BufRead> ElementReader<'a, R> {
    fn next_token(&mut self) -> Result<String> {
        loop {
            if let Some(t) = self.tokens.next() {
                return Ok(t);
            }
            let mut line = String::new();
            let n = self
                .reader
                .read_line(&mut line)
                .map_err(|e| parse_err(format!("reading body: {e}")))?;
            if n == 0 {
                return Err(parse_err("unexpected end of file in element data"));
            }
            self.tokens = line
                .split_whitespace()
                .map(str::to_owned)
                .collect::<Vec<_>>()
                .into_iter();
        }
    }

    fn scalar(&mut self, ty: ScalarType) -> Result<f64> {
        match self.format {
            PlyFormat::Ascii => {
                let t = self.next_token()?;
                t.parse::<f64>()
                    .map_err(|_| parse_err(format!("bad numeric token `{t}`")))
            }
            PlyFormat::BinaryLittleEndian => {
                let mut buf = [0u8; 8];
                self.reader
                    .read_exact(&mut buf[..ty.size()])
                    .map_err(|_| parse_err("unexpected end of file in element data"))?;
                Ok(ty.decode_le(&buf))
            }
        }
    }

    fn element(&mut self, props: &[Property], out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        for p in props {
            match p {
                Property::Scalar { ty, .. } => {
                    let v = self.scalar(*ty)?;
                    out.push(v);
                }
                Property::List { count, item, .. } => {
                    let n = self.scalar(*count)? as usize;
                    for _ in 0..n {
                        self.scalar(*item)?;
                    }
                    out.push(f64::NAN);
                }
            }
        }
        Ok(())
    }
}

pub fn load_gaussian_ply(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SimError::io(path, e))?;
    read_gaussian_ply(&mut BufReader::new(file))
}

pub fn read_gaussian_ply<R: BufRead>(reader: &mut R) -> Result<GaussianCloud> {
    let header = read_header(reader)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err("no `vertex` element"))?;

    let mut body = ElementReader {
        reader,
        format: header.format,
        tokens: Vec::new().into_iter(),
    };
    let mut scratch = Vec::new();
    for element in &header.elements[..vertex_pos] {
        for _ in 0..element.count {
            body.element(&element.properties, &mut scratch)?;
        }
    }

    let vertex = &header.elements[vertex_pos];
    let index: HashMap<&str, usize> = vertex
        .properties
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name(), i))
        .collect();
    let field = |name: &str| -> Result<usize> {
        match (index.get(name), vertex.properties.get(*index.get(name).unwrap_or(&0))) {
            (Some(&i), Some(Property::Scalar { .. })) => Ok(i),
            (Some(_), _) => Err(parse_err(format!("field `{name}` must be a scalar"))),
            (None, _) => Err(parse_err(format!("missing field `{name}`"))),
        }
    };

    let pos = [field("x")?, field("y")?, field("z")?];
    let dc = [field("f_dc_0")?, field("f_dc_1")?, field("f_dc_2")?];
    let opacity = field("opacity")?;
    let scale = [field("scale_0")?, field("scale_1")?, field("scale_2")?];
    let rot = [field("rot_0")?, field("rot_1")?, field("rot_2")?, field("rot_3")?];

    let rest_count = (0..)
        .take_while(|i| index.contains_key(format!("f_rest_{i}").as_str()))
        .count();
    if rest_count % 3 != 0 {
        return Err(parse_err(format!("f_rest count {rest_count} is not a multiple of 3")));
    }
    let per_channel = rest_count / 3;
    let sh_degree = sh_degree_for_len(per_channel + 1)
        .ok_or_else(|| parse_err(format!("f_rest count {rest_count} matches no SH degree ≤ 3")))?;
    let rest: Vec<usize> = (0..rest_count)
        .map(|i| field(&format!("f_rest_{i}")))
        .collect::<Result<_>>()?;

    let sh_rot = match (0..4)
        .map(|i| field(&format!("sh_rot_{i}")))
        .collect::<Result<Vec<_>>>()
    {
        Ok(v) => Some(v),
        Err(_) => None,
    };

    let mut known: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "opacity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    known.extend((0..3).map(|i| format!("f_dc_{i}")));
    known.extend((0..3).map(|i| format!("scale_{i}")));
    known.extend((0..4).map(|i| format!("rot_{i}")));
    known.extend((0..4).map(|i| format!("sh_rot_{i}")));
    known.extend((0..rest_count).map(|i| format!("f_rest_{i}")));
    for p in &vertex.properties {
        if !known.iter().any(|k| k == p.name()) {
            log::warn!("ignoring PLY vertex property `{}`", p.name());
        }
    }

    let mut kernels = Vec::with_capacity(vertex.count);
    for i in 0..vertex.count {
        body.element(&vertex.properties, &mut scratch)?;
        let v = &scratch;
        let check = |slot: usize| -> Result<f64> {
            let x = v[slot];
            if x.is_finite() {
                Ok(x)
            } else {
                Err(SimError::PlyData {
                    index: i,
                    field: vertex.properties[slot].name().to_string(),
                })
            }
        };
        let center = Vec3::new(check(pos[0])?, check(pos[1])?, check(pos[2])?);
        let log_scale = Vec3::new(check(scale[0])?, check(scale[1])?, check(scale[2])?);
        let rotation = unit_or_verbatim(
            Quaternion::new(check(rot[0])?, check(rot[1])?, check(rot[2])?, check(rot[3])?),
            i,
            "rot_0",
        )?;
        let opacity = sigmoid(check(opacity)?);

        let mut sh = Vec::with_capacity(per_channel + 1);
        sh.push([check(dc[0])?, check(dc[1])?, check(dc[2])?]);
        for k in 0..per_channel {
            sh.push([
                check(rest[k])?,
                check(rest[per_channel + k])?,
                check(rest[2 * per_channel + k])?,
            ]);
        }

        let mut kernel = GaussianKernel::new(center, log_scale.map(f64::exp), rotation, opacity, sh);
        if let Some(sr) = &sh_rot {
            kernel.sh_rotation = unit_or_verbatim(
                Quaternion::new(check(sr[0])?, check(sr[1])?, check(sr[2])?, check(sr[3])?),
                i,
                "sh_rot_0",
            )?;
        }
        kernels.push(kernel);
    }

    Ok(GaussianCloud { kernels, sh_degree })
}

/// Quaternions within tolerance of unit length are kept verbatim so that
/// stored values survive a load/save cycle bit-for-bit.
fn unit_or_verbatim(q: Quaternion<f64>, index: usize, field: &str) -> Result<Quaternion<f64>> {
    let n = q.norm();
    if !(n > 0.0) {
        return Err(SimError::PlyData {
            index,
            field: field.to_string(),
        });
    }
    if (n - 1.0).abs() > QUATERNION_NORM_TOL {
        Ok(q / n)
    } else {
        Ok(q)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logit; opacities of exactly 0 or 1 are first moved to 1e-6 or 1 − 1e-6.
fn logit(p: f64) -> f64 {
    let p = if p <= 0.0 {
        OPACITY_EPS
    } else if p >= 1.0 {
        1.0 - OPACITY_EPS
    } else {
        p
    };
    (p / (1.0 - p)).ln()
}

pub fn save_gaussian_ply(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_gaussian_ply(cloud, &mut w, PlyFormat::BinaryLittleEndian)
        .and_then(|_| w.flush().map_err(|e| SimError::io(path, e)))
        .map_err(|e| match e {
            SimError::Io { source, .. } => SimError::io(path, source),
            other => other,
        })
}

pub fn write_gaussian_ply<W: Write>(cloud: &GaussianCloud, w: &mut W, format: PlyFormat) -> Result<()> {
    let per_channel = (cloud.sh_degree + 1).pow(2) - 1;
    let with_sh_rot = cloud
        .kernels
        .iter()
        .any(|k| k.sh_rotation != Quaternion::identity());

    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..3 * per_channel).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    if with_sh_rot {
        names.extend((0..4).map(|i| format!("sh_rot_{i}")));
    }

    let io = |e: std::io::Error| SimError::io("<writer>", e);
    let mut header = String::from("ply\n");
    header.push_str(match format {
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
        PlyFormat::Ascii => "format ascii 1.0\n",
    });
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(io)?;

    let mut row: Vec<f32> = Vec::with_capacity(names.len());
    for k in &cloud.kernels {
        if k.sh.len() != per_channel + 1 {
            return Err(SimError::Parameter(format!(
                "kernel has {} SH coefficients, cloud degree {} needs {}",
                k.sh.len(),
                cloud.sh_degree,
                per_channel + 1
            )));
        }
        row.clear();
        row.extend(k.center.iter().map(|&x| x as f32));
        row.extend([0.0f32; 3]);
        row.extend(k.sh[0].iter().map(|&x| x as f32));
        for channel in 0..3 {
            row.extend(k.sh[1..].iter().map(|c| c[channel] as f32));
        }
        row.push(logit(k.opacity) as f32);
        row.extend(k.scale.iter().map(|&s| s.ln() as f32));
        let q = k.rotation;
        row.extend([q.w, q.i, q.j, q.k].map(|x| x as f32));
        if with_sh_rot {
            let q = k.sh_rotation;
            row.extend([q.w, q.i, q.j, q.k].map(|x| x as f32));
        }
        match format {
            PlyFormat::BinaryLittleEndian => {
                for v in &row {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
            PlyFormat::Ascii => {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{}", line.join(" ")).map_err(io)?;
            }
        }
    }
    Ok(())
}
