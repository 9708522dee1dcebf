//! OBJ, OFF and PLY (ASCII / binary little-endian) readers and a PLY writer.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Color, Point3, TriMesh};
use crate::error::{Error, Result};

/// Loads a triangle mesh, dispatching on the file extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "obj" => parse_obj(path, &bytes),
        "off" => parse_off(path, &bytes),
        "ply" => parse_ply(path, &bytes),
        _ => Err(Error::format(
            path,
            "extension",
            "unrecognized mesh format (expected .obj, .off or .ply)",
        )),
    }
}

fn utf8<'a>(path: &Path, bytes: &'a [u8]) -> Result<&'a str> {
    std::str::from_utf8(bytes).map_err(|e| {
        Error::format(path, format!("byte offset {}", e.valid_up_to()), "invalid UTF-8")
    })
}

fn parse_f64(path: &Path, line: usize, tok: Option<&str>) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::format(path, format!("line {line}"), "missing number"))?;
    tok.parse::<f64>()
        .map_err(|_| Error::format(path, format!("line {line}"), format!("invalid number {tok:?}")))
}

fn parse_usize(path: &Path, line: usize, tok: Option<&str>) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::format(path, format!("line {line}"), "missing integer"))?;
    tok.parse::<usize>().map_err(|_| {
        Error::format(path, format!("line {line}"), format!("invalid integer {tok:?}"))
    })
}

fn unit_colors(mut colors: Vec<Color>) -> Vec<Color> {
    if colors.iter().flatten().any(|&c| c > 1.0) {
        for c in colors.iter_mut().flatten() {
            *c /= 255.0;
        }
    }
    for c in colors.iter_mut().flatten() {
        *c = c.clamp(0.0, 1.0);
    }
    colors
}

fn finish(path: &Path, vertices: Vec<Point3>, tris: Vec<[usize; 3]>, colors: Option<Vec<Color>>) -> Result<TriMesh> {
    TriMesh::new(vertices, tris, colors).map_err(|e| match e {
        Error::Data(msg) => Error::format(path, "mesh", msg),
        other => other,
    })
}

fn parse_obj(path: &Path, bytes: &[u8]) -> Result<TriMesh> {
    let text = utf8(path, bytes)?;
    let mut vertices = Vec::new();
    let mut colors: Vec<Option<Color>> = Vec::new();
    let mut tris = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let vals: Vec<&str> = tok.collect();
                if vals.len() < 3 {
                    return Err(Error::format(path, format!("line {line_no}"), "vertex needs 3 coordinates"));
                }
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = parse_f64(path, line_no, Some(vals[k]))?;
                }
                vertices.push(p);
                colors.push(if vals.len() >= 6 {
                    let mut c = [0.0; 3];
                    for k in 0..3 {
                        c[k] = parse_f64(path, line_no, Some(vals[3 + k]))?;
                    }
                    Some(c)
                } else {
                    None
                });
            }
            Some("f") => {
                let idx: Vec<&str> = tok.collect();
                if idx.len() != 3 {
                    return Err(Error::UnsupportedTopology(format!(
                        "{}: line {line_no}: face with {} vertices (only triangles are supported)",
                        path.display(),
                        idx.len()
                    )));
                }
                let mut t = [0usize; 3];
                for k in 0..3 {
                    let head = idx[k].split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| {
                        Error::format(path, format!("line {line_no}"), format!("invalid face index {:?}", idx[k]))
                    })?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        -1
                    };
                    if resolved < 0 {
                        return Err(Error::format(path, format!("line {line_no}"), format!("invalid face index {i}")));
                    }
                    t[k] = resolved as usize;
                }
                tris.push(t);
            }
            _ => {}
        }
    }
    let colors = if !colors.is_empty() && colors.iter().all(Option::is_some) {
        Some(unit_colors(colors.into_iter().flatten().collect()))
    } else {
        if colors.iter().any(Option::is_some) {
            log::warn!("{}: only some vertices carry colors; ignoring colors", path.display());
        }
        None
    };
    finish(path, vertices, tris, colors)
}

fn parse_off(path: &Path, bytes: &[u8]) -> Result<TriMesh> {
    let text = utf8(path, bytes)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (ln, header) = lines
        .next()
        .ok_or_else(|| Error::format(path, "line 1", "empty file"))?;
    let mut header_tok = header.split_whitespace();
    let magic = header_tok.next().unwrap_or("");
    let with_color = match magic {
        "OFF" => false,
        "COFF" => true,
        _ => return Err(Error::format(path, format!("line {ln}"), "missing OFF header")),
    };
    let rest: Vec<&str> = header_tok.collect();
    let (ln, counts) = if rest.is_empty() {
        let (l, c) = lines
            .next()
            .ok_or_else(|| Error::format(path, format!("line {ln}"), "missing element counts"))?;
        (l, c.split_whitespace().collect::<Vec<_>>())
    } else {
        (ln, rest)
    };
    let nv = parse_usize(path, ln, counts.first().copied())?;
    let nf = parse_usize(path, ln, counts.get(1).copied())?;

    let mut vertices = Vec::with_capacity(nv);
    let mut colors = Vec::with_capacity(if with_color { nv } else { 0 });
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::format(path, "end of file", format!("expected {nv} vertices")))?;
        let mut tok = l.split_whitespace();
        let p = [
            parse_f64(path, ln, tok.next())?,
            parse_f64(path, ln, tok.next())?,
            parse_f64(path, ln, tok.next())?,
        ];
        vertices.push(p);
        if with_color {
            colors.push([
                parse_f64(path, ln, tok.next())?,
                parse_f64(path, ln, tok.next())?,
                parse_f64(path, ln, tok.next())?,
            ]);
        }
    }
    let mut tris = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::format(path, "end of file", format!("expected {nf} faces")))?;
        let mut tok = l.split_whitespace();
        let count = parse_usize(path, ln, tok.next())?;
        if count != 3 {
            return Err(Error::UnsupportedTopology(format!(
                "{}: line {ln}: face with {count} vertices (only triangles are supported)",
                path.display()
            )));
        }
        tris.push([
            parse_usize(path, ln, tok.next())?,
            parse_usize(path, ln, tok.next())?,
            parse_usize(path, ln, tok.next())?,
        ]);
    }
    let colors = with_color.then(|| unit_colors(colors));
    finish(path, vertices, tris, colors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
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
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

/// Values of one element record: scalars and lists flattened per property.
type Record = Vec<Vec<f64>>;

fn parse_ply(path: &Path, bytes: &[u8]) -> Result<TriMesh> {
    let header_end = find_header_end(bytes)
        .ok_or_else(|| Error::format(path, "header", "missing end_header"))?;
    let header = utf8(path, &bytes[..header_end])?;
    let mut lines = header.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::format(path, "line 1", "missing ply magic")),
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for (ln, line) in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.first().copied() {
            Some("format") => {
                format = Some(match tok.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLe,
                    Some(other) => {
                        return Err(Error::format(path, format!("line {ln}"), format!("unsupported PLY format {other}")))
                    }
                    None => return Err(Error::format(path, format!("line {ln}"), "missing format")),
                });
            }
            Some("element") => {
                let name = tok.get(1).copied().unwrap_or("").to_string();
                let count = parse_usize(path, ln, tok.get(2).copied())?;
                elements.push(Element {
                    name,
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::format(path, format!("line {ln}"), "property before element"))?;
                let bad = || Error::format(path, format!("line {ln}"), "malformed property");
                if tok.get(1) == Some(&"list") {
                    let count = tok.get(2).and_then(|t| Scalar::parse(t)).ok_or_else(bad)?;
                    let item = tok.get(3).and_then(|t| Scalar::parse(t)).ok_or_else(bad)?;
                    let name = tok.get(4).ok_or_else(bad)?.to_string();
                    el.props.push(Property::List { name, count, item });
                } else {
                    let ty = tok.get(1).and_then(|t| Scalar::parse(t)).ok_or_else(bad)?;
                    let name = tok.get(2).ok_or_else(bad)?.to_string();
                    el.props.push(Property::Scalar { name, ty });
                }
            }
            Some("comment") | Some("obj_info") | Some("end_header") | None => {}
            Some(other) => {
                return Err(Error::format(path, format!("line {ln}"), format!("unknown header keyword {other:?}")))
            }
        }
    }
    let format = format.ok_or_else(|| Error::format(path, "header", "missing format line"))?;
    let body_start = header_end + next_line_len(&bytes[header_end..]);
    let header_lines = header.lines().count() + 1;

    let mut reader = BodyReader {
        path,
        bytes,
        pos: body_start,
        format,
        line: header_lines,
        tokens: Vec::new(),
    };

    let mut vertices = Vec::new();
    let mut colors: Vec<Color> = Vec::new();
    let mut has_color = false;
    let mut color_integer = false;
    let mut tris = Vec::new();
    for el in &elements {
        let idx = |n: &str| {
            el.props.iter().position(|p| match p {
                Property::Scalar { name, .. } | Property::List { name, .. } => name == n,
            })
        };
        match el.name.as_str() {
            "vertex" => {
                let (Some(x), Some(y), Some(z)) = (idx("x"), idx("y"), idx("z")) else {
                    return Err(Error::format(path, "header", "vertex element lacks x/y/z"));
                };
                let rgb = match (idx("red"), idx("green"), idx("blue")) {
                    (Some(r), Some(g), Some(b)) => Some([r, g, b]),
                    _ => None,
                };
                if let Some([r, ..]) = rgb {
                    has_color = true;
                    if let Property::Scalar { ty, .. } = el.props[r] {
                        color_integer = ty.is_integer();
                    }
                }
                for _ in 0..el.count {
                    let rec = reader.record(el)?;
                    vertices.push([rec[x][0], rec[y][0], rec[z][0]]);
                    if let Some([r, g, b]) = rgb {
                        colors.push([rec[r][0], rec[g][0], rec[b][0]]);
                    }
                }
            }
            "face" => {
                let Some(vi) = idx("vertex_indices").or_else(|| idx("vertex_index")) else {
                    return Err(Error::format(path, "header", "face element lacks vertex_indices"));
                };
                for f in 0..el.count {
                    let location = reader.location();
                    let rec = reader.record(el)?;
                    let list = &rec[vi];
                    if list.len() != 3 {
                        return Err(Error::UnsupportedTopology(format!(
                            "{}: {location}: face {f} has {} vertices (only triangles are supported)",
                            path.display(),
                            list.len()
                        )));
                    }
                    let mut t = [0usize; 3];
                    for k in 0..3 {
                        if list[k] < 0.0 || list[k].fract() != 0.0 {
                            return Err(Error::format(path, location, format!("invalid vertex index {}", list[k])));
                        }
                        t[k] = list[k] as usize;
                    }
                    tris.push(t);
                }
            }
            _ => {
                for _ in 0..el.count {
                    reader.record(el)?;
                }
            }
        }
    }
    let colors = has_color.then(|| {
        if color_integer {
            colors
                .into_iter()
                .map(|c| c.map(|x| (x / 255.0).clamp(0.0, 1.0)))
                .collect()
        } else {
            colors.into_iter().map(|c| c.map(|x| x.clamp(0.0, 1.0))).collect()
        }
    });
    finish(path, vertices, tris, colors)
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let needle = b"end_header";
    bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + needle.len())
}

fn next_line_len(rest: &[u8]) -> usize {
    match rest {
        [b'\r', b'\n', ..] => 2,
        [b'\n', ..] => 1,
        _ => 0,
    }
}

struct BodyReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
    format: PlyFormat,
    line: usize,
    tokens: Vec<&'a str>,
}

impl<'a> BodyReader<'a> {
    fn location(&self) -> String {
        match self.format {
            PlyFormat::Ascii => format!("line {}", self.line + 1),
            PlyFormat::BinaryLe => format!("byte offset {}", self.pos),
        }
    }

    fn record(&mut self, el: &Element) -> Result<Record> {
        match self.format {
            PlyFormat::BinaryLe => self.binary_record(el),
            PlyFormat::Ascii => self.ascii_record(el),
        }
    }

    fn take(&mut self, ty: Scalar) -> Result<f64> {
        let size = ty.size();
        if self.pos + size > self.bytes.len() {
            return Err(Error::format(self.path, format!("byte offset {}", self.pos), "unexpected end of binary data"));
        }
        let v = ty.read_le(&self.bytes[self.pos..self.pos + size]);
        self.pos += size;
        Ok(v)
    }

    fn binary_record(&mut self, el: &Element) -> Result<Record> {
        let mut rec = Vec::with_capacity(el.props.len());
        for p in &el.props {
            match *p {
                Property::Scalar { ty, .. } => rec.push(vec![self.take(ty)?]),
                Property::List { count, item, .. } => {
                    let c = self.take(count)?;
                    if c < 0.0 {
                        return Err(Error::format(self.path, format!("byte offset {}", self.pos), "negative list length"));
                    }
                    let mut list = Vec::with_capacity(c as usize);
                    for _ in 0..c as usize {
                        list.push(self.take(item)?);
                    }
                    rec.push(list);
                }
            }
        }
        Ok(rec)
    }

    fn ascii_record(&mut self, el: &Element) -> Result<Record> {
        // Records are line-oriented; blank lines are skipped.
        loop {
            if self.pos >= self.bytes.len() {
                return Err(Error::format(self.path, format!("line {}", self.line + 1), "unexpected end of file"));
            }
            let end = self.bytes[self.pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(self.bytes.len(), |p| self.pos + p);
            let line = std::str::from_utf8(&self.bytes[self.pos..end])
                .map_err(|_| Error::format(self.path, format!("line {}", self.line + 1), "invalid UTF-8"))?;
            self.pos = (end + 1).min(self.bytes.len().max(end + 1));
            self.line += 1;
            self.tokens = line.split_whitespace().collect();
            if !self.tokens.is_empty() {
                break;
            }
        }
        let loc = format!("line {}", self.line);
        let mut tok = std::mem::take(&mut self.tokens).into_iter();
        let mut next = |what: &str| -> Result<f64> {
            let t = tok
                .next()
                .ok_or_else(|| Error::format(self.path, loc.clone(), format!("missing {what}")))?;
            t.parse::<f64>()
                .map_err(|_| Error::format(self.path, loc.clone(), format!("invalid number {t:?}")))
        };
        let mut rec = Vec::with_capacity(el.props.len());
        for p in &el.props {
            match p {
                Property::Scalar { name, .. } => rec.push(vec![next(name)?]),
                Property::List { name, .. } => {
                    let c = next(name)?;
                    if c < 0.0 || c.fract() != 0.0 {
                        return Err(Error::format(self.path, loc.clone(), "invalid list length"));
                    }
                    let mut list = Vec::with_capacity(c as usize);
                    for _ in 0..c as usize {
                        list.push(next(name)?);
                    }
                    rec.push(list);
                }
            }
        }
        Ok(rec)
    }
}

/// Writes binary little-endian PLY with double coordinates and, when present,
/// 8-bit colors (`round(255 c)`).
pub fn write_ply(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        mesh.num_vertices()
    );
    if mesh.colors().is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.num_triangles()
    ));
    out.extend_from_slice(header.as_bytes());
    for (i, v) in mesh.vertices().iter().enumerate() {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
        if let Some(c) = mesh.colors() {
            for x in c[i] {
                out.push((x * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    for t in mesh.triangles() {
        out.push(3);
        for &i in t {
            let i = i32::try_from(i)
                .map_err(|_| Error::Argument("vertex index exceeds PLY int range".into()))?;
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    fn write(dir: &tempfile::TempDir, name: &str, body: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn single_triangle_off() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.off", b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
        let m = load_mesh(&p).unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles()), (3, 1));
        assert!(m.colors().is_none());
    }

    #[test]
    fn ascii_ply_with_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let body = b"ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 51\n3 0 1 2\n";
        let m = load_mesh(write(&dir, "c.ply", body)).unwrap();
        let c = m.colors().unwrap();
        assert_eq!(c[0], [1.0, 0.0, 0.0]);
        assert_eq!(c[2], [0.0, 0.0, 0.2]);
    }

    #[test]
    fn obj_quad_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "q.obj", b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
        assert!(matches!(load_mesh(p), Err(Error::UnsupportedTopology(_))));
    }

    #[test]
    fn obj_with_vertex_colors_and_slashes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.obj",
            b"# comment\nv 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nvn 0 0 1\nf 1//1 2//1 -1//1\n",
        );
        let m = load_mesh(p).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
        assert_eq!(m.colors().unwrap()[2], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "bad.off", b"OFF\n3 1 0\n0 0 0\n1 zero 0\n0 1 0\n3 0 1 2\n");
        let err = load_mesh(p).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn binary_ply_roundtrip_keeps_8bit_colors() {
        let dir = tempfile::tempdir().unwrap();
        let m = primitives::icosphere(2, 1.0);
        let colors: Vec<Color> = (0..m.num_vertices())
            .map(|i| [(i % 256) as f64 / 255.0, 0.5f64.min((i * 3 % 256) as f64 / 255.0), 1.0])
            .collect();
        let m = m.with_colors(colors).unwrap();
        let p = dir.path().join("rt.ply");
        write_ply(&p, &m).unwrap();
        let back = load_mesh(&p).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ply");
        write_ply(&p, &primitives::cube()).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_mesh(&p).unwrap_err().to_string();
        assert!(err.contains("byte offset"), "{err}");
    }
}
