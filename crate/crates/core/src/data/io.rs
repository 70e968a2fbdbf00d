//! Image and point-cloud file formats: binary PPM, text XYZ and ASCII PLY.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::chamfer::PointCloud;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn unit_from_level(level: u8) -> f32 {
    (f64::from(level) / 255.0) as f32
}

pub(crate) fn level_from_unit(v: f32) -> u8 {
    (f64::from(v).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads a text file; invalid UTF-8 is a parse error on the offending line.
fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| {
        let bad = e.utf8_error().valid_up_to();
        let line = 1 + e.as_bytes()[..bad].iter().filter(|&&b| b == b'\n').count();
        parse_err(path, line, "invalid UTF-8")
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Writes a `[3×H×W]` image with values in `[0, 1]` as 8-bit binary PPM (P6).
pub fn write_ppm(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let &[3, h, w] = image.shape() else {
        return Err(Error::Dimension(format!(
            "PPM images must be [3, H, W], got {:?}",
            image.shape()
        )));
    };
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * plane);
    let d = image.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push(level_from_unit(d[c * plane + i]));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut line = 1;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b'\n') => {
                    line += 1;
                    pos += 1;
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(parse_err(path, line, "truncated PPM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        fields.push((String::from_utf8_lossy(&bytes[start..pos]).into_owned(), line));
    }
    let (magic, magic_line) = &fields[0];
    if magic != "P6" {
        return Err(parse_err(path, *magic_line, format!("expected P6 magic, found {magic:?}")));
    }
    let num = |i: usize, what: &str| -> Result<usize> {
        let (tok, ln) = &fields[i];
        tok.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| parse_err(path, *ln, format!("invalid {what} {tok:?}")))
    };
    let (w, h, maxval) = (num(1, "width")?, num(2, "height")?, num(3, "maxval")?);
    if maxval != 255 {
        return Err(parse_err(path, fields[3].1, format!("only 8-bit PPM is supported, maxval is {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data = bytes.get(pos + 1..).unwrap_or(&[]);
    let plane = w * h;
    if data.len() != 3 * plane {
        return Err(parse_err(
            path,
            line,
            format!("expected {} raster bytes, found {}", 3 * plane, data.len()),
        ));
    }
    let mut out = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            out[c * plane + i] = unit_from_level(data[3 * i + c]);
        }
    }
    Tensor::new(vec![3, h, w], out)
}

/// Text XYZ: a `P <count>` header line, then one `x y z` line per point.
/// Coordinates are written in shortest round-trip form.
pub fn write_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::with_capacity(cloud.len() * 64);
    writeln!(s, "P {}", cloud.len()).expect("string write");
    for p in cloud.points() {
        writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]).expect("string write");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file; expected \"P <count>\""))?;
    let count = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["P", n] => n.parse::<usize>().ok(),
        _ => None,
    }
    .ok_or_else(|| parse_err(path, 1, format!("malformed point-count header {header:?}")))?;
    let mut points = Vec::with_capacity(count);
    for (ln, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        if points.len() == count {
            return Err(parse_err(path, ln, format!("more than the {count} declared points")));
        }
        let coords: Vec<f64> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, ln, format!("bad coordinate: {e}")))?;
        let [x, y, z] = coords[..] else {
            return Err(parse_err(path, ln, format!("expected 3 coordinates, found {}", coords.len())));
        };
        points.push([x, y, z]);
    }
    if points.len() != count {
        return Err(parse_err(
            path,
            text.lines().count(),
            format!("header declares {count} points, found {}", points.len()),
        ));
    }
    PointCloud::new(points).map_err(|e| parse_err(path, 1, e.to_string()))
}

/// ASCII PLY with one `vertex` element carrying double-precision x, y, z.
pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::with_capacity(cloud.len() * 64 + 128);
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "element vertex {}", cloud.len()).expect("string write");
    s.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in cloud.points() {
        writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]).expect("string write");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads the vertex positions of an ASCII PLY file. Extra vertex properties
/// after x, y, z and elements other than `vertex` are ignored.
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    if lines.next().map(|(_, l)| l) != Some("ply") {
        return Err(parse_err(path, 1, "missing \"ply\" magic"));
    }
    let mut vertices = None;
    let mut in_vertex = false;
    let mut props = Vec::new();
    let mut skip_before = 0usize;
    let mut seen_vertex = false;
    for (ln, l) in lines.by_ref() {
        let toks: Vec<_> = l.split_whitespace().collect();
        match toks[..] {
            ["format", fmt, _] if fmt != "ascii" => {
                return Err(parse_err(path, ln, format!("unsupported PLY format {fmt}")))
            }
            ["element", "vertex", n] => {
                vertices = Some(
                    n.parse::<usize>()
                        .map_err(|_| parse_err(path, ln, format!("bad vertex count {n:?}")))?,
                );
                in_vertex = true;
                seen_vertex = true;
            }
            ["element", _, n] => {
                in_vertex = false;
                if !seen_vertex {
                    skip_before += n.parse::<usize>().unwrap_or(0);
                }
            }
            ["property", .., name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = vertices.ok_or_else(|| parse_err(path, 1, "no vertex element"))?;
    let axis = |a: &str| props.iter().position(|p| p == a);
    let (Some(ix), Some(iy), Some(iz)) = (axis("x"), axis("y"), axis("z")) else {
        return Err(parse_err(path, 1, "vertex element lacks x/y/z properties"));
    };
    let mut points = Vec::with_capacity(n);
    for (ln, l) in lines.skip(skip_before).take(n) {
        let v: Vec<f64> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, ln, format!("bad vertex: {e}")))?;
        if v.len() < props.len() {
            return Err(parse_err(path, ln, "vertex line has too few values"));
        }
        points.push([v[ix], v[iy], v[iz]]);
    }
    if points.len() != n {
        return Err(parse_err(path, text.lines().count(), format!("expected {n} vertices, found {}", points.len())));
    }
    PointCloud::new(points).map_err(|e| parse_err(path, 1, e.to_string()))
}
