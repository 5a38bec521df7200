//! File formats: binary PLY clouds, PFM depth, OBJ meshes, PNG images and
//! masks, and JSON records.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{is_valid_depth, DepthMap, OrientedPointCloud, Vec3};
use crate::image::{GrayImage, Mask};
use crate::sdf::TriangleMesh;

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        with_path(parent, fs::create_dir_all(parent).map_err(Error::from))?;
    }
    with_path(path, fs::write(path, bytes).map_err(Error::from))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    with_path(path, fs::read(path).map_err(Error::from))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path.as_ref(), text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    with_path(path, serde_json::from_slice(&bytes).map_err(Error::from))
}

// ---------------------------------------------------------------- PLY

/// Binary little-endian PLY with `float x y z nx ny nz` per vertex.
pub fn encode_ply(cloud: &OrientedPointCloud) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property float nx\nproperty float ny\nproperty float nz\nend_header\n",
        cloud.len()
    )
    .into_bytes();
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        for c in p.iter().chain(n.iter()) {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

/// Reads binary little-endian PLY vertices with float or double properties.
/// Normals default to zero when absent; other vertex properties are skipped.
pub fn decode_ply(bytes: &[u8]) -> Result<OrientedPointCloud> {
    let mut cur = Cursor::new(bytes);
    let mut line = String::new();
    let mut next_line = |cur: &mut Cursor<&[u8]>| -> Result<String> {
        line.clear();
        if cur.read_line(&mut line)? == 0 {
            return Err(Error::Format("PLY header ended early".into()));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut cur)? != "ply" {
        return Err(Error::Format("missing PLY magic".into()));
    }
    let mut count = None;
    let mut props: Vec<(String, usize)> = Vec::new();
    let mut in_vertex = false;
    loop {
        let l = next_line(&mut cur)?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::Format(format!("unsupported PLY format {fmt}")));
                }
            }
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|_| Error::Format(format!("bad vertex count {n}")))?);
                } else if count.is_none() {
                    return Err(Error::Format("PLY elements before vertex are unsupported".into()));
                }
            }
            ["property", ty, name] if in_vertex => {
                let size = match *ty {
                    "float" | "float32" => 4,
                    "double" | "float64" => 8,
                    _ => return Err(Error::Format(format!("unsupported PLY property type {ty}"))),
                };
                props.push((name.to_string(), size));
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = count.ok_or_else(|| Error::Format("PLY has no vertex element".into()))?;
    let find = |name: &str| props.iter().position(|(p, _)| p == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::Format("PLY vertex lacks x/y/z".into())),
    };
    let normal_idx = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let stride: usize = props.iter().map(|(_, s)| s).sum();
    let body = &bytes[cur.position() as usize..];
    if body.len() < n * stride {
        return Err(Error::Format(format!(
            "PLY body has {} bytes, expected {}",
            body.len(),
            n * stride
        )));
    }
    let mut offsets = Vec::with_capacity(props.len());
    let mut o = 0;
    for (_, s) in &props {
        offsets.push(o);
        o += s;
    }
    let read = |rec: &[u8], i: usize| -> f64 {
        let b = &rec[offsets[i]..offsets[i] + props[i].1];
        if props[i].1 == 4 {
            f32::from_le_bytes(b.try_into().unwrap()) as f64
        } else {
            f64::from_le_bytes(b.try_into().unwrap())
        }
    };
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for rec in body.chunks_exact(stride).take(n) {
        points.push(Vec3::new(read(rec, ix), read(rec, iy), read(rec, iz)));
        normals.push(match normal_idx {
            Some((a, b, c)) => Vec3::new(read(rec, a), read(rec, b), read(rec, c)),
            None => Vec3::zeros(),
        });
    }
    OrientedPointCloud::new(points, normals)
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &OrientedPointCloud) -> Result<()> {
    write_bytes(path.as_ref(), &encode_ply(cloud))
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<OrientedPointCloud> {
    let path = path.as_ref();
    with_path(path, decode_ply(&read_bytes(path)?))
}

// ---------------------------------------------------------------- PFM

/// Single-channel PFM, little-endian (scale −1), rows bottom to top. Invalid
/// pixels are written as 0.
pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1\n", depth.width, depth.height).into_bytes();
    for v in (0..depth.height).rev() {
        for u in 0..depth.width {
            let d = depth.get(u, v);
            let d = if is_valid_depth(d) { d as f32 } else { 0.0 };
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    out
}

/// Reads a single-channel PFM of either endianness; non-positive and
/// non-finite values become invalid.
pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let mut cur = Cursor::new(bytes);
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        let mut l = String::new();
        if cur.read_line(&mut l)? == 0 {
            return Err(Error::Format("PFM header ended early".into()));
        }
        tokens.extend(l.split_whitespace().map(str::to_string));
    }
    if tokens[0] != "Pf" {
        return Err(Error::Format(format!("unsupported PFM kind {}", tokens[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PFM dimension {s}")));
    let (w, h) = (parse(&tokens[1])?, parse(&tokens[2])?);
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale {}", tokens[3])))?;
    let body = &bytes[cur.position() as usize..];
    if body.len() != w * h * 4 {
        return Err(Error::Format(format!("PFM body has {} bytes, expected {}", body.len(), w * h * 4)));
    }
    let mut values = vec![0.0; w * h];
    for (r, row) in body.chunks_exact(w * 4).enumerate() {
        let v = h - 1 - r;
        for (u, b) in row.chunks_exact(4).enumerate() {
            let b: [u8; 4] = b.try_into().unwrap();
            let x = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            values[v * w + u] = x as f64;
        }
    }
    DepthMap::new(w, h, values)
}

pub fn write_pfm(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pfm(depth))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    with_path(path, decode_pfm(&read_bytes(path)?))
}

// ---------------------------------------------------------------- OBJ

/// ASCII OBJ with `v` and 1-based `f` records. Coordinates use the shortest
/// round-trip decimal form, so the output is deterministic and lossless.
pub fn encode_obj(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = BufWriter::new(Vec::new());
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    out.into_inner().unwrap()
}

/// Parses `v` and `f` records; polygons are fan-triangulated, `v/vt/vn`
/// references and negative indices are accepted, other records ignored.
pub fn decode_obj(bytes: &[u8]) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in BufReader::new(bytes).lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Format(format!("OBJ line {}: bad vertex", ln + 1)))?;
                if c.len() != 3 {
                    return Err(Error::Format(format!("OBJ line {}: vertex needs 3 coordinates", ln + 1)));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| {
                        let raw: i64 = t
                            .split('/')
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| Error::Format(format!("OBJ line {}: bad face index {t}", ln + 1)))?;
                        let n = vertices.len() as i64;
                        let i = if raw < 0 { n + raw } else { raw - 1 };
                        if i < 0 || i >= n {
                            return Err(Error::Format(format!("OBJ line {}: index {raw} out of range", ln + 1)));
                        }
                        Ok(i as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Format(format!("OBJ line {}: face needs 3 vertices", ln + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn write_obj(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    write_bytes(path.as_ref(), &encode_obj(mesh))
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    with_path(path, decode_obj(&read_bytes(path)?))
}

// ---------------------------------------------------------------- PNG

fn encode_gray8(width: usize, height: usize, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        w.write_image_data(data)?;
    }
    Ok(out)
}

/// Decodes any 8/16-bit PNG to one 8-bit luminance channel (alpha ignored).
fn decode_gray8(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("PNG too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let ch = info.color_type.samples();
    let mut gray = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * ch];
        for px in row.chunks_exact(ch) {
            gray.push(match ch {
                1 | 2 => px[0],
                _ => ((px[0] as u32 * 299 + px[1] as u32 * 587 + px[2] as u32 * 114 + 500) / 1000) as u8,
            });
        }
    }
    Ok((w, h, gray))
}

pub fn encode_png(image: &GrayImage) -> Result<Vec<u8>> {
    encode_gray8(image.width, image.height, &image.to_u8())
}

pub fn write_png(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    let bytes = with_path(path, encode_png(image))?;
    write_bytes(path, &bytes)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    with_path(path, {
        let bytes = read_bytes(path)?;
        decode_gray8(&bytes).and_then(|(w, h, g)| GrayImage::from_u8(w, h, &g))
    })
}

/// Binary mask as 8-bit gray: 255 set, 0 clear.
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let bytes = with_path(path, encode_gray8(mask.width, mask.height, &data))?;
    write_bytes(path, &bytes)
}

/// Pixels brighter than mid-gray are set.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    with_path(path, {
        let bytes = read_bytes(path)?;
        decode_gray8(&bytes).and_then(|(w, h, g)| Mask::new(w, h, g.iter().map(|&v| v >= 128).collect()))
    })
}

/// Reads a whole file; used for byte-level comparisons.
pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let mut f = with_path(path, fs::File::open(path).map_err(Error::from))?;
    let mut v = Vec::new();
    with_path(path, f.read_to_end(&mut v).map_err(Error::from))?;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ply_round_trip() {
        let c = OrientedPointCloud::new(
            vec![Vec3::new(0.5, -1.25, 2.0), Vec3::new(3.0, 0.0, -0.125)],
            vec![Vec3::new(0.0, 0.0, -1.0), Vec3::new(1.0, 0.0, 0.0)],
        )
        .unwrap();
        let back = decode_ply(&encode_ply(&c)).unwrap();
        assert_eq!(back, c);
        let mut short = encode_ply(&c);
        short.truncate(short.len() - 3);
        assert!(decode_ply(&short).is_err());
    }

    #[test]
    fn pfm_round_trip_and_orientation() {
        let d = DepthMap::new(3, 2, vec![1.0, 2.0, DepthMap::INVALID, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode_pfm(&d);
        let header_len = b"Pf\n3 2\n-1\n".len();
        // first stored row is the bottom image row
        assert_eq!(f32::from_le_bytes(bytes[header_len..header_len + 4].try_into().unwrap()), 4.0);
        // invalid written as zero
        assert_eq!(&bytes[bytes.len() - 4..], &0f32.to_le_bytes());
        let back = decode_pfm(&bytes).unwrap();
        assert_eq!(back.valid_count(), 5);
        assert_eq!(back.get(1, 1), 5.0);
        assert!(!back.is_valid(2, 0));
    }

    #[test]
    fn obj_round_trip_is_exact() {
        let m = TriangleMesh::new(
            vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0 / 3.0, 0.0, -2.5), Vec3::new(0.0, 1e-17, 7.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let back = decode_obj(&encode_obj(&m)).unwrap();
        assert_eq!(back, m);
        let quad = decode_obj(b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 -1\n").unwrap();
        assert_eq!(quad.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(decode_obj(b"v 0 0 0\nf 1 2 3\n").is_err());
    }

    #[test]
    fn png_and_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_u8(3, 2, &[0, 10, 20, 30, 40, 255]).unwrap();
        write_png(dir.path().join("a.png"), &img).unwrap();
        assert_eq!(read_png(dir.path().join("a.png")).unwrap(), img);
        let mask = Mask::new(2, 2, vec![true, false, false, true]).unwrap();
        write_mask(dir.path().join("m/0.png"), &mask).unwrap();
        assert_eq!(read_mask(dir.path().join("m/0.png")).unwrap(), mask);
    }

    #[test]
    fn missing_file_error_names_path() {
        let err = read_obj("/nonexistent/x.obj").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.obj"));
    }
}
