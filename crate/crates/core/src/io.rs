//! On-disk formats: cameras (JSON), color/mask/depth images (PNG), the
//! `VFD1` float depth container, PLY meshes and clouds, and the bundle
//! directory layout.
//!
//! ```text
//! bundle/
//!   cameras/000000.json   {fx, fy, cx, cy, width, height, pose: [16 row-major]}
//!   color/000000.png      8-bit RGB
//!   depth/000000.png      16-bit gray, millimeters, 0 = invalid   (or .vfd)
//!   mask/000000.png       8-bit gray, 0 / 255                     (optional)
//!   mesh.ply              binary little-endian, instance_id:int32, clutter:uint8
//!   clean/color/000000.png, clean/depth/000000.png                (optional)
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DepthMap};
use crate::image::{Mask, RgbImage};
use crate::scene::{CleanRender, Frame, LabeledMesh, SceneBundle};

pub const VFD_MAGIC: &[u8; 4] = b"VFD1";
pub const DEFAULT_STRIDE: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DepthFormat {
    /// 16-bit PNG in millimeters.
    #[default]
    PngMillimeters,
    /// `VFD1` container of 32-bit floats in meters.
    Float,
}

impl DepthFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DepthFormat::PngMillimeters => "png",
            DepthFormat::Float => "vfd",
        }
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    create_parent(path)?;
    File::create(path).map_err(|e| Error::io(path, e))
}

struct DecodedPng {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: Vec<u8>,
}

fn read_png(path: &Path) -> Result<DecodedPng> {
    let file = open(path)?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::malformed(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok(DecodedPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        bytes: buf,
    })
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut w = enc
        .write_header()
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    w.write_image_data(data)
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    w.finish().map_err(|e| Error::malformed(path, e.to_string()))
}

pub fn save_color(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().flatten().copied().collect();
    write_png(path, img.width, img.height, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

pub fn load_color(path: &Path) -> Result<RgbImage> {
    let png = read_png(path)?;
    if png.depth != png::BitDepth::Eight {
        return Err(Error::malformed(path, format!("expected 8-bit color, got {:?}", png.depth)));
    }
    let channels = match png.color {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => return Err(Error::malformed(path, format!("unsupported color type {other:?}"))),
    };
    let data = png
        .bytes
        .chunks_exact(channels)
        .map(|c| if channels >= 3 { [c[0], c[1], c[2]] } else { [c[0]; 3] })
        .collect();
    Ok(RgbImage {
        width: png.width,
        height: png.height,
        data,
    })
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_png(path, mask.width, mask.height, png::ColorType::Grayscale, png::BitDepth::Eight, &bytes)
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let png = read_png(path)?;
    if png.depth != png::BitDepth::Eight {
        return Err(Error::malformed(path, "expected an 8-bit mask"));
    }
    let channels = png.bytes.len() / (png.width * png.height).max(1);
    let data = png.bytes.chunks_exact(channels.max(1)).map(|c| c[0] > 127).collect();
    Ok(Mask {
        width: png.width,
        height: png.height,
        data,
    })
}

/// Millimeter quantization used by 16-bit depth PNGs.
pub fn depth_to_mm(d: f64) -> u16 {
    if !(d > 0.0) {
        0
    } else {
        (d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16
    }
}

pub fn save_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut bytes = Vec::with_capacity(depth.data.len() * 2);
    for &d in &depth.data {
        bytes.extend_from_slice(&depth_to_mm(d).to_be_bytes());
    }
    write_png(path, depth.width, depth.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

pub fn load_depth_png(path: &Path) -> Result<DepthMap> {
    let png = read_png(path)?;
    if png.depth != png::BitDepth::Sixteen || png.color != png::ColorType::Grayscale {
        return Err(Error::malformed(path, "expected 16-bit grayscale depth"));
    }
    let data = png
        .bytes
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0)
        .collect();
    Ok(DepthMap {
        width: png.width,
        height: png.height,
        data,
    })
}

/// `VFD1` layout: magic, width u32, height u32, scale f32 (meters per
/// stored unit), then `width * height` little-endian f32 values.
pub fn save_depth_vfd(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    let mut buf = Vec::with_capacity(16 + depth.data.len() * 4);
    buf.extend_from_slice(VFD_MAGIC);
    buf.extend_from_slice(&(depth.width as u32).to_le_bytes());
    buf.extend_from_slice(&(depth.height as u32).to_le_bytes());
    buf.extend_from_slice(&1.0f32.to_le_bytes());
    for &d in &depth.data {
        buf.extend_from_slice(&(d as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_depth_vfd(path: &Path) -> Result<DepthMap> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..4] != VFD_MAGIC {
        return Err(Error::malformed(path, "missing VFD1 header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let width = u32_at(4);
    let height = u32_at(8);
    let scale = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64;
    let expected = 16 + width * height * 4;
    if bytes.len() != expected {
        return Err(Error::malformed(
            path,
            format!("header says {width}x{height} ({expected} bytes) but file has {} bytes", bytes.len()),
        ));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::malformed(path, format!("invalid scale {scale}")));
    }
    let data: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64 * scale)
        .collect();
    let depth = DepthMap { width, height, data };
    depth
        .validate()
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    Ok(depth)
}

pub fn save_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("vfd") => save_depth_vfd(path, depth),
        _ => save_depth_png(path, depth),
    }
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("vfd") => load_depth_vfd(path),
        _ => load_depth_png(path),
    }
}

/// Finds `stem.png` or `stem.vfd` inside `dir`, preferring the PNG.
pub fn find_depth(dir: &Path, stem: &str) -> Result<PathBuf> {
    let png = dir.join(format!("{stem}.png"));
    if png.exists() {
        return Ok(png);
    }
    let vfd = dir.join(format!("{stem}.vfd"));
    if vfd.exists() {
        return Ok(vfd);
    }
    Err(Error::MissingFile(png))
}

pub fn save_camera(path: &Path, cam: &CameraModel) -> Result<()> {
    let s = serde_json::to_string_pretty(cam).expect("camera serializes");
    create_parent(path)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_camera(path: &Path) -> Result<CameraModel> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::malformed(path, e.to_string()))
}

// ---------------------------------------------------------------- PLY

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            PlyType::I8 => b[0] as i8 as f64,
            PlyType::U8 => b[0] as f64,
            PlyType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            PlyType::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            PlyType::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            PlyType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum PlyProperty {
    Scalar(String, PlyType),
    List(String, PlyType, PlyType),
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProperty>,
}

/// Vertex properties (by name) and triangulated faces from a PLY file.
#[derive(Clone, Debug, Default)]
pub struct PlyData {
    pub vertex_count: usize,
    pub vertex: Vec<(String, Vec<f64>)>,
    pub faces: Vec<[u32; 3]>,
}

impl PlyData {
    pub fn property(&self, name: &str) -> Option<&[f64]> {
        self.vertex
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn points(&self) -> Option<Vec<Point3<f64>>> {
        let (x, y, z) = (self.property("x")?, self.property("y")?, self.property("z")?);
        Some((0..self.vertex_count).map(|i| Point3::new(x[i], y[i], z[i])).collect())
    }
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let mut r = BufReader::new(open(path)?);
    let bad = |m: &str| Error::malformed(path, m.to_string());
    let mut line = String::new();
    let read_line = |r: &mut BufReader<File>, line: &mut String| -> Result<()> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::malformed(path, "unexpected end of header"));
        }
        Ok(())
    };
    read_line(&mut r, &mut line)?;
    if line.trim() != "ply" {
        return Err(bad("missing 'ply' magic"));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        read_line(&mut r, &mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(bad(&format!("unsupported PLY format {fmt}")));
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let ct = PlyType::parse(ct).ok_or_else(|| bad("bad list count type"))?;
                let it = PlyType::parse(it).ok_or_else(|| bad("bad list item type"))?;
                el.props.push(PlyProperty::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let ty = PlyType::parse(ty).ok_or_else(|| bad(&format!("bad property type {ty}")))?;
                el.props.push(PlyProperty::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(bad(&format!("unrecognized header line '{}'", line.trim()))),
        }
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    let mut off = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if off + n > body.len() {
            return Err(Error::malformed(path, "truncated PLY body"));
        }
        let s = &body[off..off + n];
        off += n;
        Ok(s)
    };
    let mut out = PlyData::default();
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        if is_vertex {
            out.vertex_count = el.count;
            for p in &el.props {
                if let PlyProperty::Scalar(n, _) = p {
                    out.vertex.push((n.clone(), Vec::with_capacity(el.count)));
                }
            }
        }
        for _ in 0..el.count {
            let mut scalar_slot = 0;
            for p in &el.props {
                match p {
                    PlyProperty::Scalar(_, ty) => {
                        let v = ty.read(take(ty.size())?);
                        if is_vertex {
                            out.vertex[scalar_slot].1.push(v);
                            scalar_slot += 1;
                        }
                    }
                    PlyProperty::List(name, ct, it) => {
                        let n = ct.read(take(ct.size())?) as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(it.read(take(it.size())?) as u32);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            for k in 1..n.saturating_sub(1) {
                                out.faces.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Loads a mesh; missing `instance_id` / `clutter` properties default to
/// instance 0, non-clutter.
pub fn load_mesh(path: &Path) -> Result<LabeledMesh> {
    let ply = read_ply(path)?;
    let vertices = ply
        .points()
        .ok_or_else(|| Error::malformed(path, "vertex element lacks x/y/z"))?;
    let n = vertices.len();
    let instance_id = ply
        .property("instance_id")
        .map(|v| v.iter().map(|&x| x as i32).collect())
        .unwrap_or_else(|| vec![0; n]);
    let clutter = ply
        .property("clutter")
        .map(|v| v.iter().map(|&x| x != 0.0).collect())
        .unwrap_or_else(|| vec![false; n]);
    let colors = match (ply.property("red"), ply.property("green"), ply.property("blue")) {
        (Some(r), Some(g), Some(b)) => Some((0..n).map(|i| [r[i] as u8, g[i] as u8, b[i] as u8]).collect()),
        _ => None,
    };
    let mesh = LabeledMesh {
        vertices,
        triangles: ply.faces,
        instance_id,
        clutter,
        colors,
    };
    mesh.validate()
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    Ok(mesh)
}

pub fn save_mesh(path: &Path, mesh: &LabeledMesh) -> Result<()> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty int instance_id\nproperty uchar clutter\n",
        mesh.vertices.len()
    );
    if mesh.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.triangles.len()
    ));
    let mut buf = header.into_bytes();
    for i in 0..mesh.vertices.len() {
        let p = mesh.vertices[i];
        for c in [p.x, p.y, p.z] {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        buf.extend_from_slice(&mesh.instance_id[i].to_le_bytes());
        buf.push(mesh.clutter[i] as u8);
        if let Some(cols) = &mesh.colors {
            buf.extend_from_slice(&cols[i]);
        }
    }
    write_faces(&mut buf, &mesh.triangles);
    write_bytes(path, &buf)
}

fn write_faces(buf: &mut Vec<u8>, triangles: &[[u32; 3]]) {
    for t in triangles {
        buf.push(3);
        for &i in t {
            buf.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Oriented, colored point cloud as float xyz + normal + uchar rgb.
pub fn save_cloud(path: &Path, points: &[Point3<f64>], normals: &[Vector3<f64>], colors: &[[u8; 3]]) -> Result<()> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    );
    let mut buf = header.into_bytes();
    for i in 0..points.len() {
        for c in [points[i].x, points[i].y, points[i].z, normals[i].x, normals[i].y, normals[i].z] {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
        buf.extend_from_slice(&colors[i]);
    }
    write_bytes(path, &buf)
}

/// Plain triangle mesh as float xyz (+ optional rgb).
pub fn save_surface(path: &Path, vertices: &[Point3<f64>], colors: Option<&[[u8; 3]]>, triangles: &[[u32; 3]]) -> Result<()> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        vertices.len()
    );
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        triangles.len()
    ));
    let mut buf = header.into_bytes();
    for (i, p) in vertices.iter().enumerate() {
        for c in [p.x, p.y, p.z] {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
        if let Some(cols) = colors {
            buf.extend_from_slice(&cols[i]);
        }
    }
    write_faces(&mut buf, triangles);
    write_bytes(path, &buf)
}

// ---------------------------------------------------------------- bundles

pub fn frame_stem(index: usize) -> String {
    format!("{index:06}")
}

#[derive(Clone, Debug)]
pub struct SaveOptions {
    pub depth_format: DepthFormat,
    /// Write masks even when they are empty.
    pub write_empty_masks: bool,
}

impl Default for SaveOptions {
    fn default() -> Self {
        Self {
            depth_format: DepthFormat::PngMillimeters,
            write_empty_masks: true,
        }
    }
}

pub fn save_bundle(bundle: &SceneBundle, dir: &Path, opts: &SaveOptions) -> Result<()> {
    let ext = opts.depth_format.extension();
    for f in &bundle.frames {
        let stem = frame_stem(f.id);
        save_camera(&dir.join("cameras").join(format!("{stem}.json")), &f.camera)?;
        save_color(&dir.join("color").join(format!("{stem}.png")), &f.color)?;
        save_depth(&dir.join("depth").join(format!("{stem}.{ext}")), &f.depth_cap)?;
        if opts.write_empty_masks || !f.mask.is_empty() {
            save_mask(&dir.join("mask").join(format!("{stem}.png")), &f.mask)?;
        }
    }
    if let Some(clean) = &bundle.clean_renders {
        for (f, c) in bundle.frames.iter().zip(clean) {
            let stem = frame_stem(f.id);
            save_color(&dir.join("clean/color").join(format!("{stem}.png")), &c.color)?;
            save_depth(&dir.join("clean/depth").join(format!("{stem}.{ext}")), &c.depth)?;
        }
    }
    save_mesh(&dir.join("mesh.ply"), &bundle.mesh)
}

/// Sorted numeric stems of `*.json` files in `dir/cameras`.
pub fn list_frames(dir: &Path) -> Result<Vec<String>> {
    let cams = dir.join("cameras");
    let rd = fs::read_dir(&cams).map_err(|e| Error::io(&cams, e))?;
    let mut stems: Vec<(u64, String)> = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(&cams, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(stem) = name.strip_suffix(".json") {
            if let Ok(n) = stem.parse::<u64>() {
                stems.push((n, stem.to_string()));
            }
        }
    }
    stems.sort();
    Ok(stems.into_iter().map(|(_, s)| s).collect())
}

fn check_size(path: &Path, cam: &CameraModel, got: (usize, usize)) -> Result<()> {
    if got != cam.dims() {
        return Err(Error::FileDimensionMismatch {
            path: path.to_path_buf(),
            reason: format!("image is {}x{}, camera is {}x{}", got.0, got.1, cam.width, cam.height),
        });
    }
    Ok(())
}

/// Loads a bundle keeping every `stride`-th frame; kept frames are
/// renumbered densely from 0. A missing mask file loads as an empty mask,
/// a missing `mesh.ply` as an empty mesh.
pub fn load_bundle(dir: &Path, stride: usize) -> Result<SceneBundle> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be at least 1".into()));
    }
    let stems = list_frames(dir)?;
    let has_clean = dir.join("clean").is_dir();
    let mut frames = Vec::new();
    let mut clean = Vec::new();
    for (id, stem) in stems.iter().step_by(stride).enumerate() {
        let cam_path = dir.join("cameras").join(format!("{stem}.json"));
        let camera = load_camera(&cam_path)?;
        let color_path = dir.join("color").join(format!("{stem}.png"));
        let color = load_color(&color_path)?;
        check_size(&color_path, &camera, color.dims())?;
        let depth_path = find_depth(&dir.join("depth"), stem)?;
        let depth_cap = load_depth(&depth_path)?;
        check_size(&depth_path, &camera, depth_cap.dims())?;
        let mask_path = dir.join("mask").join(format!("{stem}.png"));
        let mask = if mask_path.exists() {
            let m = load_mask(&mask_path)?;
            check_size(&mask_path, &camera, m.dims())?;
            m
        } else {
            Mask::new(camera.width, camera.height)
        };
        if has_clean {
            let cp = dir.join("clean/color").join(format!("{stem}.png"));
            let c = load_color(&cp)?;
            check_size(&cp, &camera, c.dims())?;
            let dp = find_depth(&dir.join("clean/depth"), stem)?;
            let d = load_depth(&dp)?;
            check_size(&dp, &camera, d.dims())?;
            clean.push(CleanRender { color: c, depth: d });
        }
        frames.push(Frame {
            id,
            color,
            depth_cap,
            mask,
            camera,
        });
    }
    if frames.is_empty() {
        return Err(Error::MissingFile(dir.join("cameras")));
    }
    let mesh_path = dir.join("mesh.ply");
    let mesh = if mesh_path.exists() {
        load_mesh(&mesh_path)?
    } else {
        LabeledMesh::default()
    };
    Ok(SceneBundle {
        frames,
        mesh,
        clean_renders: has_clean.then_some(clean),
    })
}
