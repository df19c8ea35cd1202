//! Deterministic z-buffered software rasterizer for flat-shaded grey
//! renders, plus silhouette extraction and PNG transport.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{face_normal_area, Bounds, Mesh, Vec3, DEGENERATE_AREA};

pub const DEFAULT_IMAGE_SIZE: u32 = 224;
pub const DEFAULT_DISTANCE: f64 = 2.2;
pub const DEFAULT_FOV: f64 = 40.0;
pub const DEFAULT_ELEVATION: f64 = 20.0;
pub const AZIMUTH_OFFSET: f64 = 45.0;
pub const ALBEDO: f64 = 0.7;
pub const AMBIENT: f64 = 0.25;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("png encoding failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decoding failed: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub const WHITE: Rgb = Rgb(255, 255, 255);
    pub const BLACK: Rgb = Rgb(0, 0, 0);
    pub const ORANGE: Rgb = Rgb(255, 165, 0);

    pub fn from_hex(s: &str) -> Option<Rgb> {
        let s = s.trim_start_matches('#');
        if s.len() != 6 {
            return None;
        }
        let byte = |i: usize| u8::from_str_radix(&s[i..i + 2], 16).ok();
        Some(Rgb(byte(0)?, byte(2)?, byte(4)?))
    }
}

/// The three optimization backgrounds.
pub const BACKGROUNDS: [Rgb; 3] = [Rgb::WHITE, Rgb::BLACK, Rgb::ORANGE];

/// Fixed look-at point and length unit for cameras. Pinning the frame to the
/// undeformed mesh keeps scale changes visible across renders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub center: Vec3,
    pub diagonal: f64,
}

impl Frame {
    pub fn of(mesh: &Mesh) -> Frame {
        let b: Bounds = mesh.bounds();
        Frame {
            center: b.center(),
            diagonal: b.diagonal(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Degrees about +y, measured from +z towards +x.
    pub azimuth: f64,
    pub elevation: f64,
    /// Eye distance in multiples of the frame diagonal.
    pub distance: f64,
    /// Vertical field of view in degrees.
    pub fov: f64,
    pub width: u32,
    pub height: u32,
    /// `None` frames the mesh being rendered.
    pub frame: Option<Frame>,
}

impl Camera {
    pub fn new(azimuth: f64, elevation: f64) -> Camera {
        Camera {
            azimuth,
            elevation,
            distance: DEFAULT_DISTANCE,
            fov: DEFAULT_FOV,
            width: DEFAULT_IMAGE_SIZE,
            height: DEFAULT_IMAGE_SIZE,
            frame: None,
        }
    }

    pub fn framed(mut self, frame: Frame) -> Camera {
        self.frame = Some(frame);
        self
    }

    pub fn with_size(mut self, size: u32) -> Camera {
        self.width = size.max(32);
        self.height = size.max(32);
        self
    }

    fn view(&self, mesh: &Mesh) -> View {
        let frame = self.frame.unwrap_or_else(|| Frame::of(mesh));
        let (az, el) = (self.azimuth.to_radians(), self.elevation.to_radians());
        let dir = Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
        let eye = frame.center + dir * (self.distance * frame.diagonal);
        let forward = -dir;
        let mut right = forward.cross(&Vec3::y());
        if right.norm() < 1e-12 {
            right = Vec3::x();
        }
        let right = right.normalize();
        let up = right.cross(&forward);
        let focal = 0.5 * self.height as f64 / (0.5 * self.fov.to_radians()).tan();
        View {
            eye,
            right,
            up,
            forward,
            focal,
            near: 1e-6 * frame.diagonal.max(1e-12),
            width: self.width as usize,
            height: self.height as usize,
        }
    }
}

struct View {
    eye: Vec3,
    right: Vec3,
    up: Vec3,
    forward: Vec3,
    focal: f64,
    near: f64,
    width: usize,
    height: usize,
}

impl View {
    /// Screen position and view depth.
    fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        let q = p - self.eye;
        let z = q.dot(&self.forward);
        let x = self.width as f64 * 0.5 + self.focal * q.dot(&self.right) / z;
        let y = self.height as f64 * 0.5 - self.focal * q.dot(&self.up) / z;
        (x, y, z)
    }
}

/// Cameras at azimuths `45° + k·360°/n`, all at one elevation.
pub fn view_set(n: usize, elevation: f64) -> Vec<Camera> {
    (0..n.max(1))
        .map(|k| Camera::new(AZIMUTH_OFFSET + k as f64 * 360.0 / n.max(1) as f64, elevation))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Image {
        Image {
            width,
            height,
            pixels: vec![color; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header()?;
            let data: Vec<u8> = self.pixels.iter().flat_map(|p| [p.0, p.1, p.2]).collect();
            writer.write_image_data(&data)?;
        }
        Ok(out)
    }

    /// Decodes 8-bit RGB, RGBA or grayscale PNG.
    pub fn from_png(bytes: &[u8]) -> Result<Image, RenderError> {
        let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf)?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(RenderError::Layout(format!("bit depth {:?}", info.bit_depth)));
        }
        let data = &buf[..info.buffer_size()];
        let pixels: Vec<Rgb> = match info.color_type {
            png::ColorType::Rgb => data.chunks_exact(3).map(|c| Rgb(c[0], c[1], c[2])).collect(),
            png::ColorType::Rgba => data.chunks_exact(4).map(|c| Rgb(c[0], c[1], c[2])).collect(),
            png::ColorType::Grayscale => data.iter().map(|&g| Rgb(g, g, g)).collect(),
            png::ColorType::GrayscaleAlpha => {
                data.chunks_exact(2).map(|c| Rgb(c[0], c[0], c[0])).collect()
            }
            other => return Err(RenderError::Layout(format!("{other:?}"))),
        };
        Ok(Image {
            width: info.width,
            height: info.height,
            pixels,
        })
    }
}

/// Grey level of a face lit head-on along the camera axis. Two-sided.
pub fn shade(normal: &Vec3, toward_camera: &Vec3) -> u8 {
    let lambert = normal.dot(toward_camera).abs();
    let v = (ALBEDO * (AMBIENT + lambert)).clamp(0.0, 1.0);
    (v * 255.0).round() as u8
}

fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Renders and also returns the number of pixels covered by the mesh.
pub fn render_with_coverage(mesh: &Mesh, camera: &Camera, background: Rgb) -> (Image, usize) {
    let view = camera.view(mesh);
    let (w, h) = (view.width, view.height);
    let mut image = Image::filled(w as u32, h as u32, background);
    // Stores 1/z; larger is closer. Zero means empty.
    let mut depth = vec![0.0f64; w * h];
    let mut coverage = 0usize;
    let toward_camera = -view.forward;

    for fi in 0..mesh.faces.len() {
        let tri = mesh.triangle(fi);
        let (normal, area) = face_normal_area(&tri);
        if area < DEGENERATE_AREA {
            continue;
        }
        let p = [view.project(&tri[0]), view.project(&tri[1]), view.project(&tri[2])];
        if p.iter().any(|q| q.2 <= view.near) {
            continue;
        }
        let mut signed = edge(p[0].0, p[0].1, p[1].0, p[1].1, p[2].0, p[2].1);
        if signed == 0.0 {
            continue;
        }
        // Orient counter-clockwise in screen space.
        let (a, b, c) = if signed > 0.0 {
            (p[0], p[1], p[2])
        } else {
            signed = -signed;
            (p[0], p[2], p[1])
        };
        let min_x = a.0.min(b.0).min(c.0).floor().max(0.0) as usize;
        let max_x = (a.0.max(b.0).max(c.0).ceil() as i64).min(w as i64 - 1);
        let min_y = a.1.min(b.1).min(c.1).floor().max(0.0) as usize;
        let max_y = (a.1.max(b.1).max(c.1).ceil() as i64).min(h as i64 - 1);
        if max_x < 0 || max_y < 0 {
            continue;
        }
        let color = shade(&normal, &toward_camera);
        for y in min_y..=max_y as usize {
            let py = y as f64 + 0.5;
            for x in min_x..=max_x as usize {
                let px = x as f64 + 0.5;
                let w0 = edge(b.0, b.1, c.0, c.1, px, py);
                let w1 = edge(c.0, c.1, a.0, a.1, px, py);
                let w2 = edge(a.0, a.1, b.0, b.1, px, py);
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let inv_z = (w0 / a.2 + w1 / b.2 + w2 / c.2) / signed;
                let k = y * w + x;
                if inv_z > depth[k] {
                    if depth[k] == 0.0 {
                        coverage += 1;
                    }
                    depth[k] = inv_z;
                    image.pixels[k] = Rgb(color, color, color);
                }
            }
        }
    }
    (image, coverage)
}

pub fn render(mesh: &Mesh, camera: &Camera, background: Rgb) -> Image {
    render_with_coverage(mesh, camera, background).0
}

/// Renders every camera against every background, camera-major.
pub fn render_views(mesh: &Mesh, cameras: &[Camera], backgrounds: &[Rgb]) -> Vec<Image> {
    let jobs: Vec<(Camera, Rgb)> = cameras
        .iter()
        .flat_map(|c| backgrounds.iter().map(move |b| (*c, *b)))
        .collect();
    jobs.par_iter().map(|(c, b)| render(mesh, c, *b)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Intersection over union; two empty masks count as identical.
    pub fn iou(&self, other: &Mask) -> Option<f64> {
        if self.width != other.width || self.height != other.height {
            return None;
        }
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        Some(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }

    /// Non-black pixels are set.
    pub fn from_image(image: &Image) -> Mask {
        silhouette(image, Rgb::BLACK)
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self
                .bits
                .iter()
                .map(|&b| if b { Rgb::WHITE } else { Rgb::BLACK })
                .collect(),
        }
    }
}

/// Pixels that differ from the background.
pub fn silhouette(image: &Image, background: Rgb) -> Mask {
    Mask {
        width: image.width,
        height: image.height,
        bits: image.pixels.iter().map(|&p| p != background).collect(),
    }
}
