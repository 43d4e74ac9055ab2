//! Pixel-space containers, resampling, RGBA assembly, PNG I/O and compositing.
//!
//! RGB lives in `[-1, 1]`, alpha in `[0, 1]`. PNG bytes map RGB through
//! `round(255 * (v + 1) / 2)` and alpha through `round(255 * a)`, rounding
//! half away from zero. Alpha is stored straight (not premultiplied).

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgba};

use crate::error::{Error, Result};

/// Row-major 2-D grid of `f32`, the common carrier for attention heatmaps and alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ScalarMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "map must be at least 1x1, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::shape(height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn ensure_dims(&self, other: &ScalarMap) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Min-max normalisation to `[0, 1]`. A constant map carries no
    /// localisation signal and normalises to all zeros.
    pub fn minmax_normalized(&self) -> ScalarMap {
        let (lo, hi) = self.min_max();
        let range = hi - lo;
        let data = if range > 0.0 {
            self.data
                .iter()
                .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
                .collect()
        } else {
            vec![0.0; self.data.len()]
        };
        ScalarMap { data, ..*self }
    }

    pub fn zip_map(&self, other: &ScalarMap, f: impl Fn(f32, f32) -> f32) -> Result<ScalarMap> {
        self.ensure_dims(other)?;
        Ok(ScalarMap {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        })
    }
}

/// Bilinear resampling with half-pixel centres (align-corners = false) and edge clamping.
pub fn bilinear_resize(map: &ScalarMap, out_h: usize, out_w: usize) -> Result<ScalarMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be non-empty, got {out_h}x{out_w}"
        )));
    }
    if map.dims() == (out_h, out_w) {
        return Ok(map.clone());
    }
    let ys = axis_taps(map.height, out_h);
    let xs = axis_taps(map.width, out_w);
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = map.get(y0, x0) as f64 * (1.0 - fx) + map.get(y0, x1) as f64 * fx;
            let bottom = map.get(y1, x0) as f64 * (1.0 - fx) + map.get(y1, x1) as f64 * fx;
            data.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    Ok(ScalarMap {
        height: out_h,
        width: out_w,
        data,
    })
}

/// Source index pair and interpolation fraction for each output coordinate.
pub(crate) fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Interleaved `h x w x 3` RGB in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image must be at least 1x1, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::shape(height * width * 3, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "rgb value {v} outside [-1, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x).map(|v| v.clamp(-1.0, 1.0)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn flip_horizontal(&self) -> RgbImage {
        RgbImage::from_fn(self.height, self.width, |y, x| {
            self.pixel(y, self.width - 1 - x)
        })
    }

    pub fn flip_vertical(&self) -> RgbImage {
        RgbImage::from_fn(self.height, self.width, |y, x| {
            self.pixel(self.height - 1 - y, x)
        })
    }
}

/// Interleaved `h x w x 4`: RGB in `[-1, 1]`, straight alpha in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbaImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RgbaImage {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 4] {
        let i = (y * self.width + x) * 4;
        [
            self.data[i],
            self.data[i + 1],
            self.data[i + 2],
            self.data[i + 3],
        ]
    }

    pub fn rgb(&self) -> RgbImage {
        RgbImage::from_fn(self.height, self.width, |y, x| {
            let [r, g, b, _] = self.pixel(y, x);
            [r, g, b]
        })
    }

    pub fn alpha(&self) -> ScalarMap {
        ScalarMap::from_fn(self.height, self.width, |y, x| self.pixel(y, x)[3])
    }
}

pub fn assemble_rgba(rgb: &RgbImage, alpha: &ScalarMap) -> Result<RgbaImage> {
    if rgb.dims() != alpha.dims() {
        return Err(Error::shape(rgb.dims(), alpha.dims()));
    }
    if let Some(a) = alpha.data().iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidArgument(format!(
            "alpha value {a} outside [0, 1]"
        )));
    }
    let data = rgb
        .data
        .chunks_exact(3)
        .zip(alpha.data())
        .flat_map(|(px, &a)| [px[0], px[1], px[2], a])
        .collect();
    Ok(RgbaImage {
        height: rgb.height,
        width: rgb.width,
        data,
    })
}

/// `a * fg + (1 - a) * bg` per pixel.
pub fn composite_over(fg: &RgbaImage, bg: &RgbImage) -> Result<RgbImage> {
    if (fg.height, fg.width) != bg.dims() {
        return Err(Error::shape((fg.height, fg.width), bg.dims()));
    }
    let data = fg
        .data
        .chunks_exact(4)
        .zip(bg.data.chunks_exact(3))
        .flat_map(|(f, b)| {
            let a = f[3];
            [0, 1, 2].map(|c| (a * f[c] + (1.0 - a) * b[c]).clamp(-1.0, 1.0))
        })
        .collect();
    Ok(RgbImage {
        height: bg.height,
        width: bg.width,
        data,
    })
}

pub fn rgb_to_byte(v: f32) -> u8 {
    (255.0 * (v.clamp(-1.0, 1.0) + 1.0) / 2.0).round() as u8
}

pub fn unit_to_byte(a: f32) -> u8 {
    (255.0 * a.clamp(0.0, 1.0)).round() as u8
}

pub fn byte_to_rgb(b: u8) -> f32 {
    b as f32 / 255.0 * 2.0 - 1.0
}

pub fn byte_to_unit(b: u8) -> f32 {
    b as f32 / 255.0
}

pub fn rgba_to_bytes(img: &RgbaImage) -> Vec<u8> {
    img.data
        .chunks_exact(4)
        .flat_map(|p| {
            [
                rgb_to_byte(p[0]),
                rgb_to_byte(p[1]),
                rgb_to_byte(p[2]),
                unit_to_byte(p[3]),
            ]
        })
        .collect()
}

/// Writes an 8-bit straight-alpha RGBA PNG.
pub fn write_png(img: &RgbaImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Rgba<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, rgba_to_bytes(img))
            .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| png_error(path, source))
}

pub fn write_rgb_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let opaque = assemble_rgba(img, &ScalarMap::filled(img.height, img.width, 1.0))?;
    write_png(&opaque, path)
}

/// Reads any PNG the decoder understands as RGBA.
pub fn read_png(path: impl AsRef<Path>) -> Result<RgbaImage> {
    let path = path.as_ref();
    let decoded = image::open(path)
        .map_err(|source| png_error(path, source))?
        .to_rgba8();
    let (w, h) = decoded.dimensions();
    let data = decoded
        .pixels()
        .flat_map(|p| {
            let [r, g, b, a] = p.0;
            [
                byte_to_rgb(r),
                byte_to_rgb(g),
                byte_to_rgb(b),
                byte_to_unit(a),
            ]
        })
        .collect();
    Ok(RgbaImage {
        height: h as usize,
        width: w as usize,
        data,
    })
}

/// 8-bit grayscale heatmap of a `[0, 1]` map.
pub fn write_heatmap(map: &ScalarMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = map.data.iter().map(|&v| unit_to_byte(v)).collect();
    write_gray(map.width, map.height, bytes, path)
}

pub(crate) fn write_gray(width: usize, height: usize, bytes: Vec<u8>, path: &Path) -> Result<()> {
    let buf: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(width as u32, height as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| png_error(path, source))
}

fn png_error(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Png {
            path: path.to_path_buf(),
            source,
        },
    }
}
