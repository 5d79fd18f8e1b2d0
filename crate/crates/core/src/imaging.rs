//! RGB images as `f32` grids in `[0, 1]`, plus the resize/crop/patchify steps
//! the encoders need.

use std::path::Path;

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb};

use crate::audit;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel input standardization, the usual CLIP constants.
pub const PIXEL_MEAN: [f64; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const PIXEL_STD: [f64; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    /// Row-major interleaved RGB.
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(Error::shape(
                "image",
                format!("{width}x{height}x3 pixels"),
                format!("{} values", pixels.len()),
            ));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Image> {
        if x + width > self.width || y + height > self.height || width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "crop {width}x{height}+{x}+{y} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(width * height * 3);
        for row in y..y + height {
            let start = (row * self.width + x) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + width * 3]);
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    /// Bilinear resize.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
                .expect("buffer size checked at construction");
        let out = image::imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        Image {
            width,
            height,
            pixels: out.into_raw(),
        }
    }

    /// Scales the shorter side to `side`, then takes the centered square.
    pub fn fit_square(&self, side: usize) -> Image {
        if self.width == side && self.height == side {
            return self.clone();
        }
        let scale = side as f64 / self.width.min(self.height) as f64;
        let w = ((self.width as f64 * scale).round() as usize).max(side);
        let h = ((self.height as f64 * scale).round() as usize).max(side);
        let resized = self.resize(w, h);
        resized
            .crop((w - side) / 2, (h - side) / 2, side, side)
            .expect("centered crop fits")
    }

    /// Splits a square image into a `grid × grid` patch matrix, one flattened
    /// RGB patch per row, in raster order. Channels are standardized with
    /// [`PIXEL_MEAN`] and [`PIXEL_STD`].
    pub fn patches(&self, grid: usize) -> Result<Tensor> {
        if self.width != self.height || grid == 0 || self.width % grid != 0 {
            return Err(Error::shape(
                "patchify",
                format!("square image with side divisible by {grid}"),
                format!("{}x{}", self.width, self.height),
            ));
        }
        let p = self.width / grid;
        let mut data = Vec::with_capacity(self.pixels.len());
        for gy in 0..grid {
            for gx in 0..grid {
                for y in gy * p..(gy + 1) * p {
                    let start = (y * self.width + gx * p) * 3;
                    data.extend(
                        self.pixels[start..start + p * 3]
                            .iter()
                            .enumerate()
                            .map(|(i, &v)| (v as f64 - PIXEL_MEAN[i % 3]) / PIXEL_STD[i % 3]),
                    );
                }
            }
        }
        Tensor::from_vec(grid * grid, p * p * 3, data)
    }

    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let raw = self
            .pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("size")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = audit::read(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Image::new(w as usize, h as usize, pixels)
}
