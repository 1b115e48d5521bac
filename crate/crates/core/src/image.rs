//! Float RGB images in `[0, 1]`, stored row-major with interleaved channels.

use std::path::Path;

use candle_core::{Device, Tensor};
use image::{imageops, ImageBuffer, Rgb32FImage, RgbImage as Rgb8Image};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "raw buffer of {} values does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(height, width, 3)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, 3)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Ingestion {
                path: path.to_path_buf(),
                reason: "file not found".into(),
            });
        }
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn from_rgb8(img: &Rgb8Image) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    pub fn to_rgb8(&self) -> Rgb8Image {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    /// Bilinear (triangle filter) resampling.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let src: Rgb32FImage =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length matches dimensions");
        let dst = imageops::resize(
            &src,
            width as u32,
            height as u32,
            imageops::FilterType::Triangle,
        );
        let data = dst.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn upscale_nearest(&self, factor: usize) -> Self {
        Self::from_fn(self.width * factor, self.height * factor, |x, y| {
            self.get(x / factor, y / factor)
        })
    }

    /// `(3, H, W)` f32 tensor.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (self.height, self.width, 3), device)?;
        Ok(t.permute((2, 0, 1))?.contiguous()?)
    }

    /// Accepts `(3, H, W)` or `(1, 3, H, W)`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            4 => t.squeeze(0)?,
            3 => t.clone(),
            r => return Err(Error::Shape(format!("expected an image tensor, got rank {r}"))),
        };
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let data = t
            .to_dtype(candle_core::DType::F32)?
            .permute((1, 2, 0))?
            .flatten_all()?
            .to_vec1::<f32>()?;
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    /// Stack images into a `(N, 3, H, W)` batch.
    pub fn batch_to_tensor(images: &[&RgbImage], device: &Device) -> Result<Tensor> {
        let tensors = images
            .iter()
            .map(|im| im.to_tensor(device))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&tensors, 0)?)
    }

    pub fn batch_from_tensor(t: &Tensor) -> Result<Vec<RgbImage>> {
        let n = t.dim(0)?;
        (0..n).map(|i| Self::from_tensor(&t.get(i)?)).collect()
    }

    /// Tile equally sized images into `rows x cols`, row-major, with a gutter.
    pub fn grid(tiles: &[&RgbImage], cols: usize, gutter: usize) -> Result<Self> {
        let first = tiles
            .first()
            .ok_or_else(|| Error::Shape("cannot build a grid from zero images".into()))?;
        let (tw, th) = (first.width, first.height);
        if tiles.iter().any(|t| t.width != tw || t.height != th) {
            return Err(Error::Shape("grid tiles must share dimensions".into()));
        }
        let rows = tiles.len().div_ceil(cols);
        let width = cols * tw + (cols + 1) * gutter;
        let height = rows * th + (rows + 1) * gutter;
        let mut out = Self::filled(width, height, [1.0, 1.0, 1.0]);
        for (k, tile) in tiles.iter().enumerate() {
            let ox = gutter + (k % cols) * (tw + gutter);
            let oy = gutter + (k / cols) * (th + gutter);
            for y in 0..th {
                for x in 0..tw {
                    out.set(ox + x, oy + y, tile.get(x, y));
                }
            }
        }
        Ok(out)
    }
}
