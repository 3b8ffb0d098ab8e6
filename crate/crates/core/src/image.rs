//! 8-bit RGB/RGBA raster images.

use std::path::Path;

use image::{ImageBuffer, Rgb, Rgba};

use crate::coord_table::Dims;
use crate::error::{Error, Result};

/// Row-major 8-bit image with 3 (RGB) or 4 (RGBA) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimension(format!("image {height}x{width}")));
        }
        if channels != 3 && channels != 4 {
            return Err(Error::parameter(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::mismatch(format!(
                "pixel buffer has {} bytes, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Image filled with one color. `color` must have `channels` entries.
    pub fn filled(height: usize, width: usize, color: &[u8]) -> Result<Self> {
        let data = color.iter().copied().cycle().take(height * width * color.len()).collect();
        Image::new(height, width, color.len(), data)
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize) -> [u8; 4]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c)[..channels]);
            }
        }
        Image::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> Dims {
        (self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [u8] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Alpha of a pixel; 255 for RGB images.
    #[inline]
    pub fn alpha(&self, row: usize, col: usize) -> u8 {
        if self.channels == 4 {
            self.pixel(row, col)[3]
        } else {
            255
        }
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
        Image {
            channels: 3,
            data,
            ..*self
        }
    }

    /// Copy of the window at (`top`, `left`) with the given size.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::parameter(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in top..top + height {
            let start = (r * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Image::new(height, width, self.channels, data)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let dynimg = image::open(path).map_err(|e| Error::from(e).at_path(path))?;
        let img = if dynimg.color().has_alpha() {
            let buf = dynimg.to_rgba8();
            Image::new(buf.height() as usize, buf.width() as usize, 4, buf.into_raw())
        } else {
            let buf = dynimg.to_rgb8();
            Image::new(buf.height() as usize, buf.width() as usize, 3, buf.into_raw())
        };
        img.map_err(|e| e.at_path(path))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = if self.channels == 4 {
            ImageBuffer::<Rgba<u8>, _>::from_raw(w, h, self.data.clone())
                .expect("buffer length checked at construction")
                .save_with_format(path, image::ImageFormat::Png)
        } else {
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, self.data.clone())
                .expect("buffer length checked at construction")
                .save_with_format(path, image::ImageFormat::Png)
        };
        res.map_err(|e| Error::from(e).at_path(path))
    }
}
