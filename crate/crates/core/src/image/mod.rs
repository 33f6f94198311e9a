//! 8-bit raster images and the preprocessing used before the image encoder:
//! structured patch selection, background-aware scale augmentation and
//! MS-SSIM.

mod augment;
mod msssim;
mod patches;

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

pub use augment::{content_bbox, detect_background, scale_augment, AugmentParams, BoundingBox, DEFAULT_TOLERANCE};
pub use msssim::{ms_ssim, ssim_terms, GrayImage, MS_SSIM_WEIGHTS};
pub use patches::{structured_patches, PatchSet, PatchTag, NON_CENTER_CELLS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("image dimensions must be positive")]
    ZeroSize,
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("{width}x{height} is not divisible into a 3x3 grid")]
    NotDivisible { width: usize, height: usize },
    #[error("images differ in size: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("{width}x{height} is too small for {scales} scales (need at least {min} per side)")]
    TooSmall {
        width: usize,
        height: usize,
        scales: usize,
        min: usize,
    },
    #[error("scale count must be between 1 and 5")]
    Scales,
    #[error("scaled content box collapses below one pixel")]
    DegenerateScale,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Row-major interleaved 8-bit pixels, 1 (gray) or 3 (RGB) channels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl core::fmt::Debug for Image {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Image({}x{}x{})", self.width, self.height, self.channels)
    }
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroSize);
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(ImageError::BufferLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Every pixel set to `color` (length equals `channels`).
    pub fn filled(width: usize, height: usize, color: &[u8]) -> Result<Self, ImageError> {
        let channels = color.len();
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        let pixels = color.iter().copied().cycle().take(width * height * channels).collect();
        Self::new(width, height, channels, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.pixels[i..i + self.channels]
    }

    /// Luma `0.299R + 0.587G + 0.114B` (the value itself for gray images).
    pub fn gray_at(&self, x: usize, y: usize) -> f64 {
        let p = self.pixel(x, y);
        if self.channels == 1 {
            p[0] as f64
        } else {
            0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
        }
    }

    /// Single-channel copy with luma rounded to the nearest integer.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut pixels = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                pixels.push(libm::round(self.gray_at(x, y)).clamp(0.0, 255.0) as u8);
            }
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
        }
    }

    /// The `w × h` region whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image, ImageError> {
        if w == 0 || h == 0 {
            return Err(ImageError::ZeroSize);
        }
        if x + w > self.width || y + h > self.height {
            return Err(ImageError::InvalidParameter("crop exceeds image bounds"));
        }
        let c = self.channels;
        let mut pixels = Vec::with_capacity(w * h * c);
        for row in y..y + h {
            let start = (row * self.width + x) * c;
            pixels.extend_from_slice(&self.pixels[start..start + w * c]);
        }
        Image::new(w, h, c, pixels)
    }

    /// Copies `src` with its top-left corner at `(x, y)`. Same channel
    /// count required; must fit.
    pub fn paste(&mut self, src: &Image, x: usize, y: usize) -> Result<(), ImageError> {
        if src.channels != self.channels {
            return Err(ImageError::Channels(src.channels));
        }
        if x + src.width > self.width || y + src.height > self.height {
            return Err(ImageError::InvalidParameter("pasted image exceeds canvas"));
        }
        let c = self.channels;
        for row in 0..src.height {
            let dst = ((y + row) * self.width + x) * c;
            let s = row * src.width * c;
            self.pixels[dst..dst + src.width * c].copy_from_slice(&src.pixels[s..s + src.width * c]);
        }
        Ok(())
    }
}

/// Source sample positions for one output axis: left index, right index
/// and the weight of the right one. Pixel centers are aligned, and samples
/// beyond the border clamp to the edge pixel.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = libm::floor(pos) as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resampling to exactly `new_w × new_h`.
pub fn resize(img: &Image, new_w: usize, new_h: usize) -> Result<Image, ImageError> {
    if new_w == 0 || new_h == 0 {
        return Err(ImageError::ZeroSize);
    }
    if new_w == img.width && new_h == img.height {
        return Ok(img.clone());
    }
    let xs = axis_taps(img.width, new_w);
    let ys = axis_taps(img.height, new_h);
    let c = img.channels;
    let mut pixels = vec![0u8; new_w * new_h * c];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..c {
                let at = |x: usize, y: usize| img.pixels[(y * img.width + x) * c + ch] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels[(oy * new_w + ox) * c + ch] = libm::round(v).clamp(0.0, 255.0) as u8;
            }
        }
    }
    Image::new(new_w, new_h, c, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, c, (0..w * h * c).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn construction_checks() {
        assert_eq!(Image::new(0, 2, 1, vec![]).unwrap_err(), ImageError::ZeroSize);
        assert_eq!(Image::new(1, 1, 2, vec![0, 0]).unwrap_err(), ImageError::Channels(2));
        assert!(matches!(Image::new(2, 2, 3, vec![0; 11]), Err(ImageError::BufferLength { .. })));
        let img = Image::filled(2, 1, &[1, 2, 3]).unwrap();
        assert_eq!(img.pixels(), &[1, 2, 3, 1, 2, 3]);
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = random_image(13, 7, 3, 1);
        assert_eq!(resize(&img, 13, 7).unwrap(), img);
    }

    #[test]
    fn checkerboard_to_one_pixel_is_rounded_mean() {
        let img = Image::new(2, 2, 1, vec![0, 255, 255, 0]).unwrap();
        // mean 127.5 rounds half away from zero
        assert_eq!(resize(&img, 1, 1).unwrap().pixels(), &[128]);
        let img = Image::new(2, 2, 1, vec![10, 20, 30, 41]).unwrap();
        assert_eq!(resize(&img, 1, 1).unwrap().pixels(), &[25]);
    }

    #[test]
    fn constant_survives_down_and_up() {
        let img = Image::filled(30, 21, &[17, 200, 3]).unwrap();
        let small = resize(&img, 7, 4).unwrap();
        let back = resize(&small, 30, 21).unwrap();
        assert_eq!(back, img);
        assert_eq!(resize(&img, 0, 3).unwrap_err(), ImageError::ZeroSize);
    }

    #[test]
    fn upscale_interpolates_linearly() {
        let img = Image::new(2, 1, 1, vec![0, 100]).unwrap();
        // centers at 0.5 and 1.5 in source space; outputs at 0.25·k − 0.25
        let up = resize(&img, 4, 1).unwrap();
        assert_eq!(up.pixels(), &[0, 25, 75, 100]);
    }

    #[test]
    fn crop_paste_and_gray() {
        let img = random_image(8, 6, 3, 2);
        let c = img.crop(2, 1, 3, 4).unwrap();
        assert_eq!(c.pixel(0, 0), img.pixel(2, 1));
        assert_eq!(c.pixel(2, 3), img.pixel(4, 4));
        let mut canvas = Image::filled(8, 6, &[0, 0, 0]).unwrap();
        canvas.paste(&c, 2, 1).unwrap();
        assert_eq!(canvas.crop(2, 1, 3, 4).unwrap(), c);
        assert!(img.crop(6, 0, 3, 1).is_err());
        let g = Image::new(1, 1, 3, vec![255, 0, 0]).unwrap().to_gray();
        assert_eq!(g.pixels(), &[76]);
    }
}
