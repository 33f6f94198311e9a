use alloc::vec;
use alloc::vec::Vec;

use super::{Image, ImageError};

/// Per-scale exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Luma plane in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn from_image(img: &Image) -> Self {
        let mut data = Vec::with_capacity(img.width() * img.height());
        for y in 0..img.height() {
            for x in 0..img.width() {
                data.push(img.gray_at(x, y));
            }
        }
        Self {
            width: img.width(),
            height: img.height(),
            data,
        }
    }

    fn map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// 2×2 box average; odd trailing rows and columns are dropped.
    fn downsample(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let at = |dx: usize, dy: usize| self.data[(2 * y + dy) * self.width + 2 * x + dx];
                data.push((at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) / 4.0);
            }
        }
        Self { width: w, height: h, data }
    }

    /// Separable Gaussian filter over positions where the window fits.
    fn filter_valid(&self, kernel: &[f64]) -> Self {
        let k = kernel.len();
        let (ow, oh) = (self.width + 1 - k, self.height + 1 - k);
        let mut rows = vec![0.0; ow * self.height];
        for y in 0..self.height {
            let src = &self.data[y * self.width..(y + 1) * self.width];
            for x in 0..ow {
                rows[y * ow + x] = kernel.iter().zip(&src[x..x + k]).map(|(a, b)| a * b).sum();
            }
        }
        let mut data = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                data[y * ow + x] = kernel.iter().enumerate().map(|(i, w)| w * rows[(y + i) * ow + x]).sum();
            }
        }
        Self {
            width: ow,
            height: oh,
            data,
        }
    }
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = libm::exp(-d * d / (2.0 * SIGMA * SIGMA));
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean contrast-structure term and mean SSIM at one scale.
pub fn ssim_terms(a: &GrayImage, b: &GrayImage) -> (f64, f64) {
    let k = gaussian_kernel();
    let mu1 = a.filter_valid(&k);
    let mu2 = b.filter_valid(&k);
    let e11 = a.map(a, |x, y| x * y).filter_valid(&k);
    let e22 = b.map(b, |x, y| x * y).filter_valid(&k);
    let e12 = a.map(b, |x, y| x * y).filter_valid(&k);
    let n = mu1.data.len();
    let mut cs = Vec::with_capacity(n);
    let mut ssim = Vec::with_capacity(n);
    for i in 0..n {
        let (m1, m2) = (mu1.data[i], mu2.data[i]);
        let s11 = e11.data[i] - m1 * m1;
        let s22 = e22.data[i] - m2 * m2;
        let s12 = e12.data[i] - m1 * m2;
        let c = (2.0 * s12 + C2) / (s11 + s22 + C2);
        let l = (2.0 * m1 * m2 + C1) / (m1 * m1 + m2 * m2 + C1);
        cs.push(c);
        ssim.push(l * c);
    }
    (mean(&cs), mean(&ssim))
}

/// Multi-scale SSIM on luma. Contrast-structure enters at every scale and
/// luminance only at the coarsest; fewer than 5 scales use the leading
/// exponents rescaled to sum to one. Negative per-scale terms count as 0.
pub fn ms_ssim(a: &Image, b: &Image, num_scales: usize) -> Result<f64, ImageError> {
    if !(1..=5).contains(&num_scales) {
        return Err(ImageError::Scales);
    }
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(ImageError::SizeMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    let min = (1usize << (num_scales - 1)) * WINDOW;
    if a.width() < min || a.height() < min {
        return Err(ImageError::TooSmall {
            width: a.width(),
            height: a.height(),
            scales: num_scales,
            min,
        });
    }
    let weights = &MS_SSIM_WEIGHTS[..num_scales];
    let total: f64 = weights.iter().sum();
    let mut x = GrayImage::from_image(a);
    let mut y = GrayImage::from_image(b);
    let mut score = 1.0;
    for (s, w) in weights.iter().enumerate() {
        let (cs, ssim) = ssim_terms(&x, &y);
        let term = if s + 1 == num_scales { ssim } else { cs };
        score *= libm::pow(term.max(0.0), w / total);
        if s + 1 < num_scales {
            x = x.downsample();
            y = y.downsample();
        }
    }
    Ok(score)
}
