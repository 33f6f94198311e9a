use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{resize, Image, ImageError};

/// Gray-level difference (0..255 scale) above which a pixel counts as
/// content rather than background.
pub const DEFAULT_TOLERANCE: f64 = 10.0;

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn full(img: &Image) -> Self {
        Self {
            x_min: 0,
            y_min: 0,
            x_max: img.width() - 1,
            y_max: img.height() - 1,
        }
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn crop(&self, img: &Image) -> Result<Image, ImageError> {
        img.crop(self.x_min, self.y_min, self.width(), self.height())
    }
}

/// Color of the background: the corner pixel whose rounded gray value is
/// most common among the four corners (earliest of top-left, top-right,
/// bottom-left, bottom-right on ties).
pub fn detect_background(img: &Image) -> Vec<u8> {
    let (w, h) = (img.width() - 1, img.height() - 1);
    let corners = [(0, 0), (w, 0), (0, h), (w, h)];
    let grays = corners.map(|(x, y)| libm::round(img.gray_at(x, y)) as i32);
    let mut best = 0;
    let mut best_count = 0;
    for i in 0..4 {
        let count = grays.iter().filter(|&&g| g == grays[i]).count();
        if count > best_count {
            best = i;
            best_count = count;
        }
    }
    let (x, y) = corners[best];
    img.pixel(x, y).to_vec()
}

fn gray_of(color: &[u8]) -> f64 {
    if color.len() == 1 {
        color[0] as f64
    } else {
        0.299 * color[0] as f64 + 0.587 * color[1] as f64 + 0.114 * color[2] as f64
    }
}

/// Tight box around every pixel whose gray value differs from the
/// background's by more than `tolerance`; the whole image when there is
/// none.
pub fn content_bbox(img: &Image, tolerance: f64) -> BoundingBox {
    let bg = gray_of(&detect_background(img));
    let mut bbox: Option<BoundingBox> = None;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if (img.gray_at(x, y) - bg).abs() <= tolerance {
                continue;
            }
            bbox = Some(match bbox {
                None => BoundingBox {
                    x_min: x,
                    y_min: y,
                    x_max: x,
                    y_max: y,
                },
                Some(b) => BoundingBox {
                    x_min: b.x_min.min(x),
                    y_min: b.y_min,
                    x_max: b.x_max.max(x),
                    y_max: y,
                },
            });
        }
    }
    bbox.unwrap_or_else(|| BoundingBox::full(img))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Augment only when the seeded draw `u ~ U(0,1)` falls below this.
    pub apply_threshold: f64,
    /// Content size as a fraction of the largest size that still fits.
    pub scale_range: (f64, f64),
    pub tolerance: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            apply_threshold: 0.3,
            scale_range: (0.6, 1.0),
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<(), ImageError> {
        if !(0.0..=1.0).contains(&self.apply_threshold) {
            return Err(ImageError::InvalidParameter("apply_threshold must lie in [0, 1]"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(ImageError::InvalidParameter("scale_range must satisfy 0 < lo <= hi <= 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(ImageError::InvalidParameter("tolerance must be >= 0"));
        }
        Ok(())
    }
}

/// With probability `apply_threshold`, cuts out the content box, rescales it
/// to a random fraction of the largest size that fits the canvas, and
/// centers it on a fresh canvas of the original size filled with the
/// background color. Otherwise returns the input unchanged.
pub fn scale_augment(img: &Image, seed: u64, params: &AugmentParams) -> Result<Image, ImageError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.random();
    if u >= params.apply_threshold {
        return Ok(img.clone());
    }
    let bbox = content_bbox(img, params.tolerance);
    let content = bbox.crop(img)?;
    let (lo, hi) = params.scale_range;
    let s = if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let (bw, bh) = (bbox.width() as f64, bbox.height() as f64);
    let fit = (img.width() as f64 / bw).min(img.height() as f64 / bh);
    let factor = s * fit;
    let nw = (libm::round(bw * factor) as usize).min(img.width());
    let nh = (libm::round(bh * factor) as usize).min(img.height());
    if nw == 0 || nh == 0 {
        return Err(ImageError::DegenerateScale);
    }
    let scaled = resize(&content, nw, nh)?;
    let mut canvas = Image::filled(img.width(), img.height(), &detect_background(img))?;
    canvas.paste(&scaled, (img.width() - nw) / 2, (img.height() - nh) / 2)?;
    Ok(canvas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_on_canvas(w: usize, h: usize, bg: [u8; 3], fg: [u8; 3], b: BoundingBox) -> Image {
        let mut img = Image::filled(w, h, &bg).unwrap();
        for y in b.y_min..=b.y_max {
            for x in b.x_min..=b.x_max {
                img.pixel_mut(x, y).copy_from_slice(&fg);
            }
        }
        img
    }

    #[test]
    fn black_square_on_white() {
        let b = BoundingBox {
            x_min: 25,
            y_min: 25,
            x_max: 74,
            y_max: 74,
        };
        let img = rect_on_canvas(100, 100, [255; 3], [0; 3], b);
        assert_eq!(content_bbox(&img, DEFAULT_TOLERANCE), b);
        assert_eq!(detect_background(&img), [255, 255, 255]);
    }

    #[test]
    fn blank_image_gives_full_box() {
        let img = Image::filled(17, 9, &[40]).unwrap();
        assert_eq!(content_bbox(&img, DEFAULT_TOLERANCE), BoundingBox::full(&img));
    }

    #[test]
    fn faint_content_is_ignored() {
        let b = BoundingBox {
            x_min: 2,
            y_min: 2,
            x_max: 4,
            y_max: 4,
        };
        let img = rect_on_canvas(8, 8, [200; 3], [195; 3], b);
        assert_eq!(content_bbox(&img, DEFAULT_TOLERANCE), BoundingBox::full(&img));
        assert_eq!(content_bbox(&img, 2.0), b);
    }

    #[test]
    fn modal_corner_wins() {
        // one corner covered by content
        let b = BoundingBox {
            x_min: 0,
            y_min: 0,
            x_max: 3,
            y_max: 2,
        };
        let img = rect_on_canvas(10, 10, [250; 3], [10, 20, 30], b);
        assert_eq!(detect_background(&img), [250; 3]);
        assert_eq!(content_bbox(&img, DEFAULT_TOLERANCE), b);
    }

    #[test]
    fn crop_to_box_is_idempotent() {
        // a disc leaves background in the crop's corners
        let mut img = Image::filled(40, 30, &[255]).unwrap();
        for y in 0..30 {
            for x in 0..40 {
                let (dx, dy) = (x as f64 - 20.0, y as f64 - 14.0);
                if dx * dx + dy * dy <= 64.0 {
                    img.pixel_mut(x, y)[0] = 0;
                }
            }
        }
        let b = content_bbox(&img, DEFAULT_TOLERANCE);
        let crop = b.crop(&img).unwrap();
        assert_eq!(content_bbox(&crop, DEFAULT_TOLERANCE), BoundingBox::full(&crop));
    }

    fn always() -> AugmentParams {
        AugmentParams {
            apply_threshold: 1.0,
            ..AugmentParams::default()
        }
    }

    #[test]
    fn bypass_returns_input() {
        let img = rect_on_canvas(
            20,
            20,
            [255; 3],
            [0; 3],
            BoundingBox {
                x_min: 3,
                y_min: 3,
                x_max: 9,
                y_max: 9,
            },
        );
        let never = AugmentParams {
            apply_threshold: 0.0,
            ..AugmentParams::default()
        };
        for seed in 0..20 {
            assert_eq!(scale_augment(&img, seed, &never).unwrap(), img);
        }
    }

    #[test]
    fn full_scale_of_border_touching_object_is_a_round_trip() {
        // spans the full width, centered vertically
        let b = BoundingBox {
            x_min: 0,
            y_min: 10,
            x_max: 59,
            y_max: 29,
        };
        let mut img = rect_on_canvas(60, 40, [255; 3], [30, 60, 90], b);
        // texture inside the object
        for x in 0..60 {
            img.pixel_mut(x, 20).copy_from_slice(&[200, 10, 10]);
        }
        let params = AugmentParams {
            scale_range: (1.0, 1.0),
            ..always()
        };
        let out = scale_augment(&img, 3, &params).unwrap();
        let mad: f64 = out
            .pixels()
            .iter()
            .zip(img.pixels())
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum::<f64>()
            / img.pixels().len() as f64;
        assert!(mad <= 2.0, "{mad}");
    }

    #[test]
    fn composite_keeps_canvas_and_fills_background() {
        let b = BoundingBox {
            x_min: 5,
            y_min: 8,
            x_max: 24,
            y_max: 17,
        };
        let img = rect_on_canvas(50, 40, [240, 240, 240], [0, 0, 200], b);
        for seed in 0..50 {
            let out = scale_augment(&img, seed, &always()).unwrap();
            assert_eq!((out.width(), out.height()), (50, 40));
            let nb = content_bbox(&out, DEFAULT_TOLERANCE);
            // aspect ratio of the 20×10 object survives rounding
            let ratio = nb.width() as f64 / nb.height() as f64;
            assert!((ratio - 2.0).abs() <= 2.0 / nb.height() as f64 + 1e-9, "{ratio}");
            // scale between 0.6 and 1.0 of the 2.5× maximal fit
            assert!(nb.width() >= 29 && nb.width() <= 50);
            for y in 0..40 {
                for x in 0..50 {
                    let inside = (nb.x_min..=nb.x_max).contains(&x) && (nb.y_min..=nb.y_max).contains(&y);
                    if !inside {
                        assert_eq!(out.pixel(x, y), &[240, 240, 240]);
                    }
                }
            }
        }
    }

    #[test]
    fn seeded_and_validated() {
        let img = rect_on_canvas(
            30,
            30,
            [255; 3],
            [0; 3],
            BoundingBox {
                x_min: 1,
                y_min: 1,
                x_max: 5,
                y_max: 5,
            },
        );
        assert_eq!(scale_augment(&img, 7, &always()).unwrap(), scale_augment(&img, 7, &always()).unwrap());
        let bad = AugmentParams {
            scale_range: (0.5, 1.5),
            ..always()
        };
        assert!(scale_augment(&img, 0, &bad).is_err());
    }
}
