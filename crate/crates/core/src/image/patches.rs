use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{resize, Image, ImageError};

/// Grid cells (row-major 0..9) other than the center, in the order
/// `PatchTag::Random` indexes them.
pub const NON_CENTER_CELLS: [usize; 8] = [0, 1, 2, 3, 5, 6, 7, 8];

const CENTER_CELL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatchTag {
    Center,
    /// Index into [`NON_CENTER_CELLS`].
    Random(u8),
    ResizedFull,
}

impl PatchTag {
    /// Grid cell this patch was cut from, if any.
    pub fn grid_cell(self) -> Option<usize> {
        match self {
            PatchTag::Center => Some(CENTER_CELL),
            PatchTag::Random(i) => Some(NON_CENTER_CELLS[i as usize]),
            PatchTag::ResizedFull => None,
        }
    }
}

/// Center cell, two distinct random outer cells, then the whole image at
/// cell size.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patches: [Image; 4],
    pub provenance: [PatchTag; 4],
}

impl PatchSet {
    /// Exactly one center, two distinct random cells, one resized full.
    pub fn is_well_formed(&self) -> bool {
        let tags = &self.provenance;
        let size = (self.patches[0].width(), self.patches[0].height());
        let same_size = self.patches.iter().all(|p| (p.width(), p.height()) == size);
        let randoms: Vec<u8> = tags
            .iter()
            .filter_map(|t| match t {
                PatchTag::Random(i) => Some(*i),
                _ => None,
            })
            .collect();
        same_size
            && tags.iter().filter(|t| **t == PatchTag::Center).count() == 1
            && tags.iter().filter(|t| **t == PatchTag::ResizedFull).count() == 1
            && randoms.len() == 2
            && randoms[0] != randoms[1]
            && randoms.iter().all(|&i| i < 8)
    }
}

fn cell(img: &Image, index: usize) -> Result<Image, ImageError> {
    let (cw, ch) = (img.width() / 3, img.height() / 3);
    img.crop((index % 3) * cw, (index / 3) * ch, cw, ch)
}

/// Cuts `img` into a 3×3 grid and keeps the center cell, two distinct outer
/// cells drawn uniformly from `seed`, and the full image resized to one
/// cell. Width and height must be multiples of 3.
pub fn structured_patches(img: &Image, seed: u64) -> Result<PatchSet, ImageError> {
    if !img.width().is_multiple_of(3) || !img.height().is_multiple_of(3) {
        return Err(ImageError::NotDivisible {
            width: img.width(),
            height: img.height(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..8u8);
    let mut second = rng.random_range(0..7u8);
    if second >= first {
        second += 1;
    }
    let (cw, ch) = (img.width() / 3, img.height() / 3);
    Ok(PatchSet {
        patches: [
            cell(img, CENTER_CELL)?,
            cell(img, NON_CENTER_CELLS[first as usize])?,
            cell(img, NON_CENTER_CELLS[second as usize])?,
            resize(img, cw, ch)?,
        ],
        provenance: [PatchTag::Center, PatchTag::Random(first), PatchTag::Random(second), PatchTag::ResizedFull],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::tests::random_image;

    #[test]
    fn three_pixel_image_center_is_middle_pixel() {
        let img = Image::new(3, 3, 1, (0..9).collect()).unwrap();
        let set = structured_patches(&img, 0).unwrap();
        assert_eq!(set.patches[0].pixels(), &[4]);
        assert!(set.is_well_formed());
        for (tag, patch) in set.provenance.iter().zip(&set.patches).skip(1).take(2) {
            assert_eq!(patch.pixels(), &[tag.grid_cell().unwrap() as u8]);
        }
    }

    #[test]
    fn patches_come_from_the_tagged_cells() {
        let img = random_image(30, 18, 3, 4);
        let set = structured_patches(&img, 9).unwrap();
        for (tag, patch) in set.provenance.iter().zip(&set.patches) {
            assert_eq!((patch.width(), patch.height()), (10, 6));
            match tag.grid_cell() {
                Some(c) => assert_eq!(*patch, img.crop((c % 3) * 10, (c / 3) * 6, 10, 6).unwrap()),
                None => assert_eq!(*patch, resize(&img, 10, 6).unwrap()),
            }
        }
    }

    #[test]
    fn seeded_and_validated() {
        let img = random_image(9, 9, 1, 5);
        assert_eq!(structured_patches(&img, 3).unwrap(), structured_patches(&img, 3).unwrap());
        let bad = random_image(10, 9, 1, 5);
        assert!(matches!(structured_patches(&bad, 0), Err(ImageError::NotDivisible { .. })));
    }

    #[test]
    fn outer_cells_are_uniform() {
        let img = random_image(3, 3, 1, 6);
        let mut counts = [0usize; 9];
        let trials = 10_000;
        for seed in 0..trials {
            let set = structured_patches(&img, seed).unwrap();
            assert!(set.is_well_formed());
            for t in &set.provenance[1..3] {
                counts[t.grid_cell().unwrap()] += 1;
            }
        }
        assert_eq!(counts[4], 0);
        for c in NON_CENTER_CELLS {
            let f = counts[c] as f64 / trials as f64;
            assert!((f - 0.25).abs() <= 0.02, "cell {c}: {f}");
        }
    }
}
