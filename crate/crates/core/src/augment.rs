//! Paired random crops, lossless flips and quarter-turn rotations, and
//! batch assembly.

use crate::dataset::ImagePair;
use crate::error::{ensure, Result};
use crate::image::Image;
use crate::rng::Prng;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Augment {
    Identity,
    FlipH,
    FlipV,
    Rot90,
    Rot180,
    Rot270,
}

impl Augment {
    pub const ALL: [Augment; 6] = [
        Augment::Identity,
        Augment::FlipH,
        Augment::FlipV,
        Augment::Rot90,
        Augment::Rot180,
        Augment::Rot270,
    ];

    pub fn apply(self, img: &Image) -> Image {
        match self {
            Augment::Identity => img.clone(),
            Augment::FlipH => remap(img, img.width, img.height, |x, y| (img.width - 1 - x, y)),
            Augment::FlipV => remap(img, img.width, img.height, |x, y| (x, img.height - 1 - y)),
            Augment::Rot90 => rot90(img),
            Augment::Rot180 => rot90(&rot90(img)),
            Augment::Rot270 => rot90(&rot90(&rot90(img))),
        }
    }
}

/// Build a `w x h` image whose pixel `(x, y)` is `img` at `src(x, y)`.
fn remap(img: &Image, w: usize, h: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Image {
    let mut out = Image::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x, y);
            for c in 0..3 {
                out.set(x, y, c, img.get(sx, sy, c));
            }
        }
    }
    out
}

/// Clockwise quarter turn.
pub fn rot90(img: &Image) -> Image {
    let h = img.height;
    remap(img, img.height, img.width, |x, y| (y, h - 1 - x))
}

pub fn crop(img: &Image, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
    ensure!(
        x0 + w <= img.width && y0 + h <= img.height,
        "crop {}x{} at ({}, {}) exceeds {}x{}",
        w,
        h,
        x0,
        y0,
        img.width,
        img.height
    );
    Ok(remap(img, w, h, |x, y| (x0 + x, y0 + y)))
}

/// The same `size x size` window from both images.
pub fn random_crop_pair(pair: &ImagePair, size: usize, rng: &mut Prng) -> Result<ImagePair> {
    let (w, h) = (pair.low.width, pair.low.height);
    ensure!(
        size > 0 && w >= size && h >= size && pair.high.width == w && pair.high.height == h,
        "cannot crop {}x{} from a {}x{} pair",
        size,
        size,
        w,
        h
    );
    let x0 = rng.below((w - size + 1) as u64) as usize;
    let y0 = rng.below((h - size + 1) as u64) as usize;
    Ok(ImagePair {
        low: crop(&pair.low, x0, y0, size, size)?,
        high: crop(&pair.high, x0, y0, size, size)?,
    })
}

/// One uniformly chosen flip/rotation, applied to both images.
pub fn augment_pair(pair: &ImagePair, rng: &mut Prng) -> ImagePair {
    let op = Augment::ALL[rng.below(6) as usize];
    ImagePair {
        low: op.apply(&pair.low),
        high: op.apply(&pair.high),
    }
}

/// Stack equally sized images into `[N, 3, H, W]`.
pub fn stack<T: Element>(images: &[&Image]) -> Result<Tensor<T>> {
    ensure!(!images.is_empty(), "cannot stack zero images");
    let (w, h) = (images[0].width, images[0].height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        ensure!(
            img.width == w && img.height == h,
            "batch images differ in size: {}x{} vs {}x{}",
            img.width,
            img.height,
            w,
            h
        );
        data.extend(img.to_tensor::<T>().into_data());
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered(w: usize, h: usize) -> Image {
        Image::new(w, h, (0..w * h * 3).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn four_quarter_turns() {
        let img = numbered(3, 2);
        let r = rot90(&img);
        assert_eq!((r.width, r.height), (2, 3));
        // Bottom-left pixel moves to the top-left.
        assert_eq!(r.get(0, 0, 0), img.get(0, 1, 0));
        assert_eq!(rot90(&rot90(&rot90(&r))), img);
        for op in Augment::ALL {
            if op == Augment::FlipH || op == Augment::FlipV || op == Augment::Rot180 {
                assert_eq!(op.apply(&op.apply(&img)), img);
            }
        }
    }

    #[test]
    fn crop_offsets_shared() {
        let mut low = Image::filled(20, 15, 0.0);
        let mut high = Image::filled(20, 15, 0.0);
        low.set(9, 7, 1, 1.0);
        high.set(9, 7, 1, 1.0);
        let pair = ImagePair::new(low, high).unwrap();
        let mut rng = Prng::new(5);
        let mut seen = 0;
        for _ in 0..50 {
            let c = random_crop_pair(&pair, 8, &mut rng).unwrap();
            assert_eq!(c.low, c.high);
            seen += c.low.pixels.iter().any(|&v| v == 1.0) as usize;
        }
        assert!(seen > 0);
        assert!(random_crop_pair(&pair, 16, &mut rng).is_err());
    }

    #[test]
    fn full_size_crop_is_identity() {
        let img = numbered(6, 6);
        let pair = ImagePair::new(img.clone(), img.clone()).unwrap();
        let c = random_crop_pair(&pair, 6, &mut Prng::new(0)).unwrap();
        assert_eq!(c.low, img);
    }

    #[test]
    fn augment_applies_same_op() {
        let a = numbered(4, 4);
        let b = Image::new(4, 4, a.pixels.iter().map(|v| v * 2.0).collect()).unwrap();
        let pair = ImagePair::new(a, b).unwrap();
        let mut rng = Prng::new(9);
        for _ in 0..20 {
            let out = augment_pair(&pair, &mut rng);
            let doubled: Vec<f32> = out.low.pixels.iter().map(|v| v * 2.0).collect();
            assert_eq!(doubled, out.high.pixels);
        }
    }

    #[test]
    fn stacking() {
        let a = Image::filled(2, 3, 0.25);
        let b = Image::filled(2, 3, 0.5);
        let t = stack::<f32>(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 3, 2]);
        assert_eq!(t.data()[18], 0.5);
        assert!(stack::<f32>(&[&a, &Image::filled(3, 3, 0.0)]).is_err());
    }
}
