//! Synthetic low-light degradation and procedural test scenes.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Result};
use crate::image::Image;
use crate::rng::Prng;

/// `clamp(gain * in^gamma + N(0, sigma), 0, 1)`, noise drawn from `seed`.
pub fn synth_lowlight(img: &Image, gamma: f64, gain: f64, noise_sigma: f64, seed: u64) -> Result<Image> {
    ensure!(gamma > 0.0 && gamma.is_finite(), "gamma must be positive, got {}", gamma);
    ensure!(gain > 0.0 && gain <= 1.0, "gain must lie in (0, 1], got {}", gain);
    ensure!(
        noise_sigma >= 0.0 && noise_sigma.is_finite(),
        "noise sigma must be non-negative, got {}",
        noise_sigma
    );
    let mut rng = Prng::new(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("validated sigma");
    let pixels = img
        .pixels
        .iter()
        .map(|&v| {
            let mut out = gain * (v as f64).powf(gamma);
            if noise_sigma > 0.0 {
                out += noise.sample(&mut rng);
            }
            out.clamp(0.0, 1.0) as f32
        })
        .collect();
    Image::new(img.width, img.height, pixels)
}

/// A smooth colour gradient with a few flat rectangles, discs and a
/// sinusoidal texture.
pub fn procedural_scene(width: usize, height: usize, rng: &mut Prng) -> Image {
    let mut img = Image::filled(width, height, 0.0);
    let corner: Vec<[f64; 3]> = (0..4)
        .map(|_| [rng.random_range(0.2..0.9), rng.random_range(0.2..0.9), rng.random_range(0.2..0.9)])
        .collect();
    let freq = rng.random_range(0.05..0.3);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    for y in 0..height {
        for x in 0..width {
            let u = x as f64 / (width.max(2) - 1) as f64;
            let v = y as f64 / (height.max(2) - 1) as f64;
            let tex = 0.08 * ((x as f64 * freq + phase).sin() * (y as f64 * freq * 0.7).cos());
            for c in 0..3 {
                let top = corner[0][c] * (1.0 - u) + corner[1][c] * u;
                let bottom = corner[2][c] * (1.0 - u) + corner[3][c] * u;
                let val = top * (1.0 - v) + bottom * v + tex;
                img.set(x, y, c, val.clamp(0.0, 1.0) as f32);
            }
        }
    }
    for shape in 0..6 {
        let colour = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let r = rng.random_range(2.0..(width.min(height) as f64 / 4.0).max(3.0));
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if shape % 2 == 0 {
                    dx * dx + dy * dy <= r * r
                } else {
                    dx.abs() <= r && dy.abs() <= r * 0.6
                };
                if inside {
                    for (c, &val) in colour.iter().enumerate() {
                        img.set(x, y, c, val as f32);
                    }
                }
            }
        }
    }
    img
}
