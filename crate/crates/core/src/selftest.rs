//! Quick built-in checks: wavelet reconstruction, metric oracles,
//! determinism and shape contracts.

use crate::autograd::Tape;
use crate::config::DlenConfig;
use crate::error::Result;
use crate::image::Image;
use crate::metrics::{gaussian_taps, psnr_from_mse, ssim_global, ssim_windowed, WINDOW};
use crate::model::DlenModel;
use crate::rng::Prng;
use crate::tensor::{Element, Tensor};
use crate::wavelet::{dwt2d, haar_taps, idwt2d};

#[derive(Clone, Debug)]
pub struct SelfTestResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Max reconstruction error and relative energy mismatch of one Haar
/// analysis/synthesis round trip.
pub fn haar_round_trip<T: Element>(x: &Tensor<T>) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let (h0, h1) = haar_taps();
    let h0 = tape.constant(Tensor::from_f64_slice(&[2], &h0)?);
    let h1 = tape.constant(Tensor::from_f64_slice(&[2], &h1)?);
    let xv = tape.constant(x.clone());
    let sub = dwt2d(&xv, &h0, &h1)?;
    let back = idwt2d(&sub, &h0, &h1)?;
    let energy = |t: &Tensor<T>| t.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
    let band_energy: f64 = sub.as_array().iter().map(|b| energy(b.value())).sum();
    let e = energy(x);
    Ok((back.value().max_abs_diff(x), (e - band_energy).abs() / e))
}

fn random_even_tensor<T: Element>(rng: &mut Prng) -> Tensor<T> {
    let n = 1 + rng.below(2) as usize;
    let c = 1 + rng.below(4) as usize;
    let h = 2 * (1 + rng.below(8) as usize);
    let w = 2 * (1 + rng.below(8) as usize);
    Tensor::randn(&[n, c, h, w], 1.0, rng)
}

/// Direct per-window SSIM: every window position is summed explicitly.
pub fn ssim_windowed_reference(a: &Image, b: &Image, range: f64) -> f64 {
    let taps = gaussian_taps();
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for c in 0..3 {
        for y0 in 0..=a.height - WINDOW {
            for x0 in 0..=a.width - WINDOW {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..WINDOW {
                    for j in 0..WINDOW {
                        let w = taps[i] * taps[j];
                        mx += w * a.get(x0 + j, y0 + i, c) as f64;
                        my += w * b.get(x0 + j, y0 + i, c) as f64;
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..WINDOW {
                    for j in 0..WINDOW {
                        let w = taps[i] * taps[j];
                        let dx = a.get(x0 + j, y0 + i, c) as f64 - mx;
                        let dy = b.get(x0 + j, y0 + i, c) as f64 - my;
                        vx += w * dx * dx;
                        vy += w * dy * dy;
                        cxy += w * dx * dy;
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

fn random_image(w: usize, h: usize, rng: &mut Prng) -> Image {
    let t = Tensor::<f32>::rand_uniform(&[w * h * 3], 0.0, 1.0, rng);
    Image::new(w, h, t.into_data()).expect("sized")
}

fn wavelet_suite(rng: &mut Prng) -> Result<SelfTestResult> {
    let (mut pr64, mut pr32, mut energy) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = random_even_tensor::<f64>(rng);
        let (e, en) = haar_round_trip(&x)?;
        pr64 = pr64.max(e);
        energy = energy.max(en);
        pr32 = pr32.max(haar_round_trip(&x.cast::<f32>())?.0);
    }
    Ok(SelfTestResult {
        name: "wavelet-reconstruction",
        passed: pr64 < 1e-10 && pr32 < 1e-5 && energy < 1e-4,
        detail: format!("max err f64 {pr64:.2e}, f32 {pr32:.2e}, energy {energy:.2e}"),
    })
}

fn metric_suite(rng: &mut Prng) -> Result<SelfTestResult> {
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let a = random_image(16, 16, rng);
        let b = random_image(16, 16, rng);
        worst = worst.max((ssim_windowed(&a, &b, 1.0)? - ssim_windowed_reference(&a, &b, 1.0)).abs());
    }
    let p0 = psnr_from_mse(1.0, 1.0)?;
    let p20 = psnr_from_mse(0.01, 1.0)?;
    let a = Image::new(2, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0])?;
    let b = Image::new(2, 1, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0])?;
    let anti = ssim_global(&a, &b, 1.0)?;
    Ok(SelfTestResult {
        name: "metric-oracles",
        passed: worst < 1e-6 && p0.abs() < 1e-9 && (p20 - 20.0).abs() < 1e-9 && (anti + 0.9964).abs() < 1e-3,
        detail: format!("windowed vs direct {worst:.2e}, psnr {p0:.3}/{p20:.3} dB, anti-correlated ssim {anti:.4}"),
    })
}

fn determinism_suite(rng: &mut Prng) -> Result<SelfTestResult> {
    let cfg = DlenConfig::tiny(4, 4, 16, 16);
    let a = DlenModel::<f32>::init(cfg.clone(), 9)?;
    let b = DlenModel::<f32>::init(cfg, 9)?;
    let x = Tensor::rand_uniform(&[1, 3, 16, 16], 0.0, 1.0, rng);
    let ya = a.enhance(&x)?.i_en;
    let yb = b.enhance(&x)?.i_en;
    let same = a == b && ya.data().iter().zip(yb.data()).all(|(p, q)| p.to_bits() == q.to_bits());
    Ok(SelfTestResult {
        name: "determinism",
        passed: same,
        detail: format!("{} parameters, enhance outputs bitwise equal: {same}", a.num_params()),
    })
}

fn shape_suite(rng: &mut Prng) -> Result<SelfTestResult> {
    let cfg = DlenConfig::tiny(4, 4, 16, 16);
    let m = DlenModel::<f32>::init(cfg.clone(), 2)?;
    let mut ok = true;
    let mut notes = Vec::new();
    for s in [16, 24, 32] {
        let tape = Tape::new();
        let b = m.params.bind(&tape, false);
        let x = tape.constant(Tensor::rand_uniform(&[1, 3, s, s], 0.0, 1.0, rng));
        let f = m.forward(&b, &x)?;
        let latent = f.seb_latent.as_ref().map(|v| v.shape().to_vec());
        ok &= latent == Some(vec![1, 8 * cfg.seb_width, s / 8, s / 8]);
        ok &= f.i_en.shape() == [1, 3, s, s];
        notes.push(format!("{s}: {latent:?}"));
    }
    let odd = Tensor::rand_uniform(&[1, 3, 13, 21], 0.0, 1.0, rng);
    let out = m.enhance(&odd)?;
    ok &= out.i_en.shape() == [1, 3, 13, 21];
    notes.push(format!("13x21 -> {:?}", out.i_en.shape()));
    Ok(SelfTestResult {
        name: "shape-contracts",
        passed: ok,
        detail: notes.join(", "),
    })
}

pub fn run(seed: u64) -> Result<Vec<SelfTestResult>> {
    let mut rng = Prng::new(seed);
    Ok(vec![
        wavelet_suite(&mut rng)?,
        metric_suite(&mut rng)?,
        determinism_suite(&mut rng)?,
        shape_suite(&mut rng)?,
    ])
}
