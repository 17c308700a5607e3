//! MSE, PSNR and SSIM (global statistics and 11x11 Gaussian windows).

use std::fmt::Write as _;

use crate::error::{ensure, Result};
use crate::image::Image;

const K1: f64 = 0.01;
const K2: f64 = 0.03;
pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    ensure!(
        a.width == b.width && a.height == b.height,
        "image sizes differ: {}x{} vs {}x{}",
        a.width,
        a.height,
        b.width,
        b.height
    );
    Ok(())
}

/// Mean of squared differences over pixels and channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.pixels.len() as f64)
}

/// `10 log10(R^2 / MSE)`; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image, range: f64) -> Result<f64> {
    ensure!(range > 0.0, "dynamic range must be positive, got {}", range);
    psnr_from_mse(mse(a, b)?, range)
}

pub fn psnr_from_mse(mse: f64, range: f64) -> Result<f64> {
    ensure!(range > 0.0, "dynamic range must be positive, got {}", range);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (range * range / mse).log10())
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.pixels.iter().skip(c).step_by(3).map(|&v| v as f64).collect()
}

/// The SSIM formula evaluated once per channel with whole-image statistics
/// (population variances), averaged over channels.
pub fn ssim_global(a: &Image, b: &Image, range: f64) -> Result<f64> {
    same_shape(a, b)?;
    ensure!(range > 0.0, "dynamic range must be positive, got {}", range);
    let (c1, c2) = ((K1 * range).powi(2), (K2 * range).powi(2));
    let mut total = 0.0;
    for c in 0..3 {
        let (x, y) = (channel(a, c), channel(b, c));
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let cxy = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n;
        total += ssim_formula(mx, my, vx, vy, cxy, c1, c2);
    }
    Ok(total / 3.0)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let mut t = [0.0; WINDOW];
    let mid = (WINDOW / 2) as f64;
    for (i, v) in t.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// Valid-region separable filtering of an `h x w` plane.
fn filter_valid(p: &[f64], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|k| taps[k] * p[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|k| taps[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5) and
/// channels.
pub fn ssim_windowed(a: &Image, b: &Image, range: f64) -> Result<f64> {
    same_shape(a, b)?;
    ensure!(range > 0.0, "dynamic range must be positive, got {}", range);
    ensure!(
        a.width >= WINDOW && a.height >= WINDOW,
        "windowed SSIM needs at least {}x{} pixels, got {}x{}",
        WINDOW,
        WINDOW,
        a.width,
        a.height
    );
    let (c1, c2) = ((K1 * range).powi(2), (K2 * range).powi(2));
    let taps = gaussian_taps();
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let (x, y) = (channel(a, c), channel(b, c));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let f = |p: &[f64]| filter_valid(p, w, h, &taps);
        let (mx, my, exx, eyy, exy) = (f(&x), f(&y), f(&xx), f(&yy), f(&xy));
        for i in 0..mx.len() {
            let vx = exx[i] - mx[i] * mx[i];
            let vy = eyy[i] - my[i] * my[i];
            let cxy = exy[i] - mx[i] * my[i];
            total += ssim_formula(mx[i], my[i], vx, vy, cxy, c1, c2);
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsimKind {
    Windowed,
    Global,
}

impl SsimKind {
    pub fn name(self) -> &'static str {
        match self {
            SsimKind::Windowed => "windowed-gaussian-11-1.5",
            SsimKind::Global => "global",
        }
    }

    pub fn compute(self, a: &Image, b: &Image, range: f64) -> Result<f64> {
        match self {
            SsimKind::Windowed => ssim_windowed(a, b, range),
            SsimKind::Global => ssim_global(a, b, range),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricEntry {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
    pub ssim_kind: SsimKind,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

impl MetricReport {
    pub fn new(ssim_kind: SsimKind) -> Self {
        Self {
            entries: Vec::new(),
            ssim_kind,
        }
    }

    /// Evaluate one enhanced/reference pair (dynamic range 1) and record it.
    pub fn add(&mut self, name: &str, enhanced: &Image, reference: &Image) -> Result<()> {
        let psnr_db = psnr(enhanced, reference, 1.0)?;
        let ssim = self.ssim_kind.compute(enhanced, reference, 1.0)?;
        self.entries.push(MetricEntry {
            name: name.to_string(),
            psnr_db,
            ssim,
        });
        Ok(())
    }

    pub fn mean_psnr(&self) -> f64 {
        self.entries.iter().map(|e| e.psnr_db).sum::<f64>() / self.entries.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.entries.iter().map(|e| e.ssim).sum::<f64>() / self.entries.len() as f64
    }

    /// Tab-separated `name psnr_db ssim` rows with a header and a final
    /// `MEAN` row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("name\tpsnr_db\tssim\n");
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{:.6}", e.name, fmt_db(e.psnr_db), e.ssim);
        }
        let _ = writeln!(
            s,
            "MEAN\t{}\t{:.6}",
            fmt_db(self.mean_psnr()),
            self.mean_ssim()
        );
        s
    }

    /// `key=value` lines for scripts.
    pub fn to_kv(&self) -> String {
        format!(
            "count={}\nmean_psnr_db={}\nmean_ssim={:.9}\nssim_variant={}\n",
            self.entries.len(),
            fmt_db(self.mean_psnr()),
            self.mean_ssim(),
            self.ssim_kind.name()
        )
    }
}
