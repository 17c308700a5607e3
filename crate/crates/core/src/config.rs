//! Architecture configuration.

use crate::error::{ensure, Result};

/// Widths, block/head counts, ablation switches and the training
/// resolution (which sizes the positional encodings).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DlenConfig {
    /// Light-up feature / ILB base width C.
    pub width: usize,
    /// SEB base width C_s.
    pub seb_width: usize,
    /// Hidden width of the wavelet subband processing convolutions.
    pub lwn_hidden: usize,
    /// MIAB counts: level 0, level 1, bottleneck.
    pub ilb_blocks: [usize; 3],
    pub ilb_heads: [usize; 3],
    /// SEAB counts per encoder level; the last entry is the latent level.
    pub seb_blocks: [usize; 4],
    pub seb_refine: usize,
    pub seb_heads: [usize; 4],
    pub use_lwn: bool,
    pub use_seab: bool,
    pub train_h: usize,
    pub train_w: usize,
}

/// `c / 2` rounded to the nearest even value (at least 2).
pub fn default_seb_width(c: usize) -> usize {
    let half = c as f64 / 2.0;
    ((half / 2.0).round() as usize * 2).max(2)
}

impl DlenConfig {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            seb_width: default_seb_width(width),
            lwn_hidden: 4 * width,
            ilb_blocks: [1, 2, 2],
            ilb_heads: [1, 2, 4],
            seb_blocks: [1, 1, 2, 2],
            seb_refine: 2,
            seb_heads: [1, 2, 4, 8],
            use_lwn: true,
            use_seab: true,
            train_h: 128,
            train_w: 128,
        }
    }

    /// Tiny configuration used by gradient checks and quick tests.
    pub fn tiny(width: usize, seb_width: usize, h: usize, w: usize) -> Self {
        Self {
            seb_width,
            lwn_hidden: 2 * width,
            train_h: h,
            train_w: w,
            ..Self::new(width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.width > 0 && self.lwn_hidden > 0, "model width must be positive");
        for (level, &h) in self.ilb_heads.iter().enumerate() {
            let c = self.width << level;
            ensure!(
                h > 0 && c % h == 0,
                "ILB level {} width {} not divisible by {} heads",
                level,
                c,
                h
            );
        }
        if self.use_seab {
            ensure!(self.seb_width > 0, "SEB width must be positive");
            for (level, &h) in self.seb_heads.iter().enumerate() {
                let c = self.seb_width << level;
                ensure!(
                    h > 0 && c % h == 0,
                    "SEB level {} width {} not divisible by {} heads",
                    level,
                    c,
                    h
                );
            }
            ensure!(
                (2 * self.seb_width) % self.seb_heads[0] == 0,
                "SEB top width not divisible by its heads"
            );
        }
        ensure!(
            self.train_h > 0
                && self.train_w > 0
                && self.train_h % 8 == 0
                && self.train_w % 8 == 0,
            "training resolution {}x{} must be a positive multiple of 8",
            self.train_h,
            self.train_w
        );
        Ok(())
    }
}
