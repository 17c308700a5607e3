//! Full network: light component predictor, wavelet block, the two restorer
//! branches and the three-term output sum.

use crate::autograd::{Tape, Var};
use crate::config::DlenConfig;
use crate::error::{ensure, Result};
use crate::lcp::{self, illumination_prior, lcp_forward};
use crate::params::{Bound, Init, Params};
use crate::rng::Prng;
use crate::tensor::{Element, Tensor};
use crate::{ilb, seb, wavelet};

/// Initial bias of the brightening-map head, so `L̃` starts near 1 and the
/// lit image near the input.
pub const LIGHT_MAP_BIAS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DlenModel<T: Element = f32> {
    pub config: DlenConfig,
    pub params: Params<T>,
}

/// Graph handles produced by one forward pass.
pub struct Forward<'t, T: Element> {
    pub i_en: Var<'t, T>,
    pub i_lu: Var<'t, T>,
    pub i_flb: Var<'t, T>,
    pub i_feb: Option<Var<'t, T>>,
    pub l_tilde: Var<'t, T>,
    pub f_lu: Var<'t, T>,
    pub seb_latent: Option<Var<'t, T>>,
}

/// Detached forward results for inspection.
#[derive(Clone, Debug)]
pub struct EnhancedOutput<T: Element> {
    pub i_en: Tensor<T>,
    pub i_lu: Tensor<T>,
    pub i_flb: Tensor<T>,
    /// Zeros when the structure branch is disabled.
    pub i_feb: Tensor<T>,
    pub l_tilde: Tensor<T>,
    pub f_lu: Tensor<T>,
}

impl<T: Element> DlenModel<T> {
    /// Deterministic initialization. Each parameter group draws from its own
    /// fork of the seed stream, so disabling a group leaves the others
    /// unchanged.
    pub fn init(config: DlenConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut root = Prng::new(seed);
        let mut streams: Vec<Prng> = (0..4).map(|_| root.fork()).collect();
        let mut params = Params::new();
        let mut group = |rng: &mut Prng, f: &dyn Fn(&mut Init<'_, T>) -> Result<()>| -> Result<()> {
            let mut init = Init::new(rng);
            f(&mut init)?;
            for (name, value) in init.params.iter() {
                params.insert(name, value.clone())?;
            }
            Ok(())
        };
        let c = config.width;
        group(&mut streams[0], &|i| lcp::init(i, "lcp", c, LIGHT_MAP_BIAS))?;
        if config.use_lwn {
            group(&mut streams[1], &|i| wavelet::init(i, "lwn", c, config.lwn_hidden))?;
        }
        group(&mut streams[2], &|i| ilb::init(i, "ilb", &config))?;
        if config.use_seab {
            group(&mut streams[3], &|i| seb::init(i, "seb", &config))?;
        }
        Ok(Self { config, params })
    }

    pub fn from_parts(config: DlenConfig, params: Params<T>) -> Result<Self> {
        config.validate()?;
        let expected = Self::init(config.clone(), 0)?;
        for (name, value) in expected.params.iter() {
            let got = params.get(name);
            ensure!(got.is_some(), "parameter {} missing", name);
            ensure!(
                got.map(Tensor::shape) == Some(value.shape()),
                "parameter {} has shape {:?}, expected {:?}",
                name,
                got.map(Tensor::shape),
                value.shape()
            );
        }
        ensure!(
            params.len() == expected.params.len(),
            "{} parameters given, configuration defines {}",
            params.len(),
            expected.params.len()
        );
        Ok(Self { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    pub fn cast<U: Element>(&self) -> DlenModel<U> {
        DlenModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Forward pass on `[N, 3, H, W]` with H and W multiples of 8.
    pub fn forward<'t>(&self, b: &Bound<'t, T>, img: &Var<'t, T>) -> Result<Forward<'t, T>> {
        let s = img.shape();
        ensure!(
            s.len() == 4 && s[1] == 3,
            "model input must be [N, 3, H, W], got {:?}",
            s
        );
        ensure!(
            s[2] % 8 == 0 && s[3] % 8 == 0 && s[2] > 0 && s[3] > 0,
            "model input extents {}x{} must be multiples of 8",
            s[2],
            s[3]
        );
        let cfg = &self.config;
        let prior = illumination_prior(img)?;
        let lcp = lcp_forward(b, "lcp", img, &prior)?;
        let f_lu = if cfg.use_lwn {
            wavelet::lwn_forward(b, "lwn", &lcp.f_lu)?
        } else {
            lcp.f_lu.clone()
        };
        let i_flb = ilb::ilb_forward(b, "ilb", cfg, &lcp.i_lu, &f_lu)?;
        let mut i_en = lcp.i_lu.add(&i_flb)?;
        let (i_feb, seb_latent) = if cfg.use_seab {
            let out = seb::seb_forward(b, "seb", cfg, &lcp.i_lu)?;
            i_en = i_en.add(&out.i_feb)?;
            (Some(out.i_feb), Some(out.latent))
        } else {
            (None, None)
        };
        Ok(Forward {
            i_en,
            i_lu: lcp.i_lu,
            i_flb,
            i_feb,
            l_tilde: lcp.l_tilde,
            f_lu: lcp.f_lu,
            seb_latent,
        })
    }

    /// Inference without gradient tracking. Inputs of any size are
    /// reflect-padded to multiples of 8 and the outputs cropped back.
    pub fn enhance(&self, img: &Tensor<T>) -> Result<EnhancedOutput<T>> {
        let s = img.shape();
        ensure!(
            s.len() == 4 && s[1] == 3 && s[2] > 0 && s[3] > 0,
            "enhance expects [N, 3, H, W], got {:?}",
            s
        );
        let (h, w) = (s[2], s[3]);
        let (ph, pw) = ((8 - h % 8) % 8, (8 - w % 8) % 8);
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        let x = tape.constant(img.clone()).pad_reflect(0, ph, 0, pw)?;
        let f = self.forward(&b, &x)?;
        let crop = |v: &Var<'_, T>| -> Result<Tensor<T>> {
            Ok(v.value().narrow(2, 0, h)?.narrow(3, 0, w)?)
        };
        let i_feb = match &f.i_feb {
            Some(v) => crop(v)?,
            None => Tensor::zeros(&[s[0], 3, h, w]),
        };
        Ok(EnhancedOutput {
            i_en: crop(&f.i_en)?,
            i_lu: crop(&f.i_lu)?,
            i_flb: crop(&f.i_flb)?,
            i_feb,
            l_tilde: crop(&f.l_tilde)?,
            f_lu: crop(&f.f_lu)?,
        })
    }
}

/// Mean absolute error over all elements.
pub fn mae_loss<'t, T: Element>(pred: &Var<'t, T>, target: &Var<'t, T>) -> Result<Var<'t, T>> {
    ensure!(
        pred.shape() == target.shape(),
        "loss operands differ: {:?} vs {:?}",
        pred.shape(),
        target.shape()
    );
    Ok(pred.sub(target)?.abs().mean_all())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let cfg = DlenConfig::tiny(4, 4, 8, 8);
        let a = DlenModel::<f32>::init(cfg.clone(), 3).unwrap();
        let b = DlenModel::<f32>::init(cfg.clone(), 3).unwrap();
        assert_eq!(a, b);
        let c = DlenModel::<f32>::init(cfg, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ablation_keeps_other_groups() {
        let cfg = DlenConfig::tiny(4, 4, 8, 8);
        let full = DlenModel::<f32>::init(cfg.clone(), 3).unwrap();
        let mut lite = cfg.clone();
        lite.use_lwn = false;
        lite.use_seab = false;
        let lite = DlenModel::<f32>::init(lite, 3).unwrap();
        assert!(lite.num_params() < full.num_params());
        for (name, v) in lite.params.iter() {
            assert_eq!(full.params.get(name), Some(v), "{name}");
        }
        assert!(!lite.params.names().any(|n| n.starts_with("lwn.") || n.starts_with("seb.")));
    }

    #[test]
    fn mae_examples() {
        let tape = Tape::new();
        let t = tape.constant(Tensor::<f64>::from_vec(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        assert_eq!(mae_loss(&t, &t).unwrap().value().data(), &[0.0]);
        let shifted = t.add_scalar(0.5);
        let l = mae_loss(&shifted, &t).unwrap().value().data()[0];
        assert!((l - 0.5).abs() < 1e-12);
        let other = tape.constant(Tensor::zeros(&[4]));
        assert!(mae_loss(&t, &other).is_err());
    }

    #[test]
    fn from_parts_checks_shapes() {
        let cfg = DlenConfig::tiny(4, 4, 8, 8);
        let m = DlenModel::<f32>::init(cfg.clone(), 1).unwrap();
        assert!(DlenModel::from_parts(cfg.clone(), m.params.clone()).is_ok());
        let mut wrong = cfg.clone();
        wrong.use_seab = false;
        assert!(DlenModel::from_parts(wrong, m.params.clone()).is_err());
    }
}
