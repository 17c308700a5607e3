//! Light component predictor: illumination prior, light-up feature and the
//! brightening map applied to the input.

use crate::autograd::Var;
use crate::error::{ensure, Result};
use crate::ops::concat;
use crate::params::{conv, dwconv, Bound, Init};
use crate::tensor::Element;

/// Per-pixel mean over the three color channels, `[N, 1, H, W]`.
pub fn illumination_prior<'t, T: Element>(img: &Var<'t, T>) -> Result<Var<'t, T>> {
    let s = img.shape();
    ensure!(
        s.len() == 4 && s[1] == 3,
        "illumination prior expects [N, 3, H, W], got {:?}",
        s
    );
    let out_of_range = img
        .value()
        .data()
        .iter()
        .any(|v| *v < T::zero() || *v > T::one());
    if out_of_range {
        log::warn!("illumination prior input has values outside [0, 1]");
    }
    img.mean(&[1], true)
}

#[derive(Clone, Debug)]
pub struct LcpOutput<'t, T: Element> {
    /// Lit image `I ⊙ L̃`.
    pub i_lu: Var<'t, T>,
    /// Light-up feature.
    pub f_lu: Var<'t, T>,
    /// Brightening map `L̃`.
    pub l_tilde: Var<'t, T>,
}

/// `l_bias` initializes the bias of the map head, so that `L̃` starts near a
/// constant gain.
pub fn init<T: Element>(init: &mut Init<'_, T>, prefix: &str, c: usize, l_bias: f64) -> Result<()> {
    init.conv(&format!("{prefix}.embed"), c, 4, 1, true)?;
    init.conv(&format!("{prefix}.dw"), c, 1, 5, true)?;
    init.conv(&format!("{prefix}.map"), 3, c, 1, true)?;
    let bias = init
        .params
        .get_mut(&format!("{prefix}.map.bias"))
        .expect("just inserted");
    bias.data_mut().iter_mut().for_each(|v| *v = T::from_f64(l_bias));
    Ok(())
}

/// `concat(I, L_p) -> 1x1 -> depthwise 5x5 = F_lu -> 1x1 = L̃`, `I_lu = I ⊙ L̃`.
pub fn lcp_forward<'t, T: Element>(
    b: &Bound<'t, T>,
    prefix: &str,
    img: &Var<'t, T>,
    prior: &Var<'t, T>,
) -> Result<LcpOutput<'t, T>> {
    let s = img.shape();
    ensure!(
        s.len() == 4 && s[1] == 3 && prior.shape() == [s[0], 1, s[2], s[3]],
        "lcp inputs {:?} and {:?} are inconsistent",
        s,
        prior.shape()
    );
    let x = concat(&[img, prior], 1)?;
    let e = conv(b, &format!("{prefix}.embed"), &x, 1, 0, 1)?;
    let f_lu = dwconv(b, &format!("{prefix}.dw"), &e)?;
    let l_tilde = conv(b, &format!("{prefix}.map"), &f_lu, 1, 0, 1)?;
    let i_lu = img.mul(&l_tilde)?;
    Ok(LcpOutput {
        i_lu,
        f_lu,
        l_tilde,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::rng::Prng;
    use crate::tensor::Tensor;

    #[test]
    fn prior_examples() {
        let tape = Tape::new();
        let px = tape.constant(Tensor::<f64>::from_vec(&[1, 3, 1, 1], vec![0.2, 0.4, 0.6]).unwrap());
        assert!((illumination_prior(&px).unwrap().value().data()[0] - 0.4).abs() < 1e-15);
        let black = tape.constant(Tensor::<f64>::zeros(&[2, 3, 4, 4]));
        let p = illumination_prior(&black).unwrap();
        assert_eq!(p.shape(), &[2, 1, 4, 4]);
        assert!(p.value().data().iter().all(|&v| v == 0.0));
        let gray = tape.constant(Tensor::<f64>::zeros(&[1, 1, 4, 4]));
        assert!(illumination_prior(&gray).is_err());
    }

    #[test]
    fn prior_matches_loop() {
        let mut rng = Prng::new(2);
        let x = Tensor::<f32>::rand_uniform(&[2, 3, 5, 4], 0.0, 1.0, &mut rng);
        let tape = Tape::new();
        let p = illumination_prior(&tape.constant(x.clone())).unwrap();
        for n in 0..2 {
            for i in 0..20 {
                let m: f64 = (0..3).map(|c| x.data()[(n * 3 + c) * 20 + i] as f64).sum::<f64>() / 3.0;
                assert!((p.value().data()[n * 20 + i] as f64 - m).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn shapes_and_products() {
        let mut rng = Prng::new(9);
        let mut ini = Init::<f32>::new(&mut rng);
        init(&mut ini, "lcp", 5, 0.0).unwrap();
        let params = ini.params;
        let tape = Tape::new();
        let b = params.bind(&tape, false);
        let img = tape.constant(Tensor::rand_uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut rng));
        let out = lcp_forward(&b, "lcp", &img, &illumination_prior(&img).unwrap()).unwrap();
        assert_eq!(out.i_lu.shape(), &[1, 3, 8, 8]);
        assert_eq!(out.f_lu.shape(), &[1, 5, 8, 8]);
        assert_eq!(out.l_tilde.shape(), &[1, 3, 8, 8]);
        let recomputed = img.value().zip_map(out.l_tilde.value(), |a, b| a * b);
        assert_eq!(&recomputed, out.i_lu.value());

        let zero = tape.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let out = lcp_forward(&b, "lcp", &zero, &illumination_prior(&zero).unwrap()).unwrap();
        assert!(out.i_lu.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_map_passes_input_through() {
        let mut rng = Prng::new(4);
        let mut ini = Init::<f64>::new(&mut rng);
        init(&mut ini, "lcp", 4, 1.0).unwrap();
        let mut params = ini.params;
        params
            .get_mut("lcp.map.weight")
            .unwrap()
            .data_mut()
            .fill(0.0);
        let tape = Tape::new();
        let b = params.bind(&tape, false);
        let img = tape.constant(Tensor::rand_uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut rng));
        let out = lcp_forward(&b, "lcp", &img, &illumination_prior(&img).unwrap()).unwrap();
        assert_eq!(out.i_lu.value(), img.value());
    }
}
