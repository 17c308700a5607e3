//! 2-D convolution and transposed convolution over NCHW tensors.

use crate::autograd::Var;
use crate::error::{ensure, Result};
use crate::kernels::{
    batched_weight_grad, bias_backward, conv_backward_data, conv_backward_weight, conv_forward,
    par_samples, ConvGeom,
};
use crate::tensor::{Element, Tensor};

fn dims4(shape: &[usize], what: &str) -> Result<[usize; 4]> {
    ensure!(shape.len() == 4, "{} must be rank 4, got {:?}", what, shape);
    Ok([shape[0], shape[1], shape[2], shape[3]])
}

fn check_bias<T: Element>(bias: Option<&Var<'_, T>>, c_out: usize) -> Result<()> {
    if let Some(b) = bias {
        ensure!(
            b.shape() == [c_out],
            "bias shape {:?} does not match {} output channels",
            b.shape(),
            c_out
        );
    }
    Ok(())
}

impl<'t, T: Element> Var<'t, T> {
    /// Zero-padded cross-correlation.
    ///
    /// `self: [N, C_in, H, W]`, `weight: [C_out, C_in / groups, kh, kw]`,
    /// `bias: [C_out]`. Output extents are `floor((H + 2p - kh) / s) + 1`.
    pub fn conv2d(
        &self,
        weight: &Var<'t, T>,
        bias: Option<&Var<'t, T>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var<'t, T>> {
        let [n, c_in, h, w] = dims4(self.shape(), "conv2d input")?;
        let [c_out, cin_g, kh, kw] = dims4(weight.shape(), "conv2d weight")?;
        ensure!(
            groups > 0 && c_in % groups == 0 && cin_g * groups == c_in,
            "conv2d: {} input channels, weight expects {} per group x {} groups",
            c_in,
            cin_g,
            groups
        );
        check_bias(bias, c_out)?;
        let g = ConvGeom::new(c_in, h, w, c_out, kh, kw, stride, padding, groups).ok_or_else(
            || {
                crate::error::contract!(
                    "conv2d geometry invalid: input {:?}, kernel {}x{}, stride {}, padding {}, groups {}",
                    self.shape(),
                    kh,
                    kw,
                    stride,
                    padding,
                    groups
                )
            },
        )?;
        self.value().check_finite("conv2d input")?;
        let (x, wt) = (self.rc(), weight.rc());
        let bias_data = bias.map(|b| b.value().data().to_vec());
        let mut y = Tensor::zeros(&[n, c_out, g.ho, g.wo]);
        let wd = wt.data();
        par_samples(x.data(), g.in_len(), y.data_mut(), g.out_len(), |xs, ys| {
            conv_forward(&g, xs, wd, bias_data.as_deref(), ys)
        });
        let mut inputs: Vec<&Var<'t, T>> = vec![self, weight];
        inputs.extend(bias);
        Ok(self.tape().record("conv2d", y, &inputs, move |dy, needs| {
            let (dyd, wd, xd) = (dy.data(), wt.data(), x.data());
            let dx = needs[0].then(|| {
                let mut dx = Tensor::zeros(x.shape());
                par_samples(dyd, g.out_len(), dx.data_mut(), g.in_len(), |dys, dxs| {
                    conv_backward_data(&g, wd, dys, dxs)
                });
                dx
            });
            let dw = needs[1].then(|| {
                let data = batched_weight_grad(n, g.weight_len(), |s, buf| {
                    conv_backward_weight(
                        &g,
                        &xd[s * g.in_len()..(s + 1) * g.in_len()],
                        &dyd[s * g.out_len()..(s + 1) * g.out_len()],
                        buf,
                    )
                });
                Tensor::from_vec(wt.shape(), data).expect("weight shape")
            });
            let mut grads = vec![dx, dw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| {
                    let mut db = Tensor::zeros(&[c_out]);
                    for s in 0..n {
                        bias_backward(
                            c_out,
                            g.ho * g.wo,
                            &dyd[s * g.out_len()..(s + 1) * g.out_len()],
                            db.data_mut(),
                        );
                    }
                    db
                }));
            }
            grads
        }))
    }

    /// Transposed convolution (the adjoint of [`Var::conv2d`] with zero
    /// padding). `self: [N, C_in, H, W]`,
    /// `weight: [C_in, C_out / groups, kh, kw]`, output extents
    /// `(H - 1) * stride + kh`.
    pub fn conv_transpose2d(
        &self,
        weight: &Var<'t, T>,
        bias: Option<&Var<'t, T>>,
        stride: usize,
        groups: usize,
    ) -> Result<Var<'t, T>> {
        let [n, c_in, h, w] = dims4(self.shape(), "conv_transpose2d input")?;
        let [wc_in, cout_g, kh, kw] = dims4(weight.shape(), "conv_transpose2d weight")?;
        ensure!(stride >= 1, "conv_transpose2d stride must be >= 1");
        ensure!(
            wc_in == c_in && groups > 0 && c_in % groups == 0,
            "conv_transpose2d: input has {} channels, weight {:?}, groups {}",
            c_in,
            weight.shape(),
            groups
        );
        ensure!(h >= 1 && w >= 1, "conv_transpose2d: empty input");
        let c_out = cout_g * groups;
        check_bias(bias, c_out)?;
        let (ho, wo) = ((h - 1) * stride + kh, (w - 1) * stride + kw);
        // The equivalent forward convolution maps [c_out, ho, wo] -> [c_in, h, w].
        let g = ConvGeom::new(c_out, ho, wo, c_in, kh, kw, stride, 0, groups)
            .filter(|g| g.ho == h && g.wo == w)
            .ok_or_else(|| crate::error::contract!("conv_transpose2d geometry invalid"))?;
        self.value().check_finite("conv_transpose2d input")?;
        let (x, wt) = (self.rc(), weight.rc());
        let bias_data = bias.map(|b| b.value().data().to_vec());
        let mut y = Tensor::zeros(&[n, c_out, ho, wo]);
        let wd = wt.data();
        par_samples(x.data(), g.out_len(), y.data_mut(), g.in_len(), |xs, ys| {
            conv_backward_data(&g, wd, xs, ys);
            if let Some(b) = &bias_data {
                for (c, yc) in ys.chunks_mut(ho * wo).enumerate() {
                    yc.iter_mut().for_each(|v| *v += b[c]);
                }
            }
        });
        let mut inputs: Vec<&Var<'t, T>> = vec![self, weight];
        inputs.extend(bias);
        Ok(self
            .tape()
            .record("conv_transpose2d", y, &inputs, move |dy, needs| {
                let (dyd, wd, xd) = (dy.data(), wt.data(), x.data());
                let dx = needs[0].then(|| {
                    let mut dx = Tensor::zeros(x.shape());
                    par_samples(dyd, g.in_len(), dx.data_mut(), g.out_len(), |dys, dxs| {
                        conv_forward(&g, dys, wd, None, dxs)
                    });
                    dx
                });
                let dw = needs[1].then(|| {
                    let data = batched_weight_grad(n, g.weight_len(), |s, buf| {
                        conv_backward_weight(
                            &g,
                            &dyd[s * g.in_len()..(s + 1) * g.in_len()],
                            &xd[s * g.out_len()..(s + 1) * g.out_len()],
                            buf,
                        )
                    });
                    Tensor::from_vec(wt.shape(), data).expect("weight shape")
                });
                let mut grads = vec![dx, dw];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| {
                        let mut db = Tensor::zeros(&[c_out]);
                        for s in 0..n {
                            bias_backward(
                                c_out,
                                ho * wo,
                                &dyd[s * g.in_len()..(s + 1) * g.in_len()],
                                db.data_mut(),
                            );
                        }
                        db
                    }));
                }
                grads
            }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::rng::Prng;

    #[test]
    fn all_ones_two_by_two() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::ones(&[1, 1, 2, 2]));
        let w = tape.constant(Tensor::<f64>::ones(&[1, 1, 2, 2]));
        let y = x.conv2d(&w, None, 1, 0, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.value().data(), &[4.0]);
    }

    #[test]
    fn identity_pointwise_kernel() {
        let mut rng = Prng::new(1);
        let tape = Tape::new();
        let x = tape.constant(Tensor::<f32>::randn(&[2, 3, 5, 4], 1.0, &mut rng));
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 4] = 1.0;
        }
        let y = x.conv2d(&tape.constant(w), None, 1, 0, 1).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn transposed_single_pixel_scatter() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::full(&[1, 1, 1, 1], 0.7));
        let w = tape.constant(Tensor::<f64>::ones(&[1, 1, 2, 2]));
        let y = x.conv_transpose2d(&w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.value().data().iter().all(|&v| v == 0.7));
        let z = tape.constant(Tensor::<f64>::zeros(&[1, 1, 3, 3]));
        let yz = z.conv_transpose2d(&w, None, 2, 1).unwrap();
        assert_eq!(yz.shape(), &[1, 1, 6, 6]);
        assert!(yz.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
        assert!(x.conv2d(&w, None, 1, 1, 1).is_err());
        let w = tape.constant(Tensor::zeros(&[4, 3, 7, 7]));
        assert!(x.conv2d(&w, None, 1, 1, 1).is_err());
        let w = tape.constant(Tensor::zeros(&[4, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(x.conv2d(&w, Some(&b), 1, 1, 1).is_err());
        let nan = tape.constant(Tensor::full(&[1, 3, 4, 4], f32::NAN));
        assert!(matches!(
            nan.conv2d(&w, None, 1, 1, 1),
            Err(crate::Error::NonFinite(_))
        ));
        let wt = tape.constant(Tensor::zeros(&[2, 1, 2, 2]));
        assert!(x.conv_transpose2d(&wt, None, 2, 1).is_err());
    }
}
