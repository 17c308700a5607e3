//! Softmax and layer normalization along an arbitrary axis.

use crate::autograd::Var;
use crate::error::{ensure, Error, Result};
use crate::tensor::{split_at_axis, Element, Tensor};

impl<'t, T: Element> Var<'t, T> {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape().to_vec();
        ensure!(axis < shape.len(), "axis {} out of range for {:?}", axis, shape);
        let x = self.value();
        x.check_finite("softmax input")?;
        let (outer, extent, inner) = split_at_axis(&shape, axis);
        let mut y = vec![T::zero(); x.len()];
        let xd = x.data();
        for o in 0..outer {
            let base = o * extent * inner;
            for i in 0..inner {
                let at = |e: usize| base + e * inner + i;
                let mut mx = T::neg_infinity();
                for e in 0..extent {
                    mx = mx.max(xd[at(e)]);
                }
                let mut sum = T::zero();
                for e in 0..extent {
                    let v = (xd[at(e)] - mx).exp();
                    y[at(e)] = v;
                    sum += v;
                }
                for e in 0..extent {
                    y[at(e)] /= sum;
                }
            }
        }
        let y = std::rc::Rc::new(Tensor::from_vec(&shape, y)?);
        let saved = std::rc::Rc::clone(&y);
        Ok(self
            .tape()
            .record("softmax", (*y).clone(), &[self], move |g, _| {
                // dx = y * (g - sum_axis(g * y))
                let (yd, gd) = (saved.data(), g.data());
                let mut dx = vec![T::zero(); yd.len()];
                for o in 0..outer {
                    let base = o * extent * inner;
                    for i in 0..inner {
                        let at = |e: usize| base + e * inner + i;
                        let mut dot = T::zero();
                        for e in 0..extent {
                            dot += gd[at(e)] * yd[at(e)];
                        }
                        for e in 0..extent {
                            dx[at(e)] = yd[at(e)] * (gd[at(e)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::from_vec(saved.shape(), dx).expect("same shape"))]
            }))
    }

    /// Layer normalization over `axis` with per-position affine
    /// `gamma`/`beta` of length `shape[axis]`:
    /// `y = (x - mean) / sqrt(var + eps) * gamma + beta`, biased variance.
    pub fn layer_norm(
        &self,
        axis: usize,
        gamma: &Var<'t, T>,
        beta: &Var<'t, T>,
        eps: f64,
    ) -> Result<Var<'t, T>> {
        let shape = self.shape().to_vec();
        ensure!(axis < shape.len(), "axis {} out of range for {:?}", axis, shape);
        ensure!(eps > 0.0, "layer norm eps must be positive");
        let c = shape[axis];
        ensure!(
            gamma.value().len() == c && beta.value().len() == c,
            "layer norm affine length {} / {} does not match extent {}",
            gamma.value().len(),
            beta.value().len(),
            c
        );
        let (outer, extent, inner) = split_at_axis(&shape, axis);
        let xd = self.value().data();
        let (gm, bt) = (gamma.value().data(), beta.value().data());
        let inv_c = T::from_f64(1.0 / extent as f64);
        let eps_t = T::from_f64(eps);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); outer * inner];
        let mut y = vec![T::zero(); xd.len()];
        let mut mean = vec![T::zero(); inner];
        let mut var = vec![T::zero(); inner];
        for o in 0..outer {
            let base = o * extent * inner;
            mean.fill(T::zero());
            var.fill(T::zero());
            for e in 0..extent {
                let row = &xd[base + e * inner..base + (e + 1) * inner];
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv_c);
            for e in 0..extent {
                let row = &xd[base + e * inner..base + (e + 1) * inner];
                for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                    let d = v - m;
                    *s += d * d;
                }
            }
            let rs = &mut rstd[o * inner..(o + 1) * inner];
            for (r, &s) in rs.iter_mut().zip(&var) {
                *r = T::one() / (s * inv_c + eps_t).sqrt();
            }
            for e in 0..extent {
                let off = base + e * inner;
                for i in 0..inner {
                    let xh = (xd[off + i] - mean[i]) * rs[i];
                    xhat[off + i] = xh;
                    y[off + i] = xh * gm[e] + bt[e];
                }
            }
        }
        let value = Tensor::from_vec(&shape, y)?;
        let gamma_v = gamma.rc();
        Ok(self
            .tape()
            .record("layer_norm", value, &[self, gamma, beta], move |g, needs| {
                let gd = g.data();
                let gm = gamma_v.data();
                let mut dgamma = vec![T::zero(); extent];
                let mut dbeta = vec![T::zero(); extent];
                let mut dx = needs[0].then(|| vec![T::zero(); gd.len()]);
                let mut s1 = vec![T::zero(); inner];
                let mut s2 = vec![T::zero(); inner];
                for o in 0..outer {
                    let base = o * extent * inner;
                    s1.fill(T::zero());
                    s2.fill(T::zero());
                    for e in 0..extent {
                        let off = base + e * inner;
                        for i in 0..inner {
                            let gi = gd[off + i];
                            let xh = xhat[off + i];
                            dgamma[e] += gi * xh;
                            dbeta[e] += gi;
                            let dxh = gi * gm[e];
                            s1[i] += dxh;
                            s2[i] += dxh * xh;
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        let rs = &rstd[o * inner..(o + 1) * inner];
                        for e in 0..extent {
                            let off = base + e * inner;
                            for i in 0..inner {
                                let dxh = gd[off + i] * gm[e];
                                dx[off + i] = rs[i]
                                    * (dxh - s1[i] * inv_c - xhat[off + i] * s2[i] * inv_c);
                            }
                        }
                    }
                }
                let vec_shape = [extent];
                vec![
                    dx.map(|d| Tensor::from_vec(&shape, d).expect("same shape")),
                    needs[1].then(|| Tensor::from_vec(&vec_shape, dgamma).expect("len")),
                    needs[2].then(|| Tensor::from_vec(&vec_shape, dbeta).expect("len")),
                ]
            }))
    }
}

/// Reject a learnable scale that would divide by zero.
pub(crate) fn check_nonzero_scales<T: Element>(scales: &Tensor<T>, what: &str) -> Result<()> {
    scales.check_finite(what)?;
    if scales.data().iter().any(|&s| s == T::zero()) {
        return Err(Error::Contract(format!("{what} contains a zero scale")));
    }
    Ok(())
}
