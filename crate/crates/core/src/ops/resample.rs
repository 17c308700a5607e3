//! Spatial re-sampling over the last two axes: reflect padding and bilinear
//! resizing.

use crate::autograd::Var;
use crate::error::{ensure, Result};
use crate::tensor::{Element, Tensor};

/// Mirror index without edge repetition (`[a b c] -> ... c b [a b c] b a ...`),
/// valid for any offset.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn spatial(shape: &[usize]) -> Result<(usize, usize, usize)> {
    ensure!(shape.len() >= 2, "spatial op needs rank >= 2, got {:?}", shape);
    let r = shape.len();
    let planes = shape[..r - 2].iter().product();
    Ok((planes, shape[r - 2], shape[r - 1]))
}

/// Source taps for one output coordinate.
#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f64,
}

fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            Tap {
                i0,
                i1,
                w1: src - i0 as f64,
            }
        })
        .collect()
}

impl<'t, T: Element> Var<'t, T> {
    /// Reflect-pad the last two axes.
    pub fn pad_reflect(
        &self,
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    ) -> Result<Var<'t, T>> {
        let shape = self.shape().to_vec();
        let (planes, h, w) = spatial(&shape)?;
        ensure!(h > 0 && w > 0, "cannot pad an empty plane");
        let (ho, wo) = (h + top + bottom, w + left + right);
        let rows: Vec<usize> = (0..ho)
            .map(|y| reflect_index(y as isize - top as isize, h))
            .collect();
        let cols: Vec<usize> = (0..wo)
            .map(|x| reflect_index(x as isize - left as isize, w))
            .collect();
        let xd = self.value().data();
        let mut out = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            for &r in &rows {
                out.extend(cols.iter().map(|&c| plane[r * w + c]));
            }
        }
        let mut out_shape = shape.clone();
        let r = shape.len();
        out_shape[r - 2] = ho;
        out_shape[r - 1] = wo;
        let value = Tensor::from_vec(&out_shape, out)?;
        Ok(self.tape().record("pad_reflect", value, &[self], move |g, _| {
            let gd = g.data();
            let mut dx = Tensor::zeros(&shape);
            let d = dx.data_mut();
            for p in 0..planes {
                for (y, &r) in rows.iter().enumerate() {
                    for (x, &c) in cols.iter().enumerate() {
                        d[p * h * w + r * w + c] += gd[(p * ho + y) * wo + x];
                    }
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Bilinear resize of the last two axes (half-pixel centers, edge clamp).
    pub fn resize_bilinear(&self, ho: usize, wo: usize) -> Result<Var<'t, T>> {
        let shape = self.shape().to_vec();
        let (planes, h, w) = spatial(&shape)?;
        ensure!(
            h > 0 && w > 0 && ho > 0 && wo > 0,
            "bilinear resize {}x{} -> {}x{}",
            h,
            w,
            ho,
            wo
        );
        let r = shape.len();
        let mut out_shape = shape.clone();
        out_shape[r - 2] = ho;
        out_shape[r - 1] = wo;
        if (h, w) == (ho, wo) {
            return self.reshape(&out_shape);
        }
        let (ty, tx) = (bilinear_taps(h, ho), bilinear_taps(w, wo));
        let xd = self.value().data();
        let mut out = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            for a in &ty {
                let (wy0, wy1) = (T::from_f64(1.0 - a.w1), T::from_f64(a.w1));
                for b in &tx {
                    let (wx0, wx1) = (T::from_f64(1.0 - b.w1), T::from_f64(b.w1));
                    let top = plane[a.i0 * w + b.i0] * wx0 + plane[a.i0 * w + b.i1] * wx1;
                    let bot = plane[a.i1 * w + b.i0] * wx0 + plane[a.i1 * w + b.i1] * wx1;
                    out.push(top * wy0 + bot * wy1);
                }
            }
        }
        let value = Tensor::from_vec(&out_shape, out)?;
        Ok(self.tape().record("resize_bilinear", value, &[self], move |g, _| {
            let gd = g.data();
            let mut dx = Tensor::zeros(&shape);
            let d = dx.data_mut();
            for p in 0..planes {
                let base = p * h * w;
                for (y, a) in ty.iter().enumerate() {
                    let (wy0, wy1) = (T::from_f64(1.0 - a.w1), T::from_f64(a.w1));
                    for (x, b) in tx.iter().enumerate() {
                        let (wx0, wx1) = (T::from_f64(1.0 - b.w1), T::from_f64(b.w1));
                        let gv = gd[(p * ho + y) * wo + x];
                        d[base + a.i0 * w + b.i0] += gv * wy0 * wx0;
                        d[base + a.i0 * w + b.i1] += gv * wy0 * wx1;
                        d[base + a.i1 * w + b.i0] += gv * wy1 * wx0;
                        d[base + a.i1 * w + b.i1] += gv * wy1 * wx1;
                    }
                }
            }
            vec![Some(dx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn mirror_index() {
        let got: Vec<usize> = (-3..6).map(|i| reflect_index(i, 3)).collect();
        assert_eq!(got, vec![1, 2, 1, 0, 1, 2, 1, 0, 1]);
        assert_eq!(reflect_index(-7, 1), 0);
        // Offsets larger than the extent still land in range.
        assert!((-50..50).all(|i| reflect_index(i, 2) < 2));
    }

    #[test]
    fn pad_reflect_row() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = x.pad_reflect(0, 0, 2, 2).unwrap();
        assert_eq!(y.value().data(), &[3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn pad_reflect_gradient_counts_copies() {
        let tape = Tape::new();
        let x = tape.param(Tensor::<f64>::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = x.pad_reflect(0, 0, 2, 2).unwrap();
        let g = tape.backward(&y.sum()).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[2.0, 3.0, 2.0]);
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(x.resize_bilinear(2, 2).unwrap().value(), x.value());
        let c = tape.constant(Tensor::<f64>::full(&[2, 3, 5], 0.25));
        let up = c.resize_bilinear(7, 4).unwrap();
        assert!(up.value().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn bilinear_upsample_1d_reference() {
        // [0, 1] upsampled to 4: half-pixel centers give 0, .25, .75, 1.
        let tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap());
        let y = x.resize_bilinear(1, 4).unwrap();
        let want = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in y.value().data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
