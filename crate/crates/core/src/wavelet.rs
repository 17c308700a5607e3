//! Learnable one-level Haar filter bank and the subband processing block
//! applied to the light-up feature.
//!
//! The 2-D kernels are outer products of the 1-D taps,
//! `G_ab[i][j] = h_a[i] * h_b[j]` (row index `i` is vertical). Analysis is a
//! depthwise stride-2 correlation with each kernel; synthesis is the
//! transposed correlation with the same taps.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::autograd::Var;
use crate::error::{ensure, Result};
use crate::ops::concat;
use crate::params::{conv, Bound, Init};
use crate::tensor::{Element, Tensor};

/// Orthonormal Haar taps `(h0, h1)`.
pub fn haar_taps() -> ([f64; 2], [f64; 2]) {
    ([FRAC_1_SQRT_2, FRAC_1_SQRT_2], [FRAC_1_SQRT_2, -FRAC_1_SQRT_2])
}

/// `[G_ll, G_lh, G_hl, G_hh]`, each `[2, 2]`, differentiable in the taps.
pub fn subband_kernels<'t, T: Element>(h0: &Var<'t, T>, h1: &Var<'t, T>) -> Result<[Var<'t, T>; 4]> {
    ensure!(
        h0.shape() == [2] && h1.shape() == [2],
        "wavelet taps must have shape [2], got {:?} and {:?}",
        h0.shape(),
        h1.shape()
    );
    let col = |h: &Var<'t, T>| h.reshape(&[2, 1]);
    let row = |h: &Var<'t, T>| h.reshape(&[1, 2]);
    let (c0, c1, r0, r1) = (col(h0)?, col(h1)?, row(h0)?, row(h1)?);
    Ok([
        c0.matmul(&r0)?,
        c0.matmul(&r1)?,
        c1.matmul(&r0)?,
        c1.matmul(&r1)?,
    ])
}

/// The four subbands of a one-level decomposition.
#[derive(Clone, Debug)]
pub struct Subbands<'t, T: Element> {
    pub ll: Var<'t, T>,
    pub lh: Var<'t, T>,
    pub hl: Var<'t, T>,
    pub hh: Var<'t, T>,
}

impl<'t, T: Element> Subbands<'t, T> {
    pub fn as_array(&self) -> [&Var<'t, T>; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }
}

/// Broadcast a `[2, 2]` kernel into a depthwise weight `[c, 1, 2, 2]`.
fn depthwise_weight<'t, T: Element>(g: &Var<'t, T>, c: usize) -> Result<Var<'t, T>> {
    let base = g.tape().constant(Tensor::zeros(&[c, 1, 2, 2]));
    base.add(&g.reshape(&[1, 1, 2, 2])?)
}

pub fn dwt2d<'t, T: Element>(
    x: &Var<'t, T>,
    h0: &Var<'t, T>,
    h1: &Var<'t, T>,
) -> Result<Subbands<'t, T>> {
    let s = x.shape();
    ensure!(s.len() == 4, "dwt2d expects NCHW, got {:?}", s);
    ensure!(
        s[2] % 2 == 0 && s[3] % 2 == 0 && s[2] > 0 && s[3] > 0,
        "dwt2d needs even spatial extents, got {}x{}",
        s[2],
        s[3]
    );
    let c = s[1];
    let [ll, lh, hl, hh] = subband_kernels(h0, h1)?;
    let band = |g: &Var<'t, T>| x.conv2d(&depthwise_weight(g, c)?, None, 2, 0, c);
    Ok(Subbands {
        ll: band(&ll)?,
        lh: band(&lh)?,
        hl: band(&hl)?,
        hh: band(&hh)?,
    })
}

pub fn idwt2d<'t, T: Element>(
    sub: &Subbands<'t, T>,
    h0: &Var<'t, T>,
    h1: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    let shape = sub.ll.shape().to_vec();
    ensure!(shape.len() == 4, "idwt2d expects NCHW subbands, got {:?}", shape);
    for b in sub.as_array() {
        ensure!(
            b.shape() == shape.as_slice(),
            "inconsistent subband shapes {:?} vs {:?}",
            b.shape(),
            shape
        );
    }
    let c = shape[1];
    let kernels = subband_kernels(h0, h1)?;
    let mut out: Option<Var<'t, T>> = None;
    for (band, g) in sub.as_array().into_iter().zip(&kernels) {
        let part = band.conv_transpose2d(&depthwise_weight(g, c)?, None, 2, c)?;
        out = Some(match out {
            None => part,
            Some(acc) => acc.add(&part)?,
        });
    }
    Ok(out.expect("four subbands"))
}

pub fn init<T: Element>(init: &mut Init<'_, T>, prefix: &str, c: usize, hidden: usize) -> Result<()> {
    let (h0, h1) = haar_taps();
    init.tensor(&format!("{prefix}.h0"), Tensor::from_f64_slice(&[2], &h0)?)?;
    init.tensor(&format!("{prefix}.h1"), Tensor::from_f64_slice(&[2], &h1)?)?;
    init.conv(&format!("{prefix}.mix1"), hidden, 4 * c, 3, true)?;
    init.conv_zero(&format!("{prefix}.mix2"), 4 * c, hidden, 3)
}

/// `crop(idwt(subbands + delta(subbands)))` on the reflect-padded input.
/// The delta network's last layer starts at zero, so the block is the
/// identity at initialization.
pub fn lwn_forward<'t, T: Element>(b: &Bound<'t, T>, prefix: &str, x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape().to_vec();
    ensure!(s.len() == 4, "lwn expects NCHW, got {:?}", s);
    let (h, w) = (s[2], s[3]);
    ensure!(h >= 2 && w >= 2, "lwn needs spatial extents >= 2, got {}x{}", h, w);
    let mix1 = b.get(&format!("{prefix}.mix1.weight"))?;
    ensure!(
        mix1.shape()[1] == 4 * s[1],
        "lwn built for {} channels, input has {}",
        mix1.shape()[1] / 4,
        s[1]
    );
    let padded = x.pad_reflect(0, h % 2, 0, w % 2)?;
    let h0 = b.get(&format!("{prefix}.h0"))?;
    let h1 = b.get(&format!("{prefix}.h1"))?;
    let sub = dwt2d(&padded, h0, h1)?;
    let stack = concat(&sub.as_array(), 1)?;
    let hidden = conv(b, &format!("{prefix}.mix1"), &stack, 1, 1, 1)?.gelu();
    let delta = conv(b, &format!("{prefix}.mix2"), &hidden, 1, 1, 1)?;
    let updated = stack.add(&delta)?.chunk(4, 1)?;
    let mut it = updated.into_iter();
    let sub = Subbands {
        ll: it.next().expect("4"),
        lh: it.next().expect("4"),
        hl: it.next().expect("4"),
        hh: it.next().expect("4"),
    };
    let rec = idwt2d(&sub, h0, h1)?;
    if h % 2 == 0 && w % 2 == 0 {
        return Ok(rec);
    }
    rec.narrow(2, 0, h)?.narrow(3, 0, w)
}
