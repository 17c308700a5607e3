//! Multi-head channel ("transposed") attention on NCHW features.
//!
//! Per head, with channel-major `Q, K, V` of shape `[d, HW]`:
//! `A = softmax_a(K Q^T / (HW * scale))` so that every column of `A` sums to
//! one, and the output channel `b` is `sum_a A[a, b] * V[a, :]`. Dividing by
//! the token count keeps the scores at the same magnitude for any resolution.

use crate::autograd::Var;
use crate::error::{ensure, Result};
use crate::ops::check_nonzero_scales;
use crate::tensor::Element;

pub struct AttentionOutput<'t, T: Element> {
    /// `[N, C, H, W]`
    pub out: Var<'t, T>,
    /// `[N, heads, d, d]`, indexed `[key channel, query channel]`.
    pub attn: Var<'t, T>,
}

/// `scale` holds one temperature per head, shape `[heads]`.
pub fn channel_attention<'t, T: Element>(
    q: &Var<'t, T>,
    k: &Var<'t, T>,
    v: &Var<'t, T>,
    scale: &Var<'t, T>,
    heads: usize,
) -> Result<AttentionOutput<'t, T>> {
    let s = q.shape().to_vec();
    ensure!(s.len() == 4, "attention expects NCHW, got {:?}", s);
    ensure!(
        k.shape() == s.as_slice() && v.shape() == s.as_slice(),
        "q/k/v shapes differ: {:?} {:?} {:?}",
        s,
        k.shape(),
        v.shape()
    );
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    ensure!(
        heads > 0 && c % heads == 0,
        "{} channels not divisible by {} heads",
        c,
        heads
    );
    ensure!(
        scale.shape() == [heads],
        "scale shape {:?} does not match {} heads",
        scale.shape(),
        heads
    );
    check_nonzero_scales(scale.value(), "attention scale")?;
    let d = c / heads;
    let split = |x: &Var<'t, T>| x.reshape(&[n, heads, d, hw]);
    let (qh, kh, vh) = (split(q)?, split(k)?, split(v)?);
    let scores = kh.matmul(&qh.transpose_last()?)?.mul_scalar(1.0 / hw as f64);
    let scores = scores.div(&scale.reshape(&[1, heads, 1, 1])?)?;
    let attn = scores.softmax(2)?;
    let out = attn.transpose_last()?.matmul(&vh)?.reshape(&s)?;
    Ok(AttentionOutput { out, attn })
}
