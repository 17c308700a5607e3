//! Pointwise arithmetic, activations and broadcasting reductions.
//!
//! Broadcasting is one-directional: in `a op b` the result has the shape of
//! `a`, and `b` must be a scalar or have a shape that right-aligns with `a`
//! where every extent either matches or is 1. Gradients for `b` are summed
//! over the broadcast extents.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::autograd::Var;
use crate::error::{ensure, Result};
use crate::tensor::{Element, Tensor};

/// Row-wise broadcast plan of `b` into the shape of `a`.
#[derive(Debug, Clone)]
pub(crate) struct Bcast {
    row_len: usize,
    b_step: usize,
    b_rows: Vec<usize>,
}

impl Bcast {
    pub(crate) fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        ensure!(
            b.len() <= a.len(),
            "cannot broadcast {:?} into {:?}",
            b,
            a
        );
        let mut b_al = vec![1usize; a.len() - b.len()];
        b_al.extend_from_slice(b);
        for (&ad, &bd) in a.iter().zip(&b_al) {
            ensure!(
                ad == bd || bd == 1,
                "cannot broadcast {:?} into {:?}",
                b,
                a
            );
        }
        if a.is_empty() {
            return Ok(Self {
                row_len: 1,
                b_step: 0,
                b_rows: vec![0],
            });
        }
        let last = a.len() - 1;
        let b_strides = crate::tensor::strides(&b_al);
        let eff: Vec<usize> = (0..a.len())
            .map(|d| if b_al[d] == 1 { 0 } else { b_strides[d] })
            .collect();
        let rows: usize = a[..last].iter().product();
        let mut b_rows = Vec::with_capacity(rows);
        let mut idx = vec![0usize; last];
        let mut off = 0usize;
        for _ in 0..rows {
            b_rows.push(off);
            for d in (0..last).rev() {
                idx[d] += 1;
                off += eff[d];
                if idx[d] < a[d] {
                    break;
                }
                off -= eff[d] * idx[d];
                idx[d] = 0;
            }
        }
        Ok(Self {
            row_len: a[last],
            b_step: eff[last].min(1),
            b_rows,
        })
    }

    /// `f(a_index, b_index)` for every element of `a`, in order.
    #[inline]
    pub(crate) fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        for (r, &boff) in self.b_rows.iter().enumerate() {
            let abase = r * self.row_len;
            for i in 0..self.row_len {
                f(abase + i, boff + i * self.b_step);
            }
        }
    }
}

/// Apply `f(a, b)` with `b` broadcast into `a`.
pub(crate) fn bcast_map<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    let plan = Bcast::new(a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); a.len()];
    plan.for_each(|i, j| out[i] = f(ad[i], bd[j]));
    Tensor::from_vec(a.shape(), out)
}

/// Sum `g` (shaped like the broadcast result) down to `b_shape`.
pub(crate) fn reduce_to<T: Element>(g: &Tensor<T>, b_shape: &[usize]) -> Tensor<T> {
    if g.shape() == b_shape {
        return g.clone();
    }
    let plan = Bcast::new(g.shape(), b_shape).expect("shape checked in forward");
    let mut out = Tensor::zeros(b_shape);
    let od = out.data_mut();
    let gd = g.data();
    plan.for_each(|i, j| od[j] += gd[i]);
    out
}

/// Like [`reduce_to`] but each term is `f(g[i], a[i], b[j])`.
fn reduce_to_with<T: Element>(
    g: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T, T) -> T,
) -> Tensor<T> {
    let plan = Bcast::new(g.shape(), b.shape()).expect("shape checked in forward");
    let mut out = Tensor::zeros(b.shape());
    let od = out.data_mut();
    let (gd, ad, bd) = (g.data(), a.data(), b.data());
    plan.for_each(|i, j| od[j] += f(gd[i], ad[i], bd[j]));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl<'t, T: Element> Var<'t, T> {
    /// Elementwise `self (kind) other`, `other` broadcast into `self`.
    pub fn binary(&self, other: &Var<'t, T>, kind: BinaryKind) -> Result<Var<'t, T>> {
        let (a, b) = (self.rc(), other.rc());
        let value = match kind {
            BinaryKind::Add => bcast_map(&a, &b, |x, y| x + y)?,
            BinaryKind::Sub => bcast_map(&a, &b, |x, y| x - y)?,
            BinaryKind::Mul => bcast_map(&a, &b, |x, y| x * y)?,
            BinaryKind::Div => bcast_map(&a, &b, |x, y| x / y)?,
        };
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        // Sums only need the shape of `b`; products keep both operands alive.
        let b_shape = b.shape().to_vec();
        let saved = matches!(kind, BinaryKind::Mul | BinaryKind::Div).then_some((a, b));
        Ok(self
            .tape()
            .record(name, value, &[self, other], move |g, needs| {
                let ga = needs[0].then(|| match (kind, &saved) {
                    (BinaryKind::Mul, Some((_, b))) => bcast_map(g, b, |x, y| x * y).unwrap(),
                    (BinaryKind::Div, Some((_, b))) => bcast_map(g, b, |x, y| x / y).unwrap(),
                    _ => g.clone(),
                });
                let gb = needs[1].then(|| match (kind, &saved) {
                    (BinaryKind::Mul, Some((a, b))) => {
                        reduce_to_with(g, a, b, |gi, ai, _| gi * ai)
                    }
                    (BinaryKind::Div, Some((a, b))) => {
                        reduce_to_with(g, a, b, |gi, ai, bj| -gi * ai / (bj * bj))
                    }
                    (BinaryKind::Sub, _) => reduce_to(g, &b_shape).map(|v| -v),
                    _ => reduce_to(g, &b_shape),
                });
                vec![ga, gb]
            }))
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryKind::Div)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        let value = self.value().map(|v| v + c);
        self.tape()
            .record("add_scalar", value, &[self], |g, _| vec![Some(g.clone())])
    }

    pub fn mul_scalar(&self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        let value = self.value().map(|v| v * c);
        self.tape()
            .record("mul_scalar", value, &[self], move |g, _| {
                vec![Some(g.map(|v| v * c))]
            })
    }

    pub fn abs(&self) -> Var<'t, T> {
        let x = self.rc();
        let value = x.map(|v| v.abs());
        self.tape().record("abs", value, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |gi, xi| {
                if xi > T::zero() {
                    gi
                } else if xi < T::zero() {
                    -gi
                } else {
                    T::zero()
                }
            }))]
        })
    }

    /// Gaussian-error-function GELU, `x * Phi(x)`.
    pub fn gelu(&self) -> Var<'t, T> {
        let x = self.rc();
        let value = x.map(gelu_scalar);
        self.tape().record("gelu", value, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |gi, xi| gi * gelu_grad_scalar(xi)))]
        })
    }

    /// Sum of all elements as a one-element tensor of shape `[]`.
    pub fn sum(&self) -> Var<'t, T> {
        let shape = self.shape().to_vec();
        let value = Tensor::scalar(self.value().sum());
        self.tape().record("sum", value, &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.data()[0]))]
        })
    }

    /// Arithmetic mean over `axes`. Reduced axes are kept with extent 1 when
    /// `keep_dims` is set and removed otherwise. An empty `axes` list is the
    /// identity.
    pub fn mean(&self, axes: &[usize], keep_dims: bool) -> Result<Var<'t, T>> {
        let shape = self.shape().to_vec();
        for (i, &ax) in axes.iter().enumerate() {
            ensure!(ax < shape.len(), "axis {} out of range for {:?}", ax, shape);
            ensure!(!axes[..i].contains(&ax), "axis {} listed twice", ax);
        }
        if axes.is_empty() {
            return Ok(self.clone());
        }
        let kept: Vec<usize> = shape
            .iter()
            .enumerate()
            .map(|(d, &e)| if axes.contains(&d) { 1 } else { e })
            .collect();
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let inv = T::from_f64(1.0 / count as f64);
        let mut value = reduce_to(self.value(), &kept).map(|v| v * inv);
        let out_shape: Vec<usize> = if keep_dims {
            kept.clone()
        } else {
            shape
                .iter()
                .enumerate()
                .filter(|(d, _)| !axes.contains(d))
                .map(|(_, &e)| e)
                .collect()
        };
        value = value.reshaped(&out_shape)?;
        Ok(self.tape().record("mean", value, &[self], move |g, _| {
            let g = g.clone().reshaped(&kept).expect("same length");
            let full = Tensor::zeros(&shape);
            vec![Some(bcast_map(&full, &g, |_, gv| gv * inv).expect("kept shape"))]
        }))
    }

    pub fn mean_all(&self) -> Var<'t, T> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.mean(&axes, false).expect("all axes are valid")
    }
}

pub(crate) fn gelu_scalar<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad_scalar<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(1.0 / (2.0 * PI).sqrt());
    cdf + x * pdf
}
