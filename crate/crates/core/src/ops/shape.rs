//! Re-indexing operations: reshape, permute, concat and narrow.

use crate::autograd::Var;
use crate::error::{ensure, Result};
use crate::tensor::{split_at_axis, strides, Element, Tensor};

/// Copy `x` with its axes reordered so that output axis `i` is input axis
/// `order[i]`.
pub fn permute_tensor<T: Element>(x: &Tensor<T>, order: &[usize]) -> Result<Tensor<T>> {
    let shape = x.shape();
    ensure!(
        order.len() == shape.len(),
        "permutation {:?} has wrong rank for {:?}",
        order,
        shape
    );
    let mut seen = vec![false; order.len()];
    for &o in order {
        ensure!(o < order.len() && !seen[o], "{:?} is not a permutation", order);
        seen[o] = true;
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = order.iter().map(|&o| shape[o]).collect();
    let src_strides: Vec<usize> = order.iter().map(|&o| in_strides[o]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    if n > 0 {
        let rank = out_shape.len();
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        let src = x.data();
        for _ in 0..n {
            out.push(src[off]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                off += src_strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                off -= src_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
    Tensor::from_vec(&out_shape, out)
}

/// Concatenate tensors along `axis`; all other extents must agree.
pub fn concat_tensors<T: Element>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    ensure!(!parts.is_empty(), "concat of zero tensors");
    let first = parts[0].shape();
    ensure!(axis < first.len(), "axis {} out of range for {:?}", axis, first);
    for p in parts {
        let s = p.shape();
        ensure!(
            s.len() == first.len()
                && s.iter()
                    .zip(first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b),
            "concat extents differ: {:?} vs {:?}",
            s,
            first
        );
    }
    let (outer, _, inner) = split_at_axis(first, axis);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let run = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * run..(o + 1) * run]);
        }
    }
    let mut shape = first.to_vec();
    shape[axis] = total;
    Tensor::from_vec(&shape, out)
}

impl<'t, T: Element> Var<'t, T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let old = self.shape().to_vec();
        let value = self.to_tensor().reshaped(shape)?;
        Ok(self.tape().record("reshape", value, &[self], move |g, _| {
            vec![Some(g.clone().reshaped(&old).expect("same length"))]
        }))
    }

    pub fn permute(&self, order: &[usize]) -> Result<Var<'t, T>> {
        let value = permute_tensor(self.value(), order)?;
        let mut inverse = vec![0; order.len()];
        for (i, &o) in order.iter().enumerate() {
            inverse[o] = i;
        }
        Ok(self.tape().record("permute", value, &[self], move |g, _| {
            vec![Some(permute_tensor(g, &inverse).expect("valid permutation"))]
        }))
    }

    /// Swap the last two axes.
    pub fn transpose_last(&self) -> Result<Var<'t, T>> {
        let r = self.shape().len();
        ensure!(r >= 2, "transpose needs rank >= 2, got {:?}", self.shape());
        let mut order: Vec<usize> = (0..r).collect();
        order.swap(r - 1, r - 2);
        self.permute(&order)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let value = self.value().narrow(axis, start, len)?;
        let shape = self.shape().to_vec();
        Ok(self.tape().record("narrow", value, &[self], move |g, _| {
            let (outer, extent, inner) = split_at_axis(&shape, axis);
            let mut full = Tensor::zeros(&shape);
            let fd = full.data_mut();
            let gd = g.data();
            for o in 0..outer {
                let dst = o * extent * inner + start * inner;
                fd[dst..dst + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(full)]
        }))
    }

    /// Split into `parts` equal pieces along `axis`.
    pub fn chunk(&self, parts: usize, axis: usize) -> Result<Vec<Var<'t, T>>> {
        ensure!(axis < self.shape().len(), "axis {} out of range", axis);
        let extent = self.shape()[axis];
        ensure!(
            parts > 0 && extent % parts == 0,
            "cannot split extent {} into {} parts",
            extent,
            parts
        );
        let step = extent / parts;
        (0..parts).map(|i| self.narrow(axis, i * step, step)).collect()
    }
}

/// Differentiable concatenation along `axis`.
pub fn concat<'t, T: Element>(parts: &[&Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    ensure!(!parts.is_empty(), "concat of zero tensors");
    let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
    let value = concat_tensors(&values, axis)?;
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    Ok(parts[0]
        .tape()
        .record("concat", value, parts, move |g, needs| {
            let mut start = 0;
            extents
                .iter()
                .zip(needs)
                .map(|(&e, &need)| {
                    let piece = need.then(|| g.narrow(axis, start, e).expect("in range"));
                    start += e;
                    piece
                })
                .collect()
        }))
}
