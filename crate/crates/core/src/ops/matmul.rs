//! Batched matrix product with broadcasting over leading extents.

use crate::autograd::Var;
use crate::error::{ensure, Result};
use crate::kernels::{gemm, rm, rm_t};
use crate::tensor::{strides, Element, Tensor};

/// Batch layout of `A[..., m, k] x B[..., k, n]`: output batch shape and,
/// for every output batch index, the matrix offsets into `A` and `B`.
struct BatchPlan {
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
    pairs: Vec<(usize, usize)>,
}

fn plan(a: &[usize], b: &[usize]) -> Result<BatchPlan> {
    ensure!(
        a.len() >= 2 && b.len() >= 2,
        "matmul needs rank >= 2 operands, got {:?} and {:?}",
        a,
        b
    );
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    ensure!(k == k2, "matmul inner extents differ: {:?} x {:?}", a, b);
    let (ba, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let rank = ba.len().max(bb.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(ba), pad(bb));
    let mut batch = Vec::with_capacity(rank);
    for (&x, &y) in pa.iter().zip(&pb) {
        ensure!(
            x == y || x == 1 || y == 1,
            "matmul batch extents do not broadcast: {:?} x {:?}",
            a,
            b
        );
        batch.push(x.max(y));
    }
    let (sa, sb) = (strides(&pa), strides(&pb));
    let count: usize = batch.iter().product();
    let mut pairs = Vec::with_capacity(count);
    let mut idx = vec![0usize; rank];
    for _ in 0..count {
        let (mut oa, mut ob) = (0, 0);
        for d in 0..rank {
            if pa[d] != 1 {
                oa += idx[d] * sa[d];
            }
            if pb[d] != 1 {
                ob += idx[d] * sb[d];
            }
        }
        pairs.push((oa * m * k, ob * k * n));
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < batch[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let mut out_shape = batch;
    out_shape.extend_from_slice(&[m, n]);
    Ok(BatchPlan {
        m,
        k,
        n,
        out_shape,
        pairs,
    })
}

impl<'t, T: Element> Var<'t, T> {
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let p = plan(self.shape(), other.shape())?;
        let (a, b) = (self.rc(), other.rc());
        let (m, k, n) = (p.m, p.k, p.n);
        let mut out = Tensor::zeros(&p.out_shape);
        for (bi, &(oa, ob)) in p.pairs.iter().enumerate() {
            gemm(
                m,
                k,
                n,
                T::one(),
                &a.data()[oa..],
                rm(k),
                &b.data()[ob..],
                rm(n),
                T::zero(),
                &mut out.data_mut()[bi * m * n..],
                rm(n),
            );
        }
        let pairs = p.pairs;
        Ok(self
            .tape()
            .record("matmul", out, &[self, other], move |g, needs| {
                let gd = g.data();
                let ga = needs[0].then(|| {
                    // dA = dC * B^T, summed over broadcast batches.
                    let mut da = Tensor::zeros(a.shape());
                    for (bi, &(oa, ob)) in pairs.iter().enumerate() {
                        gemm(
                            m,
                            n,
                            k,
                            T::one(),
                            &gd[bi * m * n..],
                            rm(n),
                            &b.data()[ob..],
                            rm_t(n),
                            T::one(),
                            &mut da.data_mut()[oa..],
                            rm(k),
                        );
                    }
                    da
                });
                let gb = needs[1].then(|| {
                    // dB = A^T * dC
                    let mut db = Tensor::zeros(b.shape());
                    for (bi, &(oa, ob)) in pairs.iter().enumerate() {
                        gemm(
                            k,
                            m,
                            n,
                            T::one(),
                            &a.data()[oa..],
                            rm_t(k),
                            &gd[bi * m * n..],
                            rm(n),
                            T::one(),
                            &mut db.data_mut()[ob..],
                            rm(n),
                        );
                    }
                    db
                });
                vec![ga, gb]
            }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::rng::Prng;

    fn triple_loop(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn two_by_two() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::<f64>::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        assert_eq!(a.matmul(&b).unwrap().value().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn identity_right() {
        let mut rng = Prng::new(1);
        let tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng));
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 5] = 1.0;
        }
        let eye = tape.constant(eye);
        assert_eq!(a.matmul(&eye).unwrap().value(), a.value());
    }

    #[test]
    fn random_against_triple_loop() {
        let mut rng = Prng::new(2);
        let tape = Tape::new();
        let a = Tensor::<f64>::randn(&[2, 3], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng);
        let want = triple_loop(a.data(), b.data(), 2, 3, 4);
        let got = tape.constant(a).matmul(&tape.constant(b)).unwrap();
        for (x, y) in got.value().data().iter().zip(&want) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_broadcast() {
        let mut rng = Prng::new(3);
        let tape = Tape::new();
        let a = Tensor::<f64>::randn(&[2, 3, 2, 4], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[3, 4, 5], 1.0, &mut rng);
        let c = tape.constant(a.clone()).matmul(&tape.constant(b.clone())).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2, 5]);
        for n in 0..2 {
            for h in 0..3 {
                let am = &a.data()[(n * 3 + h) * 8..][..8];
                let bm = &b.data()[h * 20..][..20];
                let want = triple_loop(am, bm, 2, 4, 5);
                let got = &c.value().data()[(n * 3 + h) * 10..][..10];
                for (x, y) in got.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn inner_mismatch_rejected() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(a.matmul(&b).is_err());
    }
}
