//! Central finite differences as a gradient oracle, and the 64-bit check
//! suite that compares them with the tape's backward pass.

use crate::autograd::{Tape, Var};
use crate::config::DlenConfig;
use crate::error::{ensure, Error, Result};
use crate::model::DlenModel;
use crate::params::{Bound, Init, Params};
use crate::rng::Prng;
use crate::tensor::Tensor;
use crate::{ilb, lcp, seb, wavelet};

pub const DEFAULT_STEP: f64 = 3e-4;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Norms below this are treated as zero when forming relative errors.
const NORM_FLOOR: f64 = 1e-10;

/// Fourth-order central difference for every element `i`:
/// `(8 (f(x + h) - f(x - h)) - (f(x + 2h) - f(x - 2h))) / 12h`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    h: f64,
) -> Result<Tensor<f64>> {
    let coords: Vec<usize> = (0..x.len()).collect();
    let g = finite_diff_at(&mut f, x, h, &coords)?;
    Tensor::from_vec(x.shape(), g)
}

fn finite_diff_at(
    f: &mut impl FnMut(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    h: f64,
    coords: &[usize],
) -> Result<Vec<f64>> {
    ensure!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe.data()[i];
        let mut at = |offset: f64| -> Result<f64> {
            probe.data_mut()[i] = orig + offset;
            let v = f(&probe)?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "function value at element {i} is not finite"
                )));
            }
            Ok(v)
        };
        let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
        probe.data_mut()[i] = orig;
        out.push((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h));
    }
    Ok(out)
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both are (near) zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < NORM_FLOOR {
        diff
    } else {
        diff / scale
    }
}

/// Outcome of one named check: the worst relative error over its inputs.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub rel_error: f64,
    pub worst_input: String,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.rel_error < self.tolerance
    }
}

type Builder<'a> = dyn for<'t> Fn(&Bound<'t, f64>) -> Result<Var<'t, f64>> + 'a;

/// Compare backward and finite differences for the scalar
/// `sum(build(inputs) ⊙ R)` with a fixed random `R`. At most `max_coords`
/// randomly chosen elements of each input are probed (all when `None`).
pub fn check(
    name: &str,
    inputs: &Params<f64>,
    build: &Builder<'_>,
    max_coords: Option<usize>,
    tolerance: f64,
    rng: &mut Prng,
) -> Result<CheckOutcome> {
    check_with_step(name, inputs, build, max_coords, tolerance, DEFAULT_STEP, rng)
}

/// [`check`] with an explicit finite-difference step.
pub fn check_with_step(
    name: &str,
    inputs: &Params<f64>,
    build: &Builder<'_>,
    max_coords: Option<usize>,
    tolerance: f64,
    step: f64,
    rng: &mut Prng,
) -> Result<CheckOutcome> {
    // Backward pass.
    let tape = Tape::new();
    let b = inputs.bind(&tape, true);
    let out = build(&b)?;
    let weights = Tensor::randn(out.shape(), 1.0, rng);
    let loss = out.mul(&tape.constant(weights.clone()))?.sum();
    let grads = tape.backward(&loss)?;
    let analytic: Vec<(String, Tensor<f64>)> = b
        .iter()
        .map(|(n, v)| (n.to_string(), grads.get_or_zeros(v)))
        .collect();

    let mut worst = CheckOutcome {
        name: name.to_string(),
        rel_error: 0.0,
        worst_input: String::new(),
        tolerance,
    };
    for (input, bw) in analytic {
        let x = inputs.get(&input).expect("bound from inputs");
        let coords = sample_coords(x.len(), max_coords, rng);
        let mut f = |probe: &Tensor<f64>| -> Result<f64> {
            let mut values = inputs.clone();
            *values.get_mut(&input).expect("present") = probe.clone();
            let tape = Tape::new();
            let out = build(&values.bind(&tape, false))?;
            Ok(out
                .value()
                .data()
                .iter()
                .zip(weights.data())
                .map(|(a, w)| a * w)
                .sum())
        };
        let fd = finite_diff_at(&mut f, x, step, &coords)?;
        let bw_sel: Vec<f64> = coords.iter().map(|&i| bw.data()[i]).collect();
        let err = relative_error(&bw_sel, &fd);
        if err >= worst.rel_error {
            worst.rel_error = err;
            worst.worst_input = input.clone();
        }
    }
    Ok(worst)
}

fn sample_coords(len: usize, max: Option<usize>, rng: &mut Prng) -> Vec<usize> {
    match max {
        Some(m) if len > m => {
            let mut all: Vec<usize> = (0..len).collect();
            for i in 0..m {
                let j = i + rng.below((len - i) as u64) as usize;
                all.swap(i, j);
            }
            let mut pick = all[..m].to_vec();
            pick.sort_unstable();
            pick
        }
        _ => (0..len).collect(),
    }
}

/// Add N(0, std) noise to every parameter so that zero-initialized layers
/// take part in the check.
pub fn perturb(params: &mut Params<f64>, std: f64, rng: &mut Prng) {
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            *v += std * z;
        }
    }
}

fn named(pairs: Vec<(&str, Tensor<f64>)>) -> Params<f64> {
    let mut p = Params::new();
    for (n, t) in pairs {
        p.insert(n, t).expect("distinct names");
    }
    p
}

fn randn(shape: &[usize], rng: &mut Prng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Checks of the individual operations, each repeated over `seeds` seeds.
pub fn op_suite(seed: u64, seeds: usize) -> Result<Vec<CheckOutcome>> {
    let mut results: Vec<CheckOutcome> = Vec::new();
    let mut merge = |r: CheckOutcome| match results.iter_mut().find(|o| o.name == r.name) {
        Some(o) if r.rel_error > o.rel_error => *o = r,
        Some(_) => {}
        None => results.push(r),
    };
    for s in 0..seeds as u64 {
        let rng = &mut Prng::new(seed.wrapping_add(s * 7919));
        let tol = OP_TOLERANCE;

        let p = named(vec![
            ("x", randn(&[2, 3, 5, 6], rng)),
            ("w", randn(&[4, 3, 3, 3], rng)),
            ("b", randn(&[4], rng)),
        ]);
        merge(check("conv2d", &p, &|b| {
            b.get("x")?.conv2d(b.get("w")?, Some(b.get("b")?), 1, 1, 1)
        }, None, tol, rng)?);

        let p = named(vec![
            ("x", randn(&[1, 4, 6, 6], rng)),
            ("w", randn(&[6, 2, 4, 4], rng)),
        ]);
        merge(check("conv2d_strided_grouped", &p, &|b| {
            b.get("x")?.conv2d(b.get("w")?, None, 2, 1, 2)
        }, None, tol, rng)?);

        let p = named(vec![
            ("x", randn(&[1, 3, 4, 4], rng)),
            ("w", randn(&[3, 1, 3, 3], rng)),
            ("b", randn(&[3], rng)),
        ]);
        merge(check("conv2d_depthwise", &p, &|b| {
            b.get("x")?.conv2d(b.get("w")?, Some(b.get("b")?), 1, 1, 3)
        }, None, tol, rng)?);

        let p = named(vec![
            ("x", randn(&[2, 4, 3, 2], rng)),
            ("w", randn(&[4, 3, 2, 2], rng)),
            ("b", randn(&[3], rng)),
        ]);
        merge(check("conv_transpose2d", &p, &|b| {
            b.get("x")?.conv_transpose2d(b.get("w")?, Some(b.get("b")?), 2, 1)
        }, None, tol, rng)?);

        let p = named(vec![
            ("x", randn(&[1, 4, 3, 3], rng)),
            ("w", randn(&[4, 1, 3, 3], rng)),
        ]);
        merge(check("conv_transpose2d_grouped", &p, &|b| {
            b.get("x")?.conv_transpose2d(b.get("w")?, None, 2, 4)
        }, None, tol, rng)?);

        let p = named(vec![
            ("a", randn(&[2, 3, 2, 4], rng)),
            ("b", randn(&[3, 4, 5], rng)),
        ]);
        merge(check("matmul", &p, &|b| b.get("a")?.matmul(b.get("b")?), None, tol, rng)?);

        let p = named(vec![("x", randn(&[2, 4, 3], rng).map(|v| 2.0 * v))]);
        merge(check("softmax", &p, &|b| b.get("x")?.softmax(1), None, tol, rng)?);

        let p = named(vec![
            ("x", randn(&[2, 5, 3, 2], rng)),
            ("g", randn(&[5], rng)),
            ("b", randn(&[5], rng)),
        ]);
        merge(check("layer_norm", &p, &|b| {
            b.get("x")?.layer_norm(1, b.get("g")?, b.get("b")?, 1e-5)
        }, None, tol, rng)?);

        let p = named(vec![("x", randn(&[3, 7], rng).map(|v| 2.0 * v))]);
        merge(check("gelu", &p, &|b| Ok(b.get("x")?.gelu()), None, tol, rng)?);

        let p = named(vec![
            ("a", randn(&[2, 3, 4], rng)),
            ("b", randn(&[3, 1], rng).map(|v| v.abs() + 0.5)),
        ]);
        merge(check("elementwise", &p, &|b| {
            let (x, y) = (b.get("a")?, b.get("b")?);
            let s = x.add(y)?.mul(y)?.sub(y)?.div(y)?;
            Ok(s.add_scalar(0.3).mul_scalar(1.7).mean(&[1], true)?)
        }, None, tol, rng)?);

        let p = named(vec![("x", randn(&[1, 2, 3, 5], rng))]);
        merge(check("reshape_permute_concat", &p, &|b| {
            let x = b.get("x")?;
            let y = x.permute(&[0, 2, 3, 1])?.reshape(&[15, 2])?;
            let z = crate::ops::concat(&[&y, &y.narrow(1, 1, 1)?], 1)?;
            z.chunk(3, 1).map(|v| v[2].clone())
        }, None, tol, rng)?);

        let p = named(vec![("x", randn(&[1, 2, 3, 4], rng))]);
        merge(check("pad_reflect_resize", &p, &|b| {
            b.get("x")?.pad_reflect(2, 1, 0, 3)?.resize_bilinear(7, 5)
        }, None, tol, rng)?);
    }
    Ok(results)
}

/// Block-level checks: attention blocks, wavelet block, light predictor.
pub fn block_suite(seed: u64, seeds: usize) -> Result<Vec<CheckOutcome>> {
    let mut results: Vec<CheckOutcome> = Vec::new();
    let mut merge = |r: CheckOutcome| match results.iter_mut().find(|o| o.name == r.name) {
        Some(o) if r.rel_error > o.rel_error => *o = r,
        Some(_) => {}
        None => results.push(r),
    };
    let tol = OP_TOLERANCE;
    for s in 0..seeds as u64 {
        let rng = &mut Prng::new(seed.wrapping_add(s * 104_729));

        let mut p = {
            let mut init = Init::new(rng);
            ilb::init_miab(&mut init, "m", 4, 2, 4, 4)?;
            init.params
        };
        perturb(&mut p, 0.2, rng);
        p.insert("x", randn(&[1, 4, 4, 4], rng))?;
        p.insert("y", randn(&[1, 4, 4, 4], rng))?;
        merge(check("ig_attention", &p, &|b| {
            ilb::ig_attention(b, "m", b.get("x")?, b.get("y")?, 2).map(|a| a.out)
        }, None, tol, rng)?);
        merge(check("miab_forward", &p, &|b| {
            ilb::miab_forward(b, "m", b.get("x")?, b.get("y")?, 2)
        }, None, tol, rng)?);

        let mut p = {
            let mut init = Init::new(rng);
            seb::init_seab(&mut init, "s", 4, 2)?;
            init.params
        };
        perturb(&mut p, 0.2, rng);
        p.insert("t", randn(&[1, 4, 4, 4], rng))?;
        p.insert("l", Tensor::rand_uniform(&[1, 1, 4, 4], 0.1, 1.0, rng))?;
        merge(check("seab_attention", &p, &|b| {
            seb::seab_attention(b, "s", b.get("t")?, 2).map(|a| a.out)
        }, None, tol, rng)?);
        merge(check("seab_forward", &p, &|b| {
            seb::seab_forward(b, "s", b.get("t")?, b.get("l")?, 2)
        }, None, tol, rng)?);

        let mut p = {
            let mut init = Init::new(rng);
            wavelet::init(&mut init, "w", 2, 4)?;
            init.params
        };
        perturb(&mut p, 0.2, rng);
        p.insert("x", randn(&[1, 2, 5, 6], rng))?;
        merge(check("lwn_forward", &p, &|b| {
            wavelet::lwn_forward(b, "w", b.get("x")?)
        }, None, tol, rng)?);

        let mut p = {
            let mut init = Init::new(rng);
            lcp::init(&mut init, "c", 4, 1.0)?;
            init.params
        };
        perturb(&mut p, 0.2, rng);
        p.insert("img", Tensor::rand_uniform(&[1, 3, 8, 8], 0.0, 1.0, rng))?;
        merge(check("lcp_forward", &p, &|b| {
            let img = b.get("img")?;
            let prior = lcp::illumination_prior(img)?;
            let out = lcp::lcp_forward(b, "c", img, &prior)?;
            crate::ops::concat(&[&out.i_lu, &out.f_lu, &out.l_tilde], 1)
        }, None, tol, rng)?);
    }
    Ok(results)
}

/// Whole-model check at `1x3x8x8`, `C = C_s = 4`, all parameters perturbed
/// away from their initial values. At most `max_coords` elements per
/// parameter tensor are probed.
pub fn model_check(seed: u64, max_coords: Option<usize>) -> Result<CheckOutcome> {
    let rng = &mut Prng::new(seed);
    let cfg = DlenConfig::tiny(4, 4, 8, 8);
    let model = DlenModel::<f64>::init(cfg, seed)?;
    let mut p = model.params.clone();
    perturb(&mut p, 0.1, rng);
    p.insert("input", Tensor::rand_uniform(&[1, 3, 8, 8], 0.0, 1.0, rng))?;
    let model = &model;
    check(
        "whole_model",
        &p,
        &|b| Ok(model.forward(b, b.get("input")?)?.i_en),
        max_coords,
        MODEL_TOLERANCE,
        rng,
    )
}

/// Everything: operations, blocks and the whole model.
pub fn full_suite(seed: u64, model_coords: Option<usize>) -> Result<Vec<CheckOutcome>> {
    let mut all = op_suite(seed, 5)?;
    all.extend(block_suite(seed, 5)?);
    all.push(model_check(seed, model_coords)?);
    Ok(all)
}
