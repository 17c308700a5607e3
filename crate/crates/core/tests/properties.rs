use dlen_core::image::Image;
use dlen_core::metrics::{mse, psnr, ssim_global, ssim_windowed};
use dlen_core::wavelet::{dwt2d, haar_taps, idwt2d};
use dlen_core::{mae_loss, DlenConfig, DlenModel, Prng, Tape, Tensor};
use proptest::prelude::*;

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn image_from(values: &[f32], w: usize, h: usize) -> Image {
    Image::new(w, h, values[..w * h * 3].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // <conv(x), y> = <x, conv^T(y)> for the unpadded strided convolution.
    #[test]
    fn conv_transpose_is_adjoint(
        seed in any::<u64>(),
        c_in in 1usize..4,
        c_out in 1usize..4,
        k in 1usize..4,
        stride in 1usize..3,
        ho in 1usize..4,
        wo in 1usize..4,
    ) {
        let mut rng = Prng::new(seed);
        let (h, w) = ((ho - 1) * stride + k, (wo - 1) * stride + k);
        let x = Tensor::<f64>::randn(&[2, c_in, h, w], 1.0, &mut rng);
        let wt = Tensor::<f64>::randn(&[c_out, c_in, k, k], 1.0, &mut rng);
        let y = Tensor::<f64>::randn(&[2, c_out, ho, wo], 1.0, &mut rng);
        let tape = Tape::new();
        let w_var = tape.constant(wt.clone());
        let fwd = tape.constant(x.clone()).conv2d(&w_var, None, stride, 0, 1).unwrap();
        let wt_t = tape.constant(wt.clone());
        let back = tape.constant(y.clone()).conv_transpose2d(&wt_t, None, stride, 1).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        let lhs = dot(fwd.value(), &y);
        let rhs = dot(&x, back.value());
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn haar_round_trip_and_energy(
        seed in any::<u64>(),
        n in 1usize..3,
        c in 1usize..4,
        h2 in 1usize..6,
        w2 in 1usize..6,
    ) {
        let mut rng = Prng::new(seed);
        let x = Tensor::<f64>::randn(&[n, c, 2 * h2, 2 * w2], 1.0, &mut rng);
        let tape = Tape::new();
        let (h0, h1) = haar_taps();
        let h0 = tape.constant(Tensor::from_f64_slice(&[2], &h0).unwrap());
        let h1 = tape.constant(Tensor::from_f64_slice(&[2], &h1).unwrap());
        let sub = dwt2d(&tape.constant(x.clone()), &h0, &h1).unwrap();
        let back = idwt2d(&sub, &h0, &h1).unwrap();
        prop_assert!(back.value().max_abs_diff(&x) < 1e-10);
        let e: f64 = x.data().iter().map(|v| v * v).sum();
        let eb: f64 = sub.as_array().iter().flat_map(|b| b.value().data().iter().map(|v| v * v)).sum();
        prop_assert!((e - eb).abs() / e < 1e-10);
    }

    #[test]
    fn metrics_are_symmetric(values in prop::collection::vec(0.0f32..=1.0, 2 * 12 * 12 * 3)) {
        let (a, b) = values.split_at(12 * 12 * 3);
        let (a, b) = (image_from(a, 12, 12), image_from(b, 12, 12));
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert!((ssim_global(&a, &b, 1.0).unwrap() - ssim_global(&b, &a, 1.0).unwrap()).abs() < 1e-12);
        prop_assert!((ssim_windowed(&a, &b, 1.0).unwrap() - ssim_windowed(&b, &a, 1.0).unwrap()).abs() < 1e-12);
        prop_assert!((ssim_windowed(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-9);
        prop_assert!((ssim_global(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mse_and_mae_match_direct_loops(seed in any::<u64>()) {
        let mut rng = Prng::new(seed);
        let a = Tensor::<f64>::rand_uniform(&[2, 3, 5, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[2, 3, 5, 4], -1.0, 1.0, &mut rng);
        let mut abs_sum = 0.0;
        for i in 0..a.len() {
            abs_sum += (a.data()[i] - b.data()[i]).abs();
        }
        let tape = Tape::new();
        let l = mae_loss(&tape.constant(a.clone()), &tape.constant(b.clone())).unwrap();
        prop_assert!((l.value().data()[0] - abs_sum / a.len() as f64).abs() < 1e-12);

        let ia = Image::new(4, 5, a.data()[..60].iter().map(|v| v.abs() as f32).collect()).unwrap();
        let ib = Image::new(4, 5, b.data()[..60].iter().map(|v| v.abs() as f32).collect()).unwrap();
        let mut sq = 0.0;
        for y in 0..5 {
            for x in 0..4 {
                for c in 0..3 {
                    let d = ia.get(x, y, c) as f64 - ib.get(x, y, c) as f64;
                    sq += d * d;
                }
            }
        }
        prop_assert!((mse(&ia, &ib).unwrap() - sq / 60.0).abs() < 1e-9);
    }
}

fn noisy(base: &Image, amp: f32, rng: &mut Prng) -> Image {
    let noise = Tensor::<f32>::randn(&[base.pixels.len()], 1.0, rng);
    let px = base.pixels.iter().zip(noise.data()).map(|(v, n)| v + amp * n).collect();
    Image::new(base.width, base.height, px).unwrap()
}

#[test]
fn quality_drops_with_noise() {
    let mut rng = Prng::new(8);
    let base = dlen_core::synth::procedural_scene(32, 32, &mut rng);
    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for amp in [0.01, 0.05, 0.2] {
        let n = noisy(&base, amp, &mut Prng::new(77));
        let now = (
            psnr(&n, &base, 1.0).unwrap(),
            ssim_windowed(&n, &base, 1.0).unwrap(),
            ssim_global(&n, &base, 1.0).unwrap(),
        );
        assert!(now.0 < last.0 && now.1 < last.1 && now.2 < last.2, "{amp}: {now:?} vs {last:?}");
        last = now;
    }
}

/// Parameter count from the layer table, walked independently of the init
/// code.
fn expected_params(c: usize, cs: usize, hidden: usize, side: usize) -> usize {
    let conv = |co: usize, ci: usize, k: usize, bias: bool| co * ci * k * k + if bias { co } else { 0 };
    let lcp = conv(c, 4, 1, true) + conv(c, 1, 5, true) + conv(3, c, 1, true);
    let lwn = 4 + conv(hidden, 4 * c, 3, true) + conv(4 * c, hidden, 3, true);
    let miab = |w: usize, heads: usize, res: usize| {
        let d = w / heads;
        2 * w + 3 * w * d + heads + w * w + w * res * res + 2 * w + 2 * w * w + 2 * w * 9 + 2 * w * w
    };
    let blocks = [1, 2, 2];
    let heads = [1, 2, 4];
    let mut ilb = conv(c, 3, 3, true) + conv(3, c, 3, true);
    for l in 0..3 {
        let w = c << l;
        let copies = if l < 2 { 2 } else { 1 };
        ilb += copies * blocks[l] * miab(w, heads[l], side >> l);
        if l < 2 {
            ilb += 2 * conv(2 * w, w, 4, true) + (2 * w * w * 4 + w) + conv(w, 2 * w, 1, true);
        }
    }
    let seab = |w: usize, heads: usize| 2 * w + 3 * (w * w + 9 * w) + heads + w * w + 2 * w * w + 18 * w + 2 * w * w;
    let sblocks = [1, 1, 2, 2];
    let sheads = [1, 2, 4, 8];
    let mut seb = conv(cs, 3, 3, true) + conv(3, 2 * cs, 3, true);
    for l in 0..3 {
        let w = cs << l;
        seb += sblocks[l] * seab(w, sheads[l]) + conv(2 * w, w, 4, true) + (2 * w * w * 4 + w);
        let dec_w = if l == 0 { 2 * cs } else { seb += conv(w, 2 * w, 1, true); w };
        seb += sblocks[l] * seab(dec_w, sheads[l]);
    }
    seb += sblocks[3] * seab(8 * cs, sheads[3]) + 2 * seab(2 * cs, sheads[0]);
    lcp + lwn + ilb + seb
}

#[test]
fn parameter_count_matches_layer_table() {
    let cfg = DlenConfig::new(16);
    assert_eq!(cfg.seb_width, 8);
    let m = DlenModel::<f32>::init(cfg.clone(), 0).unwrap();
    assert_eq!(m.num_params(), expected_params(16, 8, 64, 128));
    let tiny = DlenModel::<f32>::init(DlenConfig::tiny(4, 4, 8, 8), 0).unwrap();
    assert_eq!(tiny.num_params(), expected_params(4, 4, 8, 8));
}

#[test]
fn ablation_algebra() {
    let cfg = DlenConfig::tiny(4, 4, 16, 16);
    let mut full = DlenModel::<f64>::init(cfg.clone(), 6).unwrap();
    // Give both branches non-zero output.
    let mut rng = Prng::new(2);
    dlen_core::gradcheck::perturb(&mut full.params, 0.05, &mut rng);
    let mut lite_cfg = cfg.clone();
    lite_cfg.use_seab = false;
    let mut lite_params = dlen_core::Params::new();
    for (n, t) in full.params.iter().filter(|(n, _)| !n.starts_with("seb.")) {
        lite_params.insert(n, t.clone()).unwrap();
    }
    let lite = DlenModel::from_parts(lite_cfg, lite_params).unwrap();
    let x = Tensor::rand_uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let a = full.enhance(&x).unwrap();
    let b = lite.enhance(&x).unwrap();
    assert!(a.i_feb.data().iter().any(|v| *v != 0.0));
    assert_eq!(b.i_feb.data().iter().filter(|v| **v != 0.0).count(), 0);
    assert_eq!(a.i_lu, b.i_lu);
    assert_eq!(a.i_flb, b.i_flb);
    // I_en - I_lu - I_flb - I_feb = 0 bitwise, in the order the sum is built.
    for out in [&a, &b] {
        let rebuilt = out.i_lu.zip_map(&out.i_flb, |p, q| p + q).zip_map(&out.i_feb, |p, q| p + q);
        assert_eq!(rebuilt, out.i_en);
    }
}
