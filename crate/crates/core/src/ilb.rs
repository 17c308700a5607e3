//! Illumination learning branch: a two-stage U-shaped stack of
//! illumination-guided attention blocks (MIAB).

use crate::attention::{channel_attention, AttentionOutput};
use crate::autograd::Var;
use crate::config::DlenConfig;
use crate::error::{ensure, Result};
use crate::ops::concat;
use crate::params::{conv, conv_t, dwconv, norm, Bound, Init};
use crate::tensor::{Element, Tensor};

/// Parameters of one MIAB of width `c` with `heads` heads whose positional
/// encoding is sized `[c, h, w]`.
pub fn init_miab<T: Element>(
    init: &mut Init<'_, T>,
    p: &str,
    c: usize,
    heads: usize,
    h: usize,
    w: usize,
) -> Result<()> {
    ensure!(heads > 0 && c % heads == 0, "{} channels, {} heads", c, heads);
    let d = c / heads;
    init.norm(&format!("{p}.norm1"), c)?;
    for name in ["wq", "wk", "wv"] {
        init.conv(&format!("{p}.{name}"), c, d, 1, false)?;
    }
    init.tensor(&format!("{p}.alpha"), Tensor::ones(&[heads]))?;
    init.conv(&format!("{p}.proj"), c, c, 1, false)?;
    init.tensor(&format!("{p}.pos"), Tensor::zeros(&[c, h, w]))?;
    init.norm(&format!("{p}.norm2"), c)?;
    init.conv(&format!("{p}.ffn_in"), 2 * c, c, 1, false)?;
    init.conv(&format!("{p}.ffn_dw"), 2 * c, 1, 3, false)?;
    init.conv(&format!("{p}.ffn_out"), c, 2 * c, 1, false)
}

/// Illumination-gated attention on already normalized features `x`, with
/// light tokens `y` of the same shape. Returns the projected output plus
/// positional encoding, and the attention maps.
pub fn ig_attention<'t, T: Element>(
    b: &Bound<'t, T>,
    p: &str,
    x: &Var<'t, T>,
    y: &Var<'t, T>,
    heads: usize,
) -> Result<AttentionOutput<'t, T>> {
    ensure!(
        x.shape() == y.shape(),
        "MIAB feature {:?} and light feature {:?} differ",
        x.shape(),
        y.shape()
    );
    let q = conv(b, &format!("{p}.wq"), x, 1, 0, heads)?;
    let k = conv(b, &format!("{p}.wk"), x, 1, 0, heads)?;
    let v = conv(b, &format!("{p}.wv"), x, 1, 0, heads)?;
    let gated = y.mul(&v)?;
    let alpha = b.get(&format!("{p}.alpha"))?;
    let att = channel_attention(&q, &k, &gated, alpha, heads)?;
    let proj = conv(b, &format!("{p}.proj"), &att.out, 1, 0, 1)?;
    let pos = b.get(&format!("{p}.pos"))?;
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let pos = if pos.shape()[1..] == [h, w] {
        pos.clone()
    } else {
        pos.resize_bilinear(h, w)?
    };
    Ok(AttentionOutput {
        out: proj.add(&pos)?,
        attn: att.attn,
    })
}

/// Pre-norm residual attention followed by a residual feed-forward block.
pub fn miab_forward<'t, T: Element>(
    b: &Bound<'t, T>,
    p: &str,
    x: &Var<'t, T>,
    y: &Var<'t, T>,
    heads: usize,
) -> Result<Var<'t, T>> {
    let xn = norm(b, &format!("{p}.norm1"), x)?;
    let x = x.add(&ig_attention(b, p, &xn, y, heads)?.out)?;
    let f = norm(b, &format!("{p}.norm2"), &x)?;
    let f = conv(b, &format!("{p}.ffn_in"), &f, 1, 0, 1)?.gelu();
    let f = dwconv(b, &format!("{p}.ffn_dw"), &f)?;
    let f = conv(b, &format!("{p}.ffn_out"), &f, 1, 0, 1)?;
    x.add(&f)
}

pub fn init<T: Element>(init: &mut Init<'_, T>, p: &str, cfg: &DlenConfig) -> Result<()> {
    let c = cfg.width;
    let (th, tw) = (cfg.train_h, cfg.train_w);
    init.conv(&format!("{p}.entry"), c, 3, 3, true)?;
    for level in 0..3 {
        let cl = c << level;
        let (h, w) = (th >> level, tw >> level);
        let name = ["enc0", "enc1", "mid"][level];
        for i in 0..cfg.ilb_blocks[level] {
            init_miab(init, &format!("{p}.{name}.{i}"), cl, cfg.ilb_heads[level], h, w)?;
        }
        if level < 2 {
            init.conv(&format!("{p}.down{level}"), 2 * cl, cl, 4, true)?;
            init.conv(&format!("{p}.lu_down{level}"), 2 * cl, cl, 4, true)?;
        }
    }
    for level in (0..2).rev() {
        let cl = c << level;
        let (h, w) = (th >> level, tw >> level);
        init.conv_t(&format!("{p}.up{level}"), 2 * cl, cl, 2)?;
        init.conv(&format!("{p}.fuse{level}"), cl, 2 * cl, 1, true)?;
        for i in 0..cfg.ilb_blocks[level] {
            init_miab(init, &format!("{p}.dec{level}.{i}"), cl, cfg.ilb_heads[level], h, w)?;
        }
    }
    init.conv_zero(&format!("{p}.exit"), 3, c, 3)
}

/// `I_lu, F_lu -> I_flb`. Spatial extents must be multiples of 4.
pub fn ilb_forward<'t, T: Element>(
    b: &Bound<'t, T>,
    p: &str,
    cfg: &DlenConfig,
    i_lu: &Var<'t, T>,
    f_lu: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    let s = i_lu.shape();
    ensure!(
        s.len() == 4 && s[1] == 3,
        "ILB expects [N, 3, H, W], got {:?}",
        s
    );
    ensure!(
        s[2] % 4 == 0 && s[3] % 4 == 0,
        "ILB needs spatial extents divisible by 4, got {}x{}",
        s[2],
        s[3]
    );
    ensure!(
        f_lu.shape() == [s[0], cfg.width, s[2], s[3]],
        "light-up feature {:?} does not match input {:?} at width {}",
        f_lu.shape(),
        s,
        cfg.width
    );
    let heads = cfg.ilb_heads;
    let lu1 = conv(b, &format!("{p}.lu_down0"), f_lu, 2, 1, 1)?;
    let lu2 = conv(b, &format!("{p}.lu_down1"), &lu1, 2, 1, 1)?;
    let lus = [f_lu.clone(), lu1, lu2];

    let stack = |name: &str, level: usize, count: usize, mut x: Var<'t, T>| -> Result<Var<'t, T>> {
        for i in 0..count {
            x = miab_forward(b, &format!("{p}.{name}.{i}"), &x, &lus[level], heads[level])?;
        }
        Ok(x)
    };

    let x = conv(b, &format!("{p}.entry"), i_lu, 1, 1, 1)?;
    let skip0 = stack("enc0", 0, cfg.ilb_blocks[0], x)?;
    let x = conv(b, &format!("{p}.down0"), &skip0, 2, 1, 1)?;
    let skip1 = stack("enc1", 1, cfg.ilb_blocks[1], x)?;
    let x = conv(b, &format!("{p}.down1"), &skip1, 2, 1, 1)?;
    let x = stack("mid", 2, cfg.ilb_blocks[2], x)?;

    let x = conv_t(b, &format!("{p}.up1"), &x, 2)?;
    let x = conv(b, &format!("{p}.fuse1"), &concat(&[&x, &skip1], 1)?, 1, 0, 1)?;
    let x = stack("dec1", 1, cfg.ilb_blocks[1], x)?;
    let x = conv_t(b, &format!("{p}.up0"), &x, 2)?;
    let x = conv(b, &format!("{p}.fuse0"), &concat(&[&x, &skip0], 1)?, 1, 0, 1)?;
    let x = stack("dec0", 0, cfg.ilb_blocks[0], x)?;
    conv(b, &format!("{p}.exit"), &x, 1, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::rng::Prng;

    fn miab_params(c: usize, heads: usize, seed: u64) -> crate::params::Params<f64> {
        let mut rng = Prng::new(seed);
        let mut ini = Init::new(&mut rng);
        init_miab(&mut ini, "m", c, heads, 4, 4).unwrap();
        ini.params
    }

    #[test]
    fn ones_gate_is_plain_attention() {
        let params = miab_params(4, 2, 1);
        let mut rng = Prng::new(2);
        let tape = Tape::new();
        let b = params.bind(&tape, false);
        let x = tape.constant(Tensor::randn(&[1, 4, 4, 4], 1.0, &mut rng));
        let ones = tape.constant(Tensor::ones(&[1, 4, 4, 4]));
        let gated = ig_attention(&b, "m", &x, &ones, 2).unwrap();
        let q = conv(&b, "m.wq", &x, 1, 0, 2).unwrap();
        let k = conv(&b, "m.wk", &x, 1, 0, 2).unwrap();
        let v = conv(&b, "m.wv", &x, 1, 0, 2).unwrap();
        let plain = channel_attention(&q, &k, &v, b.get("m.alpha").unwrap(), 2).unwrap();
        let plain = conv(&b, "m.proj", &plain.out, 1, 0, 1).unwrap();
        assert!(gated.out.value().max_abs_diff(plain.value()) < 1e-14);
    }

    #[test]
    fn single_channel_heads_reduce_to_gated_values() {
        let params = miab_params(2, 2, 3);
        let mut rng = Prng::new(4);
        let tape = Tape::new();
        let b = params.bind(&tape, false);
        let x = tape.constant(Tensor::randn(&[1, 2, 4, 4], 1.0, &mut rng));
        let y = tape.constant(Tensor::randn(&[1, 2, 4, 4], 1.0, &mut rng));
        let att = ig_attention(&b, "m", &x, &y, 2).unwrap();
        assert!(att.attn.value().data().iter().all(|&a| a == 1.0));
        let v = conv(&b, "m.wv", &x, 1, 0, 2).unwrap();
        let want = conv(&b, "m.proj", &y.mul(&v).unwrap(), 1, 0, 1).unwrap();
        assert!(att.out.value().max_abs_diff(want.value()) < 1e-14);
    }

    #[test]
    fn zero_branches_give_identity() {
        let mut params = miab_params(4, 1, 5);
        for name in ["m.wq.weight", "m.wk.weight", "m.wv.weight", "m.proj.weight", "m.ffn_in.weight", "m.ffn_dw.weight", "m.ffn_out.weight"] {
            params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let mut rng = Prng::new(6);
        let tape = Tape::new();
        let b = params.bind(&tape, false);
        let x = tape.constant(Tensor::randn(&[2, 4, 4, 4], 1.0, &mut rng));
        let y = tape.constant(Tensor::randn(&[2, 4, 4, 4], 1.0, &mut rng));
        let out = miab_forward(&b, "m", &x, &y, 1).unwrap();
        assert_eq!(out.value(), x.value());
    }

    #[test]
    fn positional_encoding_resized() {
        let mut params = miab_params(2, 1, 7);
        params.get_mut("m.pos").unwrap().data_mut().fill(0.25);
        let mut rng = Prng::new(8);
        let tape = Tape::new();
        let b = params.bind(&tape, false);
        let x = tape.constant(Tensor::randn(&[1, 2, 8, 12], 1.0, &mut rng));
        let out = miab_forward(&b, "m", &x, &x, 1).unwrap();
        assert_eq!(out.shape(), x.shape());
    }

    #[test]
    fn branch_shapes_and_zero_at_init() {
        let cfg = DlenConfig::tiny(4, 4, 16, 16);
        let mut rng = Prng::new(9);
        let mut ini = Init::<f32>::new(&mut rng);
        init(&mut ini, "ilb", &cfg).unwrap();
        let params = ini.params;
        let tape = Tape::new();
        let b = params.bind(&tape, false);
        let i_lu = tape.constant(Tensor::rand_uniform(&[2, 3, 16, 16], 0.0, 1.0, &mut rng));
        let f_lu = tape.constant(Tensor::randn(&[2, 4, 16, 16], 1.0, &mut rng));
        let out = ilb_forward(&b, "ilb", &cfg, &i_lu, &f_lu).unwrap();
        assert_eq!(out.shape(), &[2, 3, 16, 16]);
        assert!(out.value().data().iter().all(|&v| v == 0.0));
        let odd = tape.constant(Tensor::zeros(&[1, 3, 6, 8]));
        let f_odd = tape.constant(Tensor::zeros(&[1, 4, 6, 8]));
        assert!(ilb_forward(&b, "ilb", &cfg, &odd, &f_odd).is_err());
    }
}
