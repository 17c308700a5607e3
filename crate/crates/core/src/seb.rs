//! Structure enhancement branch: a four-level U-shaped stack of SEABs
//! (depthwise-enriched channel attention gated by an illumination map).

use crate::attention::{channel_attention, AttentionOutput};
use crate::autograd::Var;
use crate::config::DlenConfig;
use crate::error::{ensure, Result};
use crate::ops::concat;
use crate::params::{conv, conv_t, dwconv, norm, Bound, Init};
use crate::tensor::{Element, Tensor};

pub fn init_seab<T: Element>(init: &mut Init<'_, T>, p: &str, c: usize, heads: usize) -> Result<()> {
    ensure!(heads > 0 && c % heads == 0, "{} channels, {} heads", c, heads);
    init.norm(&format!("{p}.norm"), c)?;
    for qkv in ["q", "k", "v"] {
        init.conv(&format!("{p}.{qkv}_pw"), c, c, 1, false)?;
        init.conv(&format!("{p}.{qkv}_dw"), c, 1, 3, false)?;
    }
    init.tensor(&format!("{p}.beta"), Tensor::ones(&[heads]))?;
    init.conv(&format!("{p}.proj"), c, c, 1, false)?;
    init.conv(&format!("{p}.gate_in"), 2 * c, c, 1, false)?;
    init.conv(&format!("{p}.gate_dw"), 2 * c, 1, 3, false)?;
    init.conv(&format!("{p}.gate_out"), c, 2 * c, 1, false)
}

/// `T + W_P(Attn(LN(T)))` with Q, K, V from a 1x1 then a depthwise 3x3.
pub fn seab_attention<'t, T: Element>(
    b: &Bound<'t, T>,
    p: &str,
    t: &Var<'t, T>,
    heads: usize,
) -> Result<AttentionOutput<'t, T>> {
    let x = norm(b, &format!("{p}.norm"), t)?;
    let gen = |name: &str| -> Result<Var<'t, T>> {
        let pw = conv(b, &format!("{p}.{name}_pw"), &x, 1, 0, 1)?;
        dwconv(b, &format!("{p}.{name}_dw"), &pw)
    };
    let (q, k, v) = (gen("q")?, gen("k")?, gen("v")?);
    let beta = b.get(&format!("{p}.beta"))?;
    let att = channel_attention(&q, &k, &v, beta, heads)?;
    let proj = conv(b, &format!("{p}.proj"), &att.out, 1, 0, 1)?;
    Ok(AttentionOutput {
        out: t.add(&proj)?,
        attn: att.attn,
    })
}

/// Attention, then `a + stack(a ⊙ L_I)` with the stack
/// `1x1 -> depthwise 3x3 -> GELU -> 1x1`.
pub fn seab_forward<'t, T: Element>(
    b: &Bound<'t, T>,
    p: &str,
    t: &Var<'t, T>,
    l_i: &Var<'t, T>,
    heads: usize,
) -> Result<Var<'t, T>> {
    let s = t.shape();
    ensure!(
        l_i.shape().len() == 4
            && l_i.shape()[0] == s[0]
            && l_i.shape()[1] == 1
            && l_i.shape()[2..] == s[2..],
        "illumination map {:?} does not match features {:?}",
        l_i.shape(),
        s
    );
    let a = seab_attention(b, p, t, heads)?.out;
    let g = a.mul(l_i)?;
    let g = conv(b, &format!("{p}.gate_in"), &g, 1, 0, 1)?;
    let g = dwconv(b, &format!("{p}.gate_dw"), &g)?.gelu();
    let g = conv(b, &format!("{p}.gate_out"), &g, 1, 0, 1)?;
    a.add(&g)
}

pub fn init<T: Element>(init: &mut Init<'_, T>, p: &str, cfg: &DlenConfig) -> Result<()> {
    let c = cfg.seb_width;
    let heads = cfg.seb_heads;
    init.conv(&format!("{p}.embed"), c, 3, 3, true)?;
    for level in 0..3 {
        let cl = c << level;
        for i in 0..cfg.seb_blocks[level] {
            init_seab(init, &format!("{p}.enc{level}.{i}"), cl, heads[level])?;
        }
        init.conv(&format!("{p}.down{level}"), 2 * cl, cl, 4, true)?;
    }
    for i in 0..cfg.seb_blocks[3] {
        init_seab(init, &format!("{p}.latent.{i}"), 8 * c, heads[3])?;
    }
    for level in (0..3).rev() {
        let cl = c << level;
        init.conv_t(&format!("{p}.up{level}"), 2 * cl, cl, 2)?;
        // The top level keeps the concatenated width 2C_s.
        let width = if level == 0 {
            2 * c
        } else {
            init.conv(&format!("{p}.fuse{level}"), cl, 2 * cl, 1, true)?;
            cl
        };
        for i in 0..cfg.seb_blocks[level] {
            init_seab(init, &format!("{p}.dec{level}.{i}"), width, heads[level])?;
        }
    }
    for i in 0..cfg.seb_refine {
        init_seab(init, &format!("{p}.refine.{i}"), 2 * c, heads[0])?;
    }
    init.conv_zero(&format!("{p}.exit"), 3, 2 * c, 3)
}

/// Result of the structure branch; `latent` is exposed for shape checks.
pub struct SebOutput<'t, T: Element> {
    pub i_feb: Var<'t, T>,
    pub latent: Var<'t, T>,
}

/// Per-level illumination maps: channel mean of `I_lu`, 2x2 average pooled
/// once per level.
pub fn illumination_pyramid<'t, T: Element>(i_lu: &Var<'t, T>, levels: usize) -> Result<Vec<Var<'t, T>>> {
    let pool = i_lu.tape().constant(Tensor::full(&[1, 1, 2, 2], T::from_f64(0.25)));
    let mut maps = vec![i_lu.mean(&[1], true)?];
    for _ in 1..levels {
        let next = maps.last().expect("non-empty").conv2d(&pool, None, 2, 0, 1)?;
        maps.push(next);
    }
    Ok(maps)
}

pub fn seb_forward<'t, T: Element>(
    b: &Bound<'t, T>,
    p: &str,
    cfg: &DlenConfig,
    i_lu: &Var<'t, T>,
) -> Result<SebOutput<'t, T>> {
    let s = i_lu.shape();
    ensure!(
        s.len() == 4 && s[1] == 3,
        "SEB expects [N, 3, H, W], got {:?}",
        s
    );
    ensure!(
        s[2] % 8 == 0 && s[3] % 8 == 0 && s[2] > 0 && s[3] > 0,
        "SEB needs spatial extents divisible by 8, got {}x{}",
        s[2],
        s[3]
    );
    let heads = cfg.seb_heads;
    let maps = illumination_pyramid(i_lu, 4)?;
    let stack = |name: &str, level: usize, count: usize, mut x: Var<'t, T>| -> Result<Var<'t, T>> {
        for i in 0..count {
            x = seab_forward(b, &format!("{p}.{name}.{i}"), &x, &maps[level], heads[level])?;
        }
        Ok(x)
    };

    let mut x = conv(b, &format!("{p}.embed"), i_lu, 1, 1, 1)?;
    let mut skips = Vec::with_capacity(3);
    for level in 0..3 {
        let f = stack(&format!("enc{level}"), level, cfg.seb_blocks[level], x)?;
        x = conv(b, &format!("{p}.down{level}"), &f, 2, 1, 1)?;
        skips.push(f);
    }
    let latent = stack("latent", 3, cfg.seb_blocks[3], x)?;
    let mut x = latent.clone();
    for level in (0..3).rev() {
        let up = conv_t(b, &format!("{p}.up{level}"), &x, 2)?;
        let cat = concat(&[&up, &skips[level]], 1)?;
        let fused = if level == 0 {
            cat
        } else {
            conv(b, &format!("{p}.fuse{level}"), &cat, 1, 0, 1)?
        };
        x = stack(&format!("dec{level}"), level, cfg.seb_blocks[level], fused)?;
    }
    let x = stack("refine", 0, cfg.seb_refine, x)?;
    let i_feb = conv(b, &format!("{p}.exit"), &x, 1, 1, 1)?;
    Ok(SebOutput { i_feb, latent })
}
