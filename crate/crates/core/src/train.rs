//! MAE training with Adam on random paired crops.

use log::info;

use crate::augment::{augment_pair, random_crop_pair, stack};
use crate::autograd::{Tape, Var};
use crate::dataset::ImagePair;
use crate::error::{ensure, Error, Result};
use crate::model::{mae_loss, DlenModel};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::Prng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub iters: usize,
    pub batch: usize,
    pub crop: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Log the loss every this many iterations (0 disables logging).
    pub log_every: usize,
    pub augment: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iters: 1000,
            batch: 8,
            crop: 128,
            seed: 0,
            adam: AdamConfig::default(),
            log_every: 50,
            augment: true,
        }
    }
}

pub struct Trainer {
    pub model: DlenModel<f32>,
    pub adam: AdamConfig,
    states: Vec<AdamState<f32>>,
    pub steps: u64,
}

fn first_non_finite<'t>(named: &[(&str, Option<&Var<'t, f32>>)]) -> Option<String> {
    named
        .iter()
        .find(|(_, v)| v.is_some_and(|v| !v.value().all_finite()))
        .map(|(n, _)| n.to_string())
}

impl Trainer {
    pub fn new(model: DlenModel<f32>, adam: AdamConfig) -> Self {
        let states = model
            .params
            .iter()
            .map(|(_, t)| AdamState::new(t.shape()))
            .collect();
        Self {
            model,
            adam,
            states,
            steps: 0,
        }
    }

    /// Forward, MAE against `high`, backward and one Adam update of every
    /// parameter. Returns the loss before the update.
    pub fn train_step(&mut self, low: &Tensor<f32>, high: &Tensor<f32>) -> Result<f64> {
        ensure!(
            low.shape() == high.shape(),
            "batch shapes differ: {:?} vs {:?}",
            low.shape(),
            high.shape()
        );
        let tape = Tape::new();
        let bound = self.model.params.bind(&tape, true);
        let x = tape.constant(low.clone());
        let y = tape.constant(high.clone());
        let f = self.model.forward(&bound, &x)?;
        let loss = mae_loss(&f.i_en, &y)?;
        let value = loss.value().item()?.as_f64_lossless();
        if !value.is_finite() {
            let bad = first_non_finite(&[
                ("activation l_tilde", Some(&f.l_tilde)),
                ("activation f_lu", Some(&f.f_lu)),
                ("activation i_lu", Some(&f.i_lu)),
                ("activation i_flb", Some(&f.i_flb)),
                ("activation i_feb", f.i_feb.as_ref()),
                ("activation i_en", Some(&f.i_en)),
            ])
            .unwrap_or_else(|| "loss".to_string());
            return Err(Error::NonFinite(format!("{bad} at step {}", self.steps)));
        }
        let mut grads = tape.backward(&loss)?;
        let mut updates = Vec::with_capacity(self.states.len());
        for (name, var) in bound.iter() {
            let g = grads.take(var).unwrap_or_else(|| Tensor::zeros(var.shape()));
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {name} at step {}",
                    self.steps
                )));
            }
            updates.push(g);
        }
        drop(bound);
        for (((_, param), state), g) in self
            .model
            .params
            .iter_mut()
            .zip(&mut self.states)
            .zip(&updates)
        {
            adam_step(param, g, state, &self.adam)?;
        }
        self.steps += 1;
        Ok(value)
    }
}

trait LosslessF64 {
    fn as_f64_lossless(self) -> f64;
}

impl LosslessF64 for f32 {
    fn as_f64_lossless(self) -> f64 {
        self as f64
    }
}

/// Reflect-pad `[N, C, H, W]` so H and W become multiples of `m`.
pub fn pad_to_multiple(t: &Tensor<f32>, m: usize) -> Result<Tensor<f32>> {
    let s = t.shape();
    ensure!(s.len() == 4, "expected [N, C, H, W], got {:?}", s);
    let (ph, pw) = ((m - s[2] % m) % m, (m - s[3] % m) % m);
    if ph == 0 && pw == 0 {
        return Ok(t.clone());
    }
    let tape = Tape::new();
    Ok(tape.constant(t.clone()).pad_reflect(0, ph, 0, pw)?.to_tensor())
}

/// Draw `batch` random crops (with replacement) and, optionally, a random
/// flip or rotation for each. Returns `(low, high)` padded to multiples of 8.
pub fn sample_batch(
    pairs: &[ImagePair],
    batch: usize,
    crop: usize,
    augment: bool,
    rng: &mut Prng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    ensure!(!pairs.is_empty() && batch > 0, "need at least one pair and batch >= 1");
    let mut picked = Vec::with_capacity(batch);
    for _ in 0..batch {
        let pair = &pairs[rng.below(pairs.len() as u64) as usize];
        let size = crop.min(pair.low.width).min(pair.low.height);
        let mut c = random_crop_pair(pair, size, rng)?;
        if augment {
            c = augment_pair(&c, rng);
        }
        picked.push(c);
    }
    let lows: Vec<_> = picked.iter().map(|p| &p.low).collect();
    let highs: Vec<_> = picked.iter().map(|p| &p.high).collect();
    Ok((pad_to_multiple(&stack(&lows)?, 8)?, pad_to_multiple(&stack(&highs)?, 8)?))
}

/// Run `opts.iters` training steps and return the loss of each.
pub fn fit(trainer: &mut Trainer, pairs: &[ImagePair], opts: &TrainOptions) -> Result<Vec<f64>> {
    let mut rng = Prng::new(opts.seed).fork();
    let mut losses = Vec::with_capacity(opts.iters);
    for it in 0..opts.iters {
        let (low, high) = sample_batch(pairs, opts.batch, opts.crop, opts.augment, &mut rng)?;
        let loss = trainer.train_step(&low, &high)?;
        if opts.log_every > 0 && (it % opts.log_every == 0 || it + 1 == opts.iters) {
            info!("iter {:>6}  loss {:.6}", it, loss);
        }
        losses.push(loss);
    }
    Ok(losses)
}
