//! Alternating discriminator / generator optimization over paired patches.
//!
//! One iteration: a discriminator step on (ground-truth patch, detached
//! generator output) with the relativistic loss, then a generator step on the
//! weighted total loss with the just-updated discriminator held constant.
//! All randomness (shuffling, crop offsets) comes from one ChaCha8 stream
//! whose position is part of the saved state, so a resumed run continues the
//! exact trajectory.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::{
    adversarial_losses, gradient_loss, perceptual_loss, pixel_loss, total_loss, LossComponents, LossWeights,
    ToyExtractor,
};
use crate::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ParamStore, DOWNSCALE};
use crate::optim::{lr_at_epoch, Adam, AdamConfig, AdamState};
use crate::tensor::Tensor;

/// Salt separating the discriminator init stream from the generator's.
const D_SEED_SALT: u64 = 0xD15C_0000_0000_0001;
/// Salt for the shuffle/crop stream.
const DATA_SEED_SALT: u64 = 0xDA7A_0000_0000_0002;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f32,
    /// Epochs between learning-rate halvings.
    pub lr_halve_every: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub d_steps_per_g: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 90,
            lr0: 0.001,
            lr_halve_every: 30,
            batch_size: 4,
            patch_size: 64,
            seed: 0,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            d_steps_per_g: 1,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if self.patch_size == 0 || self.patch_size % DOWNSCALE != 0 {
            return Err(Error::invalid(
                "patch_size",
                format!("{} must be a positive multiple of {DOWNSCALE}", self.patch_size),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::invalid("lr", format!("{} must be positive", self.lr0)));
        }
        if self.lr_halve_every == 0 {
            return Err(Error::invalid("lr_halve_every", "must be at least 1"));
        }
        if self.d_steps_per_g == 0 {
            return Err(Error::invalid("d_steps_per_g", "must be at least 1"));
        }
        self.weights.validate()?;
        self.generator.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        lr_at_epoch(self.lr0, epoch, self.lr_halve_every)
    }
}

/// A synthetic input and its reflection-free target, same dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub input: Image,
    pub target: Image,
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f32,
    pub pixel: f32,
    pub perceptual: f32,
    pub gradient: f32,
    pub adv_g: f32,
    pub adv_d: f32,
    pub total: f32,
}

impl LossRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.lr,
            self.pixel,
            self.perceptual,
            self.gradient,
            self.adv_g,
            self.adv_d,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub generator: ParamStore,
    pub discriminator: ParamStore,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed iterations.
    pub step: u64,
    pub rng: RngState,
}

pub struct Trainer {
    config: TrainConfig,
    generator: Generator,
    discriminator: Discriminator,
    extractor: ToyExtractor,
    adam_g: Adam,
    adam_d: Adam,
    epoch: usize,
    step: u64,
    rng: ChaCha8Rng,
}

fn copy_store(dst: &mut ParamStore, src: &ParamStore, what: &str) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::invalid(
            "train state",
            format!("{what} has {} parameters, model expects {}", src.len(), dst.len()),
        ));
    }
    for p in src.params() {
        dst.load(&p.name, &p.data)?;
    }
    Ok(())
}

fn check_moments(state: &AdamState, store: &ParamStore, what: &str) -> Result<()> {
    let ok = state.m.len() == store.len()
        && state.v.len() == store.len()
        && store
            .params()
            .iter()
            .enumerate()
            .all(|(i, p)| state.m[i].len() == p.data.len() && state.v[i].len() == p.data.len());
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("train state", format!("{what} optimizer moments do not match the model")))
    }
}

impl Trainer {
    /// Fresh run: Xavier-initialized networks, zero moments.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::with_seed(config.generator, config.seed)?;
        let discriminator = Discriminator::with_seed(config.discriminator, config.seed ^ D_SEED_SALT)?;
        let adam_g = Adam::new(config.adam, generator.params());
        let adam_d = Adam::new(config.adam, discriminator.params());
        Ok(Self {
            config,
            generator,
            discriminator,
            extractor: ToyExtractor::default(),
            adam_g,
            adam_d,
            epoch: 0,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ DATA_SEED_SALT),
        })
    }

    /// Continue from a saved state. `epochs` may differ from the saved
    /// config to extend a run; everything else must match.
    pub fn resume(state: TrainState, epochs: usize) -> Result<Self> {
        let mut config = state.config;
        config.epochs = epochs;
        config.validate()?;
        let mut generator = Generator::new(config.generator)?;
        let mut discriminator = Discriminator::new(config.discriminator)?;
        copy_store(generator.params_mut(), &state.generator, "generator")?;
        copy_store(discriminator.params_mut(), &state.discriminator, "discriminator")?;
        check_moments(&state.adam_g, generator.params(), "generator")?;
        check_moments(&state.adam_d, discriminator.params(), "discriminator")?;
        Ok(Self {
            config,
            generator,
            discriminator,
            extractor: ToyExtractor::default(),
            adam_g: Adam {
                config: config.adam,
                state: state.adam_g,
            },
            adam_d: Adam {
                config: config.adam,
                state: state.adam_d,
            },
            epoch: state.epoch,
            step: state.step,
            rng: state.rng.restore(),
        })
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            config: self.config,
            generator: self.generator.params().clone(),
            discriminator: self.discriminator.params().clone(),
            adam_g: self.adam_g.state.clone(),
            adam_d: self.adam_d.state.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn discriminator_step(&mut self, fake: &Tensor<f32>, real: &Tensor<f32>, lr: f32) -> Result<f32> {
        let g_before = self.generator.params().fingerprint();
        let mut g = Graph::new();
        let p = self.discriminator.params().bind(&mut g, true);
        let f = g.constant(fake.clone());
        let r = g.constant(real.clone());
        let sr = self.discriminator.forward(&mut g, &p, r)?;
        let sf = self.discriminator.forward(&mut g, &p, f)?;
        let (_, ld) = adversarial_losses(&mut g, sr, sf)?;
        let value = g.value(ld).item()?;
        g.backward(ld)?;
        let grads = self.discriminator.params().collect_grads(&g, &p);
        self.adam_d.step(self.discriminator.params_mut(), &grads, lr)?;
        if self.generator.params().fingerprint() != g_before {
            return Err(Error::Invariant("discriminator update changed generator parameters".into()));
        }
        Ok(value)
    }

    /// One D step (repeated `d_steps_per_g` times) and one G step on an
    /// `[N, 3, P, P]` batch at learning rate `lr`.
    pub fn train_step(&mut self, input: &Tensor<f32>, target: &Tensor<f32>, lr: f32) -> Result<LossRecord> {
        if input.shape() != target.shape() {
            return Err(Error::shape(
                "train_step",
                format!("input {:?} vs target {:?}", input.shape(), target.shape()),
            ));
        }
        let mut g = Graph::new();
        let pg = self.generator.params().bind(&mut g, true);
        let x = g.constant(input.clone());
        let t = g.constant(target.clone());
        let fake = self.generator.forward(&mut g, &pg, x)?;

        let fake_value = g.value(fake).clone();
        let mut adv_d = 0.0;
        for _ in 0..self.config.d_steps_per_g {
            adv_d = self.discriminator_step(&fake_value, target, lr)?;
        }

        let d_before = self.discriminator.params().fingerprint();
        let pd = self.discriminator.params().bind(&mut g, false);
        let sr = self.discriminator.forward(&mut g, &pd, t)?;
        let sf = self.discriminator.forward(&mut g, &pd, fake)?;
        let (adv_g, _) = adversarial_losses(&mut g, sr, sf)?;
        let parts = LossComponents {
            pixel: pixel_loss(&mut g, fake, t)?,
            perceptual: perceptual_loss(&mut g, fake, t, &self.extractor)?,
            gradient: gradient_loss(&mut g, fake, t)?,
            adversarial: adv_g,
        };
        let total = total_loss(&mut g, parts, &self.config.weights)?;
        g.backward(total)?;
        let grads = self.generator.params().collect_grads(&g, &pg);
        self.adam_g.step(self.generator.params_mut(), &grads, lr)?;
        if self.discriminator.params().fingerprint() != d_before {
            return Err(Error::Invariant("generator update changed discriminator parameters".into()));
        }

        self.step += 1;
        let v = |var| g.value(var).item();
        Ok(LossRecord {
            step: self.step,
            epoch: self.epoch.max(1),
            lr,
            pixel: v(parts.pixel)?,
            perceptual: v(parts.perceptual)?,
            gradient: v(parts.gradient)?,
            adv_g: v(parts.adversarial)?,
            adv_d,
            total: v(total)?,
        })
    }

    /// Indices of pairs usable at the configured patch size; the rest are
    /// returned separately so callers can warn about them.
    pub fn usable(&self, pairs: &[TrainPair]) -> Result<(Vec<usize>, Vec<usize>)> {
        let p = self.config.patch_size;
        let mut ok = Vec::new();
        let mut skipped = Vec::new();
        for (i, pair) in pairs.iter().enumerate() {
            if pair.input.dims() != pair.target.dims() {
                return Err(Error::Dataset(format!(
                    "pair {i}: input {:?} and target {:?} differ in size",
                    pair.input.dims(),
                    pair.target.dims()
                )));
            }
            let (h, w) = pair.input.dims();
            if h < p || w < p {
                skipped.push(i);
            } else {
                ok.push(i);
            }
        }
        if ok.is_empty() {
            return Err(Error::Dataset(format!(
                "no pair is at least {p}x{p} ({} pairs given)",
                pairs.len()
            )));
        }
        Ok((ok, skipped))
    }

    /// Shuffle, crop and train one epoch; the last batch may be short.
    pub fn run_epoch(&mut self, pairs: &[TrainPair]) -> Result<Vec<LossRecord>> {
        let (mut order, _) = self.usable(pairs)?;
        self.epoch += 1;
        let lr = self.config.lr_at(self.epoch);
        let p = self.config.patch_size;
        order.shuffle(&mut self.rng);
        let mut log = Vec::with_capacity(order.len().div_ceil(self.config.batch_size));
        for chunk in order.chunks(self.config.batch_size) {
            let mut inputs = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let pair = &pairs[i];
                let (h, w) = pair.input.dims();
                let top = self.rng.random_range(0..=h - p);
                let left = self.rng.random_range(0..=w - p);
                inputs.push(pair.input.crop(top, left, p, p)?);
                targets.push(pair.target.crop(top, left, p, p)?);
            }
            let x = Image::batch_to_tensor(&inputs)?;
            let t = Image::batch_to_tensor(&targets)?;
            let rec = self.train_step(&x, &t, lr)?;
            log.push(LossRecord { epoch: self.epoch, ..rec });
        }
        Ok(log)
    }
}

/// Train from scratch for `config.epochs` epochs.
pub fn train(pairs: &[TrainPair], config: TrainConfig) -> Result<(TrainState, Vec<LossRecord>)> {
    let mut t = Trainer::new(config)?;
    let mut log = Vec::new();
    while !t.is_done() {
        log.extend(t.run_epoch(pairs)?);
    }
    Ok((t.state(), log))
}
