//! TOML run configuration. Every key is optional and falls back to the
//! default documented on its field; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use reflectnet_core::loss::LossWeights;
use reflectnet_core::model::{DiscriminatorConfig, GeneratorConfig};
use reflectnet_core::optim::AdamConfig;
use reflectnet_core::synth::{SaliencyMode, SynthRanges};
use reflectnet_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// f32 written through its shortest decimal form, so `0.001` stays `0.001`
/// in the file and still reads back to the same bits.
pub(crate) mod short_f32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f32, s: S) -> Result<S::Ok, S::Error> {
        let wide: f64 = v.to_string().parse().expect("f32 display parses");
        s.serialize_f64(if wide as f32 == *v { wide } else { *v as f64 })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f32, D::Error> {
        Ok(f64::deserialize(d)? as f32)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossSection,
}

/// Inputs and outputs. Command-line flags take precedence; all unset by default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transmission: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reflection: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ckpt: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Saliency {
    Ones,
    ContrastPrior,
}

impl From<Saliency> for SaliencyMode {
    fn from(s: Saliency) -> Self {
        match s {
            Saliency::Ones => SaliencyMode::Ones,
            Saliency::ContrastPrior => SaliencyMode::ContrastPrior,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Number of pairs to generate (100).
    pub count: usize,
    /// Seed for pairing and recipes (0).
    pub seed: u64,
    /// Blend weight of the transmission, drawn from the open interval (0.3, 0.5).
    #[serde(with = "short_f32")]
    pub alpha_min: f32,
    #[serde(with = "short_f32")]
    pub alpha_max: f32,
    /// Desaturation factor, closed range [0.5, 0.8].
    #[serde(with = "short_f32")]
    pub desat_min: f32,
    #[serde(with = "short_f32")]
    pub desat_max: f32,
    /// Gaussian kernel sigma in pixels, [1, 5].
    #[serde(with = "short_f32")]
    pub sigma_min: f32,
    #[serde(with = "short_f32")]
    pub sigma_max: f32,
    /// Ghosting shift length in pixels, [5, 15].
    pub ghost_shift_min: u32,
    pub ghost_shift_max: u32,
    /// Ghosting second-pulse weight, [0.2, 0.5].
    #[serde(with = "short_f32")]
    pub ghost_a2_min: f32,
    #[serde(with = "short_f32")]
    pub ghost_a2_max: f32,
    /// Reflection weighting: "contrast_prior" or "ones".
    pub saliency: Saliency,
}

impl Default for SynthSection {
    fn default() -> Self {
        let r = SynthRanges::default();
        Self {
            count: 100,
            seed: 0,
            alpha_min: r.alpha.0,
            alpha_max: r.alpha.1,
            desat_min: r.desat.0,
            desat_max: r.desat.1,
            sigma_min: r.sigma.0,
            sigma_max: r.sigma.1,
            ghost_shift_min: r.ghost_shift.0,
            ghost_shift_max: r.ghost_shift.1,
            ghost_a2_min: r.ghost_a2.0,
            ghost_a2_max: r.ghost_a2.1,
            saliency: Saliency::ContrastPrior,
        }
    }
}

impl SynthSection {
    pub fn ranges(&self) -> Result<SynthRanges> {
        let r = SynthRanges {
            alpha: (self.alpha_min, self.alpha_max),
            desat: (self.desat_min, self.desat_max),
            sigma: (self.sigma_min, self.sigma_max),
            ghost_shift: (self.ghost_shift_min, self.ghost_shift_max),
            ghost_a2: (self.ghost_a2_min, self.ghost_a2_max),
            saliency_mode: self.saliency.into(),
        };
        r.validate().map_err(CliError::config)?;
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Generator base width C (16).
    pub width: usize,
    /// Channel-attention reduction r, must divide C (4).
    pub reduction: usize,
    /// Discriminator first-stage width, doubled per stage (16).
    pub disc_width: usize,
    /// Discriminator stride-2 stages (4).
    pub disc_stages: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let (g, d) = (GeneratorConfig::default(), DiscriminatorConfig::default());
        Self {
            width: g.width,
            reduction: g.reduction,
            disc_width: d.width,
            disc_stages: d.stages,
        }
    }
}

impl ModelSection {
    pub fn generator(&self) -> Result<GeneratorConfig> {
        let g = GeneratorConfig {
            width: self.width,
            reduction: self.reduction,
        };
        g.validate().map_err(CliError::config)?;
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// 90
    pub epochs: usize,
    /// Initial learning rate for both networks (0.001).
    #[serde(with = "short_f32")]
    pub lr: f32,
    /// Halve the learning rate every this many epochs (30).
    pub lr_halve_every: usize,
    /// 4
    pub batch_size: usize,
    /// Square crop side, a multiple of 4 (64).
    pub patch_size: usize,
    /// Initialization, shuffling and crop seed (0).
    pub seed: u64,
    /// Discriminator updates per generator update (1).
    pub d_steps_per_g: usize,
    /// Adam moments and epsilon (0.9, 0.999, 1e-8).
    #[serde(with = "short_f32")]
    pub beta1: f32,
    #[serde(with = "short_f32")]
    pub beta2: f32,
    #[serde(with = "short_f32")]
    pub eps: f32,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            lr: t.lr0,
            lr_halve_every: t.lr_halve_every,
            batch_size: t.batch_size,
            patch_size: t.patch_size,
            seed: t.seed,
            d_steps_per_g: t.d_steps_per_g,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// Mean squared pixel error (1.0).
    #[serde(with = "short_f32")]
    pub w_pixel: f32,
    /// Feature-space L1 (0.1).
    #[serde(with = "short_f32")]
    pub w_perceptual: f32,
    /// Image-gradient L1 (0.5).
    #[serde(with = "short_f32")]
    pub w_gradient: f32,
    /// Relativistic adversarial term (0.01).
    #[serde(with = "short_f32")]
    pub w_adv: f32,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            w_pixel: w.pixel,
            w_perceptual: w.perceptual,
            w_gradient: w.gradient,
            w_adv: w.adversarial,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Format(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Format(m) => CliError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Usage(format!("config cannot be written: {e}")))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        if self.model.disc_width == 0 || self.model.disc_stages == 0 {
            return Err(CliError::Usage("model.disc_width and model.disc_stages must be positive".into()));
        }
        let cfg = TrainConfig {
            epochs: t.epochs,
            lr0: t.lr,
            lr_halve_every: t.lr_halve_every,
            batch_size: t.batch_size,
            patch_size: t.patch_size,
            seed: t.seed,
            weights: LossWeights {
                pixel: self.loss.w_pixel,
                perceptual: self.loss.w_perceptual,
                gradient: self.loss.w_gradient,
                adversarial: self.loss.w_adv,
            },
            adam: AdamConfig {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            d_steps_per_g: t.d_steps_per_g,
            generator: self.model.generator()?,
            discriminator: DiscriminatorConfig {
                width: self.model.disc_width,
                stages: self.model.disc_stages,
            },
        };
        cfg.validate().map_err(CliError::config)?;
        Ok(cfg)
    }

    /// Overwrite the model, train and loss sections from `cfg`.
    pub fn set_train_config(&mut self, cfg: &TrainConfig) {
        self.model = ModelSection {
            width: cfg.generator.width,
            reduction: cfg.generator.reduction,
            disc_width: cfg.discriminator.width,
            disc_stages: cfg.discriminator.stages,
        };
        self.train = TrainSection {
            epochs: cfg.epochs,
            lr: cfg.lr0,
            lr_halve_every: cfg.lr_halve_every,
            batch_size: cfg.batch_size,
            patch_size: cfg.patch_size,
            seed: cfg.seed,
            d_steps_per_g: cfg.d_steps_per_g,
            beta1: cfg.adam.beta1,
            beta2: cfg.adam.beta2,
            eps: cfg.adam.eps,
        };
        self.loss = LossSection {
            w_pixel: cfg.weights.pixel,
            w_perceptual: cfg.weights.perceptual,
            w_gradient: cfg.weights.gradient,
            w_adv: cfg.weights.adversarial,
        };
    }

    pub fn from_train_config(cfg: &TrainConfig) -> Self {
        let mut out = Self::default();
        out.set_train_config(cfg);
        out
    }

    /// Write the effective configuration as `<dir>/<command>.toml`.
    pub fn echo(&self, dir: &Path, command: &str) -> Result<PathBuf> {
        let path = dir.join(format!("{command}.toml"));
        fs::write(&path, self.to_toml()?).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
