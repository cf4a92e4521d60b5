//! `key=value` text record of one synthesized pair.
//!
//! Floats are written in the shortest form that parses back to the same bits,
//! so reading a sidecar reproduces the recipe exactly.
//!
//! ```text
//! seed=17
//! alpha=0.4123
//! kernel=ghosting
//! shift_dy=-3
//! shift_dx=9
//! a2=0.31
//! desaturation=0.62
//! saliency=contrast_prior
//! size=64x64
//! transmission=beach.png
//! reflection=room.png
//! reflection_size=80x96
//! reflection_fit=center_crop
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use reflectnet_core::synth::{KernelSpec, SaliencyMode, SynthRecipe};

use crate::error::{CliError, Result};

/// How the reflection image was brought to the transmission's size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReflectionFit {
    /// Already the same size.
    Unchanged,
    /// Larger in both dimensions: centered crop.
    CenterCrop,
    /// Otherwise: bilinear resize.
    Resize,
}

impl ReflectionFit {
    pub fn name(self) -> &'static str {
        match self {
            ReflectionFit::Unchanged => "unchanged",
            ReflectionFit::CenterCrop => "center_crop",
            ReflectionFit::Resize => "resize",
        }
    }

    pub fn choose(target: (usize, usize), source: (usize, usize)) -> Self {
        if source == target {
            ReflectionFit::Unchanged
        } else if source.0 >= target.0 && source.1 >= target.1 {
            ReflectionFit::CenterCrop
        } else {
            ReflectionFit::Resize
        }
    }
}

pub fn saliency_name(mode: SaliencyMode) -> &'static str {
    match mode {
        SaliencyMode::Ones => "ones",
        SaliencyMode::ContrastPrior => "contrast_prior",
    }
}

pub fn parse_saliency(s: &str) -> Option<SaliencyMode> {
    match s {
        "ones" => Some(SaliencyMode::Ones),
        "contrast_prior" => Some(SaliencyMode::ContrastPrior),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sidecar {
    pub recipe: SynthRecipe,
    /// Height and width of the pair.
    pub size: (usize, usize),
    pub transmission: String,
    pub reflection: String,
    pub reflection_size: (usize, usize),
    pub fit: ReflectionFit,
}

fn size_text((h, w): (usize, usize)) -> String {
    format!("{h}x{w}")
}

impl Sidecar {
    pub fn to_text(&self) -> String {
        let r = &self.recipe;
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k}={v}").expect("string write");
        };
        put("seed", &r.seed);
        put("alpha", &r.alpha);
        match r.kernel.spec() {
            KernelSpec::OnePulse => put("kernel", &"one_pulse"),
            KernelSpec::Gaussian { sigma } => {
                put("kernel", &"gaussian");
                put("sigma", &sigma);
            }
            KernelSpec::Ghosting { dy, dx, a2 } => {
                put("kernel", &"ghosting");
                put("shift_dy", &dy);
                put("shift_dx", &dx);
                put("a2", &a2);
            }
        }
        put("desaturation", &r.desat_factor);
        put("saliency", &saliency_name(r.saliency_mode));
        put("size", &size_text(self.size));
        put("transmission", &self.transmission);
        put("reflection", &self.reflection);
        put("reflection_size", &size_text(self.reflection_size));
        put("reflection_fit", &self.fit.name());
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = Fields::parse(text)?;
        let kernel = match fields.take("kernel")?.as_str() {
            "one_pulse" => KernelSpec::OnePulse,
            "gaussian" => KernelSpec::Gaussian {
                sigma: fields.number("sigma")?,
            },
            "ghosting" => KernelSpec::Ghosting {
                dy: fields.number("shift_dy")?,
                dx: fields.number("shift_dx")?,
                a2: fields.number("a2")?,
            },
            other => return Err(bad(format!("unknown kernel `{other}`"))),
        };
        let saliency = fields.take("saliency")?;
        let recipe = SynthRecipe {
            seed: fields.number("seed")?,
            alpha: fields.number("alpha")?,
            kernel: kernel.build().map_err(|e| bad(e.to_string()))?,
            saliency_mode: parse_saliency(&saliency).ok_or_else(|| bad(format!("unknown saliency `{saliency}`")))?,
            desat_factor: fields.number("desaturation")?,
        };
        recipe.validate().map_err(|e| bad(e.to_string()))?;
        let fit = match fields.take("reflection_fit")?.as_str() {
            "unchanged" => ReflectionFit::Unchanged,
            "center_crop" => ReflectionFit::CenterCrop,
            "resize" => ReflectionFit::Resize,
            other => return Err(bad(format!("unknown reflection_fit `{other}`"))),
        };
        let out = Sidecar {
            recipe,
            size: fields.size("size")?,
            transmission: fields.take("transmission")?,
            reflection: fields.take("reflection")?,
            reflection_size: fields.size("reflection_size")?,
            fit,
        };
        fields.finish()?;
        Ok(out)
    }
}

fn bad(msg: String) -> CliError {
    CliError::Format(format!("sidecar: {msg}"))
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", n + 1)))?;
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(bad(format!("duplicate key `{k}`")));
            }
        }
        Ok(Fields(map))
    }

    fn take(&mut self, key: &str) -> Result<String> {
        self.0.remove(key).ok_or_else(|| bad(format!("missing key `{key}`")))
    }

    fn number<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.take(key)?;
        v.parse().map_err(|_| bad(format!("`{key}`: cannot parse `{v}`")))
    }

    fn size(&mut self, key: &str) -> Result<(usize, usize)> {
        let v = self.take(key)?;
        v.split_once('x')
            .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)))
            .ok_or_else(|| bad(format!("`{key}`: expected HxW, got `{v}`")))
    }

    fn finish(self) -> Result<()> {
        match self.0.keys().next() {
            Some(k) => Err(bad(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}
