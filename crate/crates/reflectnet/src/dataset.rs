//! On-disk paired datasets.
//!
//! A dataset directory holds `{key}_input.png`, `{key}_target.png` and, for
//! synthesized pairs, `{key}_recipe.txt`. Keys from `synth` are zero-padded
//! indices (`00000`, `00001`, ...); any other key works for real pairs.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflectnet_core::synth::{sample_recipe_with, synthesize, SynthRanges};
use reflectnet_core::train::TrainPair;
use reflectnet_core::Image;

use crate::error::{CliError, Result};
use crate::imageio::{list_images, read_image, write_image};
use crate::sidecar::{ReflectionFit, Sidecar};

pub const INPUT_SUFFIX: &str = "_input";
pub const TARGET_SUFFIX: &str = "_target";
pub const RECIPE_SUFFIX: &str = "_recipe.txt";

pub fn pair_key(index: usize) -> String {
    format!("{index:05}")
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// File stem with a trailing `_input` or `_target` removed.
pub fn image_key(path: &Path) -> String {
    let s = stem(path);
    for suffix in [INPUT_SUFFIX, TARGET_SUFFIX] {
        if let Some(k) = s.strip_suffix(suffix) {
            return k.to_string();
        }
    }
    s
}

pub fn is_input(path: &Path) -> bool {
    stem(path).ends_with(INPUT_SUFFIX)
}

pub fn is_target(path: &Path) -> bool {
    stem(path).ends_with(TARGET_SUFFIX)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairFiles {
    pub key: String,
    pub input: PathBuf,
    pub target: PathBuf,
}

/// Every `*_input` image with a `*_target` image of the same extension.
pub fn scan_pairs(dir: &Path) -> Result<Vec<PairFiles>> {
    let mut out = Vec::new();
    for input in list_images(dir)? {
        if !is_input(&input) {
            continue;
        }
        let key = image_key(&input);
        let ext = input.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default();
        let target = dir.join(format!("{key}{TARGET_SUFFIX}.{ext}"));
        if target.is_file() {
            out.push(PairFiles { key, input, target });
        } else {
            warn!("{}: no matching {}, skipped", input.display(), file_name(&target));
        }
    }
    Ok(out)
}

/// Decode every pair, skipping unreadable or size-mismatched ones with a warning.
pub fn load_pairs(dir: &Path) -> Result<Vec<(String, TrainPair)>> {
    let mut out = Vec::new();
    for files in scan_pairs(dir)? {
        let (input, target) = match (read_image(&files.input), read_image(&files.target)) {
            (Ok(i), Ok(t)) => (i, t),
            (Err(e), _) | (_, Err(e)) => {
                warn!("pair {}: {e}; skipped", files.key);
                continue;
            }
        };
        if input.dims() != target.dims() {
            warn!(
                "pair {}: input is {:?} but target is {:?}; skipped",
                files.key,
                input.dims(),
                target.dims()
            );
            continue;
        }
        out.push((files.key, TrainPair { input, target }));
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no usable input/target pairs", dir.display())));
    }
    Ok(out)
}

/// Readable images of a directory, in file-name order.
fn load_pool(dir: &Path, role: &str) -> Result<Vec<(String, Image)>> {
    let mut pool = Vec::new();
    for path in list_images(dir)? {
        match read_image(&path) {
            Ok(img) if img.height() > 0 && img.width() > 0 => pool.push((file_name(&path), img)),
            Ok(_) => warn!("{}: empty image, skipped", path.display()),
            Err(e) => warn!("{e}; skipped"),
        }
    }
    if pool.is_empty() {
        return Err(CliError::Data(format!("{}: no readable {role} images", dir.display())));
    }
    Ok(pool)
}

/// Bring `r` to `t`'s size, by center crop when it is larger in both
/// dimensions and bilinear resize otherwise.
pub fn fit_reflection(r: &Image, target: (usize, usize)) -> Result<(Image, ReflectionFit)> {
    let fit = ReflectionFit::choose(target, r.dims());
    let out = match fit {
        ReflectionFit::Unchanged => r.clone(),
        ReflectionFit::CenterCrop => r.center_crop(target.0, target.1)?,
        ReflectionFit::Resize => r.resize_bilinear(target.0, target.1)?,
    };
    Ok((out, fit))
}

/// Write `count` synthesized pairs into `out`.
///
/// One ChaCha8 stream seeded with `seed` draws, per pair, the transmission
/// index, the reflection index and the recipe seed, in that order.
pub fn synthesize_corpus(
    transmission: &Path,
    reflection: &Path,
    out: &Path,
    count: usize,
    seed: u64,
    ranges: &SynthRanges,
) -> Result<Vec<Sidecar>> {
    let ts = load_pool(transmission, "transmission")?;
    let rs = load_pool(reflection, "reflection")?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sidecars = Vec::with_capacity(count);
    for i in 0..count {
        let (t_name, t) = &ts[rng.random_range(0..ts.len())];
        let (r_name, r) = &rs[rng.random_range(0..rs.len())];
        let recipe = sample_recipe_with(ranges, rng.random())?;
        let (r_fit, fit) = fit_reflection(r, t.dims())?;
        let (input, recipe) = synthesize(t, &r_fit, &recipe)?;
        let sidecar = Sidecar {
            recipe,
            size: t.dims(),
            transmission: t_name.clone(),
            reflection: r_name.clone(),
            reflection_size: r.dims(),
            fit,
        };
        let key = pair_key(i);
        write_image(&out.join(format!("{key}{INPUT_SUFFIX}.png")), &input)?;
        write_image(&out.join(format!("{key}{TARGET_SUFFIX}.png")), t)?;
        let recipe_path = out.join(format!("{key}{RECIPE_SUFFIX}"));
        fs::write(&recipe_path, sidecar.to_text()).map_err(|e| CliError::io(&recipe_path, e))?;
        sidecars.push(sidecar);
    }
    info!("wrote {count} pairs to {}", out.display());
    Ok(sidecars)
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Sidecar::parse(&text).map_err(|e| match e {
        CliError::Format(m) => CliError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
