//! Synthetic reflection images.
//!
//! A reflection-contaminated image is composed from a transmission layer `T`
//! and a reflection layer `R` as
//!
//! ```text
//! I = clip(alpha * T + (1 - alpha) * (K conv (S * desat(R, f))))
//! ```
//!
//! where `K` is a one-pulse (focused), Gaussian (defocused) or two-pulse
//! (ghosting) kernel, `S` a per-pixel saliency weight of `R`, and `desat`
//! scales HSV saturation by `f`. With `S = 1`, `f = 1` and the one-pulse
//! kernel this reduces to the plain linear blend.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelKind {
    OnePulse,
    Gaussian,
    Ghosting,
}

/// Parameters that fully determine a [`BlendKernel`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    OnePulse,
    Gaussian { sigma: f32 },
    Ghosting { dy: i32, dx: i32, a2: f32 },
}

impl KernelSpec {
    pub fn kind(&self) -> KernelKind {
        match self {
            KernelSpec::OnePulse => KernelKind::OnePulse,
            KernelSpec::Gaussian { .. } => KernelKind::Gaussian,
            KernelSpec::Ghosting { .. } => KernelKind::Ghosting,
        }
    }

    pub fn build(&self) -> Result<BlendKernel> {
        match *self {
            KernelSpec::OnePulse => Ok(make_one_pulse()),
            KernelSpec::Gaussian { sigma } => make_gaussian(sigma),
            KernelSpec::Ghosting { dy, dx, a2 } => make_ghosting((dy, dx), a2),
        }
    }
}

/// Non-negative taps on an odd-sized grid anchored at its center, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendKernel {
    spec: KernelSpec,
    rows: usize,
    cols: usize,
    taps: Vec<f32>,
}

impl BlendKernel {
    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn kind(&self) -> KernelKind {
        self.spec.kind()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn taps(&self) -> &[f32] {
        &self.taps
    }

    pub fn sigma(&self) -> Option<f32> {
        match self.spec {
            KernelSpec::Gaussian { sigma } => Some(sigma),
            _ => None,
        }
    }

    pub fn shift(&self) -> Option<(i32, i32)> {
        match self.spec {
            KernelSpec::Ghosting { dy, dx, .. } => Some((dy, dx)),
            _ => None,
        }
    }

    pub fn a2(&self) -> Option<f32> {
        match self.spec {
            KernelSpec::Ghosting { a2, .. } => Some(a2),
            _ => None,
        }
    }

    /// Tap at offset `(dy, dx)` from the anchor, zero outside the grid.
    pub fn tap(&self, dy: i32, dx: i32) -> f32 {
        let (cy, cx) = ((self.rows / 2) as i32, (self.cols / 2) as i32);
        let (r, c) = (cy + dy, cx + dx);
        if r < 0 || c < 0 || r >= self.rows as i32 || c >= self.cols as i32 {
            return 0.0;
        }
        self.taps[r as usize * self.cols + c as usize]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().map(|&t| t as f64).sum()
    }

    /// Same-size convolution with zero padding: `out(y, x) = sum K(u, v) * img(y - u, x - v)`.
    pub fn convolve(&self, image: &Image) -> Image {
        let (h, w) = image.dims();
        let (cy, cx) = ((self.rows / 2) as isize, (self.cols / 2) as isize);
        let src = image.data();
        let mut out = vec![0.0f32; src.len()];
        for (t, &k) in self.taps.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            let u = (t / self.cols) as isize - cy;
            let v = (t % self.cols) as isize - cx;
            let x0 = v.max(0) as usize;
            let x1 = (w as isize + v.min(0)).max(0) as usize;
            if x0 >= x1 {
                continue;
            }
            for y in 0..h {
                let sy = y as isize - u;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let drow = &mut out[y * w * 3..][x0 * 3..x1 * 3];
                let sx0 = (x0 as isize - v) as usize;
                let srow = &src[(sy as usize * w + sx0) * 3..][..(x1 - x0) * 3];
                for (d, &s) in drow.iter_mut().zip(srow) {
                    *d += k * s;
                }
            }
        }
        Image::from_clamped(h, w, out).expect("same dims as input")
    }
}

/// Focused reflection: identity kernel.
pub fn make_one_pulse() -> BlendKernel {
    BlendKernel {
        spec: KernelSpec::OnePulse,
        rows: 1,
        cols: 1,
        taps: vec![1.0],
    }
}

/// Defocused reflection: isotropic Gaussian on a `2 * ceil(2 sigma) + 1` square.
pub fn make_gaussian(sigma: f32) -> Result<BlendKernel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("gaussian kernel", format!("sigma must be positive, got {sigma}")));
    }
    let radius = Float::ceil(2.0 * sigma as f64) as usize;
    let side = 2 * radius + 1;
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let mut raw = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (dy, dx) = (y as f64 - radius as f64, x as f64 - radius as f64);
            raw.push(Float::exp(-(dy * dy + dx * dx) / s2));
        }
    }
    let total: f64 = raw.iter().sum();
    Ok(BlendKernel {
        spec: KernelSpec::Gaussian { sigma },
        rows: side,
        cols: side,
        taps: raw.iter().map(|&v| (v / total) as f32).collect(),
    })
}

/// Ghosting reflection: unit pulse at the origin plus `a2` at `shift`, normalized.
pub fn make_ghosting(shift: (i32, i32), a2: f32) -> Result<BlendKernel> {
    let (dy, dx) = shift;
    if dy == 0 && dx == 0 {
        return Err(Error::invalid("ghosting kernel", "shift must be nonzero"));
    }
    if !(a2 > 0.0 && a2 < 1.0) {
        return Err(Error::invalid("ghosting kernel", format!("a2 must lie in (0, 1), got {a2}")));
    }
    let rows = 2 * dy.unsigned_abs() as usize + 1;
    let cols = 2 * dx.unsigned_abs() as usize + 1;
    let mut taps = vec![0.0f32; rows * cols];
    let (cy, cx) = (rows / 2, cols / 2);
    let norm = 1.0 + a2 as f64;
    taps[cy * cols + cx] = (1.0 / norm) as f32;
    let (sy, sx) = ((cy as i32 + dy) as usize, (cx as i32 + dx) as usize);
    taps[sy * cols + sx] = (a2 as f64 / norm) as f32;
    Ok(BlendKernel {
        spec: KernelSpec::Ghosting { dy, dx, a2 },
        rows,
        cols,
        taps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SaliencyMode {
    Ones,
    ContrastPrior,
}

/// Per-pixel reflection weight in `[0, 1]`, same size as the reflection layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape("saliency", format!("{height}x{width} map needs {} values", height * width)));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("saliency", "values must lie in [0, 1]"));
        }
        Ok(Self { height, width, values })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![1.0; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Weight every pixel of `image` by the map.
    pub fn apply(&self, image: &Image) -> Result<Image> {
        if image.dims() != (self.height, self.width) {
            return Err(Error::shape(
                "saliency",
                format!("map is {}x{}, image is {:?}", self.height, self.width, image.dims()),
            ));
        }
        let data = image
            .data()
            .chunks_exact(3)
            .zip(&self.values)
            .flat_map(|(px, &s)| [s * px[0], s * px[1], s * px[2]])
            .collect();
        Image::new(self.height, self.width, data)
    }
}

/// Source of saliency maps; a learned segmenter can be plugged in here.
pub trait SaliencyProvider {
    fn saliency(&self, image: &Image) -> SaliencyMap;
}

/// Uniform weight: no reweighting of the reflection.
pub struct OnesSaliency;

impl SaliencyProvider for OnesSaliency {
    fn saliency(&self, image: &Image) -> SaliencyMap {
        SaliencyMap::ones(image.height(), image.width())
    }
}

/// Color distance from the image mean times a centered Gaussian prior,
/// min-max normalized. Images without contrast fall back to all ones.
pub struct ContrastPriorSaliency {
    /// Prior standard deviation as a fraction of the longer image side.
    pub sigma_frac: f64,
}

impl Default for ContrastPriorSaliency {
    fn default() -> Self {
        Self { sigma_frac: 0.35 }
    }
}

impl SaliencyProvider for ContrastPriorSaliency {
    fn saliency(&self, image: &Image) -> SaliencyMap {
        let (h, w) = image.dims();
        let n = (h * w) as f64;
        let mut mean = [0.0f64; 3];
        for px in image.pixels() {
            for c in 0..3 {
                mean[c] += px[c] as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let sigma = self.sigma_frac * h.max(w) as f64;
        let two_s2 = 2.0 * sigma * sigma;
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let raw: Vec<f64> = image
            .pixels()
            .enumerate()
            .map(|(i, px)| {
                let dist = Float::sqrt((0..3).map(|c| (px[c] as f64 - mean[c]).powi(2)).sum::<f64>());
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                dist * Float::exp(-((y - cy).powi(2) + (x - cx).powi(2)) / two_s2)
            })
            .collect();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi - lo > 1e-12) {
            return SaliencyMap::ones(h, w);
        }
        let values = raw.iter().map(|&v| (((v - lo) / (hi - lo)) as f32).clamp(0.0, 1.0)).collect();
        SaliencyMap {
            height: h,
            width: w,
            values,
        }
    }
}

impl SaliencyMode {
    pub fn provider(self) -> Box<dyn SaliencyProvider> {
        match self {
            SaliencyMode::Ones => Box::new(OnesSaliency),
            SaliencyMode::ContrastPrior => Box::new(ContrastPriorSaliency::default()),
        }
    }
}

pub fn saliency(image: &Image, mode: SaliencyMode) -> SaliencyMap {
    mode.provider().saliency(image)
}

/// Hexcone RGB to `(h, s, v)` with `h` in sextants `[0, 6)`.
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let s = if max > 0.0 { chroma / max } else { 0.0 };
    let h = if chroma == 0.0 {
        0.0
    } else if max == r {
        let h = (g - b) / chroma;
        if h < 0.0 {
            h + 6.0
        } else {
            h
        }
    } else if max == g {
        (b - r) / chroma + 2.0
    } else {
        (r - g) / chroma + 4.0
    };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let chroma = v * s;
    let x = chroma * (1.0 - Float::abs(h % 2.0 - 1.0));
    let m = v - chroma;
    let (r, g, b) = match Float::floor(h) as i64 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Scale HSV saturation by `f`. `f = 1` returns the input unchanged.
pub fn desaturate(image: &Image, f: f32) -> Result<Image> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::invalid("desaturation factor", format!("{f} not in (0, 1]")));
    }
    if f == 1.0 {
        return Ok(image.clone());
    }
    let data = image
        .pixels()
        .flat_map(|px| {
            let [h, s, v] = rgb_to_hsv(px.map(|c| c as f64));
            hsv_to_rgb([h, s * f as f64, v]).map(|c| (c as f32).clamp(0.0, 1.0))
        })
        .collect();
    Image::new(image.height(), image.width(), data)
}

/// Everything needed to reproduce one synthesized image from `(T, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecipe {
    pub alpha: f32,
    pub kernel: BlendKernel,
    pub saliency_mode: SaliencyMode,
    pub desat_factor: f32,
    pub seed: u64,
}

impl SynthRecipe {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("recipe", format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if !(self.desat_factor > 0.0 && self.desat_factor <= 1.0) {
            return Err(Error::invalid(
                "recipe",
                format!("desaturation factor {} not in (0, 1]", self.desat_factor),
            ));
        }
        Ok(())
    }
}

/// Sampling ranges for [`sample_recipe_with`]. Alpha is drawn from the open
/// interval, the rest from closed ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthRanges {
    pub alpha: (f32, f32),
    pub desat: (f32, f32),
    pub sigma: (f32, f32),
    pub ghost_shift: (u32, u32),
    pub ghost_a2: (f32, f32),
    pub saliency_mode: SaliencyMode,
}

impl Default for SynthRanges {
    fn default() -> Self {
        Self {
            alpha: (0.3, 0.5),
            desat: (0.5, 0.8),
            sigma: (1.0, 5.0),
            ghost_shift: (5, 15),
            ghost_a2: (0.2, 0.5),
            saliency_mode: SaliencyMode::ContrastPrior,
        }
    }
}

impl SynthRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f32, f32), min: f32, max: f32| lo < hi && lo >= min && hi <= max;
        if !ok(self.alpha, 0.0, 1.0) {
            return Err(Error::invalid("synth ranges", format!("alpha range {:?}", self.alpha)));
        }
        if !(self.desat.0 > 0.0 && self.desat.0 <= self.desat.1 && self.desat.1 <= 1.0) {
            return Err(Error::invalid("synth ranges", format!("desaturation range {:?}", self.desat)));
        }
        if !(self.sigma.0 > 0.0 && self.sigma.0 <= self.sigma.1) {
            return Err(Error::invalid("synth ranges", format!("sigma range {:?}", self.sigma)));
        }
        if !(self.ghost_shift.0 >= 1 && self.ghost_shift.0 <= self.ghost_shift.1) {
            return Err(Error::invalid("synth ranges", format!("ghost shift range {:?}", self.ghost_shift)));
        }
        if !(self.ghost_a2.0 > 0.0 && self.ghost_a2.0 <= self.ghost_a2.1 && self.ghost_a2.1 < 1.0) {
            return Err(Error::invalid("synth ranges", format!("ghost a2 range {:?}", self.ghost_a2)));
        }
        Ok(())
    }
}

fn uniform_closed(rng: &mut ChaCha8Rng, (lo, hi): (f32, f32)) -> f32 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub fn sample_recipe(seed: u64) -> SynthRecipe {
    sample_recipe_with(&SynthRanges::default(), seed).expect("default ranges are valid")
}

/// Draw a recipe deterministically from `seed`.
///
/// Draw order: alpha, kernel kind, kernel parameters, desaturation factor.
pub fn sample_recipe_with(ranges: &SynthRanges, seed: u64) -> Result<SynthRecipe> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (alo, ahi) = ranges.alpha;
    let alpha = loop {
        let a = rng.random_range(alo..ahi);
        if a > alo && a < ahi {
            break a;
        }
    };
    let spec = match rng.random_range(0..3u32) {
        0 => KernelSpec::OnePulse,
        1 => KernelSpec::Gaussian {
            sigma: uniform_closed(&mut rng, ranges.sigma),
        },
        _ => {
            let magnitude = rng.random_range(ranges.ghost_shift.0..=ranges.ghost_shift.1) as f64;
            let theta = rng.random::<f64>() * TAU;
            let mut dy = Float::round(magnitude * Float::sin(theta)) as i32;
            let dx = Float::round(magnitude * Float::cos(theta)) as i32;
            if dy == 0 && dx == 0 {
                dy = 1;
            }
            KernelSpec::Ghosting {
                dy,
                dx,
                a2: uniform_closed(&mut rng, ranges.ghost_a2),
            }
        }
    };
    let desat_factor = uniform_closed(&mut rng, ranges.desat);
    Ok(SynthRecipe {
        alpha,
        kernel: spec.build()?,
        saliency_mode: ranges.saliency_mode,
        desat_factor,
        seed,
    })
}

fn check_pair(t: &Image, r: &Image) -> Result<()> {
    if t.dims() != r.dims() {
        return Err(Error::shape(
            "synthesize",
            format!("transmission is {:?} but reflection is {:?}", t.dims(), r.dims()),
        ));
    }
    Ok(())
}

fn blend(t: &Image, r: &Image, alpha: f32) -> Image {
    let data = t
        .data()
        .iter()
        .zip(r.data())
        .map(|(&tv, &rv)| (alpha * tv + (1.0 - alpha) * rv).clamp(0.0, 1.0))
        .collect();
    Image::new(t.height(), t.width(), data).expect("clamped")
}

/// `alpha * T + (1 - alpha) * R`, clipped.
pub fn linear_blend(t: &Image, r: &Image, alpha: f32) -> Result<Image> {
    check_pair(t, r)?;
    Ok(blend(t, r, alpha))
}

pub fn synthesize(t: &Image, r: &Image, recipe: &SynthRecipe) -> Result<(Image, SynthRecipe)> {
    let provider = recipe.saliency_mode.provider();
    synthesize_with(t, r, recipe, provider.as_ref())
}

/// Desaturate `R`, weight by the saliency of `R`, convolve with the recipe
/// kernel, blend with `T`, clip.
pub fn synthesize_with(
    t: &Image,
    r: &Image,
    recipe: &SynthRecipe,
    saliency: &dyn SaliencyProvider,
) -> Result<(Image, SynthRecipe)> {
    check_pair(t, r)?;
    recipe.validate()?;
    let desat = desaturate(r, recipe.desat_factor)?;
    let weighted = saliency.saliency(r).apply(&desat)?;
    let reflected = recipe.kernel.convolve(&weighted);
    Ok((blend(t, &reflected, recipe.alpha), recipe.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f32, b: f32, tol: f32) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn one_pulse_is_identity() {
        let k = make_one_pulse();
        assert_eq!(k.taps(), &[1.0]);
        let img = Image::from_fn(4, 5, |y, x| [y as f32 / 4.0, x as f32 / 5.0, 0.3]).unwrap();
        assert_eq!(k.convolve(&img), img);
    }

    #[test]
    fn gaussian_shape_and_normalization() {
        let k = make_gaussian(1.0).unwrap();
        assert_eq!((k.rows(), k.cols()), (5, 5));
        let center = k.tap(0, 0);
        assert!(k.taps().iter().all(|&t| t <= center));
        for sigma in [0.3f32, 1.0, 2.5, 5.0] {
            let k = make_gaussian(sigma).unwrap();
            assert!((k.sum() - 1.0).abs() < 1e-6, "sigma {sigma}: {}", k.sum());
            let n = k.taps().len();
            for i in 0..n {
                assert_eq!(k.taps()[i], k.taps()[n - 1 - i]);
            }
        }
        assert!(make_gaussian(0.0).is_err());
        assert!(make_gaussian(-1.0).is_err());
    }

    #[test]
    fn ghosting_taps() {
        let k = make_ghosting((0, 8), 0.5).unwrap();
        assert!(close(k.tap(0, 0), 2.0 / 3.0, 1e-7));
        assert!(close(k.tap(0, 8), 1.0 / 3.0, 1e-7));
        assert_eq!(k.taps().iter().filter(|&&t| t != 0.0).count(), 2);
        assert!(make_ghosting((0, 0), 0.5).is_err());
        assert!(make_ghosting((1, 0), 1.0).is_err());
    }

    #[test]
    fn ghosting_approaches_one_pulse() {
        let k = make_ghosting((3, -2), 1e-6).unwrap();
        assert!(close(k.tap(0, 0), 1.0, 1e-5));
    }

    #[test]
    fn ghosting_impulse_response() {
        let mut data = vec![0.0f32; 20 * 20 * 3];
        let (y0, x0) = (6, 5);
        data[(y0 * 20 + x0) * 3..][..3].copy_from_slice(&[1.0, 1.0, 1.0]);
        let img = Image::new(20, 20, data).unwrap();
        let k = make_ghosting((2, 8), 0.5).unwrap();
        let out = k.convolve(&img);
        let bright: Vec<(usize, usize)> = (0..20)
            .flat_map(|y| (0..20).map(move |x| (y, x)))
            .filter(|&(y, x)| out.get(y, x)[0] > 0.0)
            .collect();
        assert_eq!(bright, vec![(y0, x0), (y0 + 2, x0 + 8)]);
    }

    #[test]
    fn desaturate_examples() {
        let red = Image::filled(1, 1, [1.0, 0.0, 0.0]).unwrap();
        let out = desaturate(&red, 0.5).unwrap();
        let p = out.get(0, 0);
        assert!(close(p[0], 1.0, 1e-6) && close(p[1], 0.5, 1e-6) && close(p[2], 0.5, 1e-6), "{p:?}");

        let gray = Image::filled(2, 2, [0.4, 0.4, 0.4]).unwrap();
        assert_eq!(desaturate(&gray, 0.6).unwrap(), gray);
        assert!(desaturate(&gray, 0.0).is_err());
        assert!(desaturate(&gray, 1.5).is_err());
    }

    #[test]
    fn hsv_round_trip() {
        for r in 0..6 {
            for g in 0..6 {
                for b in 0..6 {
                    let rgb = [r as f64 / 5.0, g as f64 / 5.0, b as f64 / 5.0];
                    let back = hsv_to_rgb(rgb_to_hsv(rgb));
                    for c in 0..3 {
                        assert!((back[c] - rgb[c]).abs() < 1e-12, "{rgb:?} -> {back:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn contrast_prior_examples() {
        let flat = Image::filled(5, 5, [0.2, 0.6, 0.1]).unwrap();
        let s = saliency(&flat, SaliencyMode::ContrastPrior);
        assert!(s.values().iter().all(|&v| v == 1.0));

        let spot = Image::from_fn(7, 7, |y, x| if (y, x) == (3, 3) { [1.0, 0.0, 0.0] } else { [0.2, 0.2, 0.2] }).unwrap();
        let s = saliency(&spot, SaliencyMode::ContrastPrior);
        assert_eq!(s.get(3, 3), 1.0);
        assert!(s.values().iter().enumerate().all(|(i, &v)| i == 24 || v < 1.0));
    }

    #[test]
    fn blend_hand_case() {
        let t = Image::filled(3, 3, [0.8; 3]).unwrap();
        let r = Image::filled(3, 3, [0.4; 3]).unwrap();
        let recipe = SynthRecipe {
            alpha: 0.5,
            kernel: make_one_pulse(),
            saliency_mode: SaliencyMode::Ones,
            desat_factor: 1.0,
            seed: 0,
        };
        let (i, meta) = synthesize(&t, &r, &recipe).unwrap();
        assert!(i.data().iter().all(|&v| close(v, 0.6, 1e-7)));
        assert_eq!(meta, recipe);
    }

    #[test]
    fn rejects_mismatched_layers() {
        let t = Image::filled(3, 3, [0.8; 3]).unwrap();
        let r = Image::filled(3, 4, [0.4; 3]).unwrap();
        assert!(synthesize(&t, &r, &sample_recipe(1)).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_recipe(42), sample_recipe(42));
        assert_ne!(sample_recipe(42), sample_recipe(43));
    }
}
