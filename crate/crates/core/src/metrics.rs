//! PSNR and SSIM on [0, 1] RGB images.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::Image;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_dims(op: &'static str, x: &Image, y: &Image) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::Shape {
            op,
            detail: format!("{:?} vs {:?}", x.dims(), y.dims()),
        });
    }
    Ok(())
}

pub fn mse(x: &Image, y: &Image) -> Result<f64> {
    check_dims("mse", x, y)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / x.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB with peak 1.0; zero error reports [`PSNR_CAP_DB`].
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        -10.0 * Float::log10(mse)
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = Float::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h - n + 1, w - n + 1);
    let mut rows = Vec::with_capacity(h * wo);
    for y in 0..h {
        let r = &plane[y * w..][..w];
        for x in 0..wo {
            rows.push(r[x..x + n].iter().zip(k).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    let mut out = Vec::with_capacity(ho * wo);
    for y in 0..ho {
        for x in 0..wo {
            out.push((0..n).map(|i| rows[(y + i) * wo + x] * k[i]).sum::<f64>());
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, k);
    let mu_b = filter_valid(b, h, w, k);
    let e_aa = filter_valid(&prod(&|x, _| x * x), h, w, k);
    let e_bb = filter_valid(&prod(&|_, y| y * y), h, w, k);
    let e_ab = filter_valid(&prod(&|x, y| x * y), h, w, k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Structural similarity: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, mean over valid windows, averaged over RGB.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    check_dims("ssim", x, y)?;
    let (h, w) = x.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim input",
            format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let k = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let a: Vec<f64> = x.channel(c).into_iter().map(f64::from).collect();
        let b: Vec<f64> = y.channel(c).into_iter().map(f64::from).collect();
        total += ssim_plane(&a, &b, h, w, &k);
    }
    Ok(total / 3.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityRow {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image scores plus the dataset mean; unmatched inputs are listed, not scored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QualityReport {
    pub rows: Vec<QualityRow>,
    pub excluded: Vec<String>,
}

impl QualityReport {
    pub fn push(&mut self, name: impl Into<String>, pred: &Image, truth: &Image) -> Result<()> {
        let row = QualityRow {
            name: name.into(),
            psnr_db: psnr(pred, truth)?,
            ssim: ssim(pred, truth)?,
        };
        self.rows.push(row);
        Ok(())
    }

    pub fn exclude(&mut self, name: impl Into<String>) {
        self.excluded.push(name.into());
    }

    pub fn mean_psnr(&self) -> Option<f64> {
        self.mean(|r| r.psnr_db)
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        self.mean(|r| r.ssim)
    }

    fn mean(&self, f: impl Fn(&QualityRow) -> f64) -> Option<f64> {
        if self.rows.is_empty() {
            return None;
        }
        Some(self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64)
    }
}
