//! Apply a trained generator to an image of any size.

use crate::error::Result;
use crate::image::Image;
use crate::model::{Generator, DOWNSCALE};

fn pad_to(n: usize) -> usize {
    (DOWNSCALE - n % DOWNSCALE) % DOWNSCALE
}

/// Reflect-pad to a multiple of 4, run the generator, crop back, clamp to [0, 1].
pub fn infer(generator: &Generator, input: &Image) -> Result<Image> {
    let (h, w) = input.dims();
    let padded = input.reflect_pad(pad_to(h), pad_to(w));
    let out = generator.forward_tensor(&padded.to_tensor())?;
    let full = Image::from_tensor(&out, 0)?;
    if full.dims() == (h, w) {
        Ok(full)
    } else {
        full.crop(0, 0, h, w)
    }
}
