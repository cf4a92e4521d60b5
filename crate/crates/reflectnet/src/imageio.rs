//! 8-bit PNG and binary PPM (P6) in and out of [`Image`].
//!
//! Decoding divides by 255; encoding clamps to [0, 1] and rounds `v * 255`.

use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, RgbImage};
use reflectnet_core::Image;

use crate::error::{CliError, Result};

/// Extensions treated as images when scanning a directory.
pub const EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_rgb8(img: &RgbImage) -> Image {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(h as usize, w as usize, data).expect("bytes map into [0, 1]")
}

pub fn to_rgb8(img: &Image) -> RgbImage {
    let bytes = img.data().iter().map(|&v| quantize(v)).collect();
    RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("3 bytes per pixel")
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm" | "pnm") => Ok(ImageFormat::Pnm),
        _ => Err(CliError::Usage(format!(
            "{}: unsupported image extension (use .png or .ppm)",
            path.display()
        ))),
    }
}

pub fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Decode any PNG/PPM; alpha is dropped and grey is expanded to RGB.
pub fn read_image(path: &Path) -> Result<Image> {
    let format = format_for(path)?;
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    Ok(from_rgb8(&decoded.to_rgb8()))
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let format = format_for(path)?;
    let rgb = to_rgb8(img);
    let mut bytes = Vec::new();
    let encoded = match format {
        ImageFormat::Pnm => PnmEncoder::new(&mut bytes)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(rgb.as_raw(), rgb.width(), rgb.height(), ExtendedColorType::Rgb8),
        _ => PngEncoder::new(&mut bytes).write_image(rgb.as_raw(), rgb.width(), rgb.height(), ExtendedColorType::Rgb8),
    };
    encoded.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_and_clamps() {
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(127.4 / 255.0), 127);
    }

    #[test]
    fn bytes_survive_a_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 7, |y, x| {
            [(y * 7 + x) as f32 / 255.0, 1.0 - x as f32 / 255.0, 0.5]
        })
        .unwrap();
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            write_image(&p, &img).unwrap();
            assert_eq!(to_rgb8(&read_image(&p).unwrap()), to_rgb8(&img));
        }
        let raw = fs::read(dir.path().join("a.ppm")).unwrap();
        assert_eq!(&raw[..2], b"P6");
    }
}
