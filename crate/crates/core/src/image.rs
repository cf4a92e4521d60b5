//! H x W x 3 floating-point RGB rasters in [0, 1].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major interleaved RGB, every sample in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image", format!("dimensions must be positive, got {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::shape(
                "image",
                format!("{height}x{width}x3 needs {} samples, got {}", height * width * 3, data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("image", format!("sample {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Build from arbitrary samples, clamping into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::from_fn(height, width, |_, _| rgb)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Channel `c` as a dense H x W plane.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::invalid(
                "crop",
                format!(
                    "{height}x{width} at ({top}, {left}) does not fit in {}x{}",
                    self.height, self.width
                ),
            ));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let row = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[row..row + width * 3]);
        }
        Ok(Self { height, width, data })
    }

    pub fn center_crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width {
            return Err(Error::invalid(
                "crop",
                format!("cannot center-crop {}x{} to {height}x{width}", self.height, self.width),
            ));
        }
        self.crop((self.height - height) / 2, (self.width - width) / 2, height, width)
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("resize", "target dimensions must be positive"));
        }
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        let sample = |pos: f32, len: usize| -> (usize, usize, f32) {
            let p = pos.max(0.0);
            let i0 = (p as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, p - i0 as f32)
        };
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let (y0, y1, fy) = sample((y as f32 + 0.5) * sy - 0.5, self.height);
            for x in 0..width {
                let (x0, x1, fx) = sample((x as f32 + 0.5) * sx - 0.5, self.width);
                let (a, b, c, d) = (self.get(y0, x0), self.get(y0, x1), self.get(y1, x0), self.get(y1, x1));
                for ch in 0..3 {
                    let top = a[ch] + (b[ch] - a[ch]) * fx;
                    let bot = c[ch] + (d[ch] - c[ch]) * fx;
                    data.push((top + (bot - top) * fy).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(height, width, data)
    }

    /// Extend the bottom and right edges by mirror reflection (edge pixel not repeated).
    pub fn reflect_pad(&self, bottom: usize, right: usize) -> Self {
        let (h, w) = (self.height + bottom, self.width + right);
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            let sy = mirror(y, self.height);
            for x in 0..w {
                data.extend_from_slice(&self.get(sy, mirror(x, self.width)));
            }
        }
        Self {
            height: h,
            width: w,
            data,
        }
    }

    /// `[1, 3, H, W]` planar tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out[i] = px[0];
            out[plane + i] = px[1];
            out[2 * plane + i] = px[2];
        }
        Tensor::new([1, 3, self.height, self.width], out).expect("sized above")
    }

    /// Image `index` of an `[N, 3, H, W]` tensor, clamped into `[0, 1]`.
    pub fn from_tensor(t: &Tensor<f32>, index: usize) -> Result<Self> {
        let [n, c, h, w] = t.dims4("image")?;
        if c != 3 || index >= n {
            return Err(Error::shape(
                "image",
                format!("need a [N, 3, H, W] tensor with N > {index}, got {:?}", t.shape()),
            ));
        }
        let plane = h * w;
        let src = &t.data()[index * 3 * plane..][..3 * plane];
        let mut data = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            data.extend_from_slice(&[src[i], src[plane + i], src[2 * plane + i]]);
        }
        Self::from_clamped(h, w, data)
    }

    pub fn batch_to_tensor(images: &[Image]) -> Result<Tensor<f32>> {
        let parts: Vec<Tensor<f32>> = images.iter().map(Image::to_tensor).collect();
        Tensor::stack_batch(&parts)
    }
}

/// Reflect index `i` into `0..len` with period `2 * (len - 1)`.
fn mirror(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let r = i % period;
    if r < len {
        r
    } else {
        period - r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_range_and_size() {
        assert!(Image::new(1, 1, vec![0.0, 0.5, 1.0]).is_ok());
        assert!(Image::new(1, 1, vec![0.0, 0.5, 1.01]).is_err());
        assert!(Image::new(1, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let img = Image::from_fn(3, 4, |y, x| [y as f32 / 3.0, x as f32 / 4.0, 0.25]).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[1, 3, 3, 4]);
        assert_eq!(Image::from_tensor(&t, 0).unwrap(), img);
    }

    #[test]
    fn reflect_pad_mirrors() {
        let img = Image::from_fn(1, 3, |_, x| [x as f32 / 2.0; 3]).unwrap();
        let p = img.reflect_pad(0, 3);
        let row: Vec<f32> = (0..6).map(|x| p.get(0, x)[0]).collect();
        assert_eq!(row, vec![0.0, 0.5, 1.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn center_crop_takes_middle() {
        let img = Image::from_fn(4, 4, |y, x| [(y * 4 + x) as f32 / 16.0; 3]).unwrap();
        let c = img.center_crop(2, 2).unwrap();
        assert_eq!(c.get(0, 0), img.get(1, 1));
    }

    #[test]
    fn resize_identity_when_same_size() {
        let img = Image::from_fn(5, 7, |y, x| [y as f32 / 5.0, x as f32 / 7.0, 0.5]).unwrap();
        let r = img.resize_bilinear(5, 7).unwrap();
        for (a, b) in r.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
