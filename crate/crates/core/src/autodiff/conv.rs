//! Direct 2-D convolution kernels over NCHW buffers with zero padding.

use alloc::format;

use crate::error::{Error, Result};
use crate::real::Real;

/// Geometry of one convolution layer. Weights are `[out, in, k, k]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride-1 layer whose padding keeps the spatial extent unchanged.
    pub fn same(in_channels: usize, out_channels: usize, kernel_size: usize, dilation: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            dilation,
            stride: 1,
            padding: dilation * (kernel_size.saturating_sub(1)) / 2,
        }
    }

    /// 3x3, stride 2, padding 1: halves even extents.
    pub fn downsample(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size: 3,
            dilation: 1,
            stride: 2,
            padding: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::invalid(
                "conv spec",
                format!("kernel_size must be odd and positive, got {}", self.kernel_size),
            ));
        }
        if self.dilation == 0 || self.stride == 0 {
            return Err(Error::invalid(
                "conv spec",
                format!("dilation ({}) and stride ({}) must be positive", self.dilation, self.stride),
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("conv spec", "channel counts must be positive"));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_size, self.kernel_size]
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_size * self.kernel_size
    }

    /// Output extent along one spatial axis, `None` if the dilated kernel
    /// does not fit in the padded input.
    pub fn output_len(&self, input: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel_size - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// Output positions `o` in `0..out_len` whose input index `o * stride + offset`
/// lands inside `0..in_len`, as a half-open range.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    let top = in_len as isize - 1 - offset;
    if top < 0 {
        return (0, 0);
    }
    let hi = out_len.min(top as usize / stride + 1);
    (lo, hi.max(lo))
}

pub(crate) struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
    pub spec: ConvSpec,
}

impl ConvGeometry {
    /// Visit every (kernel tap, output row) pair with the valid output column
    /// span and the matching input row / column offset.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, isize)) {
        let s = self.spec;
        let k = s.kernel_size;
        for ky in 0..k {
            let offy = (ky * s.dilation) as isize - s.padding as isize;
            let (oy0, oy1) = valid_range(self.ho, self.h, s.stride, offy);
            for kx in 0..k {
                let offx = (kx * s.dilation) as isize - s.padding as isize;
                let (ox0, ox1) = valid_range(self.wo, self.w, s.stride, offx);
                if ox0 >= ox1 {
                    continue;
                }
                for oy in oy0..oy1 {
                    let iy = (oy * s.stride) as isize + offy;
                    f(ky * k + kx, oy, iy as usize, ox0, ox1, offx);
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let s = g.spec;
    let (ci, co) = (s.in_channels, s.out_channels);
    let kk = s.kernel_size * s.kernel_size;
    let (in_plane, out_plane) = (g.h * g.w, g.ho * g.wo);
    for n in 0..g.n {
        for o in 0..co {
            let dst = &mut out[(n * co + o) * out_plane..][..out_plane];
            let b = bias.map_or(T::zero(), |b| b[o]);
            dst.iter_mut().for_each(|v| *v = b);
            for c in 0..ci {
                let src = &input[(n * ci + c) * in_plane..][..in_plane];
                let wk = &weight[(o * ci + c) * kk..][..kk];
                g.for_each_tap(|tap, oy, iy, ox0, ox1, offx| {
                    let wv = wk[tap];
                    let row_out = &mut dst[oy * g.wo..][ox0..ox1];
                    let row_in = &src[iy * g.w..][..g.w];
                    if s.stride == 1 {
                        let ix0 = (ox0 as isize + offx) as usize;
                        for (o, &i) in row_out.iter_mut().zip(&row_in[ix0..]) {
                            *o += wv * i;
                        }
                    } else {
                        for (j, o) in row_out.iter_mut().enumerate() {
                            let ix = ((ox0 + j) * s.stride) as isize + offx;
                            *o += wv * row_in[ix as usize];
                        }
                    }
                });
            }
        }
    }
}

/// Accumulates input, weight and bias gradients from the output gradient.
pub(crate) fn backward<T: Real>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    mut grad_weight: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let s = g.spec;
    let (ci, co) = (s.in_channels, s.out_channels);
    let kk = s.kernel_size * s.kernel_size;
    let (in_plane, out_plane) = (g.h * g.w, g.ho * g.wo);

    if let Some(gb) = grad_bias {
        for n in 0..g.n {
            for o in 0..co {
                let go = &grad_out[(n * co + o) * out_plane..][..out_plane];
                gb[o] += go.iter().copied().sum::<T>();
            }
        }
    }
    if grad_input.is_none() && grad_weight.is_none() {
        return;
    }

    for n in 0..g.n {
        for o in 0..co {
            let go = &grad_out[(n * co + o) * out_plane..][..out_plane];
            for c in 0..ci {
                let wbase = (o * ci + c) * kk;
                let src_off = (n * ci + c) * in_plane;
                if let Some(gw) = grad_weight.as_deref_mut() {
                    let src = &input[src_off..][..in_plane];
                    let gwk = &mut gw[wbase..][..kk];
                    g.for_each_tap(|tap, oy, iy, ox0, ox1, offx| {
                        let row_go = &go[oy * g.wo..][ox0..ox1];
                        let row_in = &src[iy * g.w..][..g.w];
                        let mut acc = T::zero();
                        if s.stride == 1 {
                            let ix0 = (ox0 as isize + offx) as usize;
                            for (&d, &i) in row_go.iter().zip(&row_in[ix0..]) {
                                acc += d * i;
                            }
                        } else {
                            for (j, &d) in row_go.iter().enumerate() {
                                let ix = ((ox0 + j) * s.stride) as isize + offx;
                                acc += d * row_in[ix as usize];
                            }
                        }
                        gwk[tap] += acc;
                    });
                }
                if let Some(gi) = grad_input.as_deref_mut() {
                    let wk = &weight[wbase..][..kk];
                    let dst = &mut gi[src_off..][..in_plane];
                    g.for_each_tap(|tap, oy, iy, ox0, ox1, offx| {
                        let wv = wk[tap];
                        let row_go = &go[oy * g.wo..][ox0..ox1];
                        let row_gi = &mut dst[iy * g.w..][..g.w];
                        if s.stride == 1 {
                            let ix0 = (ox0 as isize + offx) as usize;
                            for (gi, &d) in row_gi[ix0..].iter_mut().zip(row_go) {
                                *gi += wv * d;
                            }
                        } else {
                            for (j, &d) in row_go.iter().enumerate() {
                                let ix = ((ox0 + j) * s.stride) as isize + offx;
                                row_gi[ix as usize] += wv * d;
                            }
                        }
                    });
                }
            }
        }
    }
}
