//! Raw numeric kernels shared by the differentiable ops: GEMM, im2col and
//! the zero-padded bilinear sampler.

use crate::error::{Error, Result};

/// `c = a·b + beta·c` for row-major `a` (m×k) and `b` (k×n). Either operand
/// may be flagged as stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_transposed {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the bounds were checked above and the strides describe the
    // dense layouts of the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Stride, zero padding and dilation of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl ConvGeometry {
    pub fn same(kernel: usize) -> Self {
        ConvGeometry {
            stride: 1,
            padding: kernel / 2,
            dilation: 1,
        }
    }

    pub(crate) fn validate(&self, op: &'static str) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::invalid(format!(
                "{op}: stride and dilation must be >= 1"
            )));
        }
        Ok(())
    }

    pub fn out_extent(&self, input: usize, kernel: usize, op: &'static str) -> Result<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(Error::invalid(format!(
                "{op}: kernel span {span} exceeds padded input extent {padded}"
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }
}

/// Dimensions of a single-sample im2col expansion.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ColShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ColShape {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output columns `[lo, hi)` whose input column `ox·stride + offset` lies
/// inside `0..width`.
#[inline]
fn valid_span(offset: isize, stride: usize, width: usize, out_w: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        (-offset + s - 1) / s
    };
    let hi = (width as isize - offset + s - 1).div_euclid(s).max(0);
    let lo = (lo as usize).min(out_w);
    (lo, (hi as usize).clamp(lo, out_w))
}

/// Expand one `C×H×W` sample into a `(C·kh·kw) × (Ho·Wo)` matrix.
pub(crate) fn im2col(input: &[f64], s: ColShape, g: ConvGeometry, cols: &mut [f64]) {
    let p = s.cols();
    for c in 0..s.channels {
        let plane = &input[c * s.height * s.width..(c + 1) * s.height * s.width];
        for ky in 0..s.kh {
            for kx in 0..s.kw {
                let row = (c * s.kh + ky) * s.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let offset = (kx * g.dilation) as isize - g.padding as isize;
                let (lo, hi) = valid_span(offset, g.stride, s.width, s.out_w);
                for oy in 0..s.out_h {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    let line = &mut dst[oy * s.out_w..(oy + 1) * s.out_w];
                    if iy < 0 || iy >= s.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * s.width..(iy as usize + 1) * s.width];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    if lo == hi {
                        continue;
                    }
                    let first = (lo as isize * g.stride as isize + offset) as usize;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (k, v) in line[lo..hi].iter_mut().enumerate() {
                            *v = src[first + k * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate column gradients back onto the input.
pub(crate) fn col2im(cols: &[f64], s: ColShape, g: ConvGeometry, input_grad: &mut [f64]) {
    let p = s.cols();
    for c in 0..s.channels {
        let plane = &mut input_grad[c * s.height * s.width..(c + 1) * s.height * s.width];
        for ky in 0..s.kh {
            for kx in 0..s.kw {
                let row = (c * s.kh + ky) * s.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                let offset = (kx * g.dilation) as isize - g.padding as isize;
                let (lo, hi) = valid_span(offset, g.stride, s.width, s.out_w);
                if lo == hi {
                    continue;
                }
                let first = (lo as isize * g.stride as isize + offset) as usize;
                for oy in 0..s.out_h {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    if iy < 0 || iy >= s.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * s.width..(iy as usize + 1) * s.width];
                    let line = &src[oy * s.out_w + lo..oy * s.out_w + hi];
                    if g.stride == 1 {
                        for (d, v) in dst[first..first + hi - lo].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (k, v) in line.iter().enumerate() {
                            dst[first + k * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// The four bilinear taps around a continuous index-space position
/// `(y, x)`, with zero weight for corners outside the plane.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BilinearTaps {
    pub index: [usize; 4],
    pub valid: [bool; 4],
    pub weight: [f64; 4],
    pub dweight_dy: [f64; 4],
    pub dweight_dx: [f64; 4],
}

impl BilinearTaps {
    pub fn new(y: f64, x: f64, height: usize, width: usize) -> Self {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let (y0, x0) = (y0 as isize, x0 as isize);
        let corners = [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)];
        let mut index = [0; 4];
        let mut valid = [false; 4];
        for (i, &(cy, cx)) in corners.iter().enumerate() {
            if cy >= 0 && cx >= 0 && (cy as usize) < height && (cx as usize) < width {
                valid[i] = true;
                index[i] = cy as usize * width + cx as usize;
            }
        }
        BilinearTaps {
            index,
            valid,
            weight: [
                (1.0 - fy) * (1.0 - fx),
                (1.0 - fy) * fx,
                fy * (1.0 - fx),
                fy * fx,
            ],
            dweight_dy: [-(1.0 - fx), -fx, 1.0 - fx, fx],
            dweight_dx: [-(1.0 - fy), 1.0 - fy, -fy, fy],
        }
    }

    #[inline]
    pub fn sample(&self, plane: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..4 {
            if self.valid[i] {
                v += self.weight[i] * plane[self.index[i]];
            }
        }
        v
    }

    #[inline]
    pub fn scatter(&self, plane_grad: &mut [f64], g: f64) {
        for i in 0..4 {
            if self.valid[i] {
                plane_grad[self.index[i]] += self.weight[i] * g;
            }
        }
    }

    /// Partial derivatives of the sampled value with respect to `y` and `x`.
    #[inline]
    pub fn gradient(&self, plane: &[f64]) -> (f64, f64) {
        let (mut gy, mut gx) = (0.0, 0.0);
        for i in 0..4 {
            if self.valid[i] {
                let v = plane[self.index[i]];
                gy += self.dweight_dy[i] * v;
                gx += self.dweight_dx[i] * v;
            }
        }
        (gy, gx)
    }
}

/// Sampling position of tap `(ky, kx)` for output site `(oy, ox)` of a
/// deformable convolution. Offset channel `2t` shifts x, `2t + 1` shifts y.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn deform_position(
    offsets: &[f64],
    s: ColShape,
    g: ConvGeometry,
    ky: usize,
    kx: usize,
    oy: usize,
    ox: usize,
) -> (f64, f64) {
    let tap = ky * s.kw + kx;
    let p = s.cols();
    let site = oy * s.out_w + ox;
    let dx = offsets[(2 * tap) * p + site];
    let dy = offsets[(2 * tap + 1) * p + site];
    let y = (oy * g.stride + ky * g.dilation) as f64 - g.padding as f64 + dy;
    let x = (ox * g.stride + kx * g.dilation) as f64 - g.padding as f64 + dx;
    (y, x)
}

pub(crate) fn deform_im2col(
    input: &[f64],
    offsets: &[f64],
    s: ColShape,
    g: ConvGeometry,
    cols: &mut [f64],
) {
    let p = s.cols();
    let hw = s.height * s.width;
    for ky in 0..s.kh {
        for kx in 0..s.kw {
            for oy in 0..s.out_h {
                for ox in 0..s.out_w {
                    let (y, x) = deform_position(offsets, s, g, ky, kx, oy, ox);
                    let taps = BilinearTaps::new(y, x, s.height, s.width);
                    let site = oy * s.out_w + ox;
                    for c in 0..s.channels {
                        let row = (c * s.kh + ky) * s.kw + kx;
                        cols[row * p + site] = taps.sample(&input[c * hw..(c + 1) * hw]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`deform_im2col`] with respect to both the input and the
/// offsets. Either gradient buffer may be absent.
pub(crate) fn deform_col2im(
    input: &[f64],
    offsets: &[f64],
    cols_grad: &[f64],
    s: ColShape,
    g: ConvGeometry,
    mut input_grad: Option<&mut [f64]>,
    mut offset_grad: Option<&mut [f64]>,
) {
    let p = s.cols();
    let hw = s.height * s.width;
    for ky in 0..s.kh {
        for kx in 0..s.kw {
            let tap = ky * s.kw + kx;
            for oy in 0..s.out_h {
                for ox in 0..s.out_w {
                    let (y, x) = deform_position(offsets, s, g, ky, kx, oy, ox);
                    let taps = BilinearTaps::new(y, x, s.height, s.width);
                    let site = oy * s.out_w + ox;
                    let (mut gy, mut gx) = (0.0, 0.0);
                    for c in 0..s.channels {
                        let row = (c * s.kh + ky) * s.kw + kx;
                        let gcol = cols_grad[row * p + site];
                        if gcol == 0.0 {
                            continue;
                        }
                        if let Some(ig) = input_grad.as_deref_mut() {
                            taps.scatter(&mut ig[c * hw..(c + 1) * hw], gcol);
                        }
                        if offset_grad.is_some() {
                            let (dy, dx) = taps.gradient(&input[c * hw..(c + 1) * hw]);
                            gy += gcol * dy;
                            gx += gcol * dx;
                        }
                    }
                    if let Some(og) = offset_grad.as_deref_mut() {
                        og[(2 * tap) * p + site] += gx;
                        og[(2 * tap + 1) * p + site] += gy;
                    }
                }
            }
        }
    }
}

/// Linear interpolation table for an exact ×2 upsample with half-pixel
/// centres; source positions are clamped to the valid range.
pub(crate) fn upsample_table(input: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * input)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}
