//! Slice-level forward/backward kernels. The autodiff graph wraps these.

use crate::element::Element;
use crate::error::{Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PadMode {
    #[default]
    Reflect,
    Zero,
}

/// Geometry of one 2-d convolution over a single sample.
#[derive(Clone, Debug)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
    pub out_h: usize,
    pub out_w: usize,
    /// Source row for each padded row index, `None` for zero padding.
    row_map: Vec<Option<usize>>,
    col_map: Vec<Option<usize>>,
}

fn pad_map(len: usize, pad: usize, mode: PadMode) -> Vec<Option<usize>> {
    (0..len + 2 * pad)
        .map(|p| {
            let i = p as isize - pad as isize;
            if i >= 0 && (i as usize) < len {
                Some(i as usize)
            } else {
                match mode {
                    PadMode::Zero => None,
                    PadMode::Reflect => {
                        let r = if i < 0 { -i } else { 2 * (len as isize - 1) - i };
                        Some(r as usize)
                    }
                }
            }
        })
        .collect()
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_in: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", "stride must be >= 1"));
        }
        if mode == PadMode::Reflect && pad > 0 && (pad >= h || pad >= w) {
            return Err(TensorError::invalid(
                "conv2d",
                format!("reflection pad {pad} needs spatial extent > pad, got {h}x{w}"),
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::invalid(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
            ));
        }
        let out_h = (h + 2 * pad - kh) / stride + 1;
        let out_w = (w + 2 * pad - kw) / stride + 1;
        Ok(Self {
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            mode,
            out_h,
            out_w,
            row_map: pad_map(h, pad, mode),
            col_map: pad_map(w, pad, mode),
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one `c_in x h x w` sample into a `(c_in*kh*kw) x (out_h*out_w)` matrix.
    pub fn im2col<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let plane = self.h * self.w;
        let ncols = self.col_cols();
        let mut row = 0;
        for c in 0..self.c_in {
            let xc = &x[c * plane..(c + 1) * plane];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    let mut idx = 0;
                    for oh in 0..self.out_h {
                        let src_row = self.row_map[oh * self.stride + ki];
                        for ow in 0..self.out_w {
                            dst[idx] = match (src_row, self.col_map[ow * self.stride + kj]) {
                                (Some(r), Some(cc)) => xc[r * self.w + cc],
                                _ => T::zero(),
                            };
                            idx += 1;
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters column gradients back onto `dx`.
    pub fn col2im<T: Element>(&self, cols: &[T], dx: &mut [T]) {
        let plane = self.h * self.w;
        let ncols = self.col_cols();
        let mut row = 0;
        for c in 0..self.c_in {
            let dxc = &mut dx[c * plane..(c + 1) * plane];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    let mut idx = 0;
                    for oh in 0..self.out_h {
                        let src_row = self.row_map[oh * self.stride + ki];
                        for ow in 0..self.out_w {
                            if let (Some(r), Some(cc)) =
                                (src_row, self.col_map[ow * self.stride + kj])
                            {
                                dxc[r * self.w + cc] += src[idx];
                            }
                            idx += 1;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Per-plane statistics used by instance normalization.
pub struct PlaneStats<T> {
    pub inv_std: Vec<T>,
}

/// Normalizes each `plane`-sized chunk of `x` to zero mean and unit population
/// variance (`eps` added under the square root).
pub fn instance_norm_forward<T: Element>(x: &[T], plane: usize, eps: T, y: &mut [T]) -> PlaneStats<T> {
    let n = T::lit(plane as f64);
    let mut inv_std = Vec::with_capacity(x.len() / plane);
    for (xs, ys) in x.chunks_exact(plane).zip(y.chunks_exact_mut(plane)) {
        let mean = xs.iter().copied().sum::<T>() / n;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        for (o, &v) in ys.iter_mut().zip(xs) {
            *o = (v - mean) * inv;
        }
        inv_std.push(inv);
    }
    PlaneStats { inv_std }
}

/// Given normalized output `y` and upstream `dy`, accumulates into `dx`.
pub fn instance_norm_backward<T: Element>(
    y: &[T],
    dy: &[T],
    stats: &PlaneStats<T>,
    plane: usize,
    dx: &mut [T],
) {
    let n = T::lit(plane as f64);
    for (((ys, dys), dxs), &inv) in y
        .chunks_exact(plane)
        .zip(dy.chunks_exact(plane))
        .zip(dx.chunks_exact_mut(plane))
        .zip(&stats.inv_std)
    {
        let mean_dy = dys.iter().copied().sum::<T>() / n;
        let mean_dy_y = ys.iter().zip(dys).map(|(&a, &b)| a * b).sum::<T>() / n;
        for ((o, &yv), &g) in dxs.iter_mut().zip(ys).zip(dys) {
            *o += inv * (g - mean_dy - yv * mean_dy_y);
        }
    }
}

pub fn upsample_nearest_forward<T: Element>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
    y: &mut [T],
) {
    let (oh, ow) = (h * factor, w * factor);
    for p in 0..planes {
        let xs = &x[p * h * w..(p + 1) * h * w];
        let ys = &mut y[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                ys[i * ow + j] = xs[(i / factor) * w + j / factor];
            }
        }
    }
}

pub fn upsample_nearest_backward<T: Element>(
    dy: &[T],
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
    dx: &mut [T],
) {
    let (oh, ow) = (h * factor, w * factor);
    for p in 0..planes {
        let dys = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dxs = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                dxs[(i / factor) * w + j / factor] += dys[i * ow + j];
            }
        }
    }
}

/// Non-overlapping `k x k` average pooling (stride `k`); trailing rows/cols that
/// do not fill a window are dropped.
pub fn avg_pool_forward<T: Element>(x: &[T], planes: usize, h: usize, w: usize, k: usize, y: &mut [T]) {
    let (oh, ow) = (h / k, w / k);
    let scale = T::one() / T::lit((k * k) as f64);
    for p in 0..planes {
        let xs = &x[p * h * w..(p + 1) * h * w];
        let ys = &mut y[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let mut s = T::zero();
                for a in 0..k {
                    for b in 0..k {
                        s += xs[(i * k + a) * w + j * k + b];
                    }
                }
                ys[i * ow + j] = s * scale;
            }
        }
    }
}

pub fn avg_pool_backward<T: Element>(dy: &[T], planes: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let (oh, ow) = (h / k, w / k);
    let scale = T::one() / T::lit((k * k) as f64);
    for p in 0..planes {
        let dys = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dxs = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let g = dys[i * ow + j] * scale;
                for a in 0..k {
                    for b in 0..k {
                        dxs[(i * k + a) * w + j * k + b] += g;
                    }
                }
            }
        }
    }
}
