//! Convolution and pooling kernels on single NCHW images.
//!
//! Convolutions lower to `im2col` + GEMM. Column buffers are rebuilt in the
//! backward pass rather than cached, which keeps peak memory proportional to
//! one image.

use crate::float::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Rows of the column matrix: `C·k·k`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_positions(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Unfolds one `[C, H, W]` image into a `[C·k·k, Ho·Wo]` matrix.
pub fn im2col<T: Float>(image: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let positions = ho * wo;
    debug_assert_eq!(cols.len(), g.patch_len() * positions);
    let pad = g.pad as isize;
    for c in 0..g.in_channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let out = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let dst = &mut out[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *d = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into a `[C, H, W]` image.
pub fn col2im<T: Float>(cols: &[T], g: &ConvGeometry, image: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let positions = ho * wo;
    let pad = g.pad as isize;
    for c in 0..g.in_channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out[Co, Ho·Wo] = weight[Co, C·k·k] · cols + bias`.
pub fn conv_forward<T: Float>(
    image: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out_channels: usize,
    g: &ConvGeometry,
    cols: &mut [T],
    out: &mut [T],
) {
    im2col(image, g, cols);
    let positions = g.out_positions();
    let k = g.patch_len();
    match bias {
        Some(b) => {
            for (o, row) in out.chunks_mut(positions).enumerate() {
                row.fill(b[o]);
            }
        }
        None => out.fill(T::zero()),
    }
    T::gemm(
        out_channels,
        k,
        positions,
        T::one(),
        weight,
        k as isize,
        1,
        cols,
        positions as isize,
        1,
        T::one(),
        out,
        positions as isize,
        1,
    );
}

/// Accumulates the weight/bias gradients and, when requested, writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Float>(
    image: &[T],
    weight: &[T],
    grad_out: &[T],
    out_channels: usize,
    g: &ConvGeometry,
    cols: &mut [T],
    grad_weight: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
    grad_image: Option<&mut [T]>,
) {
    let positions = g.out_positions();
    let k = g.patch_len();
    if let Some(gb) = grad_bias {
        for (o, row) in grad_out.chunks(positions).enumerate() {
            gb[o] += row.iter().copied().sum::<T>();
        }
    }
    if let Some(gw) = grad_weight {
        im2col(image, g, cols);
        // gw[Co, K] += grad_out[Co, P] · colsᵀ
        T::gemm(
            out_channels,
            positions,
            k,
            T::one(),
            grad_out,
            positions as isize,
            1,
            cols,
            1,
            positions as isize,
            T::one(),
            gw,
            k as isize,
            1,
        );
    }
    if let Some(gi) = grad_image {
        // cols[K, P] = weightᵀ · grad_out
        T::gemm(
            k,
            out_channels,
            positions,
            T::one(),
            weight,
            1,
            k as isize,
            grad_out,
            positions as isize,
            1,
            T::zero(),
            cols,
            positions as isize,
            1,
        );
        gi.fill(T::zero());
        col2im(cols, g, gi);
    }
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns are dropped).
/// Returns the flat argmax index into the input plane for each output cell.
pub fn maxpool2_forward<T: Float>(
    image: &[T],
    channels: usize,
    height: usize,
    width: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    let (ho, wo) = (height / 2, width / 2);
    for c in 0..channels {
        let plane = &image[c * height * width..(c + 1) * height * width];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (2 * oy) * width + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * oy + dy) * width + 2 * ox + dx;
                    // strict comparison: first maximum in raster order wins ties
                    if plane[idx] > plane[best] {
                        best = idx;
                    }
                }
                let o = c * ho * wo + oy * wo + ox;
                out[o] = plane[best];
                argmax[o] = (c * height * width + best) as u32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], co: usize, g: &ConvGeometry) -> Vec<f64> {
        let (ho, wo) = (g.out_height(), g.out_width());
        let mut out = vec![0.0; co * ho * wo];
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..g.in_channels {
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                    continue;
                                }
                                acc += x[(c * g.height + iy as usize) * g.width + ix as usize]
                                    * w[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx];
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(stride, pad) in &[(1, 1), (2, 1), (1, 0), (2, 0)] {
            let g = ConvGeometry {
                in_channels: 2,
                height: 7,
                width: 6,
                kernel: 3,
                stride,
                pad,
            };
            let co = 3;
            let x: Vec<f64> = (0..2 * 7 * 6).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let w: Vec<f64> = (0..co * g.patch_len())
                .map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.7)
                .collect();
            let mut cols = vec![0.0; g.patch_len() * g.out_positions()];
            let mut out = vec![0.0; co * g.out_positions()];
            conv_forward(&x, &w, None, co, &g, &mut cols, &mut out);
            let expect = naive_conv(&x, &w, co, &g);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry {
            in_channels: 2,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.patch_len() * g.out_positions())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_picks_first_maximum() {
        let x = [1.0f32, 3.0, 3.0, 0.0];
        let mut out = [0.0f32; 1];
        let mut arg = [0u32; 1];
        maxpool2_forward(&x, 1, 2, 2, &mut out, &mut arg);
        assert_eq!(out[0], 3.0);
        assert_eq!(arg[0], 1);
    }
}
