//! Raw forward/backward kernels on flat buffers. Shapes are validated by the
//! tape before these are called.

use std::cell::RefCell;

use matrixmultiply::dgemm;

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// Runs `f` on a reusable per-thread buffer of at least `len` elements.
/// Contents are unspecified on entry.
fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut buf = cell.borrow_mut();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        f(&mut buf[..len])
    })
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// `C = alpha * A(m x k) * B(k x n) + beta * C`, with explicit row/column
/// strides so transposes are free.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    // SAFETY: callers pass buffers sized for the stated dimensions/strides.
    unsafe {
        dgemm(
            m,
            k,
            n,
            alpha,
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

/// Output columns `oj` whose input column `oj * stride + kj - padding` lies
/// inside the image.
fn valid_cols(g: &ConvGeometry, kj: usize) -> std::ops::Range<usize> {
    let lo = g.padding.saturating_sub(kj).div_ceil(g.stride);
    let limit = (g.width + g.padding).saturating_sub(kj);
    let hi = limit.div_ceil(g.stride).min(g.out_w);
    lo.min(hi)..hi
}

/// Unfolds one sample `[Cin, H, W]` into `[Cin*kh*kw, out_h*out_w]`.
fn im2col(g: &ConvGeometry, input: &[f64], cols: &mut [f64]) {
    let plane = g.out_plane();
    for c in 0..g.in_channels {
        let src = &input[c * g.height * g.width..][..g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * plane..][..plane];
                let valid = valid_cols(g, kj);
                for oi in 0..g.out_h {
                    let y = (oi * g.stride + ki) as isize - g.padding as isize;
                    let dst_row = &mut dst[oi * g.out_w..][..g.out_w];
                    if y < 0 || y >= g.height as isize {
                        dst_row.fill(0.0);
                        continue;
                    }
                    let src_row = &src[y as usize * g.width..][..g.width];
                    dst_row[..valid.start].fill(0.0);
                    dst_row[valid.end..].fill(0.0);
                    let x0 = valid.start * g.stride + kj - g.padding;
                    if g.stride == 1 {
                        dst_row[valid.clone()].copy_from_slice(&src_row[x0..x0 + valid.len()]);
                    } else {
                        for (t, d) in dst_row[valid.clone()].iter_mut().enumerate() {
                            *d = src_row[x0 + t * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `grad`.
fn col2im(g: &ConvGeometry, cols: &[f64], grad: &mut [f64]) {
    let plane = g.out_plane();
    for c in 0..g.in_channels {
        let dst = &mut grad[c * g.height * g.width..][..g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * plane..][..plane];
                let valid = valid_cols(g, kj);
                if valid.is_empty() {
                    continue;
                }
                let x0 = valid.start * g.stride + kj - g.padding;
                for oi in 0..g.out_h {
                    let y = (oi * g.stride + ki) as isize - g.padding as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[y as usize * g.width..][..g.width];
                    let src_row = &src[oi * g.out_w..][valid.clone()];
                    if g.stride == 1 {
                        for (d, v) in dst_row[x0..x0 + src_row.len()].iter_mut().zip(src_row) {
                            *d += v;
                        }
                    } else {
                        for (t, v) in src_row.iter().enumerate() {
                            dst_row[x0 + t * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    g: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let plane = g.out_plane();
    let k = g.patch_len();
    let mut out = vec![0.0; g.batch * g.out_channels * plane];
    let in_sample = g.in_channels * g.height * g.width;
    with_scratch(k * plane, |cols| {
        for n in 0..g.batch {
            im2col(g, &input[n * in_sample..][..in_sample], cols);
            let dst = &mut out[n * g.out_channels * plane..][..g.out_channels * plane];
            for (co, row) in dst.chunks_exact_mut(plane).enumerate() {
                row.fill(bias[co]);
            }
            gemm(
                g.out_channels,
                k,
                plane,
                1.0,
                weight,
                k as isize,
                1,
                cols,
                plane as isize,
                1,
                1.0,
                dst,
            );
        }
    });
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`; entries are `None` when
/// the corresponding flag is off.
pub(crate) fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_input: bool,
    need_params: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let plane = g.out_plane();
    let k = g.patch_len();
    let in_sample = g.in_channels * g.height * g.width;
    let mut grad_input = need_input.then(|| vec![0.0; g.batch * in_sample]);
    let mut grad_weight = need_params.then(|| vec![0.0; g.out_channels * k]);
    let mut grad_bias = need_params.then(|| vec![0.0; g.out_channels]);

    with_scratch(k * plane, |cols| {
        for n in 0..g.batch {
            let go = &grad_out[n * g.out_channels * plane..][..g.out_channels * plane];
            if let (Some(gw), Some(gb)) = (grad_weight.as_mut(), grad_bias.as_mut()) {
                im2col(g, &input[n * in_sample..][..in_sample], cols);
                // dW += dOut (Cout x P) * cols^T (P x K)
                gemm(
                    g.out_channels,
                    plane,
                    k,
                    1.0,
                    go,
                    plane as isize,
                    1,
                    cols,
                    1,
                    plane as isize,
                    1.0,
                    gw,
                );
                for (co, row) in go.chunks_exact(plane).enumerate() {
                    gb[co] += row.iter().sum::<f64>();
                }
            }
            if let Some(gi) = grad_input.as_mut() {
                // dCols = W^T (K x Cout) * dOut (Cout x P)
                gemm(
                    k,
                    g.out_channels,
                    plane,
                    1.0,
                    weight,
                    1,
                    k as isize,
                    go,
                    plane as isize,
                    1,
                    0.0,
                    cols,
                );
                col2im(g, cols, &mut gi[n * in_sample..][..in_sample]);
            }
        }
    });
    (grad_input, grad_weight, grad_bias)
}

/// `out[n, o] = sum_i input[n, i] * weight[o, i] + bias[o]`.
pub(crate) fn linear_forward(
    n: usize,
    cin: usize,
    cout: usize,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * cout);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    gemm(
        n,
        cin,
        cout,
        1.0,
        input,
        cin as isize,
        1,
        weight,
        1,
        cin as isize,
        1.0,
        &mut out,
    );
    out
}

pub(crate) fn linear_backward(
    n: usize,
    cin: usize,
    cout: usize,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gi = vec![0.0; n * cin];
    gemm(
        n,
        cout,
        cin,
        1.0,
        grad_out,
        cout as isize,
        1,
        weight,
        cin as isize,
        1,
        0.0,
        &mut gi,
    );
    let mut gw = vec![0.0; cout * cin];
    gemm(
        cout,
        n,
        cin,
        1.0,
        grad_out,
        1,
        cout as isize,
        input,
        cin as isize,
        1,
        0.0,
        &mut gw,
    );
    let mut gb = vec![0.0; cout];
    for row in grad_out.chunks_exact(cout) {
        for (b, g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
    (gi, gw, gb)
}

/// 2x2 average pooling over `[planes, h, w]` with even `h`, `w`.
pub(crate) fn avg_pool2_forward(planes: usize, h: usize, w: usize, input: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let a = src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1];
                let b = src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1];
                dst[i * ow + j] = 0.25 * (a + b);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(planes: usize, h: usize, w: usize, grad_out: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut gi = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &grad_out[p * oh * ow..][..oh * ow];
        let dst = &mut gi[p * h * w..][..h * w];
        for i in 0..h {
            for j in 0..w {
                dst[i * w + j] = 0.25 * src[(i / 2) * ow + j / 2];
            }
        }
    }
    gi
}

/// Nearest-neighbour 2x upsampling over `[planes, h, w]`.
pub(crate) fn upsample2_forward(planes: usize, h: usize, w: usize, input: &[f64]) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(planes: usize, h: usize, w: usize, grad_out: &[f64]) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut gi = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &grad_out[p * oh * ow..][..oh * ow];
        let dst = &mut gi[p * h * w..][..h * w];
        for i in 0..h {
            for j in 0..w {
                dst[i * w + j] = src[2 * i * ow + 2 * j]
                    + src[2 * i * ow + 2 * j + 1]
                    + src[(2 * i + 1) * ow + 2 * j]
                    + src[(2 * i + 1) * ow + 2 * j + 1];
            }
        }
    }
    gi
}
