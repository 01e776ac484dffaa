//! Centered, orthonormal 2D DFT over complex images stored as paired
//! real/imaginary channels (`[N, 2*ncoil, H, W]`, channel `2k` real and
//! `2k+1` imaginary part of coil `k`).
//!
//! `fft2c(x) = fftshift(DFT(ifftshift(x))) / sqrt(H*W)`, and `ifft2c` is its
//! exact inverse. Both are unitary, so each one's adjoint is the other, which
//! is what the tape uses for their gradients.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Image,
    KSpace,
}

/// A stack of complex coil images (or k-spaces) with its domain tag.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    tensor: Tensor,
    domain: Domain,
}

impl ComplexImage {
    pub fn new(tensor: Tensor, domain: Domain) -> Result<Self> {
        let [_, c, _, _] = tensor.dims4("complex image")?;
        if c % 2 != 0 {
            return Err(Error::shape(
                "complex image",
                format!("channel count {c} is odd; expected paired real/imaginary channels"),
            ));
        }
        Ok(Self { tensor, domain })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn ncoil(&self) -> usize {
        self.tensor.shape()[1] / 2
    }

    pub fn fft2c(&self) -> Result<Self> {
        if self.domain != Domain::Image {
            return Err(Error::InvalidArgument(
                "fft2c expects an image-domain input".into(),
            ));
        }
        Ok(Self {
            tensor: fft2c(&self.tensor)?,
            domain: Domain::KSpace,
        })
    }

    pub fn ifft2c(&self) -> Result<Self> {
        if self.domain != Domain::KSpace {
            return Err(Error::InvalidArgument(
                "ifft2c expects a k-space input".into(),
            ));
        }
        Ok(Self {
            tensor: ifft2c(&self.tensor)?,
            domain: Domain::Image,
        })
    }
}

/// Centered orthonormal forward transform of every coil plane.
pub fn fft2c(x: &Tensor) -> Result<Tensor> {
    transform(x, FftDirection::Forward, "fft2c")
}

/// Centered orthonormal inverse transform of every coil plane.
pub fn ifft2c(x: &Tensor) -> Result<Tensor> {
    transform(x, FftDirection::Inverse, "ifft2c")
}

fn transform(x: &Tensor, direction: FftDirection, op: &'static str) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4(op)?;
    if c % 2 != 0 {
        return Err(Error::shape(op, format!("channel count {c} is odd")));
    }
    let mut out = vec![0.0; x.len()];
    let plane = h * w;
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let (row_fft, col_fft) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft(w, direction), p.plan_fft(h, direction))
    });
    let mut buf = vec![Complex64::new(0.0, 0.0); plane];
    let mut transposed = vec![Complex64::new(0.0, 0.0); plane];
    let src = x.data();

    for b in 0..n {
        for coil in 0..c / 2 {
            let re = &src[(b * c + 2 * coil) * plane..][..plane];
            let im = &src[(b * c + 2 * coil + 1) * plane..][..plane];
            // ifftshift on load
            for i in 0..h {
                let si = (i + h / 2) % h;
                for j in 0..w {
                    let sj = (j + w / 2) % w;
                    buf[i * w + j] = Complex64::new(re[si * w + sj], im[si * w + sj]);
                }
            }
            row_fft.process(&mut buf);
            transpose(&buf, &mut transposed, h, w);
            col_fft.process(&mut transposed);
            transpose(&transposed, &mut buf, w, h);
            // fftshift on store
            let (re_out, rest) = out[(b * c + 2 * coil) * plane..].split_at_mut(plane);
            let im_out = &mut rest[..plane];
            for i in 0..h {
                let di = (i + h / 2) % h;
                for j in 0..w {
                    let dj = (j + w / 2) % w;
                    let v = buf[i * w + j] * scale;
                    re_out[di * w + dj] = v.re;
                    im_out[di * w + dj] = v.im;
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}
