//! Smooth synthetic receive-coil sensitivities.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fourier::{self, ComplexImage, Domain};
use crate::tensor::Tensor;

use super::KSpaceVolume;

/// Complex sensitivity maps `[1, 2*ncoil, H, W]`, normalized so that
/// `sum_k |S_k(x)|^2 = 1` at every pixel.
///
/// Coil `k` has a Gaussian magnitude profile centred on a ring at angle
/// `2*pi*k/ncoil` (plus a seeded rotation), and a linear phase ramp pointing
/// the same way. A single coil has unit sensitivity.
pub fn sensitivity_maps(height: usize, width: usize, ncoil: usize, seed: u64) -> Result<Tensor> {
    if ncoil == 0 {
        return Err(Error::InvalidArgument("ncoil must be at least 1".into()));
    }
    let plane = height * width;
    let mut maps = vec![0.0; 2 * ncoil * plane];
    if ncoil == 1 {
        maps[..plane].fill(1.0);
        return Tensor::new([1, 2, height, width], maps);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = rng.gen_range(0.0..TAU / ncoil as f64);
    let sigma2 = 2.0 * 0.55f64.powi(2);
    let mut norm = vec![0.0; plane];
    for k in 0..ncoil {
        let angle = rotation + TAU * k as f64 / ncoil as f64;
        let (ay, ax) = angle.sin_cos();
        let (cx, cy) = (0.9 * ax, 0.9 * ay);
        for i in 0..height {
            let y = (2.0 * i as f64 + 1.0) / height as f64 - 1.0;
            for j in 0..width {
                let x = (2.0 * j as f64 + 1.0) / width as f64 - 1.0;
                let mag = (-((x - cx).powi(2) + (y - cy).powi(2)) / sigma2).exp();
                let phase = angle + 0.5 * PI * (ax * x + ay * y);
                let p = i * width + j;
                maps[2 * k * plane + p] = mag * phase.cos();
                maps[(2 * k + 1) * plane + p] = mag * phase.sin();
                norm[p] += mag * mag;
            }
        }
    }
    for k in 0..2 * ncoil {
        for (v, n) in maps[k * plane..][..plane].iter_mut().zip(&norm) {
            *v /= n.sqrt();
        }
    }
    Tensor::new([1, 2 * ncoil, height, width], maps)
}

/// Multiplies a real image `[H, W]` by `ncoil` sensitivities and returns
/// the fully sampled multi-coil k-space.
pub fn simulate_coils(image: &Tensor, ncoil: usize, seed: u64) -> Result<KSpaceVolume> {
    simulate_coils_with_noise(image, ncoil, 0.0, seed)
}

/// As [`simulate_coils`], adding complex white Gaussian noise of standard
/// deviation `noise_sigma` per real/imaginary component in k-space.
pub fn simulate_coils_with_noise(
    image: &Tensor,
    ncoil: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<KSpaceVolume> {
    let [height, width] = image.dims2("simulate_coils")?;
    let maps = sensitivity_maps(height, width, ncoil, seed)?;
    let plane = height * width;
    let mut coil_images = maps.into_data();
    for chunk in coil_images.chunks_exact_mut(plane) {
        chunk
            .iter_mut()
            .zip(image.data())
            .for_each(|(s, &x)| *s *= x);
    }
    let coil_images = Tensor::new([1, 2 * ncoil, height, width], coil_images)?;
    let mut kspace = fourier::fft2c(&coil_images)?;
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::InvalidArgument(format!("noise sigma {noise_sigma}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_65);
        kspace
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += normal.sample(&mut rng));
    }
    KSpaceVolume::new(ComplexImage::new(kspace, Domain::KSpace)?, "simulated")
}
