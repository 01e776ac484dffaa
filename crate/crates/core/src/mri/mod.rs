//! Multi-coil k-space model, undersampling, coil combination and synthetic
//! data.

mod coils;
mod dataset;
mod mask;
mod phantom;
mod split;
mod synth;

pub use coils::{sensitivity_maps, simulate_coils, simulate_coils_with_noise};
pub use dataset::{
    read_dataset, write_dataset, Dataset, DatasetSlice, DATASET_MAGIC, DATASET_VERSION,
};
pub use mask::{center_block, generate_mask, SamplingMask};
pub use phantom::generate_phantom;
pub use split::{read_split, split_dataset, write_split, DatasetSplit, DEFAULT_FRACTIONS};
pub use synth::{derive_seed, generate_dataset, SyntheticConfig};

use crate::error::{Error, Result};
use crate::fourier::{self, ComplexImage, Domain};
use crate::tensor::Tensor;

/// Multi-coil complex k-space for one slice, `[1, 2*ncoil, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceVolume {
    data: ComplexImage,
    pub slice_id: String,
}

impl KSpaceVolume {
    pub fn new(data: ComplexImage, slice_id: impl Into<String>) -> Result<Self> {
        if data.domain() != Domain::KSpace {
            return Err(Error::InvalidArgument(
                "k-space volume needs k-space domain data".into(),
            ));
        }
        let [n, _, _, _] = data.tensor().dims4("k-space volume")?;
        if n != 1 {
            return Err(Error::shape(
                "k-space volume",
                format!("expected a single slice, got batch {n}"),
            ));
        }
        Ok(Self {
            data,
            slice_id: slice_id.into(),
        })
    }

    pub fn from_tensor(tensor: Tensor, slice_id: impl Into<String>) -> Result<Self> {
        Self::new(ComplexImage::new(tensor, Domain::KSpace)?, slice_id)
    }

    pub fn kspace(&self) -> &ComplexImage {
        &self.data
    }

    pub fn tensor(&self) -> &Tensor {
        self.data.tensor()
    }

    pub fn ncoil(&self) -> usize {
        self.data.ncoil()
    }

    pub fn height(&self) -> usize {
        self.tensor().shape()[2]
    }

    pub fn width(&self) -> usize {
        self.tensor().shape()[3]
    }

    /// Coil images `ifft2c(k)`.
    pub fn coil_images(&self) -> Result<ComplexImage> {
        self.data.ifft2c()
    }

    /// Rounds every value to the nearest `f32`, the precision of the dataset
    /// container.
    pub fn quantize_f32(mut self) -> Self {
        let t = self.data.tensor().map(|v| v as f32 as f64);
        self.data = ComplexImage::new(t, Domain::KSpace).expect("shape unchanged");
        self
    }
}

/// Zeroes every unsampled column in every coil.
pub fn apply_mask(k: &KSpaceVolume, mask: &SamplingMask) -> Result<KSpaceVolume> {
    let w = k.width();
    if mask.width() != w {
        return Err(Error::shape(
            "apply_mask",
            format!("mask has {} lines but k-space width is {w}", mask.width()),
        ));
    }
    let mut t = k.tensor().clone();
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        if !mask.lines[i % w] {
            *v = 0.0;
        }
    }
    KSpaceVolume::from_tensor(t, k.slice_id.clone())
}

/// Root sum-of-squares over coils of a `[N, 2*ncoil, H, W]` complex image
/// stack, giving `[N, H, W]` (or `[H, W]` when `N == 1`).
pub fn rss_of_images(images: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = images.dims4("rss")?;
    if c % 2 != 0 {
        return Err(Error::shape("rss", format!("channel count {c} is odd")));
    }
    let plane = h * w;
    let mut out = vec![0.0; n * plane];
    for b in 0..n {
        let acc = &mut out[b * plane..][..plane];
        for ch in 0..c {
            let src = &images.data()[(b * c + ch) * plane..][..plane];
            acc.iter_mut().zip(src).for_each(|(a, v)| *a += v * v);
        }
        acc.iter_mut().for_each(|a| *a = a.sqrt());
    }
    if n == 1 {
        Tensor::new([h, w], out)
    } else {
        Tensor::new([n, h, w], out)
    }
}

/// Root sum-of-squares coil combination of `ifft2c(k)`, a real `[H, W]`.
pub fn rss_reconstruct(k: &KSpaceVolume) -> Result<Tensor> {
    rss_of_images(&fourier::ifft2c(k.tensor())?)
}

/// The no-learning baseline: RSS of the (already masked) k-space.
pub fn zero_fill_reconstruct(k_sparse: &KSpaceVolume) -> Result<Tensor> {
    rss_reconstruct(k_sparse)
}
