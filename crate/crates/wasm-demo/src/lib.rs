//! Browser demo: simulate a multi-coil phantom, undersample it, and blend a
//! cheap k-space prediction back toward the measurements with data
//! consistency.

use ddrecon::cascade::data_consistency;
use ddrecon::metrics::{nmse, psnr, ssim, SsimOptions};
use ddrecon::mri::{
    apply_mask, generate_mask, generate_phantom, rss_of_images, rss_reconstruct, simulate_coils,
    zero_fill_reconstruct, KSpaceVolume, SamplingMask,
};
use ddrecon::{ComplexImage, Domain, Tensor};
use wasm_bindgen::prelude::*;

const ELLIPSES: usize = 10;

#[wasm_bindgen]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub nmse: f64,
    pub ssim: f64,
    pub psnr: f64,
}

impl Scores {
    fn of(pred: &Tensor, truth: &Tensor) -> ddrecon::Result<Self> {
        Ok(Self {
            nmse: nmse(pred, truth)?,
            ssim: ssim(pred, truth, &SsimOptions::default())?,
            psnr: psnr(pred, truth)?,
        })
    }
}

#[wasm_bindgen]
pub struct Demo {
    full: KSpaceVolume,
    truth: Tensor,
    mask: SamplingMask,
    masked: KSpaceVolume,
}

/// 8-bit grayscale of `image / peak`, clamped.
fn to_gray(image: &Tensor, peak: f64) -> Vec<u8> {
    image
        .data()
        .iter()
        .map(|v| ((v / peak).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// 3x3 box blur of every channel, edges clamped.
fn box_blur(t: &Tensor) -> ddrecon::Result<Tensor> {
    let [_, c, h, w] = t.dims4("box_blur")?;
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        let plane = &src[ch * h * w..][..h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for di in [-1isize, 0, 1] {
                    for dj in [-1isize, 0, 1] {
                        let y = (i as isize + di).clamp(0, h as isize - 1) as usize;
                        let x = (j as isize + dj).clamp(0, w as isize - 1) as usize;
                        acc += plane[y * w + x];
                    }
                }
                out[ch * h * w + i * w + j] = acc / 9.0;
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

impl Demo {
    pub fn try_new(size: usize, ncoil: usize, seed: u32) -> ddrecon::Result<Self> {
        if size < 32 {
            return Err(ddrecon::Error::InvalidArgument(format!(
                "size must be at least 32, got {size}"
            )));
        }
        let image = generate_phantom(size, size, ELLIPSES, seed as u64);
        let full = simulate_coils(&image, ncoil, seed as u64 + 1)?;
        let truth = rss_reconstruct(&full)?;
        let mask = SamplingMask::full(size);
        let masked = full.clone();
        Ok(Self {
            full,
            truth,
            mask,
            masked,
        })
    }

    /// Regenerates the line mask and returns zero-filling scores.
    pub fn try_undersample(
        &mut self,
        acceleration: f64,
        center_fraction: f64,
        seed: u32,
    ) -> ddrecon::Result<Scores> {
        self.mask = generate_mask(
            self.full.width(),
            acceleration,
            center_fraction,
            seed as u64,
        )?;
        self.masked = apply_mask(&self.full, &self.mask)?;
        Scores::of(&self.zero_fill()?, &self.truth)
    }

    pub fn zero_fill(&self) -> ddrecon::Result<Tensor> {
        zero_fill_reconstruct(&self.masked)
    }

    /// Blurred zero-fill coil images as the prediction, blended toward the
    /// measured lines with weight `lambda`; returns the RSS image.
    pub fn try_consistent(&self, lambda: f64) -> ddrecon::Result<(Tensor, Scores)> {
        let coils = self.masked.coil_images()?;
        let smooth = ComplexImage::new(box_blur(coils.tensor())?, Domain::Image)?;
        let blended = data_consistency(&smooth.fft2c()?, &self.masked, &self.mask, lambda)?;
        let image = rss_of_images(blended.ifft2c()?.tensor())?;
        let scores = Scores::of(&image, &self.truth)?;
        Ok((image, scores))
    }

    pub fn truth(&self) -> &Tensor {
        &self.truth
    }
}

fn js(e: ddrecon::Error) -> JsError {
    JsError::new(&format!("{} ({})", e, e.code()))
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, ncoil: usize, seed: u32) -> Result<Demo, JsError> {
        Self::try_new(size, ncoil, seed).map_err(js)
    }

    pub fn size(&self) -> usize {
        self.full.width()
    }

    #[wasm_bindgen(js_name = truthPixels)]
    pub fn truth_pixels(&self) -> Vec<u8> {
        to_gray(&self.truth, self.truth.max())
    }

    /// Log-magnitude of the measured k-space, coil-combined.
    #[wasm_bindgen(js_name = kspacePixels)]
    pub fn kspace_pixels(&self) -> Result<Vec<u8>, JsError> {
        let mag = rss_of_images(self.masked.tensor()).map_err(js)?;
        let logged = mag.map(|v| (1.0 + 1e3 * v).ln());
        Ok(to_gray(&logged, logged.max().max(1e-12)))
    }

    pub fn undersample(
        &mut self,
        acceleration: f64,
        center_fraction: f64,
        seed: u32,
    ) -> Result<Scores, JsError> {
        self.try_undersample(acceleration, center_fraction, seed)
            .map_err(js)
    }

    #[wasm_bindgen(js_name = keptLines)]
    pub fn kept_lines(&self) -> usize {
        self.mask.kept()
    }

    #[wasm_bindgen(js_name = zeroFillPixels)]
    pub fn zero_fill_pixels(&self) -> Result<Vec<u8>, JsError> {
        Ok(to_gray(&self.zero_fill().map_err(js)?, self.truth.max()))
    }

    #[wasm_bindgen(js_name = consistentPixels)]
    pub fn consistent_pixels(&self, lambda: f64) -> Result<Vec<u8>, JsError> {
        let (image, _) = self.try_consistent(lambda).map_err(js)?;
        Ok(to_gray(&image, self.truth.max()))
    }

    #[wasm_bindgen(js_name = consistentScores)]
    pub fn consistent_scores(&self, lambda: f64) -> Result<Scores, JsError> {
        self.try_consistent(lambda).map(|(_, s)| s).map_err(js)
    }
}
