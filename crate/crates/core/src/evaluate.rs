//! Test-set evaluation: one report on reconstructed images (`R_out` against
//! the fully sampled RSS) and one on generated k-space (`K_N` against
//! `K_full`), each with a zero-filling baseline.

use rayon::prelude::*;

use crate::cascade::DdCsenet;
use crate::error::{Error, Result};
use crate::metrics::{complex_magnitude, format_reports, ReconReport, SliceMetrics};
use crate::mri::{apply_mask, rss_reconstruct, zero_fill_reconstruct, Dataset};
use crate::training::LOSS_CONVENTION;

pub const ZERO_FILL: &str = "zero-fill";
pub const MODEL: &str = "dd-csenet";

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub image: Vec<ReconReport>,
    pub kspace: Vec<ReconReport>,
}

struct SliceResult {
    image: [SliceMetrics; 2],
    kspace: [SliceMetrics; 2],
}

/// Scores the model and the zero-filling baseline on the named slices.
pub fn evaluate(model: &DdCsenet, dataset: &Dataset, ids: &[String]) -> Result<Evaluation> {
    if ids.is_empty() {
        return Err(Error::EmptySplit("evaluation".into()));
    }
    let rows = ids
        .par_iter()
        .map(|id| {
            let slice = dataset
                .find(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown slice `{id}`")))?;
            let full = &slice.volume;
            let masked = apply_mask(full, &slice.mask)?;
            let out = model.forward(&masked, &slice.mask)?;

            let truth = rss_reconstruct(full)?;
            let zero_fill = zero_fill_reconstruct(&masked)?;
            let image = [
                SliceMetrics::compute(id, &zero_fill, &truth, &zero_fill, &truth)?,
                SliceMetrics::compute(id, &out.final_image, &truth, &out.final_image, &truth)?,
            ];

            let k_full = full.tensor();
            let k_pred = out.kspaces.last().expect("at least one iteration").tensor();
            let mag_full = complex_magnitude(k_full)?;
            let kspace = [
                SliceMetrics::compute(
                    id,
                    masked.tensor(),
                    k_full,
                    &complex_magnitude(masked.tensor())?,
                    &mag_full,
                )?,
                SliceMetrics::compute(id, k_pred, k_full, &complex_magnitude(k_pred)?, &mag_full)?,
            ];
            Ok(SliceResult { image, kspace })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut image = [ReconReport::new(ZERO_FILL), ReconReport::new(MODEL)];
    let mut kspace = [ReconReport::new(ZERO_FILL), ReconReport::new(MODEL)];
    for row in rows {
        for (report, m) in image.iter_mut().zip(row.image) {
            report.per_slice.push(m);
        }
        for (report, m) in kspace.iter_mut().zip(row.kspace) {
            report.per_slice.push(m);
        }
    }
    Ok(Evaluation {
        image: image.into(),
        kspace: kspace.into(),
    })
}

impl Evaluation {
    pub fn model_image(&self) -> &ReconReport {
        &self.image[1]
    }

    pub fn zero_fill_image(&self) -> &ReconReport {
        &self.image[0]
    }

    /// `(image_report, kspace_report)` as TSV text.
    pub fn to_tsv(&self, checkpoint_note: &str) -> (String, String) {
        let image = format_reports(
            "image domain: R_out vs fully sampled RSS",
            &[LOSS_CONVENTION, checkpoint_note],
            &self.image,
        );
        let kspace = format_reports(
            "k-space: K_N vs K_full",
            &[
                LOSS_CONVENTION,
                checkpoint_note,
                "NMSE on complex values; SSIM and PSNR on RSS-combined k-space magnitudes",
            ],
            &self.kspace,
        );
        (image, kspace)
    }
}
