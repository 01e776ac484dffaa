//! `DDMK` dataset container.
//!
//! ```text
//! magic "DDMK" | version u32 | slice count u64
//! per slice: id_len u16 | id bytes | ncoil u16 | height u32 | width u32
//!            | mask: width bytes (0/1)
//!            | k-space: f32 (re, im) interleaved, coil-major then row-major
//! ```
//!
//! Values are held as `f64` in memory and stored as `f32`, so a round trip is
//! bit-exact for data that is already `f32`-representable (see
//! [`KSpaceVolume::quantize_f32`]).

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file_atomic, Reader};
use crate::tensor::Tensor;

use super::{KSpaceVolume, SamplingMask};

pub const DATASET_MAGIC: [u8; 4] = *b"DDMK";
pub const DATASET_VERSION: u32 = 1;

/// Fully sampled k-space plus the acquisition mask for one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSlice {
    pub volume: KSpaceVolume,
    pub mask: SamplingMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub slices: Vec<DatasetSlice>,
}

impl Dataset {
    pub fn new(volumes: Vec<KSpaceVolume>, masks: Vec<SamplingMask>) -> Result<Self> {
        if volumes.len() != masks.len() {
            return Err(Error::InvalidArgument(format!(
                "{} volumes but {} masks",
                volumes.len(),
                masks.len()
            )));
        }
        let slices = volumes
            .into_iter()
            .zip(masks)
            .map(|(volume, mask)| {
                if mask.width() != volume.width() {
                    return Err(Error::shape(
                        "dataset",
                        format!(
                            "slice `{}` has width {} but its mask has {} lines",
                            volume.slice_id,
                            volume.width(),
                            mask.width()
                        ),
                    ));
                }
                Ok(DatasetSlice { volume, mask })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { slices })
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.slices
            .iter()
            .map(|s| s.volume.slice_id.clone())
            .collect()
    }

    pub fn find(&self, slice_id: &str) -> Option<&DatasetSlice> {
        self.slices.iter().find(|s| s.volume.slice_id == slice_id)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.slices.is_empty() {
            return Err(Error::InvalidArgument(
                "refusing to write an empty dataset".into(),
            ));
        }
        let mut out = Vec::new();
        out.extend_from_slice(&DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.slices.len() as u64).to_le_bytes());
        for s in &self.slices {
            let v = &s.volume;
            let id_len = u16::try_from(v.slice_id.len()).map_err(|_| {
                Error::InvalidArgument(format!("slice id too long: {}", v.slice_id))
            })?;
            let ncoil = u16::try_from(v.ncoil())
                .map_err(|_| Error::InvalidArgument(format!("too many coils: {}", v.ncoil())))?;
            out.extend_from_slice(&id_len.to_le_bytes());
            out.extend_from_slice(v.slice_id.as_bytes());
            out.extend_from_slice(&ncoil.to_le_bytes());
            out.extend_from_slice(&(v.height() as u32).to_le_bytes());
            out.extend_from_slice(&(v.width() as u32).to_le_bytes());
            out.extend(s.mask.lines.iter().map(|&l| u8::from(l)));
            let plane = v.height() * v.width();
            let d = v.tensor().data();
            for coil in 0..v.ncoil() {
                let re = &d[2 * coil * plane..][..plane];
                let im = &d[(2 * coil + 1) * plane..][..plane];
                for (&r, &i) in re.iter().zip(im) {
                    out.extend_from_slice(&(r as f32).to_le_bytes());
                    out.extend_from_slice(&(i as f32).to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset");
        r.magic(DATASET_MAGIC)?;
        r.version(DATASET_VERSION)?;
        let count = r.u64()?;
        let mut slices = Vec::new();
        for _ in 0..count {
            let id_len = r.u16()? as usize;
            let slice_id = r.utf8(id_len)?;
            let ncoil = r.u16()? as usize;
            let height = r.u32()? as usize;
            let width = r.u32()? as usize;
            if ncoil == 0 || height == 0 || width == 0 {
                return Err(Error::Corrupt(format!(
                    "slice `{slice_id}` has empty geometry {ncoil}x{height}x{width}"
                )));
            }
            let lines = r
                .take(width)?
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::Corrupt(format!(
                        "slice `{slice_id}` mask byte {other}"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            let plane = height * width;
            r.ensure(ncoil * plane * 8)?;
            let mut data = vec![0.0; 2 * ncoil * plane];
            for coil in 0..ncoil {
                for p in 0..plane {
                    data[2 * coil * plane + p] = r.f32()? as f64;
                    data[(2 * coil + 1) * plane + p] = r.f32()? as f64;
                }
            }
            let volume = KSpaceVolume::from_tensor(
                Tensor::new([1, 2 * ncoil, height, width], data)?,
                slice_id,
            )?;
            slices.push(DatasetSlice {
                volume,
                mask: SamplingMask::from_lines(lines),
            });
        }
        r.finish()?;
        Ok(Self { slices })
    }
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_file_atomic(path, &dataset.to_bytes()?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_bytes(&read_file(path)?)
}
