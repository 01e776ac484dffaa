//! `DDRK` checkpoint container: named f64 tensors, little-endian.
//!
//! ```text
//! magic "DDRK" | version u32 | count u64
//! per entry: name_len u16 | name bytes | rank u8 | dims u64 x rank | f64 x product(dims)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file_atomic, Reader};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"DDRK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params(params: &ParamSet) -> Self {
        Self {
            entries: params
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies matching entries into `params`; every parameter must be present
    /// with the same shape.
    pub fn load_into(&self, params: &mut ParamSet) -> Result<()> {
        for id in params.ids().collect::<Vec<_>>() {
            let name = params.name(id).to_string();
            let stored = self
                .get(&name)
                .ok_or_else(|| Error::Corrupt(format!("checkpoint has no entry `{name}`")))?;
            if stored.shape() != params.get(id).shape() {
                return Err(Error::shape(
                    "checkpoint",
                    format!(
                        "`{name}` stored as {:?} but model expects {:?}",
                        stored.shape(),
                        params.get(id).shape()
                    ),
                ));
            }
            *params.get_mut(id) = stored.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, tensor) in &self.entries {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("parameter name too long: {name}")))?;
            let rank = u8::try_from(tensor.shape().len())
                .map_err(|_| Error::InvalidArgument(format!("rank too large for `{name}`")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in tensor.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let count = r.u64()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = r.utf8(name_len)?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.len_u64()?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| {
                    Error::Corrupt(format!("`{name}` has an overflowing shape {shape:?}"))
                })?;
            r.ensure(n.saturating_mul(8))?;
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let tensor =
                Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("`{name}`: {e}")))?;
            entries.push((name, tensor));
        }
        r.finish()?;
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
