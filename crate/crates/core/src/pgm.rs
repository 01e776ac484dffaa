//! Binary 16-bit grayscale PGM (`P5`, maxval 65535, big-endian samples).

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_file_atomic;
use crate::tensor::Tensor;

pub const MAX_VALUE: u16 = u16::MAX;

/// Scales `image / peak` into `[0, 65535]`, clamping out-of-range values.
pub fn quantize(image: &Tensor, peak: f64) -> Result<(usize, usize, Vec<u16>)> {
    let [h, w] = image.dims2("pgm")?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "PGM normalization peak must be > 0, got {peak}"
        )));
    }
    let pixels = image
        .data()
        .iter()
        .map(|&v| ((v / peak).clamp(0.0, 1.0) * MAX_VALUE as f64).round() as u16)
        .collect();
    Ok((h, w, pixels))
}

pub fn encode(height: usize, width: usize, pixels: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{MAX_VALUE}\n").into_bytes();
    for p in pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    out
}

/// Parses what [`encode`] writes: `(height, width, pixels)`.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated("PGM header".into()));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| Error::Corrupt("non-ASCII PGM header".into()))?,
        );
    }
    if fields[0] != "P5" {
        return Err(Error::Corrupt(format!("not a binary PGM: {}", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Corrupt(format!("bad PGM header field `{s}`")))
    };
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != MAX_VALUE as usize {
        return Err(Error::Corrupt(format!(
            "expected maxval {MAX_VALUE}, found {maxval}"
        )));
    }
    let data = bytes.get(pos + 1..).unwrap_or(&[]);
    if data.len() < 2 * width * height {
        return Err(Error::Truncated(format!(
            "PGM needs {} pixel bytes, found {}",
            2 * width * height,
            data.len()
        )));
    }
    let pixels = data[..2 * width * height]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((height, width, pixels))
}

pub fn write_pgm(path: &Path, image: &Tensor, peak: f64) -> Result<()> {
    let (h, w, pixels) = quantize(image, peak)?;
    write_file_atomic(path, &encode(h, w, &pixels))
}
