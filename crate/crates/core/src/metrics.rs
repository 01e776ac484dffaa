//! Image quality metrics: NMSE (percent), PSNR (dB) and windowed SSIM.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `100 * ||pred - ref||^2 / ||ref||^2`, summing over every element (real
/// and imaginary channels jointly for complex data).
pub fn nmse(pred: &Tensor, reference: &Tensor) -> Result<f64> {
    pred.check_same_shape(reference, "nmse")?;
    let energy: f64 = reference.data().iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::InvalidArgument(
            "nmse reference has zero energy".into(),
        ));
    }
    let err: f64 = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(100.0 * err / energy)
}

/// `10 log10(max(ref)^2 / MSE)`; `f64::INFINITY` when the inputs agree.
pub fn psnr(pred: &Tensor, reference: &Tensor) -> Result<f64> {
    pred.check_same_shape(reference, "psnr")?;
    let mse = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = reference.max();
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimOptions {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimOptions {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

const DEGENERATE_RANGE: f64 = 1e-12;

/// Mean SSIM over every fully contained `window x window` patch of two real
/// `[H, W]` images, with dynamic range `max(ref) - min(ref)`.
pub fn ssim(pred: &Tensor, reference: &Tensor, options: &SsimOptions) -> Result<f64> {
    pred.check_same_shape(reference, "ssim")?;
    let range = reference.max() - reference.min();
    if range == 0.0 {
        let [h, w] = pred.dims2("ssim")?;
        if h < options.window || w < options.window {
            return Err(Error::shape(
                "ssim",
                format!("image {h}x{w} is smaller than the window"),
            ));
        }
        if pred == reference {
            return Ok(1.0);
        }
        return ssim_with_range(pred, reference, DEGENERATE_RANGE, options);
    }
    ssim_with_range(pred, reference, range, options)
}

/// SSIM with an explicit dynamic range; symmetric in its two images.
pub fn ssim_with_range(a: &Tensor, b: &Tensor, range: f64, options: &SsimOptions) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    let [h, w] = a.dims2("ssim")?;
    let win = options.window;
    if win == 0 || h < win || w < win {
        return Err(Error::shape(
            "ssim",
            format!("image {h}x{w} is smaller than the {win}x{win} window"),
        ));
    }
    let sat = |f: &dyn Fn(usize) -> f64| {
        let mut t = vec![0.0; (h + 1) * (w + 1)];
        for i in 0..h {
            let mut row = 0.0;
            for j in 0..w {
                row += f(i * w + j);
                t[(i + 1) * (w + 1) + j + 1] = t[i * (w + 1) + j + 1] + row;
            }
        }
        t
    };
    let (x, y) = (a.data(), b.data());
    let sx = sat(&|p| x[p]);
    let sy = sat(&|p| y[p]);
    let sxx = sat(&|p| x[p] * x[p]);
    let syy = sat(&|p| y[p] * y[p]);
    let sxy = sat(&|p| x[p] * y[p]);
    let window_sum = |t: &[f64], i: usize, j: usize| {
        t[(i + win) * (w + 1) + j + win] - t[i * (w + 1) + j + win] - t[(i + win) * (w + 1) + j]
            + t[i * (w + 1) + j]
    };

    let np = (win * win) as f64;
    let cov_norm = np / (np - 1.0);
    let c1 = (options.k1 * range).powi(2);
    let c2 = (options.k2 * range).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - win {
        for j in 0..=w - win {
            let mx = window_sum(&sx, i, j) / np;
            let my = window_sum(&sy, i, j) / np;
            let vx = cov_norm * (window_sum(&sxx, i, j) / np - mx * mx);
            let vy = cov_norm * (window_sum(&syy, i, j) / np - my * my);
            let vxy = cov_norm * (window_sum(&sxy, i, j) / np - mx * my);
            let num = (2.0 * mx * my + c1) * (2.0 * vxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-pixel magnitude of a complex image stack `[1, 2*ncoil, H, W]`,
/// combined over coils by root sum-of-squares. Used to compare k-spaces
/// with the real-valued metrics.
pub fn complex_magnitude(t: &Tensor) -> Result<Tensor> {
    crate::mri::rss_of_images(t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceMetrics {
    pub slice_id: String,
    pub nmse_percent: f64,
    pub ssim: f64,
    pub psnr_db: f64,
}

impl SliceMetrics {
    /// NMSE and PSNR on `pred` vs `reference`, SSIM on their real
    /// `[H, W]` magnitudes.
    pub fn compute(
        slice_id: impl Into<String>,
        pred: &Tensor,
        reference: &Tensor,
        pred_magnitude: &Tensor,
        reference_magnitude: &Tensor,
    ) -> Result<Self> {
        Ok(Self {
            slice_id: slice_id.into(),
            nmse_percent: nmse(pred, reference)?,
            ssim: ssim(pred_magnitude, reference_magnitude, &SsimOptions::default())?,
            psnr_db: psnr(pred_magnitude, reference_magnitude)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub std: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().collect();
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Per-slice metrics for one reconstruction method.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconReport {
    pub method: String,
    pub per_slice: Vec<SliceMetrics>,
}

impl ReconReport {
    pub fn new(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            per_slice: Vec::new(),
        }
    }

    pub fn nmse(&self) -> Summary {
        Summary::of(self.per_slice.iter().map(|s| s.nmse_percent))
    }

    pub fn ssim(&self) -> Summary {
        Summary::of(self.per_slice.iter().map(|s| s.ssim))
    }

    pub fn psnr(&self) -> Summary {
        Summary::of(self.per_slice.iter().map(|s| s.psnr_db))
    }
}

/// Formats with `digits` significant digits; `inf`/`-inf`/`nan` spelled out.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = digits as i32 - 1 - magnitude;
    if decimals >= 0 {
        format!("{:.*}", decimals as usize, x)
    } else {
        let scale = 10f64.powi(-decimals);
        format!("{:.0}", (x / scale).round() * scale)
    }
}

/// Tab-separated per-slice table followed by `mean±std` summary lines
/// (4 significant digits), one block per method.
pub fn format_reports(title: &str, header_notes: &[&str], reports: &[ReconReport]) -> String {
    let mut out = String::new();
    writeln!(out, "# {title}").unwrap();
    for note in header_notes {
        writeln!(out, "# {note}").unwrap();
    }
    writeln!(out, "method\tslice_id\tNMSE%\tSSIM\tPSNR").unwrap();
    for report in reports {
        for s in &report.per_slice {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                report.method,
                s.slice_id,
                format_significant(s.nmse_percent, 9),
                format_significant(s.ssim, 9),
                format_significant(s.psnr_db, 9)
            )
            .unwrap();
        }
    }
    writeln!(out, "# summary (mean±std)").unwrap();
    writeln!(out, "method\tNMSE%\tSSIM\tPSNR").unwrap();
    for report in reports {
        let f = |s: Summary| {
            format!(
                "{}±{}",
                format_significant(s.mean, 4),
                format_significant(s.std, 4)
            )
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            report.method,
            f(report.nmse()),
            f(report.ssim()),
            f(report.psnr())
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::mri::generate_phantom;

    #[test]
    fn nmse_cases() {
        let r = Tensor::from_fn([4, 4], |i| i as f64 - 3.0);
        assert_eq!(nmse(&r, &r).unwrap(), 0.0);
        assert!((nmse(&r.map(|v| 2.0 * v), &r).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(nmse(&Tensor::zeros([4, 4]), &r).unwrap(), 100.0);
        assert!(nmse(&r, &Tensor::zeros([4, 4])).is_err());
        let p = r.map(|v| v + 0.3);
        let scaled = nmse(&p.map(|v| -2.5 * v), &r.map(|v| -2.5 * v)).unwrap();
        assert!((scaled - nmse(&p, &r).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_cases() {
        let r = Tensor::from_fn([10, 10], |i| if i == 0 { 1.0 } else { 0.0 });
        assert_eq!(psnr(&r, &r).unwrap(), f64::INFINITY);
        // every pixel off by 0.1 -> MSE 0.01, peak 1 -> 20 dB
        let p = r.map(|v| v + 0.1);
        assert!((psnr(&p, &r).unwrap() - 20.0).abs() < 1e-9);
        let c = 3.7;
        let scaled = psnr(&p.map(|v| c * v), &r.map(|v| c * v)).unwrap();
        assert!((scaled - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_cases() {
        let r = generate_phantom(32, 32, 8, 3);
        assert!((ssim(&r, &r, &SsimOptions::default()).unwrap() - 1.0).abs() < 1e-12);

        let range = r.max() - r.min();
        let normal = Normal::new(0.0, range).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Tensor::from_fn([32, 32], |_| normal.sample(&mut rng));
        let noisy = Tensor::new(
            vec![32, 32],
            r.data()
                .iter()
                .zip(noise.data())
                .map(|(a, b)| a + b)
                .collect(),
        )
        .unwrap();
        assert!(ssim(&noisy, &r, &SsimOptions::default()).unwrap() < 0.3);

        let shared = noisy.max().max(r.max()) - noisy.min().min(r.min());
        let ab = ssim_with_range(&noisy, &r, shared, &SsimOptions::default()).unwrap();
        let ba = ssim_with_range(&r, &noisy, shared, &SsimOptions::default()).unwrap();
        assert!((ab - ba).abs() < 1e-12);

        let flat = Tensor::full([8, 8], 2.0);
        assert_eq!(ssim(&flat, &flat, &SsimOptions::default()).unwrap(), 1.0);
        assert!(ssim(&flat.map(|v| v + 1.0), &flat, &SsimOptions::default()).unwrap() < 1.0);
        assert!(ssim(
            &Tensor::zeros([5, 8]),
            &Tensor::zeros([5, 8]),
            &SsimOptions::default()
        )
        .is_err());
    }

    #[test]
    fn summaries_and_formatting() {
        let s = Summary::of([1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
        assert_eq!(format_significant(2.2812, 4), "2.281");
        assert_eq!(format_significant(0.000123456, 4), "0.0001235");
        assert_eq!(format_significant(54321.0, 4), "54320");
        assert_eq!(format_significant(f64::INFINITY, 4), "inf");

        let mut report = ReconReport::new("zero-fill");
        report.per_slice.push(SliceMetrics {
            slice_id: "a".into(),
            nmse_percent: 10.0,
            ssim: 0.9,
            psnr_db: 30.0,
        });
        let text = format_reports("image", &["note"], &[report]);
        assert!(text.contains("method\tslice_id\tNMSE%\tSSIM\tPSNR"));
        assert!(text.contains("zero-fill\t10.00±0\t0.9000±0\t30.00±0"));
    }
}
