use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Randomized Shepp-Logan style phantom of shape `[height, width]`.
///
/// The first ellipse is a bright head-sized outline; the rest are smaller
/// inner structures with signed intensities. The summed image is clipped to
/// `[0, 1]`.
pub fn generate_phantom(height: usize, width: usize, n_ellipses: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ellipses = Vec::with_capacity(n_ellipses);
    for i in 0..n_ellipses {
        let e = if i == 0 {
            Ellipse {
                cx: rng.gen_range(-0.05..0.05),
                cy: rng.gen_range(-0.05..0.05),
                a: rng.gen_range(0.6..0.8),
                b: rng.gen_range(0.75..0.92),
                angle: rng.gen_range(-0.2..0.2),
                intensity: rng.gen_range(0.6..0.9),
            }
        } else {
            let r = rng.gen_range(0.0..0.45);
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            Ellipse {
                cx: r * t.cos(),
                cy: r * t.sin(),
                a: rng.gen_range(0.05..0.3),
                b: rng.gen_range(0.05..0.3),
                angle: rng.gen_range(0.0..std::f64::consts::PI),
                intensity: rng.gen_range(-0.3..0.4),
            }
        };
        ellipses.push(e);
    }

    Tensor::from_fn([height, width], |idx| {
        let (i, j) = (idx / width, idx % width);
        // pixel centres mapped onto [-1, 1]
        let x = (2.0 * j as f64 + 1.0) / width as f64 - 1.0;
        let y = (2.0 * i as f64 + 1.0) / height as f64 - 1.0;
        let v: f64 = ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum();
        v.clamp(0.0, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_ellipses_is_blank() {
        assert!(generate_phantom(32, 32, 0, 1)
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn reproducible_and_bounded() {
        let a = generate_phantom(64, 48, 10, 9);
        let b = generate_phantom(64, 48, 10, 9);
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[64, 48]);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(a, generate_phantom(64, 48, 10, 10));
    }

    #[test]
    fn mean_intensity_distribution() {
        for seed in 0..1000 {
            let mean = generate_phantom(32, 32, 10, seed).sum() / 1024.0;
            assert!(mean > 0.05 && mean < 0.6, "seed {seed}: {mean}");
        }
    }
}
