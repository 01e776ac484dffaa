use ddrecon::checkpoint::Checkpoint;
use ddrecon::config::ExperimentConfig;
use ddrecon::fourier::{fft2c, ifft2c};
use ddrecon::metrics::{nmse, ssim_with_range, SsimOptions};
use ddrecon::mri::{
    center_block, generate_mask, rss_of_images, Dataset, KSpaceVolume, SamplingMask,
};
use ddrecon::{Error, Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-10.0f64..10.0, n)
        .prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn complex_stack() -> impl Strategy<Value = Tensor> {
    (1usize..3, 2usize..9, 2usize..9).prop_flat_map(|(c, h, w)| tensor(vec![1, 2 * c, h, w]))
}

fn energy(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_round_trip_and_parseval(x in complex_stack()) {
        let k = fft2c(&x).unwrap();
        prop_assert!(ifft2c(&k).unwrap().max_abs_diff(&x) < 1e-9);
        prop_assert!(fft2c(&ifft2c(&x).unwrap()).unwrap().max_abs_diff(&x) < 1e-9);
        let (ex, ek) = (energy(&x), energy(&k));
        prop_assert!((ex - ek).abs() <= 1e-9 * ex.max(1.0));
    }

    #[test]
    fn fft_is_linear(pair in (1usize..3, 2usize..7, 2usize..7)
        .prop_flat_map(|(c, h, w)| (tensor(vec![1, 2 * c, h, w]), tensor(vec![1, 2 * c, h, w]))),
        a in -3.0f64..3.0) {
        let (x, y) = pair;
        let combo = Tensor::new(x.shape().to_vec(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + q).collect()).unwrap();
        let lhs = fft2c(&combo).unwrap();
        let (fx, fy) = (fft2c(&x).unwrap(), fft2c(&y).unwrap());
        let rhs = Tensor::new(fx.shape().to_vec(), fx.data().iter().zip(fy.data()).map(|(p, q)| a * p + q).collect()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-9);
    }

    #[test]
    fn data_consistency_contracts_sampled_columns(
        pair in (1usize..3, 2usize..6, 2usize..9)
            .prop_flat_map(|(c, h, w)| (tensor(vec![1, 2 * c, h, w]), tensor(vec![1, 2 * c, h, w]), prop::collection::vec(any::<bool>(), w))),
        lambda in 0.0f64..5.0,
    ) {
        let (pred, meas, mask) = pair;
        let w = mask.len();
        let mut tape = Tape::new();
        let p = tape.constant(pred.clone());
        let m = tape.constant(meas.clone());
        let out = tape.data_consistency(p, m, &mask, lambda).unwrap();
        let out = tape.value(out).clone();
        let factor = lambda / (lambda + 1.0);
        for (i, ((o, pv), mv)) in out.data().iter().zip(pred.data()).zip(meas.data()).enumerate() {
            if mask[i % w] {
                // distance to the measurement shrinks by exactly lambda / (lambda + 1)
                let expected = mv + factor * (pv - mv);
                prop_assert!((o - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            } else {
                prop_assert_eq!(*o, *pv);
            }
        }
        // the measurement is a fixed point
        let mut tape = Tape::new();
        let m1 = tape.constant(meas.clone());
        let m2 = tape.constant(meas.clone());
        let fixed = tape.data_consistency(m1, m2, &mask, lambda).unwrap();
        for (i, (o, mv)) in tape.value(fixed).data().iter().zip(meas.data()).enumerate() {
            if mask[i % w] {
                prop_assert!((o - mv).abs() <= 1e-12 * (1.0 + mv.abs()));
            }
        }
        // lambda = 0 replaces sampled entries outright
        let mut tape = Tape::new();
        let p = tape.constant(pred.clone());
        let m = tape.constant(meas.clone());
        let hard = tape.data_consistency(p, m, &mask, 0.0).unwrap();
        for (i, (o, mv)) in tape.value(hard).data().iter().zip(meas.data()).enumerate() {
            if mask[i % w] {
                prop_assert_eq!(*o, *mv);
            }
        }
    }

    #[test]
    fn rss_ignores_coil_order(x in complex_stack(), shift in 0usize..4) {
        let [_, c, h, w] = x.dims4("test").unwrap();
        let coils = c / 2;
        let plane = h * w;
        let mut permuted = Vec::with_capacity(x.len());
        for k in 0..coils {
            let src = (k + shift) % coils;
            permuted.extend_from_slice(&x.data()[2 * src * plane..][..2 * plane]);
        }
        let permuted = Tensor::new(x.shape().to_vec(), permuted).unwrap();
        prop_assert!(rss_of_images(&x).unwrap().max_abs_diff(&rss_of_images(&permuted).unwrap()) < 1e-12);
    }

    #[test]
    fn nmse_is_scale_covariant(pair in (2usize..6, 2usize..6).prop_flat_map(|(h, w)| (tensor(vec![h, w]), tensor(vec![h, w]))),
        c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0]) {
        let (p, r) = pair;
        prop_assume!(energy(&r) > 1e-6);
        let scaled = nmse(&p.map(|v| c * v), &r.map(|v| c * v)).unwrap();
        let base = nmse(&p, &r).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((scaled - base).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn ssim_is_symmetric(pair in (7usize..12, 7usize..12).prop_flat_map(|(h, w)| (tensor(vec![h, w]), tensor(vec![h, w])))) {
        let (a, b) = pair;
        let range = a.max().max(b.max()) - a.min().min(b.min());
        prop_assume!(range > 0.0);
        let ab = ssim_with_range(&a, &b, range, &SsimOptions::default()).unwrap();
        let ba = ssim_with_range(&b, &a, range, &SsimOptions::default()).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn mask_line_budget(width in 8usize..400, acc in 2.0f64..12.0, cf in 0.0f64..0.1, seed in any::<u64>()) {
        let budget = (width as f64 / acc).round() as usize;
        let (_, center) = center_block(width, cf);
        prop_assume!(center <= budget && budget >= 1);
        let mask = generate_mask(width, acc, cf, seed).unwrap();
        prop_assert_eq!(mask.kept(), budget);
        prop_assert_eq!(mask.lines.len(), width);
    }

    #[test]
    fn checkpoint_round_trip(values in prop::collection::vec(prop::num::f64::ANY, 1..40), split in 1usize..5) {
        let n = values.len();
        let mut ck = Checkpoint::default();
        ck.push("a", Tensor::new(vec![n], values.clone()).unwrap());
        ck.push("b.c", Tensor::new(vec![1, split], vec![0.5; split]).unwrap());
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes.clone());
        for cut in [0, 3, 4, 8, 15, bytes.len() / 2, bytes.len() - 1] {
            prop_assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Truncated(_))));
        }
    }

    #[test]
    fn dataset_round_trip(x in (1usize..3, 2usize..5, 8usize..12).prop_flat_map(|(c, h, w)| tensor(vec![1, 2 * c, h, w]))) {
        let w = x.shape()[3];
        let volume = KSpaceVolume::from_tensor(x, "s0").unwrap().quantize_f32();
        let mask = SamplingMask::full(w);
        let ds = Dataset::new(vec![volume], vec![mask]).unwrap();
        let bytes = ds.to_bytes().unwrap();
        let back = Dataset::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.slices[0].volume, &ds.slices[0].volume);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes.clone());
        prop_assert!(matches!(Dataset::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
    }

    #[test]
    fn config_text_round_trips(epochs in 1usize..500, lr in 1e-7f64..1.0, lambda in 0.0f64..3.0,
        n in 1usize..4, residual in any::<bool>(), seed in any::<u64>()) {
        let text = format!(
            "train.epochs={epochs}\ntrain.learning_rate={lr}\ncascade.dc_lambda={lambda}\ncascade.n_iterations={n}\ncascade.residual={residual}\ntrain.seed={seed}\n"
        );
        let cfg = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(cfg.train.learning_rate, lr);
        prop_assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
