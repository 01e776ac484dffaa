#![allow(dead_code)]

use ddrecon::cascade::{CascadeConfig, DcConfig, DdCsenet};
use ddrecon::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use ddrecon::mri::{apply_mask, generate_mask, simulate_coils, KSpaceVolume};
use ddrecon::senet::{SeModule, SeNet, SeNetConfig};
use ddrecon::training::{loss_on_tape, LossWeights};
use ddrecon::{Bound, ParamSet, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
}

/// Values bounded away from zero so relu kinks stay out of the
/// finite-difference stencil.
pub fn random_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type Build = Box<dyn Fn(&mut Tape, &Bound, &[ddrecon::ParamId]) -> Result<Var>>;

struct Case {
    name: &'static str,
    params: Vec<Tensor>,
    build: Build,
}

fn mse_to(tape: &mut Tape, out: Var, target: &Tensor) -> Result<Var> {
    let t = tape.constant(target.clone());
    tape.mse(out, t)
}

/// Gradient check of every differentiable tape op in isolation.
pub fn op_gradient_reports() -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases: Vec<Case> = Vec::new();
    let t = |shape: &[usize], rng: &mut ChaCha8Rng| random(shape, rng);

    let target = t(&[2, 3, 4, 4], &mut rng);
    let tg = target.clone();
    cases.push(Case {
        name: "add",
        params: vec![t(&[2, 3, 4, 4], &mut rng), t(&[2, 3, 4, 4], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.add(b.var(ids[0]), b.var(ids[1]))?;
            mse_to(tape, y, &tg)
        }),
    });
    let tg = target.clone();
    cases.push(Case {
        name: "sub",
        params: vec![t(&[2, 3, 4, 4], &mut rng), t(&[2, 3, 4, 4], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.sub(b.var(ids[0]), b.var(ids[1]))?;
            mse_to(tape, y, &tg)
        }),
    });
    let tg = target.clone();
    cases.push(Case {
        name: "scale",
        params: vec![t(&[2, 3, 4, 4], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.scale(b.var(ids[0]), -1.7);
            mse_to(tape, y, &tg)
        }),
    });
    cases.push(Case {
        name: "sum",
        params: vec![t(&[3, 5], &mut rng)],
        build: Box::new(|tape, b, ids| {
            let s = tape.sum(b.var(ids[0]));
            let target = Tensor::scalar(0.3);
            mse_to(tape, s, &target)
        }),
    });
    let tg = target.clone();
    cases.push(Case {
        name: "relu",
        params: vec![random_away_from_zero(&[2, 3, 4, 4], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.relu(b.var(ids[0]));
            mse_to(tape, y, &tg)
        }),
    });
    let tg = target.clone();
    cases.push(Case {
        name: "sigmoid",
        params: vec![t(&[2, 3, 4, 4], &mut rng).map(|v| 3.0 * v)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.sigmoid(b.var(ids[0]));
            mse_to(tape, y, &tg)
        }),
    });
    let conv_target = t(&[2, 4, 5, 5], &mut rng);
    cases.push(Case {
        name: "conv2d 3x3 pad 1",
        params: vec![
            t(&[2, 3, 5, 5], &mut rng),
            t(&[4, 3, 3, 3], &mut rng),
            t(&[4], &mut rng),
        ],
        build: Box::new(move |tape, b, ids| {
            let y = tape.conv2d(b.var(ids[0]), b.var(ids[1]), b.var(ids[2]), 1, 1)?;
            mse_to(tape, y, &conv_target)
        }),
    });
    let strided_target = t(&[1, 2, 3, 3], &mut rng);
    cases.push(Case {
        name: "conv2d stride 2",
        params: vec![
            t(&[1, 3, 5, 5], &mut rng),
            t(&[2, 3, 3, 3], &mut rng),
            t(&[2], &mut rng),
        ],
        build: Box::new(move |tape, b, ids| {
            let y = tape.conv2d(b.var(ids[0]), b.var(ids[1]), b.var(ids[2]), 2, 1)?;
            mse_to(tape, y, &strided_target)
        }),
    });
    let fc_target = t(&[3, 2], &mut rng);
    cases.push(Case {
        name: "fully_connected",
        params: vec![
            t(&[3, 5], &mut rng),
            t(&[2, 5], &mut rng),
            t(&[2], &mut rng),
        ],
        build: Box::new(move |tape, b, ids| {
            let y = tape.fully_connected(b.var(ids[0]), b.var(ids[1]), b.var(ids[2]))?;
            mse_to(tape, y, &fc_target)
        }),
    });
    let pool_target = t(&[2, 3], &mut rng);
    cases.push(Case {
        name: "global_avg_pool",
        params: vec![t(&[2, 3, 4, 4], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.global_avg_pool(b.var(ids[0]))?;
            mse_to(tape, y, &pool_target)
        }),
    });
    let tg = target.clone();
    cases.push(Case {
        name: "channelwise_scale",
        params: vec![t(&[2, 3, 4, 4], &mut rng), t(&[2, 3], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.channelwise_scale(b.var(ids[0]), b.var(ids[1]))?;
            mse_to(tape, y, &tg)
        }),
    });
    let tg = target.clone();
    cases.push(Case {
        name: "pointwise_scale",
        params: vec![t(&[2, 3, 4, 4], &mut rng), t(&[2, 1, 4, 4], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.pointwise_scale(b.var(ids[0]), b.var(ids[1]))?;
            mse_to(tape, y, &tg)
        }),
    });
    let small = t(&[2, 3, 2, 2], &mut rng);
    cases.push(Case {
        name: "avg_pool2",
        params: vec![t(&[2, 3, 4, 4], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.avg_pool2(b.var(ids[0]))?;
            mse_to(tape, y, &small)
        }),
    });
    let tg = target.clone();
    cases.push(Case {
        name: "upsample2",
        params: vec![t(&[2, 3, 2, 2], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.upsample2(b.var(ids[0]))?;
            mse_to(tape, y, &tg)
        }),
    });
    let cat_target = t(&[2, 5, 4, 4], &mut rng);
    cases.push(Case {
        name: "concat_channels",
        params: vec![t(&[2, 3, 4, 4], &mut rng), t(&[2, 2, 4, 4], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.concat_channels(b.var(ids[0]), b.var(ids[1]))?;
            mse_to(tape, y, &cat_target)
        }),
    });
    let complex_target = t(&[1, 4, 6, 8], &mut rng);
    let ct = complex_target.clone();
    cases.push(Case {
        name: "fft2c",
        params: vec![t(&[1, 4, 6, 8], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.fft2c(b.var(ids[0]))?;
            mse_to(tape, y, &ct)
        }),
    });
    let ct = complex_target.clone();
    cases.push(Case {
        name: "ifft2c",
        params: vec![t(&[1, 4, 6, 8], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.ifft2c(b.var(ids[0]))?;
            mse_to(tape, y, &ct)
        }),
    });
    let mask: Vec<bool> = (0..8).map(|i| i % 3 == 0).collect();
    let ct = complex_target.clone();
    cases.push(Case {
        name: "data_consistency",
        params: vec![t(&[1, 4, 6, 8], &mut rng), t(&[1, 4, 6, 8], &mut rng)],
        build: Box::new(move |tape, b, ids| {
            let y = tape.data_consistency(b.var(ids[0]), b.var(ids[1]), &mask, 0.3)?;
            mse_to(tape, y, &ct)
        }),
    });
    cases.push(Case {
        name: "l2_loss",
        params: vec![t(&[2, 3, 4, 4], &mut rng), t(&[2, 3, 4, 4], &mut rng)],
        build: Box::new(|tape, b, ids| tape.mse(b.var(ids[0]), b.var(ids[1]))),
    });

    cases
        .into_iter()
        .map(|case| {
            let mut params = ParamSet::new();
            let ids: Vec<_> = case
                .params
                .into_iter()
                .enumerate()
                .map(|(i, p)| params.insert(format!("{}.{i}", case.name), p))
                .collect();
            let build = case.build;
            let report = grad_check(
                &params,
                |tape, b| build(tape, b, &ids),
                &GradCheckOptions::default(),
            )
            .unwrap();
            (case.name, report)
        })
        .collect()
}

/// Perturbs every parameter so zero-initialized heads do not hide the body.
pub fn randomize(params: &mut ParamSet, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.values_mut() {
        let noise = Tensor::uniform(t.shape().to_vec(), -scale, scale, &mut rng);
        *t = Tensor::new(
            t.shape().to_vec(),
            t.data()
                .iter()
                .zip(noise.data())
                .map(|(a, b)| a + b)
                .collect(),
        )
        .unwrap();
    }
}

pub fn se_block_report(options: &GradCheckOptions) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = ParamSet::new();
    let se = SeModule::new(&mut params, "se", 8, 4, &mut rng).unwrap();
    randomize(&mut params, 0.5, 8);
    let x = random(&[2, 8, 6, 6], &mut rng);
    let target = random(&[2, 8, 6, 6], &mut rng);
    grad_check(
        &params,
        |tape, b| {
            let xi = tape.constant(x.clone());
            let y = se.forward(tape, b, xi)?;
            mse_to(tape, y, &target)
        },
        options,
    )
    .unwrap()
}

pub fn senet_report(options: &GradCheckOptions) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = ParamSet::new();
    let cfg = SeNetConfig {
        in_channels: 4,
        out_channels: 4,
        base_width: 8,
        depth: 2,
        reduction_ratio: 4,
    };
    let net = SeNet::new(cfg, &mut params, "net", &mut rng).unwrap();
    randomize(&mut params, 0.2, 12);
    let x = random(&[1, 4, 8, 8], &mut rng);
    let target = random(&[1, 4, 8, 8], &mut rng);
    grad_check(
        &params,
        |tape, b| {
            let xi = tape.constant(x.clone());
            let y = net.forward(tape, b, xi)?;
            mse_to(tape, y, &target)
        },
        options,
    )
    .unwrap()
}

pub fn tiny_cascade_config(n: usize, residual: bool) -> CascadeConfig {
    let net = SeNetConfig {
        in_channels: 4,
        out_channels: 4,
        base_width: 8,
        depth: 2,
        reduction_ratio: 4,
    };
    CascadeConfig {
        n_iterations: n,
        use_cross_iteration_residual: residual,
        inet: net.clone(),
        knet: net,
        dc: DcConfig::default(),
        ncoil: 2,
    }
}

/// 2-coil 8x8 k-space: `(full, masked, mask lines)`.
pub fn tiny_instance(seed: u64) -> (KSpaceVolume, KSpaceVolume, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Tensor::uniform(vec![8, 8], 0.0, 1.0, &mut rng);
    let full = simulate_coils(&image, 2, seed).unwrap();
    let mask = generate_mask(8, 2.0, 0.25, seed).unwrap();
    let masked = apply_mask(&full, &mask).unwrap();
    (full, masked, mask.lines)
}

/// Full loss of an N=2 cascade with residuals on a 2-coil 8x8 instance.
pub fn cascade_report(options: &GradCheckOptions) -> GradCheckReport {
    let mut model = DdCsenet::new(tiny_cascade_config(2, true), 3).unwrap();
    randomize(model.params_mut(), 0.1, 4);
    let (full, masked, mask) = tiny_instance(5);
    let i_full = full.coil_images().unwrap().into_tensor();
    let weights = LossWeights::default_for(2);
    grad_check(
        model.params(),
        |tape, b| {
            let ks = tape.constant(masked.tensor().clone());
            let vars = model.forward_on_tape(tape, b, ks, &mask)?;
            let i = tape.constant(i_full.clone());
            let k = tape.constant(full.tensor().clone());
            loss_on_tape(tape, &vars, i, k, &weights)
        },
        options,
    )
    .unwrap()
}
