//! Dual-domain cascade: image-domain and k-space networks bridged by the
//! centered FFT, with data consistency around every k-space network and
//! optional residual connections carrying the previous iteration's image and
//! k-space forward.
//!
//! Iteration `m` computes
//!
//! ```text
//! I_m = H_I,m( ifft2c(K_{m-1}) [+ I_{m-1}] )            (K_0 = K_S)
//! K_m = DC( H_K,m( DC( fft2c(I_m) [+ K_{m-1}] ) ) )
//! ```
//!
//! where the bracketed residual terms exist for `m >= 2` when residuals are
//! enabled, and `R_out` is the RSS image of `K_N`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fourier::{ComplexImage, Domain};
use crate::mri::{rss_of_images, KSpaceVolume, SamplingMask};
use crate::params::{Bound, ParamSet};
use crate::senet::{SeNet, SeNetConfig};
use crate::tensor::Tensor;

/// Weight of the network prediction against the measurement in data
/// consistency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcConfig {
    pub lambda: f64,
}

impl Default for DcConfig {
    fn default() -> Self {
        Self { lambda: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeConfig {
    pub n_iterations: usize,
    pub use_cross_iteration_residual: bool,
    pub inet: SeNetConfig,
    pub knet: SeNetConfig,
    pub dc: DcConfig,
    pub ncoil: usize,
}

impl CascadeConfig {
    /// Two iterations with residuals and the default backbone for `ncoil`.
    pub fn new(ncoil: usize) -> Self {
        let c = 2 * ncoil;
        Self {
            n_iterations: 2,
            use_cross_iteration_residual: true,
            inet: SeNetConfig::new(c, c),
            knet: SeNetConfig::new(c, c),
            dc: DcConfig::default(),
            ncoil,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(Error::InvalidArgument(
                "cascade needs at least one iteration".into(),
            ));
        }
        if self.ncoil == 0 {
            return Err(Error::InvalidArgument(
                "cascade needs at least one coil".into(),
            ));
        }
        if !(self.dc.lambda >= 0.0 && self.dc.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "DC lambda must be >= 0, got {}",
                self.dc.lambda
            )));
        }
        let c = 2 * self.ncoil;
        for (name, net) in [("inet", &self.inet), ("knet", &self.knet)] {
            if net.in_channels != c || net.out_channels != c {
                return Err(Error::InvalidArgument(format!(
                    "{name} maps {} -> {} channels but {} coils need {c} -> {c}",
                    net.in_channels, net.out_channels, self.ncoil
                )));
            }
            net.validate()?;
        }
        Ok(())
    }
}

/// Blends a predicted k-space toward the measurement on sampled columns.
pub fn data_consistency(
    k_pre: &ComplexImage,
    k_s: &KSpaceVolume,
    mask: &SamplingMask,
    lambda: f64,
) -> Result<ComplexImage> {
    if k_pre.domain() != Domain::KSpace {
        return Err(Error::InvalidArgument(
            "data consistency expects k-space input".into(),
        ));
    }
    let mut tape = Tape::new();
    let pre = tape.constant(k_pre.tensor().clone());
    let measured = tape.constant(k_s.tensor().clone());
    let out = tape.data_consistency(pre, measured, &mask.lines, lambda)?;
    ComplexImage::new(tape.value(out).clone(), Domain::KSpace)
}

/// Tape handles for one cascade forward pass.
#[derive(Clone, Debug)]
pub struct CascadeVars {
    /// `I_1..I_N`.
    pub images: Vec<Var>,
    /// `K_1..K_N`.
    pub kspaces: Vec<Var>,
    /// Input of each image network (after any residual addition).
    pub inet_inputs: Vec<Var>,
    /// Input of each k-space network's first DC (after any residual).
    pub knet_inputs: Vec<Var>,
    /// Output of each k-space network before its second DC.
    pub knet_predictions: Vec<Var>,
}

/// Plain-value results of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeOutputs {
    pub images: Vec<ComplexImage>,
    pub kspaces: Vec<ComplexImage>,
    /// RSS of `K_N`, `[H, W]`.
    pub final_image: Tensor,
}

const CONFIG_ENTRY: &str = "model.config";

#[derive(Clone, Debug)]
struct Iteration {
    inet: SeNet,
    knet: SeNet,
}

/// The full cascade together with its parameters.
#[derive(Clone, Debug)]
pub struct DdCsenet {
    config: CascadeConfig,
    iterations: Vec<Iteration>,
    params: ParamSet,
}

impl DdCsenet {
    /// Builds independent image/k-space networks per iteration, initialized
    /// uniformly by fan-in from `seed`, with zeroed output heads so every
    /// network starts as the identity. Networks fed a residual sum start at
    /// half the identity, so the sum becomes an average.
    pub fn new(config: CascadeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut iterations = Vec::with_capacity(config.n_iterations);
        for m in 1..=config.n_iterations {
            let inet = SeNet::new(
                config.inet.clone(),
                &mut params,
                &format!("iter{m}.inet"),
                &mut rng,
            )?;
            let knet = SeNet::new(
                config.knet.clone(),
                &mut params,
                &format!("iter{m}.knet"),
                &mut rng,
            )?;
            inet.zero_head(&mut params);
            knet.zero_head(&mut params);
            if m > 1 && config.use_cross_iteration_residual {
                // Each input is the sum of two estimates of the same signal.
                inet.set_skip_gain(&mut params, 0.5);
                knet.set_skip_gain(&mut params, 0.5);
            }
            iterations.push(Iteration { inet, knet });
        }
        Ok(Self {
            config,
            iterations,
            params,
        })
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn inet(&self, iteration: usize) -> &SeNet {
        &self.iterations[iteration].inet
    }

    pub fn knet(&self, iteration: usize) -> &SeNet {
        &self.iterations[iteration].knet
    }

    fn residual_enabled(&self, iteration: usize) -> bool {
        iteration > 0 && self.config.use_cross_iteration_residual
    }

    /// `H_I(ifft2c(k_in) + residual)`. `iteration` is zero-based.
    pub fn inet_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        iteration: usize,
        k_in: Var,
        residual_image: Option<Var>,
    ) -> Result<(Var, Var)> {
        let mut x = tape.ifft2c(k_in)?;
        if let Some(r) = residual_image {
            x = tape
                .add(x, r)
                .map_err(|e| Error::shape("inet_forward", format!("residual image: {e}")))?;
        }
        let out = self.iterations[iteration].inet.forward(tape, bound, x)?;
        Ok((out, x))
    }

    /// `DC(H_K(DC(fft2c(i_in) + residual)))`; returns `(K_m, pre-DC input,
    /// network prediction)`.
    #[allow(clippy::too_many_arguments)]
    pub fn knet_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        iteration: usize,
        i_in: Var,
        residual_kspace: Option<Var>,
        k_s: Var,
        mask: &[bool],
    ) -> Result<(Var, Var, Var)> {
        let lambda = self.config.dc.lambda;
        let mut k = tape.fft2c(i_in)?;
        if let Some(r) = residual_kspace {
            k = tape
                .add(k, r)
                .map_err(|e| Error::shape("knet_forward", format!("residual k-space: {e}")))?;
        }
        let consistent = tape.data_consistency(k, k_s, mask, lambda)?;
        let predicted = self.iterations[iteration]
            .knet
            .forward(tape, bound, consistent)?;
        let out = tape.data_consistency(predicted, k_s, mask, lambda)?;
        Ok((out, k, predicted))
    }

    /// Parameters plus a `model.config` entry describing the architecture.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let net = |n: &SeNetConfig| {
            [
                n.in_channels,
                n.out_channels,
                n.base_width,
                n.depth,
                n.reduction_ratio,
            ]
            .map(|v| v as f64)
        };
        let mut values = vec![
            c.n_iterations as f64,
            if c.use_cross_iteration_residual {
                1.0
            } else {
                0.0
            },
            c.dc.lambda,
            c.ncoil as f64,
        ];
        values.extend(net(&c.inet));
        values.extend(net(&c.knet));
        let mut ck = Checkpoint::from_params(&self.params);
        ck.push(
            CONFIG_ENTRY,
            Tensor::new(vec![values.len()], values).expect("non-empty"),
        );
        ck
    }

    /// Rebuilds the architecture recorded in `checkpoint` and loads its
    /// parameters.
    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let t = checkpoint
            .get(CONFIG_ENTRY)
            .ok_or_else(|| Error::Corrupt(format!("checkpoint has no `{CONFIG_ENTRY}` entry")))?;
        let v = t.data();
        let as_count = |x: f64| -> Result<usize> {
            if x >= 0.0 && x.fract() == 0.0 && x < 1e9 {
                Ok(x as usize)
            } else {
                Err(Error::Corrupt(format!(
                    "`{CONFIG_ENTRY}` holds a non-integer count {x}"
                )))
            }
        };
        if v.len() != 14 {
            return Err(Error::Corrupt(format!(
                "`{CONFIG_ENTRY}` has {} values, expected 14",
                v.len()
            )));
        }
        let net = |o: usize| -> Result<SeNetConfig> {
            Ok(SeNetConfig {
                in_channels: as_count(v[o])?,
                out_channels: as_count(v[o + 1])?,
                base_width: as_count(v[o + 2])?,
                depth: as_count(v[o + 3])?,
                reduction_ratio: as_count(v[o + 4])?,
            })
        };
        let config = CascadeConfig {
            n_iterations: as_count(v[0])?,
            use_cross_iteration_residual: v[1] != 0.0,
            dc: DcConfig { lambda: v[2] },
            ncoil: as_count(v[3])?,
            inet: net(4)?,
            knet: net(9)?,
        };
        let mut model = Self::new(config, 0)?;
        checkpoint.load_into(&mut model.params)?;
        Ok(model)
    }

    /// Records the whole cascade on `tape`. `k_s` is the masked k-space
    /// `[1, 2*ncoil, H, W]`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        k_s: Var,
        mask: &[bool],
    ) -> Result<CascadeVars> {
        let [_, c, h, w] = tape.value(k_s).dims4("cascade")?;
        if c != 2 * self.config.ncoil {
            return Err(Error::shape(
                "cascade",
                format!(
                    "k-space has {c} channels ({} coils) but the model was built for {} coils",
                    c / 2,
                    self.config.ncoil
                ),
            ));
        }
        if mask.len() != w {
            return Err(Error::shape(
                "cascade",
                format!("mask has {} lines, k-space is {h}x{w}", mask.len()),
            ));
        }
        let n = self.config.n_iterations;
        let mut vars = CascadeVars {
            images: Vec::with_capacity(n),
            kspaces: Vec::with_capacity(n),
            inet_inputs: Vec::with_capacity(n),
            knet_inputs: Vec::with_capacity(n),
            knet_predictions: Vec::with_capacity(n),
        };
        let mut k_prev = k_s;
        for m in 0..n {
            let residual = self.residual_enabled(m);
            let (image, inet_in) =
                self.inet_forward(tape, bound, m, k_prev, residual.then(|| vars.images[m - 1]))?;
            let (kspace, knet_in, predicted) =
                self.knet_forward(tape, bound, m, image, residual.then_some(k_prev), k_s, mask)?;
            vars.images.push(image);
            vars.kspaces.push(kspace);
            vars.inet_inputs.push(inet_in);
            vars.knet_inputs.push(knet_in);
            vars.knet_predictions.push(predicted);
            k_prev = kspace;
        }
        Ok(vars)
    }

    /// Forward pass on plain values.
    pub fn forward(&self, k_s: &KSpaceVolume, mask: &SamplingMask) -> Result<CascadeOutputs> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let ks = tape.constant(k_s.tensor().clone());
        let vars = self.forward_on_tape(&mut tape, &bound, ks, &mask.lines)?;
        collect_outputs(&tape, &vars)
    }
}

pub fn collect_outputs(tape: &Tape, vars: &CascadeVars) -> Result<CascadeOutputs> {
    let images = vars
        .images
        .iter()
        .map(|&v| ComplexImage::new(tape.value(v).clone(), Domain::Image))
        .collect::<Result<Vec<_>>>()?;
    let kspaces = vars
        .kspaces
        .iter()
        .map(|&v| ComplexImage::new(tape.value(v).clone(), Domain::KSpace))
        .collect::<Result<Vec<_>>>()?;
    let last = kspaces.last().expect("at least one iteration");
    let final_image = rss_of_images(last.ifft2c()?.tensor())?;
    Ok(CascadeOutputs {
        images,
        kspaces,
        final_image,
    })
}
