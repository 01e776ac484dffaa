//! Contraction-expansion convolutional network whose blocks each end in a
//! two-branch squeeze-excitation module.
//!
//! The SE module recalibrates its input twice and sums the results:
//!
//! * channel branch: global average pool, FC (C -> C/r), relu, FC (C/r -> C),
//!   sigmoid, then scale each channel by its gate;
//! * spatial branch: 1x1 conv (C -> 1), sigmoid, then scale each pixel by
//!   its gate.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, Bound, ParamId, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SeNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    /// Number of resolution levels; spatial dims must divide by `2^(depth-1)`.
    pub depth: usize,
    pub reduction_ratio: usize,
}

impl SeNetConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            base_width: 32,
            depth: 3,
            reduction_ratio: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument(
                "SENet channel counts must be positive".into(),
            ));
        }
        if self.depth == 0 {
            return Err(Error::InvalidArgument(
                "SENet depth must be at least 1".into(),
            ));
        }
        if self.reduction_ratio == 0 || self.base_width < self.reduction_ratio {
            return Err(Error::InvalidArgument(format!(
                "base width {} must be at least the reduction ratio {}",
                self.base_width, self.reduction_ratio
            )));
        }
        if self.base_width % self.reduction_ratio != 0 {
            return Err(Error::InvalidArgument(format!(
                "reduction ratio {} must divide base width {}",
                self.reduction_ratio, self.base_width
            )));
        }
        Ok(())
    }

    /// Channel width of level `level` (0 = full resolution).
    pub fn width_at(&self, level: usize) -> usize {
        self.base_width << level
    }
}

#[derive(Clone, Debug)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
    padding: usize,
}

impl Conv {
    fn new(
        params: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        Self {
            weight: params.insert(
                format!("{name}.weight"),
                fan_in_uniform([cout, cin, kernel, kernel], fan_in, rng),
            ),
            bias: params.insert(format!("{name}.bias"), fan_in_uniform([cout], fan_in, rng)),
            padding: kernel / 2,
        }
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(
            x,
            bound.var(self.weight),
            bound.var(self.bias),
            1,
            self.padding,
        )
    }
}

/// Parameters of one two-branch SE module.
#[derive(Clone, Debug)]
pub struct SeModule {
    pub channels: usize,
    pub reduction_ratio: usize,
    pub fc1_weight: ParamId,
    pub fc1_bias: ParamId,
    pub fc2_weight: ParamId,
    pub fc2_bias: ParamId,
    pub spatial_weight: ParamId,
    pub spatial_bias: ParamId,
}

impl SeModule {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        channels: usize,
        reduction_ratio: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if reduction_ratio == 0 || channels % reduction_ratio != 0 {
            return Err(Error::InvalidArgument(format!(
                "reduction ratio {reduction_ratio} must divide {channels} channels"
            )));
        }
        let hidden = channels / reduction_ratio;
        Ok(Self {
            channels,
            reduction_ratio,
            fc1_weight: params.insert(
                format!("{name}.fc1.weight"),
                fan_in_uniform([hidden, channels], channels, rng),
            ),
            fc1_bias: params.insert(
                format!("{name}.fc1.bias"),
                fan_in_uniform([hidden], channels, rng),
            ),
            fc2_weight: params.insert(
                format!("{name}.fc2.weight"),
                fan_in_uniform([channels, hidden], hidden, rng),
            ),
            fc2_bias: params.insert(
                format!("{name}.fc2.bias"),
                fan_in_uniform([channels], hidden, rng),
            ),
            spatial_weight: params.insert(
                format!("{name}.spatial.weight"),
                fan_in_uniform([1, channels, 1, 1], channels, rng),
            ),
            spatial_bias: params.insert(
                format!("{name}.spatial.bias"),
                fan_in_uniform([1], channels, rng),
            ),
        })
    }

    /// `F_SE = F_in * channel_gate + F_in * spatial_gate`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, input: Var) -> Result<Var> {
        let [_, c, _, _] = tape.value(input).dims4("se_module")?;
        if c != self.channels {
            return Err(Error::shape(
                "se_module",
                format!("input has {c} channels, module expects {}", self.channels),
            ));
        }
        let squeezed = tape.global_avg_pool(input)?;
        let hidden = tape.fully_connected(
            squeezed,
            bound.var(self.fc1_weight),
            bound.var(self.fc1_bias),
        )?;
        let hidden = tape.relu(hidden);
        let gates =
            tape.fully_connected(hidden, bound.var(self.fc2_weight), bound.var(self.fc2_bias))?;
        let channel_gates = tape.sigmoid(gates);
        let channel_recalibrated = tape.channelwise_scale(input, channel_gates)?;

        let map = tape.conv2d(
            input,
            bound.var(self.spatial_weight),
            bound.var(self.spatial_bias),
            1,
            0,
        )?;
        let spatial_gates = tape.sigmoid(map);
        let spatial_recalibrated = tape.pointwise_scale(input, spatial_gates)?;

        tape.add(channel_recalibrated, spatial_recalibrated)
    }
}

#[derive(Clone, Debug)]
struct Block {
    conv1: Conv,
    conv2: Conv,
    se: SeModule,
}

impl Block {
    fn new(
        params: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        r: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv::new(params, &format!("{name}.conv1"), cin, cout, 3, rng),
            conv2: Conv::new(params, &format!("{name}.conv2"), cout, cout, 3, rng),
            se: SeModule::new(params, &format!("{name}.se"), cout, r, rng)?,
        })
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let x = self.conv1.forward(tape, bound, x)?;
        let x = tape.relu(x);
        let x = self.conv2.forward(tape, bound, x)?;
        let x = tape.relu(x);
        self.se.forward(tape, bound, x)
    }
}

/// Encoder-decoder with skip concatenations, average-pool downsampling,
/// nearest-neighbour upsampling, a 1x1 output head and, when input and
/// output widths agree, a global input residual through a learnable 1x1
/// skip that starts as the identity.
#[derive(Clone, Debug)]
pub struct SeNet {
    config: SeNetConfig,
    encoder: Vec<Block>,
    decoder: Vec<Block>,
    head: Conv,
    skip: Option<Conv>,
}

impl SeNet {
    pub fn new(
        config: SeNetConfig,
        params: &mut ParamSet,
        name: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let r = config.reduction_ratio;
        let mut encoder = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let cin = if level == 0 {
                config.in_channels
            } else {
                config.width_at(level - 1)
            };
            encoder.push(Block::new(
                params,
                &format!("{name}.enc{level}"),
                cin,
                config.width_at(level),
                r,
                rng,
            )?);
        }
        let mut decoder = Vec::with_capacity(config.depth - 1);
        for level in (0..config.depth - 1).rev() {
            let cin = config.width_at(level + 1) + config.width_at(level);
            decoder.push(Block::new(
                params,
                &format!("{name}.dec{level}"),
                cin,
                config.width_at(level),
                r,
                rng,
            )?);
        }
        let head = Conv::new(
            params,
            &format!("{name}.head"),
            config.width_at(0),
            config.out_channels,
            1,
            rng,
        );
        let skip = (config.in_channels == config.out_channels).then(|| {
            let c = config.in_channels;
            let mut weight = Tensor::zeros([c, c, 1, 1]);
            for i in 0..c {
                weight.data_mut()[i * c + i] = 1.0;
            }
            Conv {
                weight: params.insert(format!("{name}.skip.weight"), weight),
                bias: params.insert(format!("{name}.skip.bias"), Tensor::zeros([c])),
                padding: 0,
            }
        });
        Ok(Self {
            config,
            encoder,
            decoder,
            head,
            skip,
        })
    }

    pub fn config(&self) -> &SeNetConfig {
        &self.config
    }

    pub fn has_residual(&self) -> bool {
        self.skip.is_some()
    }

    /// Zeroes the output head so the network starts as the identity (with the
    /// global residual) or as zero (without).
    pub fn zero_head(&self, params: &mut ParamSet) {
        params.get_mut(self.head.weight).data_mut().fill(0.0);
        params.get_mut(self.head.bias).data_mut().fill(0.0);
    }

    /// Every convolution weight/bias in encoder and decoder blocks, excluding
    /// SE modules and the head.
    pub fn body_conv_params(&self) -> Vec<ParamId> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|b| [b.conv1.weight, b.conv1.bias, b.conv2.weight, b.conv2.bias])
            .collect()
    }

    pub fn head_params(&self) -> (ParamId, ParamId) {
        (self.head.weight, self.head.bias)
    }

    /// Rescales the identity skip to `gain * I`. No-op without a residual.
    pub fn set_skip_gain(&self, params: &mut ParamSet, gain: f64) {
        if let Some(skip) = &self.skip {
            let c = self.config.in_channels;
            let weight = params.get_mut(skip.weight).data_mut();
            weight.fill(0.0);
            for i in 0..c {
                weight[i * c + i] = gain;
            }
            params.get_mut(skip.bias).data_mut().fill(0.0);
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let [_, c, h, w] = tape.value(x).dims4("senet")?;
        if c != self.config.in_channels {
            return Err(Error::shape(
                "senet",
                format!(
                    "input has {c} channels, network expects {}",
                    self.config.in_channels
                ),
            ));
        }
        let factor = 1usize << (self.config.depth - 1);
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::shape(
                "senet",
                format!(
                    "spatial size {h}x{w} is not divisible by {factor} for depth {}",
                    self.config.depth
                ),
            ));
        }

        let mut skips = Vec::with_capacity(self.config.depth - 1);
        let mut feat = x;
        for (level, block) in self.encoder.iter().enumerate() {
            feat = block.forward(tape, bound, feat)?;
            if level + 1 < self.config.depth {
                skips.push(feat);
                feat = tape.avg_pool2(feat)?;
            }
        }
        for block in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder level");
            let up = tape.upsample2(feat)?;
            let joined = tape.concat_channels(up, skip)?;
            feat = block.forward(tape, bound, joined)?;
        }
        let out = self.head.forward(tape, bound, feat)?;
        match &self.skip {
            Some(skip) => {
                let carried = skip.forward(tape, bound, x)?;
                tape.add(out, carried)
            }
            None => Ok(out),
        }
    }

    /// Convenience forward on plain values, without keeping a tape.
    pub fn evaluate(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let input = tape.constant(x.clone());
        let out = self.forward(&mut tape, &bound, input)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn se(channels: usize, r: usize) -> (SeModule, ParamSet) {
        let mut params = ParamSet::new();
        let m = SeModule::new(
            &mut params,
            "se",
            channels,
            r,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        (m, params)
    }

    fn run_se(m: &SeModule, params: &ParamSet, x: Tensor) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let xv = tape.constant(x);
        let y = m.forward(&mut tape, &b, xv).unwrap();
        let pooled = tape.global_avg_pool(xv).unwrap();
        (tape.value(y).clone(), tape.value(pooled).clone())
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let (m, p) = se(8, 4);
        let (y, _) = run_se(&m, &p, Tensor::zeros([2, 8, 4, 4]));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_double_the_input() {
        let (m, mut p) = se(8, 4);
        p.get_mut(m.fc2_bias).data_mut().fill(50.0);
        p.get_mut(m.fc2_weight).data_mut().fill(0.0);
        p.get_mut(m.spatial_bias).data_mut().fill(50.0);
        p.get_mut(m.spatial_weight).data_mut().fill(0.0);
        let x = Tensor::from_fn([1, 8, 4, 4], |i| (i as f64 * 0.7).cos());
        let (y, _) = run_se(&m, &p, x.clone());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn squeeze_of_constant_channels() {
        let (m, p) = se(8, 2);
        let x = Tensor::from_fn([1, 8, 3, 5], |i| (i / 15) as f64 * 1.5 - 2.0);
        let (_, pooled) = run_se(&m, &p, x);
        for (c, v) in pooled.data().iter().enumerate() {
            assert_eq!(*v, c as f64 * 1.5 - 2.0);
        }
    }

    #[test]
    fn se_rejects_mismatch() {
        let (m, p) = se(8, 4);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let x = tape.constant(Tensor::ones([1, 4, 4, 4]));
        assert!(m.forward(&mut tape, &b, x).is_err());
        assert!(SeModule::new(
            &mut ParamSet::new(),
            "x",
            6,
            4,
            &mut ChaCha8Rng::seed_from_u64(0)
        )
        .is_err());
    }

    #[test]
    fn shape_contract_and_divisibility() {
        for (depth, cout) in [(1, 8), (2, 3), (3, 8)] {
            let cfg = SeNetConfig {
                in_channels: 8,
                out_channels: cout,
                base_width: 8,
                depth,
                reduction_ratio: 4,
            };
            let mut params = ParamSet::new();
            let net = SeNet::new(cfg, &mut params, "n", &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let y = net.evaluate(&params, &Tensor::ones([2, 8, 16, 8])).unwrap();
            assert_eq!(y.shape(), &[2, cout, 16, 8]);
            if depth == 3 {
                assert!(net.evaluate(&params, &Tensor::ones([1, 8, 6, 8])).is_err());
            }
        }
    }

    #[test]
    fn zeroed_body_with_residual_is_identity() {
        let cfg = SeNetConfig {
            in_channels: 4,
            out_channels: 4,
            base_width: 4,
            depth: 1,
            reduction_ratio: 2,
        };
        let mut params = ParamSet::new();
        let net = SeNet::new(cfg, &mut params, "n", &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for id in net.body_conv_params() {
            params.get_mut(id).data_mut().fill(0.0);
        }
        let (hw, hb) = net.head_params();
        let mut eye = Tensor::zeros([4, 4, 1, 1]);
        for c in 0..4 {
            eye.data_mut()[c * 4 + c] = 1.0;
        }
        *params.get_mut(hw) = eye;
        params.get_mut(hb).data_mut().fill(0.0);
        let x = Tensor::from_fn([1, 4, 8, 8], |i| (i as f64).sin());
        assert_eq!(net.evaluate(&params, &x).unwrap(), x);
    }

    #[test]
    fn skip_gain_scales_the_carried_input() {
        let mut params = ParamSet::new();
        let net = SeNet::new(
            SeNetConfig::new(4, 4),
            &mut params,
            "n",
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        net.zero_head(&mut params);
        net.set_skip_gain(&mut params, 0.5);
        let x = Tensor::from_fn([1, 4, 8, 8], |i| (i as f64).cos());
        let half = Tensor::from_fn([1, 4, 8, 8], |i| 0.5 * (i as f64).cos());
        assert_eq!(net.evaluate(&params, &x).unwrap(), half);

        let mut params = ParamSet::new();
        let net = SeNet::new(
            SeNetConfig::new(4, 2),
            &mut params,
            "n",
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert!(!net.has_residual());
        assert!(params.find("n.skip.weight").is_none());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = SeNetConfig::new(8, 8);
        assert!(cfg.validate().is_ok());
        cfg.depth = 0;
        assert!(cfg.validate().is_err());
        let cfg = SeNetConfig {
            base_width: 4,
            reduction_ratio: 8,
            ..SeNetConfig::new(8, 8)
        };
        assert!(cfg.validate().is_err());
    }
}
