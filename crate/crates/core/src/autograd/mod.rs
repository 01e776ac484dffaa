//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! take and return [`Var`] handles; [`Tape::backward`] walks the recorded
//! nodes in reverse creation order, so inputs always precede their users and
//! each node is visited once.

mod kernels;

use crate::error::{Error, Result};
use crate::fourier;
use crate::tensor::Tensor;

use kernels::ConvGeometry;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    GlobalAvgPool(Var),
    ChannelScale(Var, Var),
    PointScale(Var, Var),
    AvgPool2(Var),
    Upsample2(Var),
    ConcatChannels(Var, Var),
    Fft2c(Var),
    Ifft2c(Var),
    DataConsistency {
        predicted: Var,
        measured: Var,
        mask: Vec<bool>,
        lambda: f64,
    },
    MeanSquaredError(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.check_same_shape(y, "add")?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.record(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.check_same_shape(y, "sub")?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.record(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.record(out, Op::Scale(a, factor), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.record(out, Op::Sum(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.record(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.record(out, Op::Sigmoid(a), &[a])
    }

    /// Cross-correlation of `[N,Cin,H,W]` with `[Cout,Cin,kh,kw]` plus bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4("conv2d")?;
        let [cout, wcin, kh, kw] = self.value(weight).dims4("conv2d weight")?;
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} must have odd sides"),
            ));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "bias shape {:?} does not match {cout} output channels",
                    self.value(bias).shape()
                ),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "conv2d stride must be positive".into(),
            ));
        }
        let span_h = (h + 2 * padding).checked_sub(kh);
        let span_w = (w + 2 * padding).checked_sub(kw);
        let (out_h, out_w) = match (span_h, span_w) {
            (Some(sh), Some(sw)) if sh % stride == 0 && sw % stride == 0 => (sh / stride + 1, sw / stride + 1),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("input {h}x{w} with padding {padding}, stride {stride} does not tile kernel {kh}x{kw}"),
                ))
            }
        };
        let geometry = ConvGeometry {
            batch: n,
            in_channels: cin,
            out_channels: cout,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h,
            out_w,
        };
        let data = kernels::conv2d_forward(
            &geometry,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let out = Tensor::new([n, cout, out_h, out_w], data)?;
        Ok(self.record(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
            },
            &[input, weight, bias],
        ))
    }

    /// Affine map `[N,Cin] x [Cout,Cin]^T + [Cout]`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, cin] = self.value(input).dims2("fully_connected")?;
        let [cout, wcin] = self.value(weight).dims2("fully_connected weight")?;
        if wcin != cin {
            return Err(Error::shape(
                "fully_connected",
                format!("input has {cin} features but weight expects {wcin}"),
            ));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::shape(
                "fully_connected",
                format!(
                    "bias shape {:?} does not match {cout} outputs",
                    self.value(bias).shape()
                ),
            ));
        }
        let data = kernels::linear_forward(
            n,
            cin,
            cout,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let out = Tensor::new([n, cout], data)?;
        Ok(self.record(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        ))
    }

    /// Spatial mean of each channel: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("global_avg_pool")?;
        let plane = h * w;
        let data = self
            .value(input)
            .data()
            .chunks_exact(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let out = Tensor::new([n, c], data)?;
        Ok(self.record(out, Op::GlobalAvgPool(input), &[input]))
    }

    /// `out[n,c,i,j] = input[n,c,i,j] * weights[n,c]`.
    pub fn channelwise_scale(&mut self, input: Var, weights: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("channelwise_scale")?;
        if self.value(weights).shape() != [n, c] {
            return Err(Error::shape(
                "channelwise_scale",
                format!(
                    "weights {:?} do not match batch/channels [{n}, {c}]",
                    self.value(weights).shape()
                ),
            ));
        }
        let plane = h * w;
        let wts = self.value(weights).data();
        let mut data = self.value(input).data().to_vec();
        for (chunk, &s) in data.chunks_exact_mut(plane).zip(wts) {
            chunk.iter_mut().for_each(|x| *x *= s);
        }
        let out = Tensor::new([n, c, h, w], data)?;
        Ok(self.record(out, Op::ChannelScale(input, weights), &[input, weights]))
    }

    /// `out[n,c,i,j] = input[n,c,i,j] * map[n,0,i,j]`.
    pub fn pointwise_scale(&mut self, input: Var, map: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("pointwise_scale")?;
        if self.value(map).shape() != [n, 1, h, w] {
            return Err(Error::shape(
                "pointwise_scale",
                format!(
                    "map {:?} does not match [{n}, 1, {h}, {w}]",
                    self.value(map).shape()
                ),
            ));
        }
        let plane = h * w;
        let m = self.value(map).data();
        let mut data = self.value(input).data().to_vec();
        for (idx, chunk) in data.chunks_exact_mut(plane).enumerate() {
            let mp = &m[(idx / c) * plane..][..plane];
            chunk.iter_mut().zip(mp).for_each(|(x, s)| *x *= s);
        }
        let out = Tensor::new([n, c, h, w], data)?;
        Ok(self.record(out, Op::PointScale(input, map), &[input, map]))
    }

    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "avg_pool2",
                format!("spatial size {h}x{w} is not even"),
            ));
        }
        let data = kernels::avg_pool2_forward(n * c, h, w, self.value(input).data());
        let out = Tensor::new([n, c, h / 2, w / 2], data)?;
        Ok(self.record(out, Op::AvgPool2(input), &[input]))
    }

    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("upsample2")?;
        let data = kernels::upsample2_forward(n * c, h, w, self.value(input).data());
        let out = Tensor::new([n, c, 2 * h, 2 * w], data)?;
        Ok(self.record(out, Op::Upsample2(input), &[input]))
    }

    /// Stacks `a` then `b` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.value(a).dims4("concat_channels")?;
        let [nb, cb, hb, wb] = self.value(b).dims4("concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut data = Vec::with_capacity(n * (sa + sb));
        for s in 0..n {
            data.extend_from_slice(&self.value(a).data()[s * sa..][..sa]);
            data.extend_from_slice(&self.value(b).data()[s * sb..][..sb]);
        }
        let out = Tensor::new([n, ca + cb, h, w], data)?;
        Ok(self.record(out, Op::ConcatChannels(a, b), &[a, b]))
    }

    /// Centered orthonormal 2D DFT, image to k-space.
    pub fn fft2c(&mut self, x: Var) -> Result<Var> {
        let out = fourier::fft2c(self.value(x))?;
        Ok(self.record(out, Op::Fft2c(x), &[x]))
    }

    /// Centered orthonormal inverse 2D DFT, k-space to image.
    pub fn ifft2c(&mut self, x: Var) -> Result<Var> {
        let out = fourier::ifft2c(self.value(x))?;
        Ok(self.record(out, Op::Ifft2c(x), &[x]))
    }

    /// Blends `predicted` toward `measured` on sampled phase-encode columns:
    /// `(lambda * predicted + measured) / (lambda + 1)` where `mask[col]`,
    /// `predicted` elsewhere.
    pub fn data_consistency(
        &mut self,
        predicted: Var,
        measured: Var,
        mask: &[bool],
        lambda: f64,
    ) -> Result<Var> {
        let (p, m) = (self.value(predicted), self.value(measured));
        p.check_same_shape(m, "data_consistency")?;
        let [_, _, _, w] = p.dims4("data_consistency")?;
        if mask.len() != w {
            return Err(Error::shape(
                "data_consistency",
                format!("mask has {} lines but k-space width is {w}", mask.len()),
            ));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        let denom = lambda + 1.0;
        let data = p
            .data()
            .iter()
            .zip(m.data())
            .enumerate()
            .map(|(i, (&kp, &ks))| {
                if mask[i % w] {
                    (lambda * kp + ks) / denom
                } else {
                    kp
                }
            })
            .collect();
        let out = Tensor::new(p.shape().to_vec(), data)?;
        Ok(self.record(
            out,
            Op::DataConsistency {
                predicted,
                measured,
                mask: mask.to_vec(),
                lambda,
            },
            &[predicted, measured],
        ))
    }

    /// Mean of squared differences, a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        p.check_same_shape(t, "l2_loss")?;
        let n = p.len() as f64;
        let value = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.record(
            Tensor::scalar(value),
            Op::MeanSquaredError(pred, target),
            &[pred, target],
        ))
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        if let Some(g) = grads.iter().flatten().flatten().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient value {g}")));
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, contribution: Vec<f64>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing
                .iter_mut()
                .zip(&contribution)
                .for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|x| -x).collect());
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.iter().map(|x| x * f).collect()),
            Op::Sum(a) => self.accumulate(grads, *a, vec![g[0]; self.value(*a).len()]),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let gi = x
                    .iter()
                    .zip(g)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, gi);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let gi = y.iter().zip(g).map(|(&y, &g)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, gi);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
            } => {
                let need_input = self.requires_grad(*input);
                let need_params = self.requires_grad(*weight) || self.requires_grad(*bias);
                let (gi, gw, gb) = kernels::conv2d_backward(
                    geometry,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    need_input,
                    need_params,
                );
                if let Some(gi) = gi {
                    self.accumulate(grads, *input, gi);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *weight, gw);
                }
                if let Some(gb) = gb {
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let [n, cin] = self.value(*input).dims2("fully_connected")?;
                let cout = self.value(*bias).len();
                let (gi, gw, gb) = kernels::linear_backward(
                    n,
                    cin,
                    cout,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                );
                self.accumulate(grads, *input, gi);
                self.accumulate(grads, *weight, gw);
                self.accumulate(grads, *bias, gb);
            }
            Op::GlobalAvgPool(a) => {
                let [_, _, h, w] = self.value(*a).dims4("global_avg_pool")?;
                let plane = h * w;
                let inv = 1.0 / plane as f64;
                let gi = g
                    .iter()
                    .flat_map(|&x| std::iter::repeat(x * inv).take(plane))
                    .collect();
                self.accumulate(grads, *a, gi);
            }
            Op::ChannelScale(x, wts) => {
                let [_, _, h, w] = self.value(*x).dims4("channelwise_scale")?;
                let plane = h * w;
                let xd = self.value(*x).data();
                let wd = self.value(*wts).data();
                let mut gx = g.to_vec();
                let mut gw = vec![0.0; wd.len()];
                for (k, (gchunk, xchunk)) in gx
                    .chunks_exact_mut(plane)
                    .zip(xd.chunks_exact(plane))
                    .enumerate()
                {
                    gw[k] = gchunk.iter().zip(xchunk).map(|(a, b)| a * b).sum();
                    gchunk.iter_mut().for_each(|v| *v *= wd[k]);
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *wts, gw);
            }
            Op::PointScale(x, map) => {
                let [_, c, h, w] = self.value(*x).dims4("pointwise_scale")?;
                let plane = h * w;
                let xd = self.value(*x).data();
                let md = self.value(*map).data();
                let mut gx = g.to_vec();
                let mut gm = vec![0.0; md.len()];
                for (k, (gchunk, xchunk)) in gx
                    .chunks_exact_mut(plane)
                    .zip(xd.chunks_exact(plane))
                    .enumerate()
                {
                    let base = (k / c) * plane;
                    for p in 0..plane {
                        gm[base + p] += gchunk[p] * xchunk[p];
                        gchunk[p] *= md[base + p];
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *map, gm);
            }
            Op::AvgPool2(a) => {
                let [n, c, h, w] = self.value(*a).dims4("avg_pool2")?;
                self.accumulate(grads, *a, kernels::avg_pool2_backward(n * c, h, w, g));
            }
            Op::Upsample2(a) => {
                let [n, c, h, w] = self.value(*a).dims4("upsample2")?;
                self.accumulate(grads, *a, kernels::upsample2_backward(n * c, h, w, g));
            }
            Op::ConcatChannels(a, b) => {
                let [n, ca, h, w] = self.value(*a).dims4("concat_channels")?;
                let cb = self.value(*b).shape()[1];
                let (sa, sb) = (ca * h * w, cb * h * w);
                let mut ga = Vec::with_capacity(n * sa);
                let mut gb = Vec::with_capacity(n * sb);
                for s in 0..n {
                    let chunk = &g[s * (sa + sb)..][..sa + sb];
                    ga.extend_from_slice(&chunk[..sa]);
                    gb.extend_from_slice(&chunk[sa..]);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Fft2c(x) => {
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                self.accumulate(grads, *x, fourier::ifft2c(&gt)?.into_data());
            }
            Op::Ifft2c(x) => {
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                self.accumulate(grads, *x, fourier::fft2c(&gt)?.into_data());
            }
            Op::DataConsistency {
                predicted,
                measured,
                mask,
                lambda,
            } => {
                let w = mask.len();
                let denom = lambda + 1.0;
                let gp = g
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| if mask[i % w] { x * lambda / denom } else { x })
                    .collect();
                self.accumulate(grads, *predicted, gp);
                if self.requires_grad(*measured) {
                    let gm = g
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| if mask[i % w] { x / denom } else { 0.0 })
                        .collect();
                    self.accumulate(grads, *measured, gm);
                }
            }
            Op::MeanSquaredError(p, t) => {
                let pd = self.value(*p).data();
                let td = self.value(*t).data();
                let factor = 2.0 * g[0] / pd.len() as f64;
                let diff: Vec<f64> = pd.iter().zip(td).map(|(a, b)| factor * (a - b)).collect();
                if self.requires_grad(*t) {
                    self.accumulate(grads, *t, diff.iter().map(|x| -x).collect());
                }
                self.accumulate(grads, *p, diff);
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
