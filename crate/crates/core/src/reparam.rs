//! Structural reparameterization of three-branch RepVGG blocks.
//!
//! A train-mode block computes `bn(conv3x3(x)) + bn(conv1x1(x)) + bn(x)`
//! (the last term only when input and output widths match at stride 1).
//! Every branch is linear, so the sum collapses into a single 3×3
//! convolution with summed kernels and biases.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, BnParams, ConvParams, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Deployed,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Deployed => "deployed",
        }
    }
}

/// A convolution followed by inference-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn {
    pub conv: ConvParams,
    pub bn: BnParams,
}

/// Smallest running variance written by calibration.
pub const MIN_CALIBRATED_VAR: f32 = 1e-3;

/// Replaces running statistics with the moments of `x`.
pub(crate) fn calibrate_bn(bn: &mut BnParams, x: &Tensor) {
    let (mean, var) = tensor::channel_moments(x);
    bn.mean = mean;
    bn.var = var.into_iter().map(|v| v.max(MIN_CALIBRATED_VAR)).collect();
}

impl ConvBn {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        tensor::batchnorm_infer(&tensor::conv2d(x, &self.conv)?, &self.bn)
    }

    /// Sets the running statistics from `x`, then runs the forward pass.
    pub fn calibrate(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = tensor::conv2d(x, &self.conv)?;
        calibrate_bn(&mut self.bn, &y);
        tensor::batchnorm_infer(&y, &self.bn)
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RepVggState {
    Train {
        dense: ConvBn,
        pointwise: ConvBn,
        identity: Option<BnParams>,
    },
    Deployed {
        fused: ConvParams,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepVggBlock {
    c_in: usize,
    c_out: usize,
    stride: usize,
    state: RepVggState,
}

/// Folds batch norm into the preceding convolution.
pub fn fuse_conv_bn(p: &ConvParams, b: &BnParams) -> Result<ConvParams> {
    p.validate()?;
    b.validate()?;
    if p.c_out != b.channels() {
        return Err(Error::Shape(format!(
            "conv has {} output channels, batch-norm has {}",
            p.c_out,
            b.channels()
        )));
    }
    let scale = b.scale();
    let per_out = p.c_in * p.k * p.k;
    let mut kernel = p.kernel.clone();
    for (o, w) in kernel.chunks_mut(per_out).enumerate() {
        for v in w {
            *v *= scale[o];
        }
    }
    let bias = (0..p.c_out)
        .map(|o| b.beta[o] - b.mean[o] * scale[o] + p.bias[o] * scale[o])
        .collect();
    ConvParams::new(p.c_out, p.c_in, p.k, kernel, bias, p.stride, p.padding)
}

/// Embeds a 1×1 kernel at the center of a 3×3 one; padding grows by one.
pub fn pad_1x1_to_3x3(p: &ConvParams) -> Result<ConvParams> {
    p.validate()?;
    if p.k != 1 {
        return Err(Error::Precondition(format!("expected a 1x1 kernel, got {0}x{0}", p.k)));
    }
    let mut kernel = vec![0.0f32; p.c_out * p.c_in * 9];
    for (dst, &v) in kernel.chunks_mut(9).zip(&p.kernel) {
        dst[4] = v;
    }
    ConvParams::new(p.c_out, p.c_in, 3, kernel, p.bias.clone(), p.stride, p.padding + 1)
}

/// Expresses a batch-normed identity branch as a 3×3 convolution
/// (stride 1, padding 1).
pub fn identity_to_3x3(c: usize, b: &BnParams) -> Result<ConvParams> {
    b.validate()?;
    if b.channels() != c {
        return Err(Error::Precondition(format!(
            "identity branch over {c} channels given {} batch-norm channels",
            b.channels()
        )));
    }
    let scale = b.scale();
    let mut kernel = vec![0.0f32; c * c * 9];
    for o in 0..c {
        kernel[(o * c + o) * 9 + 4] = scale[o];
    }
    let bias = (0..c).map(|o| b.beta[o] - b.mean[o] * scale[o]).collect();
    ConvParams::new(c, c, 3, kernel, bias, 1, 1)
}

fn add_into(acc: &mut ConvParams, other: &ConvParams) {
    for (a, b) in acc.kernel.iter_mut().zip(&other.kernel) {
        *a += b;
    }
    for (a, b) in acc.bias.iter_mut().zip(&other.bias) {
        *a += b;
    }
}

/// Collapses a train-mode block into one 3×3 convolution. Branches are
/// summed in the order 3×3, 1×1, identity.
pub fn fuse_block(blk: &RepVggBlock) -> Result<ConvParams> {
    match &blk.state {
        RepVggState::Deployed { .. } => Err(Error::State("block is already deployed".into())),
        RepVggState::Train {
            dense,
            pointwise,
            identity,
        } => {
            let mut fused = fuse_conv_bn(&dense.conv, &dense.bn)?;
            add_into(&mut fused, &pad_1x1_to_3x3(&fuse_conv_bn(&pointwise.conv, &pointwise.bn)?)?);
            if let Some(bn) = identity {
                add_into(&mut fused, &identity_to_3x3(blk.c_in, bn)?);
            }
            Ok(fused)
        }
    }
}

/// Types holding one or more RepVGG blocks that can be collapsed for
/// inference.
pub trait Reparameterize: Sized {
    fn mode(&self) -> Mode;

    /// Returns the deployed equivalent. Fails with a state error when
    /// already deployed.
    fn to_deployed(&self) -> Result<Self>;

    /// Number of stored reals.
    fn param_count(&self) -> usize;
}

impl RepVggBlock {
    /// Builds a train-mode block. The identity branch must be present exactly
    /// when `c_in == c_out` and the stride is 1.
    pub fn train(dense: ConvBn, pointwise: ConvBn, identity: Option<BnParams>) -> Result<Self> {
        let (c_in, c_out, stride) = (dense.conv.c_in, dense.conv.c_out, dense.conv.stride);
        if dense.conv.k != 3 || dense.conv.padding != 1 {
            return Err(Error::Precondition("dense branch must be 3x3 with padding 1".into()));
        }
        if pointwise.conv.k != 1 || pointwise.conv.padding != 0 {
            return Err(Error::Precondition("pointwise branch must be 1x1 with padding 0".into()));
        }
        if (pointwise.conv.c_in, pointwise.conv.c_out, pointwise.conv.stride) != (c_in, c_out, stride) {
            return Err(Error::Shape("branches disagree on c_in, c_out or stride".into()));
        }
        for (name, branch) in [("dense", &dense), ("pointwise", &pointwise)] {
            if branch.bn.channels() != c_out {
                return Err(Error::Shape(format!(
                    "{name} batch-norm has {} channels, expected {c_out}",
                    branch.bn.channels()
                )));
            }
        }
        let wants_identity = c_in == c_out && stride == 1;
        match &identity {
            Some(_) if !wants_identity => {
                return Err(Error::Precondition(
                    "identity branch only allowed when c_in == c_out and stride == 1".into(),
                ));
            }
            Some(bn) if bn.channels() != c_out => {
                return Err(Error::Shape("identity batch-norm width mismatch".into()));
            }
            None if wants_identity => {
                return Err(Error::Precondition(
                    "identity branch required when c_in == c_out and stride == 1".into(),
                ));
            }
            _ => {}
        }
        Ok(RepVggBlock {
            c_in,
            c_out,
            stride,
            state: RepVggState::Train {
                dense,
                pointwise,
                identity,
            },
        })
    }

    /// Builds a deployed block from an already fused 3×3 kernel.
    pub fn deployed(fused: ConvParams) -> Result<Self> {
        fused.validate()?;
        if fused.k != 3 || fused.padding != 1 {
            return Err(Error::Precondition("fused kernel must be 3x3 with padding 1".into()));
        }
        Ok(RepVggBlock {
            c_in: fused.c_in,
            c_out: fused.c_out,
            stride: fused.stride,
            state: RepVggState::Deployed { fused },
        })
    }

    /// Train-mode block with conv weights and biases drawn from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` and mildly perturbed batch-norm
    /// statistics.
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, stride: usize, eps: f32, rng: &mut R) -> Result<Self> {
        let dense = ConvBn {
            conv: init_conv(c_out, c_in, 3, stride, 1, rng)?,
            bn: init_bn(c_out, eps, rng)?,
        };
        let pointwise = ConvBn {
            conv: init_conv(c_out, c_in, 1, stride, 0, rng)?,
            bn: init_bn(c_out, eps, rng)?,
        };
        let identity = if c_in == c_out && stride == 1 {
            Some(init_bn(c_out, eps, rng)?)
        } else {
            None
        };
        Self::train(dense, pointwise, identity)
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn state(&self) -> &RepVggState {
        &self.state
    }

    pub(crate) fn state_mut(&mut self) -> &mut RepVggState {
        &mut self.state
    }

    pub fn has_identity(&self) -> bool {
        matches!(self.state, RepVggState::Train { identity: Some(_), .. })
    }

    /// Branch sum before the activation.
    pub fn forward_linear(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().c != self.c_in {
            return Err(Error::Shape(format!(
                "block expects {} channels, got {}",
                self.c_in,
                x.shape().c
            )));
        }
        match &self.state {
            RepVggState::Deployed { fused } => tensor::conv2d(x, fused),
            RepVggState::Train {
                dense,
                pointwise,
                identity,
            } => {
                let mut y = dense.forward(x)?.add(&pointwise.forward(x)?)?;
                if let Some(bn) = identity {
                    y = y.add(&tensor::batchnorm_infer(x, bn)?)?;
                }
                Ok(y)
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.forward_linear(x)?;
        tensor::activation_inplace(&mut y);
        Ok(y)
    }

    /// Sets every branch's batch-norm statistics from the batch `x` and
    /// returns the activated output. Train mode only.
    pub fn calibrate(&mut self, x: &Tensor) -> Result<Tensor> {
        let RepVggState::Train {
            dense,
            pointwise,
            identity,
        } = &mut self.state
        else {
            return Err(Error::State("cannot calibrate a deployed block".into()));
        };
        let mut y = dense.calibrate(x)?.add(&pointwise.calibrate(x)?)?;
        if let Some(bn) = identity {
            calibrate_bn(bn, x);
            y = y.add(&tensor::batchnorm_infer(x, bn)?)?;
        }
        tensor::activation_inplace(&mut y);
        Ok(y)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match &self.state {
            RepVggState::Deployed { fused } => fused.output_hw(h, w),
            RepVggState::Train { dense, .. } => dense.conv.output_hw(h, w),
        }
    }

    /// Convolutions this block executes, as `(label, params)`.
    pub fn convs(&self) -> Vec<(&'static str, &ConvParams)> {
        match &self.state {
            RepVggState::Deployed { fused } => vec![("fused", fused)],
            RepVggState::Train { dense, pointwise, .. } => {
                vec![("dense", &dense.conv), ("pointwise", &pointwise.conv)]
            }
        }
    }

    /// Number of distinct branches executed per forward.
    pub fn branch_count(&self) -> usize {
        match &self.state {
            RepVggState::Deployed { .. } => 1,
            RepVggState::Train { identity, .. } => 2 + usize::from(identity.is_some()),
        }
    }
}

impl Reparameterize for RepVggBlock {
    fn mode(&self) -> Mode {
        match self.state {
            RepVggState::Train { .. } => Mode::Train,
            RepVggState::Deployed { .. } => Mode::Deployed,
        }
    }

    fn to_deployed(&self) -> Result<Self> {
        RepVggBlock::deployed(fuse_block(self)?)
    }

    fn param_count(&self) -> usize {
        match &self.state {
            RepVggState::Deployed { fused } => fused.param_count(),
            RepVggState::Train {
                dense,
                pointwise,
                identity,
            } => dense.param_count() + pointwise.param_count() + identity.as_ref().map_or(0, BnParams::param_count),
        }
    }
}

pub(crate) fn init_conv<R: Rng + ?Sized>(
    c_out: usize,
    c_in: usize,
    k: usize,
    stride: usize,
    padding: usize,
    rng: &mut R,
) -> Result<ConvParams> {
    let bound = 1.0 / ((c_in * k * k) as f32).sqrt();
    let kernel = (0..c_out * c_in * k * k).map(|_| rng.gen_range(-bound..=bound)).collect();
    let bias = (0..c_out).map(|_| rng.gen_range(-bound..=bound)).collect();
    ConvParams::new(c_out, c_in, k, kernel, bias, stride, padding)
}

pub(crate) fn init_bn<R: Rng + ?Sized>(c: usize, eps: f32, rng: &mut R) -> Result<BnParams> {
    BnParams::new(
        (0..c).map(|_| rng.gen_range(0.5..1.5)).collect(),
        (0..c).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        (0..c).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        (0..c).map(|_| rng.gen_range(0.5..1.5)).collect(),
        eps,
    )
}
