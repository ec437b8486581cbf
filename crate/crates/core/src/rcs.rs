//! RCS units (split, RepVGG on one half, concat, shuffle) and the RCS-OSA
//! aggregation module built from a stack of them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::reparam::{init_conv, Mode, RepVggBlock, Reparameterize};
use crate::tensor::{self, ConvParams, Tensor};

/// Channel groups used by the shuffle that closes every RCS unit.
pub const RCS_SHUFFLE_GROUPS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RcsUnit {
    block: RepVggBlock,
}

impl RcsUnit {
    pub fn new(block: RepVggBlock) -> Result<Self> {
        if block.c_in() != block.c_out() || block.stride() != 1 {
            return Err(Error::Precondition(format!(
                "RCS block must be width-preserving at stride 1 (got {} -> {}, stride {})",
                block.c_in(),
                block.c_out(),
                block.stride()
            )));
        }
        Ok(RcsUnit { block })
    }

    /// Random train-mode unit over `channels` (even) channels.
    pub fn init<R: Rng + ?Sized>(channels: usize, eps: f32, rng: &mut R) -> Result<Self> {
        if channels % 2 != 0 {
            return Err(Error::Precondition(format!("RCS unit needs even channels, got {channels}")));
        }
        Self::new(RepVggBlock::init(channels / 2, channels / 2, 1, eps, rng)?)
    }

    pub fn block(&self) -> &RepVggBlock {
        &self.block
    }

    pub(crate) fn block_mut(&mut self) -> &mut RepVggBlock {
        &mut self.block
    }

    pub fn channels(&self) -> usize {
        2 * self.block.c_in()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (a, b) = tensor::channel_split(x)?;
        if a.shape().c != self.block.c_in() {
            return Err(Error::Shape(format!(
                "RCS unit expects {} channels, got {}",
                self.channels(),
                x.shape().c
            )));
        }
        let processed = self.block.forward(&a)?;
        tensor::channel_shuffle(&tensor::concat_channels(&processed, &b)?, RCS_SHUFFLE_GROUPS)
    }

    pub fn calibrate(&mut self, x: &Tensor) -> Result<Tensor> {
        let (a, b) = tensor::channel_split(x)?;
        let processed = self.block.calibrate(&a)?;
        tensor::channel_shuffle(&tensor::concat_channels(&processed, &b)?, RCS_SHUFFLE_GROUPS)
    }
}

impl Reparameterize for RcsUnit {
    fn mode(&self) -> Mode {
        self.block.mode()
    }

    fn to_deployed(&self) -> Result<Self> {
        Ok(RcsUnit {
            block: self.block.to_deployed()?,
        })
    }

    fn param_count(&self) -> usize {
        self.block.param_count()
    }
}

/// `n` stacked RCS units whose input, midpoint and final outputs are
/// concatenated once and squeezed back to `c` channels by a 1×1 conv.
#[derive(Debug, Clone, PartialEq)]
pub struct RcsOsa {
    channels: usize,
    units: Vec<RcsUnit>,
    aggregate: ConvParams,
}

/// The 1-based index of the unit whose output forms the middle tap.
pub fn midpoint_tap(n: usize) -> usize {
    (n / 2).max(1)
}

impl RcsOsa {
    pub fn new(units: Vec<RcsUnit>, aggregate: ConvParams) -> Result<Self> {
        let first = units
            .first()
            .ok_or_else(|| Error::config("osa.n", "RCS-OSA needs at least one stacked unit"))?;
        let c = first.channels();
        if units.iter().any(|u| u.channels() != c) {
            return Err(Error::Shape("RCS-OSA units disagree on width".into()));
        }
        if units.iter().any(|u| u.mode() != first.mode()) {
            return Err(Error::State("RCS-OSA units mix train and deployed blocks".into()));
        }
        if aggregate.k != 1 || aggregate.stride != 1 || aggregate.padding != 0 || aggregate.c_in != 3 * c || aggregate.c_out != c {
            return Err(Error::Shape(format!(
                "aggregate conv must be 1x1 {} -> {c}, got {}x{} {} -> {}",
                3 * c,
                aggregate.k,
                aggregate.k,
                aggregate.c_in,
                aggregate.c_out
            )));
        }
        Ok(RcsOsa {
            channels: c,
            units,
            aggregate,
        })
    }

    pub fn init<R: Rng + ?Sized>(channels: usize, n: usize, eps: f32, rng: &mut R) -> Result<Self> {
        if n < 1 {
            return Err(Error::config("osa.n", "RCS-OSA needs at least one stacked unit"));
        }
        let units = (0..n)
            .map(|_| RcsUnit::init(channels, eps, rng))
            .collect::<Result<Vec<_>>>()?;
        let aggregate = init_conv(channels, 3 * channels, 1, 1, 0, rng)?;
        Self::new(units, aggregate)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn depth(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> &[RcsUnit] {
        &self.units
    }

    pub(crate) fn units_mut(&mut self) -> &mut [RcsUnit] {
        &mut self.units
    }

    pub fn aggregate(&self) -> &ConvParams {
        &self.aggregate
    }

    pub(crate) fn aggregate_mut(&mut self) -> &mut ConvParams {
        &mut self.aggregate
    }

    /// Forward pass that also reports the channel width of the one-shot
    /// concat (always `3c`).
    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, usize)> {
        if x.shape().c != self.channels {
            return Err(Error::Shape(format!(
                "RCS-OSA expects {} channels, got {}",
                self.channels,
                x.shape().c
            )));
        }
        let mid = midpoint_tap(self.units.len());
        let mut cur = x.clone();
        let mut mid_out = None;
        for (i, unit) in self.units.iter().enumerate() {
            cur = unit.forward(&cur)?;
            if i + 1 == mid {
                mid_out = Some(cur.clone());
            }
        }
        let mid_out = mid_out.expect("midpoint tap lies within the stack");
        let cat = tensor::concat_channels(&tensor::concat_channels(x, &mid_out)?, &cur)?;
        let width = cat.shape().c;
        let mut y = tensor::conv2d(&cat, &self.aggregate)?;
        tensor::activation_inplace(&mut y);
        Ok((y, width))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(x)?.0)
    }

    /// Calibrates the batch-norm statistics of every unit on `x`.
    pub fn calibrate(&mut self, x: &Tensor) -> Result<Tensor> {
        let mid = midpoint_tap(self.units.len());
        let mut cur = x.clone();
        let mut mid_out = None;
        for (i, unit) in self.units.iter_mut().enumerate() {
            cur = unit.calibrate(&cur)?;
            if i + 1 == mid {
                mid_out = Some(cur.clone());
            }
        }
        let mid_out = mid_out.expect("midpoint tap lies within the stack");
        let cat = tensor::concat_channels(&tensor::concat_channels(x, &mid_out)?, &cur)?;
        let mut y = tensor::conv2d(&cat, &self.aggregate)?;
        tensor::activation_inplace(&mut y);
        Ok(y)
    }
}

impl Reparameterize for RcsOsa {
    fn mode(&self) -> Mode {
        self.units[0].mode()
    }

    fn to_deployed(&self) -> Result<Self> {
        Ok(RcsOsa {
            channels: self.channels,
            units: self.units.iter().map(RcsUnit::to_deployed).collect::<Result<_>>()?,
            aggregate: self.aggregate.clone(),
        })
    }

    fn param_count(&self) -> usize {
        self.units.iter().map(Reparameterize::param_count).sum::<usize>() + self.aggregate.param_count()
    }
}

/// Stride-2 RepVGG downsampling; output spatial size is `ceil(h / 2)`.
pub fn downsample_forward(x: &Tensor, blk: &RepVggBlock) -> Result<Tensor> {
    if blk.stride() != 2 {
        return Err(Error::Precondition(format!(
            "downsample block must have stride 2, got {}",
            blk.stride()
        )));
    }
    if blk.has_identity() {
        return Err(Error::Precondition("downsample block cannot carry an identity branch".into()));
    }
    blk.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reparam::{ConvBn, RepVggState};
    use crate::tensor::{BnParams, Shape, BN_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_input(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn zero_unit(half: usize) -> RcsUnit {
        let zero = |k| ConvBn {
            conv: ConvParams::zeros(half, half, k, 1, k / 2).unwrap(),
            bn: BnParams::identity(half),
        };
        RcsUnit::new(RepVggBlock::train(zero(3), zero(1), Some(BnParams::identity(half))).unwrap()).unwrap()
    }

    #[test]
    fn zero_unit_passes_halves_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let x = rand_input(Shape::new(1, 4, 3, 3), &mut rng);
        let y = zero_unit(2).forward(&x).unwrap();
        let (a, b) = tensor::channel_split(&x).unwrap();
        let expected = tensor::channel_shuffle(
            &tensor::concat_channels(&tensor::activation(&a), &b).unwrap(),
            2,
        )
        .unwrap();
        assert_eq!(y, expected);
        // untouched half lands on the odd output channels verbatim
        for c in 0..2 {
            assert_eq!(y.channel(0, 2 * c + 1), b.channel(0, c));
        }
    }

    #[test]
    fn unit_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let unit = RcsUnit::init(64, BN_EPS, &mut rng).unwrap();
        let x = rand_input(Shape::new(1, 64, 32, 32), &mut rng);
        assert_eq!(unit.forward(&x).unwrap().shape(), x.shape());
        let odd = Tensor::zeros(Shape::new(1, 63, 2, 2)).unwrap();
        assert!(matches!(unit.forward(&odd), Err(Error::Precondition(_))));
        assert!(matches!(RcsUnit::init(7, BN_EPS, &mut rng), Err(Error::Precondition(_))));
    }

    #[test]
    fn unit_train_and_deployed_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..5 {
            let unit = RcsUnit::init(16, BN_EPS, &mut rng).unwrap();
            let x = rand_input(Shape::new(2, 16, 12, 12), &mut rng);
            let dep = unit.to_deployed().unwrap();
            let d = unit.forward(&x).unwrap().max_abs_diff(&dep.forward(&x).unwrap()).unwrap();
            assert!(d <= 1e-4, "deviation {d}");
            assert_eq!(dep.block().convs().len(), 1);
            assert!(matches!(dep.block().state(), RepVggState::Deployed { .. }));
            assert!(dep.param_count() < unit.param_count());
            assert!(matches!(dep.to_deployed(), Err(Error::State(_))));
        }
    }

    #[test]
    fn osa_shape_and_concat_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let osa = RcsOsa::init(128, 4, BN_EPS, &mut rng).unwrap();
        let x = rand_input(Shape::new(1, 128, 20, 20), &mut rng);
        let (y, width) = osa.forward_traced(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(width, 3 * 128);
        for n in [1, 2, 3, 6] {
            let osa = RcsOsa::init(8, n, BN_EPS, &mut rng).unwrap();
            let x = rand_input(Shape::new(1, 8, 5, 5), &mut rng);
            assert_eq!(osa.forward_traced(&x).unwrap().1, 24);
        }
        assert!(matches!(RcsOsa::init(8, 0, BN_EPS, &mut rng), Err(Error::Config { .. })));
    }

    #[test]
    fn osa_single_unit_duplicates_final_tap() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let osa = RcsOsa::init(4, 1, BN_EPS, &mut rng).unwrap();
        let x = rand_input(Shape::new(1, 4, 3, 3), &mut rng);
        let u = osa.units()[0].forward(&x).unwrap();
        let cat = tensor::concat_channels(&tensor::concat_channels(&x, &u).unwrap(), &u).unwrap();
        let expected = tensor::activation(&tensor::conv2d(&cat, osa.aggregate()).unwrap());
        assert_eq!(osa.forward(&x).unwrap(), expected);
    }

    #[test]
    fn osa_midpoint_indices() {
        assert_eq!(midpoint_tap(1), 1);
        assert_eq!(midpoint_tap(2), 1);
        assert_eq!(midpoint_tap(3), 1);
        assert_eq!(midpoint_tap(4), 2);
        assert_eq!(midpoint_tap(6), 3);
    }

    #[test]
    fn osa_train_and_deployed_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for n in [1, 2, 4, 6] {
            let osa = RcsOsa::init(16, n, BN_EPS, &mut rng).unwrap();
            let x = rand_input(Shape::new(2, 16, 10, 10), &mut rng);
            let dep = osa.to_deployed().unwrap();
            let d = osa.forward(&x).unwrap().max_abs_diff(&dep.forward(&x).unwrap()).unwrap();
            assert!(d <= 1e-4, "n={n}: deviation {d}");
            assert!(dep.param_count() < osa.param_count());
        }
    }

    #[test]
    fn downsample_shapes_and_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let blk = RepVggBlock::init(64, 128, 2, BN_EPS, &mut rng).unwrap();
        let x = rand_input(Shape::new(1, 64, 32, 32), &mut rng);
        let y = downsample_forward(&x, &blk).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 128, 16, 16));
        let dep = blk.to_deployed().unwrap();
        assert!(y.max_abs_diff(&downsample_forward(&x, &dep).unwrap()).unwrap() <= 1e-4);

        let odd = rand_input(Shape::new(1, 64, 7, 9), &mut rng);
        assert_eq!(downsample_forward(&odd, &blk).unwrap().shape(), Shape::new(1, 128, 4, 5));

        let flat = RepVggBlock::init(4, 4, 1, BN_EPS, &mut rng).unwrap();
        assert!(matches!(downsample_forward(&odd, &flat), Err(Error::Precondition(_))));
    }

    #[test]
    fn downsample_dirac_subsamples() {
        let c = 2;
        let mut kernel = vec![0.0; c * c * 9];
        for o in 0..c {
            kernel[(o * c + o) * 9 + 4] = 3.0;
        }
        let fused = ConvParams::new(c, c, 3, kernel, vec![0.0; c], 2, 1).unwrap();
        let blk = RepVggBlock::deployed(fused.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let x = rand_input(Shape::new(1, c, 6, 6), &mut rng);
        let y = blk.forward_linear(&x).unwrap();
        for ch in 0..c {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(y.at(0, ch, i, j), 3.0 * x.at(0, ch, 2 * i, 2 * j));
                }
            }
        }
        assert!(downsample_forward(&x, &blk).is_ok());
    }
}
