use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::reparam::{Mode, Reparameterize};
use crate::tensor::{Shape, Tensor};

/// Deviation between two models' raw head outputs over random inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equivalence {
    pub trials: usize,
    /// Largest absolute difference of any head element over all trials.
    pub max_dev: f32,
    /// Mean over trials of the per-trial maximum deviation.
    pub mean_dev: f64,
}

impl Equivalence {
    pub fn within(&self, tolerance: f32) -> bool {
        self.max_dev <= tolerance
    }
}

/// One seeded uniform `[0, 1)` image batch of shape `(1, 3, size, size)`.
pub fn random_input(size: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let shape = Shape::new(1, 3, size, size);
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(0.0..1.0)).collect())
}

/// Runs both models on `trials` seeded random inputs and measures how far
/// their head outputs drift apart. `a` must be train mode and `b` deployed.
pub fn compare_modes(a: &Model, b: &Model, trials: usize, seed: u64) -> Result<Equivalence> {
    if a.mode() != Mode::Train || b.mode() != Mode::Deployed {
        return Err(Error::State(format!(
            "expected a train and a deployed model, got {} and {}",
            a.mode().as_str(),
            b.mode().as_str()
        )));
    }
    if a.config() != b.config() {
        return Err(Error::Precondition("models were built from different configs".into()));
    }
    if trials == 0 {
        return Err(Error::Precondition("need at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_dev = 0.0f32;
    let mut sum = 0.0f64;
    for _ in 0..trials {
        let x = random_input(a.config().input_size, &mut rng)?;
        let (a4, a5) = a.forward(&x)?;
        let (b4, b5) = b.forward(&x)?;
        let d = a4.tensor.max_abs_diff(&b4.tensor)?.max(a5.tensor.max_abs_diff(&b5.tensor)?);
        max_dev = max_dev.max(d);
        sum += f64::from(d);
    }
    Ok(Equivalence {
        trials,
        max_dev,
        mean_dev: sum / trials as f64,
    })
}

/// Fuses `train` and compares the two.
pub fn verify_fusion(train: &Model, trials: usize, seed: u64) -> Result<Equivalence> {
    compare_modes(train, &train.to_deployed()?, trials, seed)
}
