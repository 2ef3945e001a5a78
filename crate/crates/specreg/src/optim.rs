//! Nesterov-momentum SGD with the three-plateau learning-rate schedule
//! and the epoch-level training loop. Runs are fully deterministic given
//! (seed, config, dataset): each epoch shuffles with its own stream
//! derived from (seed, epoch), and all gradient reductions are
//! fixed-order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::analyze::{self, MetricsRecord};
use crate::data::{self, Dataset};
use crate::linalg::svd_exact;
use crate::nn::{GradientBundle, Network};
use crate::regularize::{self, RegularizerConfig, SpectralStates};
use crate::{Error, Result};

/// Flip/crop augmentation applied online to each training minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentConfig {
    pub flip: bool,
    pub crop_pad: usize,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub regularizer: RegularizerConfig,
    pub seed: u64,
    pub eval_every: usize,
    pub augment: Option<AugmentConfig>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Config("base_lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        self.regularizer.validate()
    }
}

/// Optimizer state: Nesterov velocity per parameter plus step/epoch
/// counters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub velocity: Vec<Vec<f64>>,
    pub step_count: u64,
    pub epoch: usize,
}

impl OptState {
    pub fn new(net: &Network) -> Self {
        Self {
            velocity: net.params().iter().map(|p| vec![0.0; p.data.len()]).collect(),
            step_count: 0,
            epoch: 0,
        }
    }
}

/// Learning rate at `epoch`: base for the first half of training, base/10
/// until three quarters, base/100 after. Boundaries are floor(epochs/2)
/// and floor(3*epochs/4); with fewer than 4 epochs the schedule
/// degenerates accordingly.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} out of range for {} epochs",
            config.epochs
        )));
    }
    let half = config.epochs / 2;
    let three_quarters = 3 * config.epochs / 4;
    Ok(if epoch < half {
        config.base_lr
    } else if epoch < three_quarters {
        config.base_lr / 10.0
    } else {
        config.base_lr / 100.0
    })
}

/// Core Nesterov update on one flat parameter slice:
/// v <- momentum*v - lr*g, theta <- theta + momentum*v - lr*g.
pub fn nesterov_update(theta: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
    for ((t, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * g;
        *t += momentum * *v - lr * g;
    }
}

/// Applies one Nesterov step over every parameter of the network.
pub fn nesterov_step(
    net: &mut Network,
    grads: &GradientBundle,
    state: &mut OptState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    for t in &grads.param_grads {
        if let Some(bad) = t.data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {bad} at step {}",
                state.step_count
            )));
        }
    }
    for ((param, vel), grad) in net
        .params_mut()
        .iter_mut()
        .zip(state.velocity.iter_mut())
        .zip(&grads.param_grads)
    {
        nesterov_update(&mut param.data, vel, &grad.data, lr, momentum);
    }
    state.step_count += 1;
    Ok(())
}

/// Shuffled visit order for one epoch; its own stream derived from
/// (seed, epoch) so reproducibility is independent of evaluation cadence.
pub fn epoch_indices(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(splitmix64(
        seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    ));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mutable training state carried across epochs (and checkpoints).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub opt: OptState,
    pub spectral: SpectralStates,
}

impl TrainerState {
    /// Fresh state; spectral power-iteration vectors are drawn from a
    /// stream derived from the run seed.
    pub fn new(net: &Network, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(splitmix64(seed ^ 0x5350_4543_5452_414c));
        Self {
            opt: OptState::new(net),
            spectral: regularize::init_spectral_states(net, &mut rng),
        }
    }
}

/// Called after every completed epoch; `record` is present on evaluation
/// epochs. Returning `ControlFlow::Break(())` stops training cleanly
/// (used to interrupt runs for the resume harness).
pub type EpochHook<'a> = &'a mut dyn FnMut(
    usize,
    &Network,
    &TrainerState,
    Option<&MetricsRecord>,
) -> Result<std::ops::ControlFlow<()>>;

/// Runs the training loop from `state.opt.epoch` to `config.epochs`,
/// mutating the network and state in place. Returns the metrics emitted
/// during this call.
pub fn run_training(
    net: &mut Network,
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
    state: &mut TrainerState,
    mut hook: Option<EpochHook<'_>>,
) -> Result<Vec<MetricsRecord>> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut metrics = Vec::new();
    let n = train.len();

    let start_epoch = state.opt.epoch;
    for epoch in start_epoch..config.epochs {
        let lr = lr_at(config, epoch)?;
        let order = epoch_indices(config.seed, epoch, n);
        let mut aug_rng = ChaCha20Rng::seed_from_u64(splitmix64(
            config.seed ^ 0x4155_474d_454e_54u64 ^ (epoch as u64).wrapping_mul(0x1000_0000_1b3),
        ));
        let mut last_penalty = 0.0;
        for batch_idx in order.chunks(config.batch_size) {
            let labels: Vec<usize> = batch_idx.iter().map(|&i| train.labels[i]).collect();
            let (bundle, penalty) = if let Some(aug) = &config.augment {
                let mut images: Vec<Vec<f64>> =
                    batch_idx.iter().map(|&i| train.sample(i).to_vec()).collect();
                data::augment(&mut images, &train.feature_shape, aug.flip, aug.crop_pad, &mut aug_rng)?;
                let refs: Vec<&[f64]> = images.iter().map(|v| v.as_slice()).collect();
                regularize::objective_grad(net, &refs, &labels, &config.regularizer, &mut state.spectral)?
            } else {
                let refs: Vec<&[f64]> = batch_idx.iter().map(|&i| train.sample(i)).collect();
                regularize::objective_grad(net, &refs, &labels, &config.regularizer, &mut state.spectral)?
            };
            if !bundle.loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {epoch}, step {}",
                    state.opt.step_count
                )));
            }
            last_penalty = penalty;
            nesterov_step(net, &bundle, &mut state.opt, lr, config.momentum)?;
        }
        state.opt.epoch = epoch + 1;

        let evaluate = (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs;
        let record = if evaluate {
            let rec = evaluate_epoch(net, train, test, epoch, last_penalty)?;
            metrics.push(rec.clone());
            Some(rec)
        } else {
            None
        };
        if let Some(h) = hook.as_mut() {
            if h(epoch, net, state, record.as_ref())?.is_break() {
                break;
            }
        }
    }
    Ok(metrics)
}

/// One metrics row: split losses/accuracies, mean input-gradient norms,
/// last regularization penalty, and exact per-layer spectral norms.
pub fn evaluate_epoch(
    net: &Network,
    train: &Dataset,
    test: &Dataset,
    epoch: usize,
    penalty: f64,
) -> Result<MetricsRecord> {
    let train_refs = train.sample_refs();
    let test_refs = test.sample_refs();
    let (train_loss, train_acc) = net.evaluate(&train_refs, &train.labels)?;
    let (test_loss, test_acc) = net.evaluate(&test_refs, &test.labels)?;
    let grad_norm_train = analyze::input_grad_norm(net, train)?;
    let grad_norm_test = analyze::input_grad_norm(net, test)?;
    let mut per_layer_sigma = Vec::new();
    for (_, w) in net.weight_matrices() {
        per_layer_sigma.push(svd_exact(&w)?.singular_values[0]);
    }
    Ok(MetricsRecord {
        epoch,
        train_loss,
        test_loss,
        train_acc,
        test_acc,
        grad_norm_train,
        grad_norm_test,
        penalty,
        per_layer_sigma,
    })
}
