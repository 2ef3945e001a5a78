//! The four training objectives: vanilla cross-entropy, weight decay,
//! adversarial training, and spectral norm regularization. Each is a
//! gradient transformer over the plain batch [`GradientBundle`]; biases
//! are never regularized by any method.

use std::collections::BTreeMap;

use rand::Rng;

use crate::linalg::{self, PowerIterState};
use crate::nn::{matrix_to_kernel, ConvGeom, GradientBundle, LayerSpec, Network};
use crate::{Error, Result};

/// Which objective to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    Vanilla,
    Decay,
    Adversarial,
    Spectral,
}

impl RegKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegKind::Vanilla => "vanilla",
            RegKind::Decay => "decay",
            RegKind::Adversarial => "adversarial",
            RegKind::Spectral => "spectral",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(RegKind::Vanilla),
            "decay" => Ok(RegKind::Decay),
            "adversarial" => Ok(RegKind::Adversarial),
            "spectral" => Ok(RegKind::Spectral),
            other => Err(Error::Config(format!("unknown regularizer kind '{other}'"))),
        }
    }
}

/// Objective hyperparameters: lambda for decay/spectral, alpha and epsilon
/// for adversarial, power_iters for spectral (default 1, warm-started).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerConfig {
    pub kind: RegKind,
    pub lambda: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub power_iters: usize,
}

impl RegularizerConfig {
    pub fn vanilla() -> Self {
        Self {
            kind: RegKind::Vanilla,
            lambda: 0.0,
            alpha: 0.5,
            epsilon: 1.0,
            power_iters: 1,
        }
    }

    pub fn decay(lambda: f64) -> Self {
        Self {
            kind: RegKind::Decay,
            lambda,
            ..Self::vanilla()
        }
    }

    pub fn adversarial(alpha: f64, epsilon: f64) -> Self {
        Self {
            kind: RegKind::Adversarial,
            alpha,
            epsilon,
            ..Self::vanilla()
        }
    }

    pub fn spectral(lambda: f64, power_iters: usize) -> Self {
        Self {
            kind: RegKind::Spectral,
            lambda,
            power_iters,
            ..Self::vanilla()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config("alpha must be in [0, 1]".into()));
        }
        if self.epsilon < 0.0 {
            return Err(Error::Config("epsilon must be >= 0".into()));
        }
        if self.power_iters == 0 {
            return Err(Error::Config("power_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Warm-started power-iteration state per regularized weight matrix,
/// keyed by parameter name. BTreeMap keeps iteration order stable.
pub type SpectralStates = BTreeMap<String, PowerIterState>;

/// One state per dense weight and matricized conv kernel, with Gaussian
/// start vectors drawn from `rng`.
pub fn init_spectral_states<R: Rng>(net: &Network, rng: &mut R) -> SpectralStates {
    let mut states = SpectralStates::new();
    for (idx, m) in net.weight_matrices() {
        let name = net.params()[idx].name.clone();
        states.insert(name, PowerIterState::init(m.rows(), m.cols(), rng));
    }
    states
}

/// Adds lambda * W to each weight-matrix gradient. Returns the penalty
/// value (lambda/2) * sum ||W||_F^2.
pub fn apply_weight_decay(bundle: &mut GradientBundle, net: &Network, lambda: f64) -> f64 {
    let mut penalty = 0.0;
    for (idx, _) in net.weight_matrices() {
        let w = &net.params()[idx].data;
        penalty += w.iter().map(|x| x * x).sum::<f64>();
        if lambda != 0.0 {
            for (g, wv) in bundle.param_grads[idx].data.iter_mut().zip(w) {
                *g += lambda * wv;
            }
        }
    }
    lambda / 2.0 * penalty
}

/// Runs warm-started power iteration on every regularized matrix and adds
/// lambda * sigma * u v^T to its gradient (mapped back through the kernel
/// matricization for conv layers). Returns the penalty estimate
/// (lambda/2) * sum sigma^2.
pub fn apply_spectral(
    bundle: &mut GradientBundle,
    net: &Network,
    lambda: f64,
    states: &mut SpectralStates,
    power_iters: usize,
) -> Result<f64> {
    let mut penalty = 0.0;
    let mats = net.weight_matrices();
    let layer_geoms = conv_geoms_by_param(net);
    for (idx, m) in mats {
        let name = &net.params()[idx].name;
        let state = states
            .get_mut(name)
            .ok_or_else(|| Error::MissingState(name.clone()))?;
        let (sigma, new_state) = linalg::spectral_norm(&m, power_iters, state)?;
        *state = new_state;
        penalty += sigma * sigma;
        if lambda != 0.0 && sigma > 0.0 {
            let grad = linalg::spectral_sq_grad(&m, state)?;
            let grad_flat = match layer_geoms.get(&idx) {
                Some(g) => matrix_to_kernel(g, &grad),
                None => grad.data().to_vec(),
            };
            for (gv, add) in bundle.param_grads[idx].data.iter_mut().zip(&grad_flat) {
                *gv += lambda * add;
            }
        }
    }
    Ok(lambda / 2.0 * penalty)
}

fn conv_geoms_by_param(net: &Network) -> BTreeMap<usize, ConvGeom> {
    let mut geoms = BTreeMap::new();
    let mut widx_iter = net.weight_matrices().into_iter();
    for layer in net.layers() {
        match layer {
            LayerSpec::Dense { .. } => {
                widx_iter.next();
            }
            LayerSpec::Conv2d(g) => {
                if let Some((idx, _)) = widx_iter.next() {
                    geoms.insert(idx, *g);
                }
            }
            _ => {}
        }
    }
    geoms
}

/// A perturbed batch plus which samples had zero gradient and were left
/// untouched.
pub struct AdversarialBatch {
    pub inputs: Vec<Vec<f64>>,
    pub zero_grad_samples: Vec<usize>,
}

/// Fast-gradient perturbation: x_i + epsilon * g_i / ||g_i||_2 with g_i
/// the per-sample input-loss gradient at the current parameters.
pub fn adversarial_batch(
    net: &Network,
    inputs: &[&[f64]],
    labels: &[usize],
    epsilon: f64,
) -> Result<AdversarialBatch> {
    if epsilon < 0.0 {
        return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
    }
    let grads = crate::parallel::map_indexed(inputs.len(), |i| {
        net.input_gradient(inputs[i], labels[i]).map(|(_, g)| g)
    });
    let mut out = Vec::with_capacity(inputs.len());
    let mut zero_grad_samples = Vec::new();
    for (i, g) in grads.into_iter().enumerate() {
        let g = g?;
        let norm = linalg::norm2(&g);
        if norm == 0.0 {
            zero_grad_samples.push(i);
            out.push(inputs[i].to_vec());
        } else {
            out.push(
                inputs[i]
                    .iter()
                    .zip(&g)
                    .map(|(x, gv)| x + epsilon * gv / norm)
                    .collect(),
            );
        }
    }
    Ok(AdversarialBatch {
        inputs: out,
        zero_grad_samples,
    })
}

/// Dispatches the configured objective: returns the gradient bundle, the
/// reported regularization penalty, and (for spectral) advances the
/// warm-started states in place.
pub fn objective_grad(
    net: &Network,
    inputs: &[&[f64]],
    labels: &[usize],
    config: &RegularizerConfig,
    states: &mut SpectralStates,
) -> Result<(GradientBundle, f64)> {
    config.validate()?;
    match config.kind {
        RegKind::Vanilla => {
            let bundle = net.loss_and_grad(inputs, labels)?;
            Ok((bundle, 0.0))
        }
        RegKind::Decay => {
            let mut bundle = net.loss_and_grad(inputs, labels)?;
            let penalty = apply_weight_decay(&mut bundle, net, config.lambda);
            Ok((bundle, penalty))
        }
        RegKind::Spectral => {
            let mut bundle = net.loss_and_grad(inputs, labels)?;
            let penalty = apply_spectral(&mut bundle, net, config.lambda, states, config.power_iters)?;
            Ok((bundle, penalty))
        }
        RegKind::Adversarial => {
            let mut clean = net.loss_and_grad(inputs, labels)?;
            let adv = adversarial_batch(net, inputs, labels, config.epsilon)?;
            let adv_refs: Vec<&[f64]> = adv.inputs.iter().map(|v| v.as_slice()).collect();
            let adv_bundle = net.loss_and_grad(&adv_refs, labels)?;
            clean.mix(config.alpha, &adv_bundle, 1.0 - config.alpha);
            Ok((clean, 0.0))
        }
    }
}
