//! Measurements on trained models: generalization gap at a threshold,
//! input-gradient sensitivity, Hessian maximum eigenvalue via
//! finite-difference Hessian-vector products, per-layer singular spectra,
//! and the local Lipschitz probe.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::linalg::{self, svd_exact};
use crate::nn::{LayerSpec, Network, Tensor};
use crate::parallel;
use crate::{Error, Result};

/// One evaluation row of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Mean per-sample ||grad_x L||_2 over each split.
    pub grad_norm_train: f64,
    pub grad_norm_test: f64,
    pub penalty: f64,
    pub per_layer_sigma: Vec<f64>,
}

/// Minimum (train_acc - test_acc) over records whose test accuracy
/// exceeds `alpha`; `None` when no record qualifies.
pub fn generalization_gap(metrics: &[MetricsRecord], alpha: f64) -> Option<f64> {
    metrics
        .iter()
        .filter(|r| r.test_acc > alpha)
        .map(|r| r.train_acc - r.test_acc)
        .min_by(|a, b| a.partial_cmp(b).unwrap())
}

/// Mean over the split of the l2-norm of the per-sample input-loss
/// gradient.
pub fn input_grad_norm(net: &Network, split: &Dataset) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = split.len();
    let norms = parallel::map_indexed(n, |i| {
        net.input_gradient(split.sample(i), split.labels[i])
            .map(|(_, g)| linalg::norm2(&g))
    });
    let mut sum = 0.0;
    for v in norms {
        sum += v?;
    }
    Ok(sum / n as f64)
}

/// Dominant-magnitude eigenvalue of the Hessian of `grad_fn`'s underlying
/// scalar, by power iteration on finite-difference Hessian-vector
/// products: H v ~ (g(theta + h v) - g(theta - h v)) / 2h.
///
/// Generic over the gradient oracle so quadratic test problems and real
/// networks share the estimator.
pub fn hvp_max_eig<G>(theta: &[f64], grad_fn: G, iters: usize, fd_step: f64, seed: u64) -> Result<f64>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if iters == 0 {
        return Err(Error::InvalidArgument("iters must be >= 1".into()));
    }
    if fd_step <= 0.0 {
        return Err(Error::InvalidArgument("fd_step must be > 0".into()));
    }
    let dim = theta.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let nv = linalg::norm2(&v);
    for x in &mut v {
        *x /= nv;
    }
    let mut eig = 0.0;
    for _ in 0..iters {
        let plus: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t + fd_step * d).collect();
        let minus: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t - fd_step * d).collect();
        let gp = grad_fn(&plus)?;
        let gm = grad_fn(&minus)?;
        let hv: Vec<f64> = gp
            .iter()
            .zip(&gm)
            .map(|(p, m)| (p - m) / (2.0 * fd_step))
            .collect();
        if hv.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Hessian-vector product".into()));
        }
        // Rayleigh quotient keeps the sign of the dominant eigenvalue.
        eig = linalg::dot(&v, &hv);
        let n = linalg::norm2(&hv);
        if n <= f64::MIN_POSITIVE {
            return Ok(0.0);
        }
        v = hv.into_iter().map(|x| x / n).collect();
    }
    Ok(eig)
}

/// Samples of the split used for Hessian estimation; the subset is a
/// seeded deterministic choice of at most 2048 samples.
pub fn hessian_eval_subset(split: &Dataset, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = split.len().min(2048);
    let mut idx: Vec<usize> = (0..split.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x4845_5353_4941_4eu64);
    // Fisher-Yates prefix draw.
    for i in 0..n {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    idx.truncate(n);
    let labels = idx.iter().map(|&i| split.labels[i]).collect();
    (idx, labels)
}

/// Dominant eigenvalue of the mean-loss Hessian over a fixed evaluation
/// subset of `split`.
pub fn hessian_max_eig(
    net: &Network,
    split: &Dataset,
    iters: usize,
    fd_step: f64,
    seed: u64,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (idx, labels) = hessian_eval_subset(split, seed);
    let inputs: Vec<&[f64]> = idx.iter().map(|&i| split.sample(i)).collect();
    let theta = net.params_flat();
    let grad_fn = |p: &[f64]| -> Result<Vec<f64>> {
        let mut local = net.clone();
        local.set_params_flat(p)?;
        let bundle = local.loss_and_grad(&inputs, &labels)?;
        Ok(bundle.param_grads.iter().flat_map(|t| t.data.clone()).collect())
    };
    hvp_max_eig(&theta, grad_fn, iters, fd_step, seed)
}

/// Default finite-difference step: 1e-4 * (1 + ||theta||_inf).
pub fn default_fd_step(net: &Network) -> f64 {
    let max = net
        .params_flat()
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    1e-4 * (1.0 + max)
}

/// Exact singular values per regularized matrix, keyed by parameter name.
pub fn singular_spectrum(net: &Network) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (idx, m) in net.weight_matrices() {
        let svd = svd_exact(&m)?;
        out.insert(net.params()[idx].name.clone(), svd.singular_values);
    }
    Ok(out)
}

/// Spectrum flatness: sigma_max over the smallest singular value above
/// 1e-12 (or sigma_max itself if all others vanish).
pub fn flatness_ratio(spectrum: &[f64]) -> f64 {
    let max = spectrum.first().copied().unwrap_or(0.0);
    let min = spectrum
        .iter()
        .rev()
        .find(|&&s| s > 1e-12)
        .copied()
        .unwrap_or(max);
    if min == 0.0 {
        return f64::INFINITY;
    }
    max / min
}

/// sigma_max over the median singular value above 1e-12.
pub fn max_over_median_ratio(spectrum: &[f64]) -> f64 {
    let nonzero: Vec<f64> = spectrum.iter().copied().filter(|&s| s > 1e-12).collect();
    if nonzero.is_empty() {
        return 1.0;
    }
    let median = nonzero[nonzero.len() / 2];
    nonzero[0] / median
}

/// Result of the perturbation-ratio probe against the layer-wise product
/// bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzProbe {
    pub empirical_max_ratio: f64,
    pub sigma_product: f64,
}

/// Max over random unit directions of ||f(x+xi) - f(x)|| / ||xi|| with
/// ||xi|| = xi_norm, against the product of layer spectral norms. Defined
/// for pure-dense piecewise-linear nets, where the product bound is exact.
pub fn lipschitz_probe(
    net: &Network,
    x: &Tensor,
    trials: usize,
    xi_norm: f64,
    seed: u64,
) -> Result<LipschitzProbe> {
    if net
        .layers()
        .iter()
        .any(|l| matches!(l, LayerSpec::Conv2d(_)))
    {
        return Err(Error::InvalidArgument(
            "lipschitz_probe is defined for pure-dense networks".into(),
        ));
    }
    if trials == 0 || xi_norm <= 0.0 {
        return Err(Error::InvalidArgument("trials >= 1 and xi_norm > 0 required".into()));
    }
    let (f0, _) = net.forward(x)?;
    let dim = x.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_ratio = 0.0f64;
    for _ in 0..trials {
        let mut xi: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = linalg::norm2(&xi);
        for v in &mut xi {
            *v *= xi_norm / n;
        }
        let xp: Vec<f64> = x.data.iter().zip(&xi).map(|(a, b)| a + b).collect();
        let (f1, _) = net.forward(&Tensor::new(x.shape.clone(), xp)?)?;
        let mut diff = 0.0;
        for (a, b) in f1.data.iter().zip(&f0.data) {
            diff += (a - b) * (a - b);
        }
        max_ratio = max_ratio.max(diff.sqrt() / xi_norm);
    }
    let mut sigma_product = 1.0;
    for (_, w) in net.weight_matrices() {
        sigma_product *= svd_exact(&w)?.singular_values[0];
    }
    Ok(LipschitzProbe {
        empirical_max_ratio: max_ratio,
        sigma_product,
    })
}

/// Spearman rank correlation between two equally long samples.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}
