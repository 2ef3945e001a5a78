//! Feed-forward networks (dense, 2-D convolution, ReLU, flatten) with a
//! fused softmax cross-entropy head and exact reverse-mode gradients with
//! respect to both parameters and inputs.
//!
//! Convolutions are evaluated by explicit patch extraction into a matrix
//! multiply, so the matricized kernel of `kernel_as_matrix` is literally
//! the multiplication matrix, and the spectral penalty applies to it
//! without any translation layer.

pub mod conv;

use rand::Rng;
use rand_distr::StandardNormal;

pub use conv::ConvGeom;

use crate::linalg::Matrix;
use crate::parallel;
use crate::{Error, Result};

/// Samples whose per-sample gradients are held in memory at once during
/// batch accumulation.
const GRAD_CHUNK: usize = 64;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("tensor dims must be positive".into()));
        }
        if data.len() != len {
            return Err(Error::DimMismatch {
                context: "Tensor::new".into(),
                expected: format!("{len} values"),
                actual: format!("{} values", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {bad}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// One layer of the cascade.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Conv2d(ConvGeom),
    Relu,
    Flatten,
}

/// Named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Weight/bias parameter indices for one layer.
#[derive(Debug, Clone, Copy)]
struct LayerParams {
    weight: usize,
    bias: usize,
}

/// Feed-forward network with a flat parameter registry and a softmax
/// cross-entropy loss head.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: Vec<Param>,
    layer_params: Vec<Option<LayerParams>>,
    input_shape: Vec<usize>,
    output_dim: usize,
}

/// Shape flow through the layer list; errors name the offending layer.
fn shape_flow(layers: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input_shape.to_vec()];
    let mut cur = input_shape.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        cur = match layer {
            LayerSpec::Dense { in_dim, out_dim } => {
                let flat: usize = cur.iter().product();
                if flat != *in_dim {
                    return Err(Error::LayerShape {
                        layer: i,
                        message: format!("dense expects {in_dim} inputs, incoming shape {cur:?} has {flat}"),
                    });
                }
                vec![*out_dim]
            }
            LayerSpec::Conv2d(g) => {
                let want = vec![g.in_channels, g.in_h, g.in_w];
                if cur != want {
                    return Err(Error::LayerShape {
                        layer: i,
                        message: format!("conv expects shape {want:?}, got {cur:?}"),
                    });
                }
                if g.in_h + 2 * g.padding < g.k_h || g.in_w + 2 * g.padding < g.k_w {
                    return Err(Error::LayerShape {
                        layer: i,
                        message: "kernel larger than padded input".into(),
                    });
                }
                vec![g.out_channels, g.out_h(), g.out_w()]
            }
            LayerSpec::Relu => cur,
            LayerSpec::Flatten => vec![cur.iter().product()],
        };
        shapes.push(cur.clone());
    }
    Ok(shapes)
}

impl Network {
    /// Builds a network with He-initialized weights and zero biases.
    pub fn new<R: Rng>(layers: Vec<LayerSpec>, input_shape: Vec<usize>, rng: &mut R) -> Result<Self> {
        let shapes = shape_flow(&layers, &input_shape)?;
        let out_shape = shapes.last().unwrap();
        if out_shape.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "network must end with a flat logit vector, got shape {out_shape:?}"
            )));
        }
        let output_dim = out_shape[0];

        let mut params = Vec::new();
        let mut layer_params = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let std = (2.0 / *in_dim as f64).sqrt();
                    let w: Vec<f64> = (0..out_dim * in_dim)
                        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let wi = params.len();
                    params.push(Param {
                        name: format!("dense{i}.w"),
                        shape: vec![*out_dim, *in_dim],
                        data: w,
                    });
                    params.push(Param {
                        name: format!("dense{i}.b"),
                        shape: vec![*out_dim],
                        data: vec![0.0; *out_dim],
                    });
                    layer_params.push(Some(LayerParams { weight: wi, bias: wi + 1 }));
                }
                LayerSpec::Conv2d(g) => {
                    let fan_in = g.patch_len();
                    let std = (2.0 / fan_in as f64).sqrt();
                    let w: Vec<f64> = (0..g.out_channels * fan_in)
                        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let wi = params.len();
                    params.push(Param {
                        name: format!("conv{i}.w"),
                        shape: vec![g.out_channels, g.in_channels, g.k_h, g.k_w],
                        data: w,
                    });
                    params.push(Param {
                        name: format!("conv{i}.b"),
                        shape: vec![g.out_channels],
                        data: vec![0.0; g.out_channels],
                    });
                    layer_params.push(Some(LayerParams { weight: wi, bias: wi + 1 }));
                }
                LayerSpec::Relu | LayerSpec::Flatten => layer_params.push(None),
            }
        }
        Ok(Self {
            layers,
            params,
            layer_params,
            input_shape,
            output_dim,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// All parameters concatenated in registry order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in &self.params {
            out.extend_from_slice(&p.data);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimMismatch {
                context: "set_params_flat".into(),
                expected: format!("{} values", self.num_params()),
                actual: format!("{} values", flat.len()),
            });
        }
        let mut off = 0;
        for p in &mut self.params {
            let len = p.data.len();
            p.data.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }

    /// The matrices the spectral penalty acts on: dense weights as-is and conv
    /// kernels matricized to out_channels x (in_channels*k_h*k_w).
    /// Returned as (param index, matrix) in layer order; biases excluded.
    pub fn weight_matrices(&self) -> Vec<(usize, Matrix)> {
        let mut out = Vec::new();
        for (layer, lp) in self.layers.iter().zip(&self.layer_params) {
            let Some(lp) = lp else { continue };
            let p = &self.params[lp.weight];
            match layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    out.push((
                        lp.weight,
                        Matrix::new(*out_dim, *in_dim, p.data.clone()).expect("registry invariant"),
                    ));
                }
                LayerSpec::Conv2d(g) => {
                    out.push((lp.weight, kernel_as_matrix(g, &p.data)));
                }
                _ => {}
            }
        }
        out
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::LayerShape {
                layer: 0,
                message: format!("input has {len} values, network expects {}", self.input_dim()),
            });
        }
        Ok(())
    }

    /// Forward pass for one sample; returns logits and the activation
    /// record needed by the backward pass. Deterministic given (net, x).
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        self.check_input(x.len())?;
        let (logits, cache) = self.forward_sample(&x.data);
        Ok((Tensor::new(vec![self.output_dim], logits)?, cache))
    }

    fn forward_sample(&self, x: &[f64]) -> (Vec<f64>, Cache) {
        let mut cur = x.to_vec();
        let mut acts = Vec::with_capacity(self.layers.len());
        for (layer, lp) in self.layers.iter().zip(&self.layer_params) {
            match layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let lp = lp.unwrap();
                    let w = &self.params[lp.weight].data;
                    let b = &self.params[lp.bias].data;
                    let mut out = vec![0.0; *out_dim];
                    for r in 0..*out_dim {
                        let row = &w[r * in_dim..(r + 1) * in_dim];
                        let mut acc = b[r];
                        for (a, xv) in row.iter().zip(&cur) {
                            acc += a * xv;
                        }
                        out[r] = acc;
                    }
                    acts.push(LayerCache::Dense { input: std::mem::replace(&mut cur, out) });
                }
                LayerSpec::Conv2d(g) => {
                    let lp = lp.unwrap();
                    let k = &self.params[lp.weight].data;
                    let b = &self.params[lp.bias].data;
                    let np = g.num_patches();
                    let pl = g.patch_len();
                    let mut cols = vec![0.0; pl * np];
                    conv::im2col(g, &cur, &mut cols);
                    let mut out = vec![0.0; g.out_channels * np];
                    for ch in 0..g.out_channels {
                        let krow = &k[ch * pl..(ch + 1) * pl];
                        let orow = &mut out[ch * np..(ch + 1) * np];
                        orow.iter_mut().for_each(|o| *o = b[ch]);
                        for (kv, crow) in krow.iter().zip(cols.chunks_exact(np)) {
                            if *kv == 0.0 {
                                continue;
                            }
                            for (o, c) in orow.iter_mut().zip(crow) {
                                *o += kv * c;
                            }
                        }
                    }
                    cur = out;
                    acts.push(LayerCache::Conv { cols });
                }
                LayerSpec::Relu => {
                    let mask: Vec<bool> = cur.iter().map(|&v| v > 0.0).collect();
                    for (v, &m) in cur.iter_mut().zip(&mask) {
                        if !m {
                            *v = 0.0;
                        }
                    }
                    acts.push(LayerCache::Relu { mask });
                }
                LayerSpec::Flatten => acts.push(LayerCache::Flatten),
            }
        }
        (cur, Cache { acts })
    }

    /// Backward pass from a gradient on the logits. Accumulates parameter
    /// gradients into `param_grads` when provided; returns the gradient
    /// with respect to the sample input.
    fn backward_sample(
        &self,
        cache: &Cache,
        dlogits: &[f64],
        mut param_grads: Option<&mut [Vec<f64>]>,
    ) -> Vec<f64> {
        let mut g = dlogits.to_vec();
        for ((layer, lp), act) in self
            .layers
            .iter()
            .zip(&self.layer_params)
            .zip(&cache.acts)
            .rev()
        {
            match (layer, act) {
                (LayerSpec::Dense { in_dim, out_dim }, LayerCache::Dense { input }) => {
                    let lp = lp.unwrap();
                    let w = &self.params[lp.weight].data;
                    if let Some(pg) = param_grads.as_deref_mut() {
                        let (wslot, rest) = {
                            // weight and bias grads live at adjacent indices
                            let (a, b) = pg.split_at_mut(lp.bias);
                            (&mut a[lp.weight], &mut b[0])
                        };
                        for r in 0..*out_dim {
                            let gr = g[r];
                            rest[r] += gr;
                            if gr != 0.0 {
                                let row = &mut wslot[r * in_dim..(r + 1) * in_dim];
                                for (wg, xv) in row.iter_mut().zip(input) {
                                    *wg += gr * xv;
                                }
                            }
                        }
                    }
                    let mut gin = vec![0.0; *in_dim];
                    for r in 0..*out_dim {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &w[r * in_dim..(r + 1) * in_dim];
                        for (gi, wv) in gin.iter_mut().zip(row) {
                            *gi += gr * wv;
                        }
                    }
                    g = gin;
                }
                (LayerSpec::Conv2d(geom), LayerCache::Conv { cols }) => {
                    let lp = lp.unwrap();
                    let k = &self.params[lp.weight].data;
                    let np = geom.num_patches();
                    let pl = geom.patch_len();
                    if let Some(pg) = param_grads.as_deref_mut() {
                        let (a, b) = pg.split_at_mut(lp.bias);
                        let kgrad = &mut a[lp.weight];
                        let bgrad = &mut b[0];
                        for ch in 0..geom.out_channels {
                            let grow = &g[ch * np..(ch + 1) * np];
                            bgrad[ch] += grow.iter().sum::<f64>();
                            let krow = &mut kgrad[ch * pl..(ch + 1) * pl];
                            for (kg, crow) in krow.iter_mut().zip(cols.chunks_exact(np)) {
                                let mut acc = 0.0;
                                for (gv, cv) in grow.iter().zip(crow) {
                                    acc += gv * cv;
                                }
                                *kg += acc;
                            }
                        }
                    }
                    // dcols = K^T dOut, then scatter back to the input.
                    let mut dcols = vec![0.0; pl * np];
                    for ch in 0..geom.out_channels {
                        let grow = &g[ch * np..(ch + 1) * np];
                        let krow = &k[ch * pl..(ch + 1) * pl];
                        for (kv, dcrow) in krow.iter().zip(dcols.chunks_exact_mut(np)) {
                            if *kv == 0.0 {
                                continue;
                            }
                            for (dc, gv) in dcrow.iter_mut().zip(grow) {
                                *dc += kv * gv;
                            }
                        }
                    }
                    let mut gin = vec![0.0; geom.in_channels * geom.in_h * geom.in_w];
                    conv::col2im(geom, &dcols, &mut gin);
                    g = gin;
                }
                (LayerSpec::Relu, LayerCache::Relu { mask }) => {
                    for (gv, &m) in g.iter_mut().zip(mask) {
                        if !m {
                            *gv = 0.0;
                        }
                    }
                }
                (LayerSpec::Flatten, LayerCache::Flatten) => {}
                _ => unreachable!("cache misaligned with layers"),
            }
        }
        g
    }

    /// Mean cross-entropy loss and exact gradients over a minibatch.
    ///
    /// `input_grads[i]` is the gradient of the *mean* batch loss with
    /// respect to sample i's input (the per-sample loss gradient divided
    /// by the batch size).
    pub fn loss_and_grad(&self, inputs: &[&[f64]], labels: &[usize]) -> Result<GradientBundle> {
        self.loss_and_grad_impl(inputs, labels, GRAD_CHUNK, false)
    }

    /// Sequential twin of [`loss_and_grad`](Self::loss_and_grad); same
    /// bitwise result, used by the benchmark suite.
    pub fn loss_and_grad_seq(&self, inputs: &[&[f64]], labels: &[usize]) -> Result<GradientBundle> {
        self.loss_and_grad_impl(inputs, labels, GRAD_CHUNK, true)
    }

    /// As [`loss_and_grad`](Self::loss_and_grad) with an explicit
    /// accumulation chunk size. Any chunk size gives a bitwise identical
    /// result because per-sample gradients are folded in sample order.
    pub fn loss_and_grad_chunked(
        &self,
        inputs: &[&[f64]],
        labels: &[usize],
        chunk: usize,
    ) -> Result<GradientBundle> {
        if chunk == 0 {
            return Err(Error::InvalidArgument("chunk size must be >= 1".into()));
        }
        self.loss_and_grad_impl(inputs, labels, chunk, false)
    }

    fn loss_and_grad_impl(
        &self,
        inputs: &[&[f64]],
        labels: &[usize],
        chunk: usize,
        sequential: bool,
    ) -> Result<GradientBundle> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if inputs.len() != labels.len() {
            return Err(Error::DimMismatch {
                context: "loss_and_grad".into(),
                expected: format!("{} labels", inputs.len()),
                actual: format!("{} labels", labels.len()),
            });
        }
        for x in inputs {
            self.check_input(x.len())?;
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.output_dim) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {} classes",
                self.output_dim
            )));
        }

        let n = inputs.len();
        // Chunked accumulation bounds per-sample gradient memory; the
        // fixed-order fold keeps every chunking bitwise identical.
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut param_grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let mut input_grads = Vec::with_capacity(n);
        let inv_n = 1.0 / n as f64;
        for start in (0..n).step_by(chunk) {
            let end = (start + chunk).min(n);
            let kernel = |i: usize| self.sample_grad(inputs[start + i], labels[start + i]);
            let per_sample = if sequential {
                parallel::map_indexed_seq(end - start, kernel)
            } else {
                parallel::map_indexed(end - start, kernel)
            };
            for s in per_sample {
                loss_sum += s.loss;
                correct += s.correct as usize;
                for (acc, g) in param_grads.iter_mut().zip(&s.param_grads) {
                    for (a, gv) in acc.iter_mut().zip(g) {
                        *a += gv;
                    }
                }
                input_grads.push(s.input_grad.into_iter().map(|g| g * inv_n).collect());
            }
        }
        for g in &mut param_grads {
            for v in g.iter_mut() {
                *v *= inv_n;
            }
        }
        let loss = loss_sum * inv_n;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("batch loss {loss}")));
        }

        let param_grads = self
            .params
            .iter()
            .zip(param_grads)
            .map(|(p, g)| Tensor {
                shape: p.shape.clone(),
                data: g,
            })
            .collect();
        Ok(GradientBundle {
            loss,
            accuracy: correct as f64 * inv_n,
            param_grads,
            input_grads,
        })
    }

    /// Loss, per-sample input gradient, and correctness for one sample.
    pub fn sample_grad(&self, x: &[f64], label: usize) -> SampleGrad {
        let (logits, cache) = self.forward_sample(x);
        let (loss, dlogits, correct) = softmax_cross_entropy(&logits, label);
        let mut param_grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let input_grad = self.backward_sample(&cache, &dlogits, Some(&mut param_grads));
        SampleGrad {
            loss,
            correct,
            param_grads,
            input_grad,
        }
    }

    /// Per-sample loss and input gradient without parameter gradients.
    pub fn input_gradient(&self, x: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        self.check_input(x.len())?;
        let (logits, cache) = self.forward_sample(x);
        let (loss, dlogits, _) = softmax_cross_entropy(&logits, label);
        let g = self.backward_sample(&cache, &dlogits, None);
        Ok((loss, g))
    }

    /// Mean loss and accuracy over a split; read-only and data-parallel.
    pub fn evaluate(&self, inputs: &[&[f64]], labels: &[usize]) -> Result<(f64, f64)> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = inputs.len();
        let per = parallel::map_indexed(n, |i| {
            let (logits, _) = self.forward_sample(inputs[i]);
            let (loss, _, correct) = softmax_cross_entropy(&logits, labels[i]);
            (loss, correct)
        });
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (l, c) in per {
            loss += l;
            correct += c as usize;
        }
        Ok((loss / n as f64, correct as f64 / n as f64))
    }

    /// Jacobian of the logits with respect to the input at x, computed by
    /// one reverse pass per output. Exact within the local linear region.
    pub fn local_jacobian(&self, x: &Tensor) -> Result<Matrix> {
        self.check_input(x.len())?;
        let n0 = self.input_dim();
        let nl = self.output_dim;
        if n0 * nl > 1_000_000 {
            return Err(Error::JacobianSizeLimit { rows: nl, cols: n0 });
        }
        let (_, cache) = self.forward_sample(&x.data);
        let mut jac = Matrix::zeros(nl, n0);
        for k in 0..nl {
            let mut seed = vec![0.0; nl];
            seed[k] = 1.0;
            let row = self.backward_sample(&cache, &seed, None);
            for (c, v) in row.iter().enumerate() {
                jac.set(k, c, *v);
            }
        }
        Ok(jac)
    }
}

/// Per-sample gradient computation result.
pub struct SampleGrad {
    pub loss: f64,
    pub correct: bool,
    pub param_grads: Vec<Vec<f64>>,
    pub input_grad: Vec<f64>,
}

/// Activation record for one forward pass.
pub struct Cache {
    acts: Vec<LayerCache>,
}

enum LayerCache {
    Dense { input: Vec<f64> },
    Conv { cols: Vec<f64> },
    Relu { mask: Vec<bool> },
    Flatten,
}

impl Cache {
    /// ReLU masks in layer order, for assembling D^l matrices explicitly.
    pub fn relu_masks(&self) -> Vec<&[bool]> {
        self.acts
            .iter()
            .filter_map(|a| match a {
                LayerCache::Relu { mask } => Some(mask.as_slice()),
                _ => None,
            })
            .collect()
    }
}

/// Loss, param, and input gradients for one batch, in registry order.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub loss: f64,
    pub accuracy: f64,
    pub param_grads: Vec<Tensor>,
    pub input_grads: Vec<Vec<f64>>,
}

impl GradientBundle {
    /// self <- a*self + b*other, element-wise over all gradients and loss.
    pub fn mix(&mut self, a: f64, other: &GradientBundle, b: f64) {
        self.loss = a * self.loss + b * other.loss;
        for (t, o) in self.param_grads.iter_mut().zip(&other.param_grads) {
            for (x, y) in t.data.iter_mut().zip(&o.data) {
                *x = a * *x + b * y;
            }
        }
        for (t, o) in self.input_grads.iter_mut().zip(&other.input_grads) {
            for (x, y) in t.iter_mut().zip(o) {
                *x = a * *x + b * y;
            }
        }
    }
}

/// Numerically stable fused softmax cross-entropy: returns the loss, the
/// gradient on the logits (p - onehot), and argmax correctness.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>, bool) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exp_sum = 0.0;
    for &z in logits {
        exp_sum += (z - max).exp();
    }
    let log_z = max + exp_sum.ln();
    let loss = log_z - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - max).exp() / exp_sum).collect();
    grad[label] -= 1.0;
    let argmax = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    (loss, grad, argmax == label)
}

/// Matricizes a conv kernel to out_channels x (in_channels*k_h*k_w). Row r
/// holds output channel r's receptive-field weights, channel-major, then
/// kernel row, then kernel column (the kernel tensor's own layout).
pub fn kernel_as_matrix(geom: &ConvGeom, kernel: &[f64]) -> Matrix {
    Matrix::new(geom.out_channels, geom.patch_len(), kernel.to_vec())
        .expect("kernel length matches conv geometry")
}

/// Inverse of [`kernel_as_matrix`]: lays matrix entries back into the
/// (b, a, k_h, k_w) kernel layout.
pub fn matrix_to_kernel(geom: &ConvGeom, m: &Matrix) -> Vec<f64> {
    assert_eq!(m.rows(), geom.out_channels);
    assert_eq!(m.cols(), geom.patch_len());
    m.data().to_vec()
}
