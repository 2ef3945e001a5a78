//! Datasets: synthetic classification generators, IDX ingestion, global
//! contrast normalization, and flip/crop augmentation.

pub mod idx;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Train/test tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Immutable labeled dataset. `feature_shape` is the per-sample shape
/// (e.g. `[16]` for flat features, `[1, 28, 28]` for images).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub feature_shape: Vec<usize>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        feature_shape: Vec<usize>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let sample_len: usize = feature_shape.iter().product();
        if sample_len == 0 || labels.is_empty() {
            return Err(Error::InvalidArgument("dataset must be nonempty".into()));
        }
        if inputs.len() != sample_len * labels.len() {
            return Err(Error::DimMismatch {
                context: "Dataset::new".into(),
                expected: format!("{} values", sample_len * labels.len()),
                actual: format!("{} values", inputs.len()),
            });
        }
        if labels.iter().any(|&y| y >= num_classes) {
            return Err(Error::InvalidArgument("label out of class range".into()));
        }
        if inputs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dataset input".into()));
        }
        Ok(Self {
            inputs,
            feature_shape,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.feature_shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    /// Borrowed views of all samples, in order.
    pub fn sample_refs(&self) -> Vec<&[f64]> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }
}

/// Synthetic task family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    GaussianMixture,
    TwoSpirals,
}

/// Generator parameters. Label noise flips a label to a uniformly chosen
/// other class, which manufactures a nonzero generalization gap to
/// measure at desk scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub noise_std: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.noise_std < 0.0 {
            return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::InvalidArgument("label_noise must be in [0, 1)".into()));
        }
        if self.num_classes < 2 || self.samples_per_class == 0 || self.input_dim == 0 {
            return Err(Error::InvalidArgument("degenerate synthetic spec".into()));
        }
        if self.kind == SyntheticKind::TwoSpirals && (self.num_classes != 2 || self.input_dim != 2) {
            return Err(Error::InvalidArgument(
                "two-spirals requires num_classes=2 and input_dim=2".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic i.i.d. train/test pair from one spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    // Class structure is shared between splits, drawn first.
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..spec.input_dim)
                .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let draw_split = |split: Split, rng: &mut ChaCha20Rng| -> Result<Dataset> {
        let k = spec.num_classes * spec.samples_per_class;
        let mut inputs = Vec::with_capacity(k * spec.input_dim);
        let mut labels = Vec::with_capacity(k);
        for i in 0..k {
            let class = i % spec.num_classes;
            match spec.kind {
                SyntheticKind::GaussianMixture => {
                    for d in 0..spec.input_dim {
                        inputs.push(means[class][d] + spec.noise_std * rng.sample::<f64, _>(StandardNormal));
                    }
                }
                SyntheticKind::TwoSpirals => {
                    let t: f64 = 0.5 + 3.0 * std::f64::consts::PI * rng.gen::<f64>();
                    let phase = class as f64 * std::f64::consts::PI;
                    let r = t / (3.0 * std::f64::consts::PI);
                    inputs.push(r * (t + phase).cos() + spec.noise_std * rng.sample::<f64, _>(StandardNormal));
                    inputs.push(r * (t + phase).sin() + spec.noise_std * rng.sample::<f64, _>(StandardNormal));
                }
            }
            let label = if spec.label_noise > 0.0 && rng.gen::<f64>() < spec.label_noise {
                let other = rng.gen_range(0..spec.num_classes - 1);
                if other >= class {
                    other + 1
                } else {
                    other
                }
            } else {
                class
            };
            labels.push(label);
        }
        Dataset::new(inputs, vec![spec.input_dim], labels, spec.num_classes, split)
    };

    let train = draw_split(Split::Train, &mut rng)?;
    let test = draw_split(Split::Test, &mut rng)?;
    Ok((train, test))
}

/// Builds a dataset from an IDX image/label file pair.
pub fn dataset_from_idx(
    images: &idx::IdxArray,
    labels: &idx::IdxArray,
    num_classes: usize,
    split: Split,
) -> Result<Dataset> {
    if images.dims.is_empty() || labels.dims.len() != 1 {
        return Err(Error::IdxFormat(format!(
            "expected image dims >= 1 and label dims == 1, got {:?} / {:?}",
            images.dims, labels.dims
        )));
    }
    if images.dims[0] != labels.dims[0] {
        return Err(Error::IdxFormat(format!(
            "image count {} != label count {}",
            images.dims[0], labels.dims[0]
        )));
    }
    let feature_shape: Vec<usize> = if images.dims.len() == 3 {
        // H x W images get an explicit single channel
        vec![1, images.dims[1], images.dims[2]]
    } else {
        images.dims[1..].to_vec()
    };
    let labels: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    Dataset::new(
        images.to_f64_scaled(),
        feature_shape,
        labels,
        num_classes,
        split,
    )
}

/// Global contrast normalization: per sample, subtract the sample mean
/// and divide by max(sample stddev, eps).
pub fn global_contrast_normalize(ds: &Dataset, eps: f64) -> Result<Dataset> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("gcn eps must be > 0".into()));
    }
    let n = ds.sample_len();
    let mut inputs = ds.inputs.clone();
    for chunk in inputs.chunks_exact_mut(n) {
        let mean = chunk.iter().sum::<f64>() / n as f64;
        let var = chunk.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let denom = var.sqrt().max(eps);
        for x in chunk.iter_mut() {
            *x = (*x - mean) / denom;
        }
    }
    Dataset::new(
        inputs,
        ds.feature_shape.clone(),
        ds.labels.clone(),
        ds.num_classes,
        ds.split,
    )
}

/// Horizontal flip (probability 1/2 when enabled) and random crop after
/// zero-padding `crop_pad` pixels on each side. Inputs must have a
/// (channels, height, width) layout. Deterministic given the stream.
pub fn augment(
    images: &mut [Vec<f64>],
    feature_shape: &[usize],
    flip: bool,
    crop_pad: usize,
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    if feature_shape.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "augmentation needs (channels, height, width) inputs, got shape {feature_shape:?}"
        )));
    }
    let (c, h, w) = (feature_shape[0], feature_shape[1], feature_shape[2]);
    if crop_pad >= w || crop_pad >= h {
        return Err(Error::InvalidArgument(format!(
            "crop_pad {crop_pad} must be smaller than image size {h}x{w}"
        )));
    }
    for img in images.iter_mut() {
        if flip && rng.gen::<bool>() {
            flip_horizontal(img, c, h, w);
        }
        if crop_pad > 0 {
            let dy = rng.gen_range(0..=2 * crop_pad);
            let dx = rng.gen_range(0..=2 * crop_pad);
            *img = pad_crop(img, c, h, w, crop_pad, dy, dx);
        }
    }
    Ok(())
}

pub(crate) fn flip_horizontal(img: &mut [f64], c: usize, h: usize, w: usize) {
    for ch in 0..c {
        for row in 0..h {
            let base = ch * h * w + row * w;
            img[base..base + w].reverse();
        }
    }
}

fn pad_crop(img: &[f64], c: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        for row in 0..h {
            // source row in the padded image is row + dy - pad
            let src_row = row as isize + dy as isize - pad as isize;
            if src_row < 0 || src_row >= h as isize {
                continue;
            }
            for col in 0..w {
                let src_col = col as isize + dx as isize - pad as isize;
                if src_col < 0 || src_col >= w as isize {
                    continue;
                }
                out[ch * h * w + row * w + col] =
                    img[ch * h * w + src_row as usize * w + src_col as usize];
            }
        }
    }
    out
}
