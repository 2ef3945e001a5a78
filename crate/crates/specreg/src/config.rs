//! Flat key=value configuration files, architecture strings, and the
//! assembled run configuration for the CLI.
//!
//! Format: one `key = value` per line, `#` starts a comment, later keys
//! override earlier ones, unknown keys are hard errors (exit code 2).

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::data::{SyntheticKind, SyntheticSpec};
use crate::nn::{ConvGeom, LayerSpec};
use crate::optim::{AugmentConfig, TrainConfig};
use crate::regularize::{RegKind, RegularizerConfig};
use crate::{Error, Result};

/// Parses key=value text into an ordered list; order matters because the
/// last assignment of a key wins.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got '{raw}'", lineno + 1))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses a `--set key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
    Ok((key.trim().to_string(), value.trim().to_string()))
}

/// Last-wins fold of config-file pairs plus overrides.
fn fold(pairs: Vec<(String, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().collect()
}

struct KvReader {
    map: BTreeMap<String, String>,
    used: std::collections::BTreeSet<String>,
}

impl KvReader {
    fn new(map: BTreeMap<String, String>) -> Self {
        Self {
            map,
            used: Default::default(),
        }
    }

    fn get(&mut self, key: &str) -> Option<&str> {
        self.used.insert(key.to_string());
        self.map.get(key).map(|s| s.as_str())
    }

    fn require(&mut self, key: &str) -> Result<&str> {
        self.used.insert(key.to_string());
        self.map
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("key '{key}': cannot parse value '{v}'"))),
        }
    }

    fn parse_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(Error::Config(format!("key '{key}': expected a boolean, got '{v}'"))),
        }
    }

    /// Errors on any key never requested by the schema, naming the key.
    fn finish(self) -> Result<()> {
        for key in self.map.keys() {
            if !self.used.contains(key) {
                return Err(Error::Config(format!("unknown key '{key}'")));
            }
        }
        Ok(())
    }
}

/// Where the train/test splits come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        num_classes: usize,
    },
    Native {
        train: PathBuf,
        test: PathBuf,
    },
}

/// Full description of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arch: String,
    pub input_shape: Vec<usize>,
    pub train: TrainConfig,
    pub data: DataSource,
    pub out_dir: PathBuf,
    pub gcn: bool,
    /// Write a checkpoint every N epochs in addition to the final one
    /// (0 = final only).
    pub checkpoint_every: usize,
}

impl RunConfig {
    /// Builds a run config from file text plus `--set` overrides; the
    /// SPECREG_SEED environment variable, when set, overrides the seed.
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = parse_kv(text)?;
        pairs.extend_from_slice(overrides);
        if let Ok(seed) = std::env::var("SPECREG_SEED") {
            let seed: u64 = seed
                .parse()
                .map_err(|_| Error::Config(format!("SPECREG_SEED: cannot parse '{seed}'")))?;
            pairs.push(("seed".into(), seed.to_string()));
        }
        let mut kv = KvReader::new(fold(pairs));

        let arch = kv.require("arch")?.to_string();
        let input_shape = parse_shape(kv.require("input_shape")?)?;
        // Validate the architecture against the input shape right away so
        // config errors surface as config errors.
        parse_arch(&arch, &input_shape)?;

        let kind = RegKind::parse(kv.parse("regularizer", "vanilla".to_string())?.as_str())?;
        let regularizer = RegularizerConfig {
            kind,
            lambda: kv.parse("lambda", 0.01)?,
            alpha: kv.parse("alpha", 0.5)?,
            epsilon: kv.parse("epsilon", 1.0)?,
            power_iters: kv.parse("power_iters", 1)?,
        };

        let augment = {
            let flip = kv.parse_bool("augment_flip", false)?;
            let crop_pad = kv.parse("augment_crop_pad", 0usize)?;
            if flip || crop_pad > 0 {
                Some(AugmentConfig { flip, crop_pad })
            } else {
                None
            }
        };

        let train = TrainConfig {
            batch_size: kv.parse("batch_size", 64)?,
            epochs: kv.parse("epochs", 100)?,
            base_lr: kv.parse("base_lr", 0.1)?,
            momentum: kv.parse("momentum", 0.9)?,
            regularizer,
            seed: kv.parse("seed", 0u64)?,
            eval_every: kv.parse("eval_every", 1)?,
            augment,
        };

        let data = match kv.parse("data", "synthetic".to_string())?.as_str() {
            "synthetic" => DataSource::Synthetic(synthetic_from_kv(&mut kv, train.seed)?),
            "idx" => DataSource::Idx {
                train_images: kv.require("train_images")?.into(),
                train_labels: kv.require("train_labels")?.into(),
                test_images: kv.require("test_images")?.into(),
                test_labels: kv.require("test_labels")?.into(),
                num_classes: kv.parse("num_classes", 10)?,
            },
            "native" => DataSource::Native {
                train: kv.require("train_ds")?.into(),
                test: kv.require("test_ds")?.into(),
            },
            other => {
                return Err(Error::Config(format!(
                    "key 'data': expected synthetic|idx|native, got '{other}'"
                )))
            }
        };

        let out_dir = PathBuf::from(kv.parse("out_dir", "out".to_string())?);
        let gcn = kv.parse_bool("gcn", false)?;
        let checkpoint_every = kv.parse("checkpoint_every", 0usize)?;
        kv.finish()?;

        let config = Self {
            arch,
            input_shape,
            train,
            data,
            out_dir,
            gcn,
            checkpoint_every,
        };
        config.train.validate()?;
        Ok(config)
    }
}

fn synthetic_from_kv(kv: &mut KvReader, run_seed: u64) -> Result<SyntheticSpec> {
    let kind = match kv.parse("synthetic_kind", "gaussian-mixture".to_string())?.as_str() {
        "gaussian-mixture" => SyntheticKind::GaussianMixture,
        "two-spirals" => SyntheticKind::TwoSpirals,
        other => {
            return Err(Error::Config(format!(
                "key 'synthetic_kind': expected gaussian-mixture|two-spirals, got '{other}'"
            )))
        }
    };
    let spec = SyntheticSpec {
        kind,
        num_classes: kv.parse("num_classes", 4)?,
        samples_per_class: kv.parse("samples_per_class", 100)?,
        input_dim: kv.parse("input_dim", 16)?,
        noise_std: kv.parse("noise_std", 1.0)?,
        label_noise: kv.parse("label_noise", 0.0)?,
        // the data seed defaults to the run seed but can differ so that
        // several training seeds share one dataset
        seed: kv.parse("data_seed", run_seed)?,
    };
    spec.validate()?;
    Ok(spec)
}

/// Standalone synthetic spec file for `specreg gen-data`.
pub fn synthetic_spec_from_text(text: &str) -> Result<SyntheticSpec> {
    let mut kv = KvReader::new(fold(parse_kv(text)?));
    let spec = synthetic_from_kv(&mut kv, 0)?;
    kv.finish()?;
    Ok(spec)
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| {
            d.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad shape component '{d}' in '{s}'")))
        })
        .collect::<Result<_>>()?;
    if dims.is_empty() || dims.iter().any(|&d| d == 0) {
        return Err(Error::Config(format!("degenerate shape '{s}'")));
    }
    Ok(dims)
}

/// Parses an architecture string into layers, checking shape flow from
/// `input_shape`.
///
/// Tokens (whitespace separated):
///   dense:IN:OUT        fully connected layer (input must be flat)
///   relu                elementwise ReLU
///   flatten             collapse (c,h,w) to a vector
///   conv:OUT:K:S:P      KxK convolution, stride S, zero-padding P;
///                       input channels/size taken from the running shape
pub fn parse_arch(arch: &str, input_shape: &[usize]) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    let mut shape = input_shape.to_vec();
    for token in arch.split_whitespace() {
        let parts: Vec<&str> = token.split(':').collect();
        match parts[0] {
            "dense" => {
                if parts.len() != 3 {
                    return Err(Error::Config(format!("bad dense token '{token}' (want dense:IN:OUT)")));
                }
                let in_dim = parse_dim(parts[1], token)?;
                let out_dim = parse_dim(parts[2], token)?;
                if shape.len() != 1 {
                    return Err(Error::Config(format!(
                        "dense layer '{token}' needs a flat input; current shape is {shape:?} (insert 'flatten')"
                    )));
                }
                if shape[0] != in_dim {
                    return Err(Error::Config(format!(
                        "dense layer '{token}' declares in_dim {in_dim} but the incoming dimension is {}",
                        shape[0]
                    )));
                }
                layers.push(LayerSpec::Dense { in_dim, out_dim });
                shape = vec![out_dim];
            }
            "relu" => layers.push(LayerSpec::Relu),
            "flatten" => {
                layers.push(LayerSpec::Flatten);
                shape = vec![shape.iter().product()];
            }
            "conv" => {
                if parts.len() != 5 {
                    return Err(Error::Config(format!("bad conv token '{token}' (want conv:OUT:K:S:P)")));
                }
                if shape.len() != 3 {
                    return Err(Error::Config(format!(
                        "conv layer '{token}' needs a (channels,height,width) input; current shape is {shape:?}"
                    )));
                }
                let out_channels = parse_dim(parts[1], token)?;
                let k = parse_dim(parts[2], token)?;
                let stride = parse_dim(parts[3], token)?;
                let padding: usize = parts[4]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number in '{token}'")))?;
                let geom = ConvGeom {
                    in_channels: shape[0],
                    out_channels,
                    k_h: k,
                    k_w: k,
                    stride,
                    padding,
                    in_h: shape[1],
                    in_w: shape[2],
                };
                if shape[1] + 2 * padding < k || shape[2] + 2 * padding < k {
                    return Err(Error::Config(format!(
                        "conv layer '{token}' kernel does not fit the {}x{} input",
                        shape[1], shape[2]
                    )));
                }
                shape = vec![out_channels, geom.out_h(), geom.out_w()];
                layers.push(LayerSpec::Conv2d(geom));
            }
            other => return Err(Error::Config(format!("unknown layer token '{other}'"))),
        }
    }
    if layers.is_empty() {
        return Err(Error::Config("empty architecture".into()));
    }
    Ok(layers)
}

fn parse_dim(s: &str, token: &str) -> Result<usize> {
    let d: usize = s
        .parse()
        .map_err(|_| Error::Config(format!("bad number in '{token}'")))?;
    if d == 0 {
        return Err(Error::Config(format!("zero dimension in '{token}'")));
    }
    Ok(d)
}
