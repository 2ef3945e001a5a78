//! Binary tensor container used for checkpoints and native dataset files.
//!
//! Layout: 8-byte magic "SPECREG1", u64 LE manifest length, UTF-8 text
//! manifest (version, meta lines, tensor name/shape/byte-offset entries),
//! raw little-endian f64 payloads, then a trailing FNV-1a 64-bit checksum
//! of all prior bytes. All floats round-trip bitwise.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::linalg::PowerIterState;
use crate::nn::Network;
use crate::optim::{OptState, TrainerState};
use crate::regularize::SpectralStates;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SPECREG1";
pub const VERSION: u32 = 1;

/// One named tensor in a container.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Generic container: version, string metadata, named f64 tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Container {
    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape,
            data,
        });
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing meta key {key}")))
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta_str(key)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("meta key {key} is not an integer")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = format!("version {VERSION}\n");
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for t in &self.tensors {
            let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("tensor {} {} {offset}\n", t.name, shape.join(",")));
            offset += 8 * t.data.len();
        }
        let manifest = manifest.into_bytes();
        let mut out = Vec::with_capacity(8 + 8 + manifest.len() + offset + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let checksum = fnv1a64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 8 + 8 {
            return Err(Error::Checkpoint(format!(
                "file truncated: {} bytes is below the minimum container size",
                bytes.len()
            )));
        }
        if &bytes[0..8] != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?} (expected {:?})",
                String::from_utf8_lossy(&bytes[0..8]),
                String::from_utf8_lossy(MAGIC)
            )));
        }
        let body = &bytes[..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        let actual = fnv1a64(body);
        if stored != actual {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {stored:016x}, computed {actual:016x}"
            )));
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload_start = 16 + manifest_len;
        if body.len() < payload_start {
            return Err(Error::Checkpoint("file truncated inside manifest".into()));
        }
        let manifest = std::str::from_utf8(&bytes[16..payload_start])
            .map_err(|_| Error::Checkpoint("manifest is not valid UTF-8".into()))?;
        let payload = &body[payload_start..];

        let mut meta = BTreeMap::new();
        let mut tensors = Vec::new();
        let mut version_seen = false;
        for line in manifest.lines() {
            if let Some(v) = line.strip_prefix("version ") {
                let found: u32 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("unreadable version line: {line}")))?;
                if found != VERSION {
                    return Err(Error::CheckpointVersion {
                        found,
                        supported: VERSION,
                    });
                }
                version_seen = true;
            } else if let Some(rest) = line.strip_prefix("meta ") {
                let (key, value) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::Checkpoint(format!("malformed meta line: {line}")))?;
                meta.insert(key.to_string(), value.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 3 {
                    return Err(Error::Checkpoint(format!("malformed tensor line: {line}")));
                }
                let name = parts[0].to_string();
                let shape: Vec<usize> = if parts[1].is_empty() {
                    vec![]
                } else {
                    parts[1]
                        .split(',')
                        .map(|d| {
                            d.parse().map_err(|_| {
                                Error::Checkpoint(format!("bad shape in tensor line: {line}"))
                            })
                        })
                        .collect::<Result<_>>()?
                };
                let offset: usize = parts[2]
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad offset in tensor line: {line}")))?;
                let len: usize = shape.iter().product();
                let end = offset
                    .checked_add(8 * len)
                    .filter(|&e| e <= payload.len())
                    .ok_or_else(|| {
                        Error::Checkpoint(format!("file truncated: tensor {name} exceeds payload"))
                    })?;
                let data = payload[offset..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                tensors.push(NamedTensor { name, shape, data });
            } else if !line.trim().is_empty() {
                return Err(Error::Checkpoint(format!("unrecognized manifest line: {line}")));
            }
        }
        if !version_seen {
            return Err(Error::Checkpoint("manifest is missing a version line".into()));
        }
        Ok(Self { meta, tensors })
    }

    /// Atomic write: temp file in the target directory, then rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
        let mut tmp = match dir {
            Some(d) => tempfile_in(d)?,
            None => tempfile_in(Path::new("."))?,
        };
        std::io::Write::write_all(&mut tmp.1, &self.to_bytes())?;
        std::io::Write::flush(&mut tmp.1)?;
        drop(tmp.1);
        std::fs::rename(&tmp.0, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn tempfile_in(dir: &Path) -> Result<(std::path::PathBuf, std::fs::File)> {
    use std::time::{SystemTime, UNIX_EPOCH};
    let nonce = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let path = dir.join(format!(".specreg-tmp-{}-{nonce}", std::process::id()));
    let file = std::fs::File::create(&path)?;
    Ok((path, file))
}

/// Everything needed to resume a run: architecture, parameters, optimizer
/// and power-iteration state, and the seed (all epoch RNG streams are
/// derived from seed and epoch, so no raw generator state is stored).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub input_shape: Vec<usize>,
    pub seed: u64,
    pub epoch: usize,
    pub step_count: u64,
    pub params: Vec<NamedTensor>,
    pub velocity: Vec<Vec<f64>>,
    pub spectral: SpectralStates,
}

pub fn save_checkpoint(
    path: &Path,
    arch: &str,
    input_shape: &[usize],
    seed: u64,
    net: &Network,
    state: &TrainerState,
) -> Result<()> {
    let mut c = Container::default();
    c.meta.insert("kind".into(), "checkpoint".into());
    c.meta.insert("arch".into(), arch.to_string());
    c.meta.insert(
        "input_shape".into(),
        input_shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    c.meta.insert("seed".into(), seed.to_string());
    c.meta.insert("epoch".into(), state.opt.epoch.to_string());
    c.meta.insert("step_count".into(), state.opt.step_count.to_string());
    for p in net.params() {
        c.push(&format!("param.{}", p.name), p.shape.clone(), p.data.clone());
    }
    for (p, v) in net.params().iter().zip(&state.opt.velocity) {
        c.push(&format!("vel.{}", p.name), p.shape.clone(), v.clone());
    }
    for (name, s) in &state.spectral {
        c.push(&format!("spectral.{name}.v"), vec![s.v.len()], s.v.clone());
        c.push(&format!("spectral.{name}.u"), vec![s.u.len()], s.u.clone());
        c.push(&format!("spectral.{name}.sigma"), vec![1], vec![s.sigma]);
        c.meta.insert(
            format!("spectral.{name}.reseed_key"),
            s.reseed_key.to_string(),
        );
        c.meta.insert(
            format!("spectral.{name}.reseed_count"),
            s.reseed_count.to_string(),
        );
        c.meta.insert(
            format!("spectral.{name}.rerandomized"),
            (s.rerandomized as u8).to_string(),
        );
    }
    c.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c = Container::read(path)?;
    if c.meta_str("kind")? != "checkpoint" {
        return Err(Error::Checkpoint(format!(
            "{} is a {} container, not a checkpoint",
            path.display(),
            c.meta_str("kind")?
        )));
    }
    let arch = c.meta_str("arch")?.to_string();
    let input_shape = c
        .meta_str("input_shape")?
        .split(',')
        .map(|d| {
            d.parse()
                .map_err(|_| Error::Checkpoint(format!("bad input_shape component '{d}'")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let seed = c.meta_u64("seed")?;
    let epoch = c.meta_u64("epoch")? as usize;
    let step_count = c.meta_u64("step_count")?;

    let mut params = Vec::new();
    let mut velocity_by_name: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut spectral = SpectralStates::new();
    for t in &c.tensors {
        if let Some(name) = t.name.strip_prefix("param.") {
            params.push(NamedTensor {
                name: name.to_string(),
                shape: t.shape.clone(),
                data: t.data.clone(),
            });
        } else if let Some(name) = t.name.strip_prefix("vel.") {
            velocity_by_name.insert(name.to_string(), t.data.clone());
        } else if let Some(rest) = t.name.strip_prefix("spectral.") {
            if let Some(name) = rest.strip_suffix(".v") {
                let u = c.tensor(&format!("spectral.{name}.u"))?;
                let sigma = c.tensor(&format!("spectral.{name}.sigma"))?;
                spectral.insert(
                    name.to_string(),
                    PowerIterState {
                        v: t.data.clone(),
                        u: u.data.clone(),
                        sigma: sigma.data[0],
                        rerandomized: c.meta_u64(&format!("spectral.{name}.rerandomized"))? != 0,
                        reseed_key: c.meta_u64(&format!("spectral.{name}.reseed_key"))?,
                        reseed_count: c.meta_u64(&format!("spectral.{name}.reseed_count"))?,
                    },
                );
            }
        }
    }
    // Velocity in the same order as params.
    let velocity = params
        .iter()
        .map(|p| {
            velocity_by_name
                .remove(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing velocity for {}", p.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        arch,
        input_shape,
        seed,
        epoch,
        step_count,
        params,
        velocity,
        spectral,
    })
}

impl Checkpoint {
    /// Writes the stored parameters and optimizer state into a network
    /// built from the same architecture.
    pub fn restore(&self, net: &mut Network) -> Result<TrainerState> {
        if net.params().len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: network has {} parameter tensors, checkpoint has {}",
                net.params().len(),
                self.params.len()
            )));
        }
        for (p, saved) in net.params_mut().iter_mut().zip(&self.params) {
            if p.name != saved.name || p.shape != saved.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: network expects {} {:?}, checkpoint has {} {:?}",
                    p.name, p.shape, saved.name, saved.shape
                )));
            }
            p.data = saved.data.clone();
        }
        Ok(TrainerState {
            opt: OptState {
                velocity: self.velocity.clone(),
                step_count: self.step_count,
                epoch: self.epoch,
            },
            spectral: self.spectral.clone(),
        })
    }
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut c = Container::default();
    c.meta.insert("kind".into(), "dataset".into());
    c.meta.insert("num_classes".into(), ds.num_classes.to_string());
    c.meta.insert(
        "split".into(),
        match ds.split {
            Split::Train => "train".into(),
            Split::Test => "test".into(),
        },
    );
    let mut shape = vec![ds.len()];
    shape.extend_from_slice(&ds.feature_shape);
    c.push("inputs", shape, ds.inputs.clone());
    c.push(
        "labels",
        vec![ds.labels.len()],
        ds.labels.iter().map(|&y| y as f64).collect(),
    );
    c.write(path)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let c = Container::read(path)?;
    if c.meta_str("kind")? != "dataset" {
        return Err(Error::Checkpoint(format!(
            "{} is a {} container, not a dataset",
            path.display(),
            c.meta_str("kind")?
        )));
    }
    let num_classes = c.meta_u64("num_classes")? as usize;
    let split = match c.meta_str("split")? {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(Error::Checkpoint(format!("unknown split {other}"))),
    };
    let inputs = c.tensor("inputs")?;
    if inputs.shape.len() < 2 {
        return Err(Error::Checkpoint("inputs tensor must be at least 2-D".into()));
    }
    let labels = c.tensor("labels")?;
    Dataset::new(
        inputs.data.clone(),
        inputs.shape[1..].to_vec(),
        labels.data.iter().map(|&y| y as usize).collect(),
        num_classes,
        split,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn net() -> Network {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        Network::new(
            vec![
                LayerSpec::Dense { in_dim: 4, out_dim: 6 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_dim: 6, out_dim: 3 },
            ],
            vec![4],
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn container_round_trip_is_bitwise() {
        let mut c = Container::default();
        c.meta.insert("arch".into(), "dense:4:6 relu dense:6:3".into());
        c.meta.insert("kind".into(), "checkpoint".into());
        c.push("a", vec![2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e308, 0.1, -3.5]);
        c.push("b", vec![1], vec![std::f64::consts::PI]);
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        for (x, y) in back.tensors[0].data.iter().zip(&c.tensors[0].data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn flipped_payload_byte_is_checksum_error() {
        let mut c = Container::default();
        c.push("a", vec![2], vec![1.0, 2.0]);
        let mut bytes = c.to_bytes();
        let payload_pos = bytes.len() - 8 - 4;
        bytes[payload_pos] ^= 0x40;
        let err = Container::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct() {
        let c = Container::default();
        let mut bytes = c.to_bytes();
        bytes[0] = b'X';
        let magic_err = Container::from_bytes(&bytes).unwrap_err().to_string();
        assert!(magic_err.contains("magic"), "{magic_err}");

        let short = Container::from_bytes(&c.to_bytes()[..10]).unwrap_err().to_string();
        assert!(short.contains("truncated"), "{short}");
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let c = Container::default();
        let mut bytes = c.to_bytes();
        // bump the version digit in the manifest and re-checksum
        let pos = 16 + "version ".len();
        bytes[pos] = b'9';
        let body_len = bytes.len() - 8;
        let sum = fnv1a64(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&sum.to_le_bytes());
        match Container::from_bytes(&bytes).unwrap_err() {
            Error::CheckpointVersion { found, supported } => {
                assert_eq!(found, 9);
                assert_eq!(supported, 1);
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_deep_equality() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let mut net = net();
        let mut state = TrainerState::new(&net, 77);
        state.opt.step_count = 12;
        state.opt.epoch = 3;
        state.opt.velocity[0][0] = -0.25;
        for s in state.spectral.values_mut() {
            s.sigma = 1.5;
            s.reseed_count = 2;
        }
        save_checkpoint(&path, "dense:4:6 relu dense:6:3", &[4], 77, &net, &state).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.arch, "dense:4:6 relu dense:6:3");
        assert_eq!(ck.input_shape, vec![4]);
        assert_eq!(ck.seed, 77);
        assert_eq!(ck.epoch, 3);
        assert_eq!(ck.step_count, 12);
        assert_eq!(ck.spectral, state.spectral);

        let before = net.params_flat();
        for p in net.params_mut() {
            for x in &mut p.data {
                *x = 0.0;
            }
        }
        let restored = ck.restore(&mut net).unwrap();
        assert_eq!(restored, state);
        assert_eq!(net.params_flat(), before);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.ds");
        let ds = Dataset::new(
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            vec![3],
            vec![0, 1],
            2,
            Split::Train,
        )
        .unwrap();
        save_dataset(&path, &ds).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.ds");
        let ds = Dataset::new(vec![1.0], vec![1], vec![0], 1, Split::Test).unwrap();
        save_dataset(&path, &ds).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("not a checkpoint"), "{err}");
    }
}
