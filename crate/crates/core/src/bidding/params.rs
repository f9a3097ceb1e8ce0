//! Named parameter storage and the on-disk checkpoint format.
//!
//! A checkpoint is a JSON manifest plus a sibling binary file of raw
//! little-endian `f32` values. The manifest names the architecture, its
//! hyperparameters, the observation feature list and, for each parameter,
//! its shape and byte offset into the binary file.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_bytes_atomic;
use crate::rng::{stream_rng, Stream};

pub const CHECKPOINT_FORMAT: &str = "mrta-policy-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "architecture", content = "hyperparameters", rename_all = "snake_case")]
pub enum Architecture {
    /// Hand-crafted insertion-cost scorer; no parameters.
    Classic,
    /// Sum of per-feature `1 -> hidden -> hidden -> 1` subnetworks.
    Nam { feature_dim: usize, hidden: usize },
    /// Per-task LSTM cell followed by a `hidden -> head_hidden -> 1` head.
    Lstm { feature_dim: usize, hidden: usize, head_hidden: usize },
    /// Centralized value network `input_dim -> hidden -> hidden -> 1`.
    Critic { input_dim: usize, hidden: usize },
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Classic => "classic",
            Architecture::Nam { .. } => "nam",
            Architecture::Lstm { .. } => "lstm",
            Architecture::Critic { .. } => "critic",
        }
    }

    pub fn default_nam(feature_dim: usize) -> Self {
        Architecture::Nam { feature_dim, hidden: 16 }
    }

    pub fn default_lstm(feature_dim: usize) -> Self {
        Architecture::Lstm { feature_dim, hidden: 64, head_hidden: 32 }
    }

    pub fn is_actor(&self) -> bool {
        matches!(self, Architecture::Nam { .. } | Architecture::Lstm { .. })
    }

    /// Parameter names and shapes in storage order.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut v: Vec<(String, Vec<usize>)> = Vec::new();
        match *self {
            Architecture::Classic => {}
            Architecture::Nam { feature_dim, hidden } => {
                for k in 0..feature_dim {
                    v.push((format!("g{k}.w1"), vec![hidden, 1]));
                    v.push((format!("g{k}.b1"), vec![hidden]));
                    v.push((format!("g{k}.w2"), vec![hidden, hidden]));
                    v.push((format!("g{k}.b2"), vec![hidden]));
                    v.push((format!("g{k}.w3"), vec![1, hidden]));
                    v.push((format!("g{k}.b3"), vec![1]));
                }
                v.push(("out.bias".into(), vec![1]));
                v.push(("log_std".into(), vec![1]));
            }
            Architecture::Lstm { feature_dim, hidden, head_hidden } => {
                v.push(("lstm.w".into(), vec![4 * hidden, feature_dim + hidden]));
                v.push(("lstm.b".into(), vec![4 * hidden]));
                v.push(("head.w1".into(), vec![head_hidden, hidden]));
                v.push(("head.b1".into(), vec![head_hidden]));
                v.push(("head.w2".into(), vec![1, head_hidden]));
                v.push(("head.b2".into(), vec![1]));
                v.push(("log_std".into(), vec![1]));
            }
            Architecture::Critic { input_dim, hidden } => {
                v.push(("l1.w".into(), vec![hidden, input_dim]));
                v.push(("l1.b".into(), vec![hidden]));
                v.push(("l2.w".into(), vec![hidden, hidden]));
                v.push(("l2.b".into(), vec![hidden]));
                v.push(("l3.w".into(), vec![1, hidden]));
                v.push(("l3.b".into(), vec![1]));
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the flat data vector.
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameters of a bidding policy (or critic) as one flat vector with a
/// named layout. Values are kept `f32`-representable so checkpoints
/// round-trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    pub architecture: Architecture,
    pub feature_spec: Vec<String>,
    pub specs: Vec<ParamSpec>,
    pub data: Vec<f64>,
}

fn layout(architecture: &Architecture) -> (Vec<ParamSpec>, usize) {
    let mut offset = 0;
    let specs = architecture
        .shapes()
        .into_iter()
        .map(|(name, shape)| {
            let spec = ParamSpec { name, shape, offset };
            offset += spec.len();
            spec
        })
        .collect();
    (specs, offset)
}

impl PolicyParameters {
    pub fn zeros(architecture: Architecture, feature_spec: Vec<String>) -> Self {
        let (specs, total) = layout(&architecture);
        Self { architecture, feature_spec, specs, data: vec![0.0; total] }
    }

    pub fn classic() -> Self {
        Self::zeros(Architecture::Classic, super::Observation::feature_spec())
    }

    /// Uniform Glorot initialization from the `ParamInit` stream; biases
    /// start at zero except the LSTM forget gate (1.0) and `log_std`.
    pub fn init(architecture: Architecture, feature_spec: Vec<String>, seed: u64, init_log_std: f64) -> Self {
        let mut p = Self::zeros(architecture, feature_spec);
        let mut rng = stream_rng(seed, Stream::ParamInit, 0);
        for spec in p.specs.clone() {
            let slice = &mut p.data[spec.offset..spec.offset + spec.len()];
            if spec.name == "log_std" {
                slice.fill(init_log_std);
            } else if spec.shape.len() == 2 {
                let (fan_out, fan_in) = (spec.shape[0] as f64, spec.shape[1] as f64);
                let limit = (6.0 / (fan_in + fan_out)).sqrt();
                for v in slice.iter_mut() {
                    *v = rng.gen_range(-limit..limit);
                }
            } else if spec.name == "lstm.b" {
                if let Architecture::Lstm { hidden, .. } = p.architecture {
                    slice[hidden..2 * hidden].fill(1.0);
                }
            }
        }
        p.quantize();
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn offset(&self, name: &str) -> usize {
        self.spec(name).map(|s| s.offset).unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn get(&self, name: &str) -> &[f64] {
        let s = self.spec(name).unwrap_or_else(|| panic!("no parameter named {name}"));
        &self.data[s.offset..s.offset + s.len()]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [f64] {
        let s = self.spec(name).unwrap_or_else(|| panic!("no parameter named {name}")).clone();
        &mut self.data[s.offset..s.offset + s.len()]
    }

    /// Exploration log standard deviation; `None` for parameterless or
    /// critic networks.
    pub fn log_std(&self) -> Option<f64> {
        self.spec("log_std").map(|s| self.data[s.offset])
    }

    /// Rounds every value to the nearest `f32`.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    fn check_layout(&self) -> Result<()> {
        let (expected, total) = layout(&self.architecture);
        if expected != self.specs || total != self.data.len() {
            return Err(Error::invalid(format!(
                "parameter layout does not match architecture {}",
                self.architecture.tag()
            )));
        }
        Ok(())
    }

    /// Writes `<stem>.json` and `<stem>.bin` next to each other; `manifest`
    /// is the path of the JSON file.
    pub fn save(&self, manifest: &Path) -> Result<()> {
        self.check_layout()?;
        let bin = bin_path(manifest);
        let data_file = bin
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let m = Manifest {
            format: CHECKPOINT_FORMAT.to_string(),
            architecture: self.architecture,
            feature_spec: self.feature_spec.clone(),
            data_file,
            dtype: "f32le".to_string(),
            parameters: self
                .specs
                .iter()
                .map(|s| ManifestEntry { name: s.name.clone(), shape: s.shape.clone(), offset: s.offset * 4 })
                .collect(),
        };
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        write_bytes_atomic(&bin, &bytes)?;
        let mut json = serde_json::to_vec_pretty(&m)?;
        json.push(b'\n');
        write_bytes_atomic(manifest, &json)
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint { path: manifest.to_path_buf(), reason };
        let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| bad(format!("manifest: {e}")))?;
        if m.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unknown format {:?}", m.format)));
        }
        if m.dtype != "f32le" {
            return Err(bad(format!("unsupported dtype {:?}", m.dtype)));
        }
        let mut params = Self::zeros(m.architecture, m.feature_spec);
        let listed: Vec<ParamSpec> = m
            .parameters
            .iter()
            .map(|e| ParamSpec { name: e.name.clone(), shape: e.shape.clone(), offset: e.offset / 4 })
            .collect();
        if listed != params.specs || m.parameters.iter().any(|e| e.offset % 4 != 0) {
            return Err(bad(format!("parameter table does not match {} layout", params.architecture.tag())));
        }
        if params.architecture.is_actor() && params.feature_spec != super::Observation::feature_spec() {
            return Err(bad("feature list does not match this build".into()));
        }
        let bin = manifest.with_file_name(&m.data_file);
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() != params.data.len() * 4 {
            return Err(bad(format!("expected {} data bytes, found {}", params.data.len() * 4, bytes.len())));
        }
        for (v, chunk) in params.data.iter_mut().zip(bytes.chunks_exact(4)) {
            let x = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !x.is_finite() {
                return Err(bad("non-finite parameter value".into()));
            }
            *v = x as f64;
        }
        Ok(params)
    }
}

pub fn bin_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    #[serde(flatten)]
    architecture: Architecture,
    feature_spec: Vec<String>,
    data_file: String,
    dtype: String,
    parameters: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the data file.
    offset: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bidding::{Observation, FEATURE_DIM};

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for arch in [Architecture::default_nam(FEATURE_DIM), Architecture::default_lstm(FEATURE_DIM)] {
            let p = PolicyParameters::init(arch, Observation::feature_spec(), 11, -2.0);
            let m1 = dir.path().join(format!("{}.json", arch.tag()));
            p.save(&m1).unwrap();
            let q = PolicyParameters::load(&m1).unwrap();
            assert_eq!(p, q);
            let m2 = dir.path().join(format!("{}-again.json", arch.tag()));
            q.save(&m2).unwrap();
            assert_eq!(fs::read(bin_path(&m1)).unwrap(), fs::read(bin_path(&m2)).unwrap());
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = PolicyParameters::init(Architecture::default_nam(FEATURE_DIM), Observation::feature_spec(), 1, -2.0);
        let m = dir.path().join("nam.json");
        p.save(&m).unwrap();
        let bin = bin_path(&m);
        let mut bytes = fs::read(&bin).unwrap();
        bytes.pop();
        fs::write(&bin, &bytes).unwrap();
        assert!(matches!(PolicyParameters::load(&m), Err(Error::Checkpoint { .. })));

        p.save(&m).unwrap();
        let text = fs::read_to_string(&m).unwrap().replace("\"hidden\": 16", "\"hidden\": 15");
        fs::write(&m, text).unwrap();
        assert!(matches!(PolicyParameters::load(&m), Err(Error::Checkpoint { .. })));

        fs::write(&m, "{not json").unwrap();
        assert!(matches!(PolicyParameters::load(&m), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn layout_shapes() {
        let p = PolicyParameters::zeros(Architecture::default_lstm(8), Observation::feature_spec());
        assert_eq!(p.spec("lstm.w").unwrap().shape, vec![256, 72]);
        assert_eq!(p.spec("head.w1").unwrap().shape, vec![32, 64]);
        assert!(PolicyParameters::classic().is_empty());
    }
}
