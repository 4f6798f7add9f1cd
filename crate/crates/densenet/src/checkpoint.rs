//! Model checkpoints.
//!
//! ```text
//! "DAMC" version config_len config(key=value lines) count
//! per tensor: name_len name rank extents[rank] f32 values
//! ```
//!
//! The config text holds the network keys plus `bn_eps` and `bn_momentum`.
//! Besides the model parameters the tensor list carries the feature
//! normalization as `cmvn.mean` and `cmvn.var`, each shaped
//! `[channels, bins]`.

use std::path::Path;

use densenet_core::layers::{BN_EPS, BN_MOMENTUM};
use densenet_core::{CmvnStats, DenseNetConfig, Model, Tensor};

use crate::codec::{read_file, write_atomic, Decoder, Encoder};
use crate::config::RunConfig;
use crate::error::{Error, FormatError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DAMC";
pub const CHECKPOINT_VERSION: u32 = 1;
const CMVN_MEAN: &str = "cmvn.mean";
const CMVN_VAR: &str = "cmvn.var";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DenseNetConfig,
    pub context_left: usize,
    pub context_right: usize,
    /// Parameters and normalization tensors in file order.
    pub tensors: Vec<(String, Tensor<f32>)>,
}

/// Rounds statistics to the precision a checkpoint stores, so training and
/// later evaluation normalize identically.
pub fn quantize_cmvn(stats: &CmvnStats) -> CmvnStats {
    let q = |v: &[f64]| v.iter().map(|&x| x as f32 as f64).collect();
    CmvnStats { channels: stats.channels, bins: stats.bins, mean: q(&stats.mean), var: q(&stats.var) }
}

impl Checkpoint {
    pub fn capture(cfg: &RunConfig, model: &Model<f32>, cmvn: &CmvnStats) -> Self {
        let shape = [cmvn.channels, cmvn.bins];
        let to_tensor = |v: &[f64]| Tensor::new(&shape, v.iter().map(|&x| x as f32).collect()).expect("cmvn shape");
        let mut tensors: Vec<(String, Tensor<f32>)> =
            model.params().iter().map(|p| (p.name.clone(), p.tensor.clone())).collect();
        tensors.push((CMVN_MEAN.into(), to_tensor(&cmvn.mean)));
        tensors.push((CMVN_VAR.into(), to_tensor(&cmvn.var)));
        Checkpoint {
            model: model.config().clone(),
            context_left: cfg.context_left,
            context_right: cfg.context_right,
            tensors,
        }
    }

    fn config_text(&self) -> String {
        let mut rc = RunConfig::default();
        rc.model = self.model.clone();
        rc.context_left = self.context_left;
        rc.context_right = self.context_right;
        format!("{}bn_eps={BN_EPS}\nbn_momentum={BN_MOMENTUM}\n", rc.model_text())
    }

    /// Input geometry and class count, for mismatch messages.
    pub fn geometry(&self) -> String {
        let m = &self.model;
        format!("{}x{}x{}, {} classes", m.input_channels, m.input_height, m.input_width, m.num_classes)
    }

    pub fn cmvn(&self) -> Result<CmvnStats> {
        let find = |name: &str| {
            self.tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Input(format!("checkpoint has no `{name}` tensor")))
        };
        let (mean, var) = (find(CMVN_MEAN)?, find(CMVN_VAR)?);
        let [channels, bins] = mean.shape() else {
            return Err(Error::Input(format!("`{CMVN_MEAN}` must be rank 2, got {:?}", mean.shape())));
        };
        if var.shape() != mean.shape() {
            return Err(Error::Input("cmvn mean and variance shapes differ".into()));
        }
        let widen = |t: &Tensor<f32>| t.data().iter().map(|&x| x as f64).collect();
        let stats = CmvnStats { channels: *channels, bins: *bins, mean: widen(mean), var: widen(var) };
        stats.validate()?;
        Ok(stats)
    }

    /// Rebuilds the network and loads every parameter.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let mut model = Model::build(&self.model, 0)?;
        let params = self
            .tensors
            .iter()
            .filter(|(n, _)| n != CMVN_MEAN && n != CMVN_VAR)
            .cloned()
            .collect();
        model.load_params(params)?;
        Ok(model)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::default();
        e.bytes(CHECKPOINT_MAGIC);
        e.u32(CHECKPOINT_VERSION);
        e.str(&self.config_text());
        e.len(self.tensors.len());
        for (name, t) in &self.tensors {
            e.str(name);
            e.len(t.rank());
            t.shape().iter().for_each(|&d| e.len(d));
            e.f32s(t.data());
        }
        e.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut d = Decoder::new(bytes);
        d.magic(CHECKPOINT_MAGIC, "checkpoint magic")?;
        let at = d.offset();
        let version = d.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(d.error_at(at, format!("unsupported checkpoint version {version}")));
        }
        let text_at = d.offset();
        let text = d.str("config")?;
        let (model, context_left, context_right) =
            parse_config(&text).map_err(|m| d.error_at(text_at, format!("bad config text: {m}")))?;
        let count = d.len("tensor count")?;
        let mut tensors = Vec::with_capacity(count.min(1 << 12));
        for i in 0..count {
            d.record = Some(i);
            let name = d.str("tensor name")?;
            let rank = d.len("rank")?;
            let shape = d.u32s(rank, "extents")?;
            let shape: Vec<usize> = shape.into_iter().map(|v| v as usize).collect();
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &v| acc.checked_mul(v))
                .ok_or_else(|| d.error(format!("`{name}` extents overflow")))?;
            let data = d.f32s(n, "tensor values")?;
            let t = Tensor::new(&shape, data).map_err(|e| d.error(e.to_string()))?;
            tensors.push((name, t));
        }
        d.record = None;
        d.finish("last tensor")?;
        Ok(Checkpoint { model, context_left, context_right, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?).map_err(|e| Error::format(path, e))
    }
}

fn parse_config(text: &str) -> std::result::Result<(DenseNetConfig, usize, usize), String> {
    let mut rest = String::new();
    for line in text.lines() {
        match line.split_once('=') {
            Some(("bn_eps", v)) => check_constant("bn_eps", v, BN_EPS)?,
            Some(("bn_momentum", v)) => check_constant("bn_momentum", v, BN_MOMENTUM)?,
            _ => {
                rest.push_str(line);
                rest.push('\n');
            }
        }
    }
    let mut rc = RunConfig::default();
    rc.apply_text(&rest, None).map_err(|e| e.to_string())?;
    if let Some(k) = crate::config::KEYS.iter().find(|k| rc.is_explicit(k) && !crate::config::MODEL_KEYS.contains(k)) {
        return Err(format!("unexpected key `{k}`"));
    }
    rc.model.validate().map_err(|e| e.to_string())?;
    Ok((rc.model, rc.context_left, rc.context_right))
}

fn check_constant(key: &str, v: &str, want: f64) -> std::result::Result<(), String> {
    match v.parse::<f64>() {
        Ok(x) if x == want => Ok(()),
        _ => Err(format!("{key}={v} differs from this build's {want}")),
    }
}
