//! JSON checkpoints:
//!
//! ```json
//! {
//!   "format": "semctl-checkpoint",
//!   "version": 1,
//!   "dims": {"vocab": 180, "d_emb": 16, "d_s": 32, "d_p": 16, "d_z": 8, "d_h": 32},
//!   "config": { ...TrainConfig... },
//!   "vocab": ["<pad>", "<bos>", "<eos>", "<unk>", ...],
//!   "memory_decay": 0.5,
//!   "params": {"embeddings": [...], "state.w_x": [...], ..., "control.attr_map": [...]}
//! }
//! ```
//!
//! Arrays are row-major; shapes follow from `dims`.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::{Dims, ModelParams};
use crate::rng::Rng;

use super::{init_params, TrainConfig};

pub const CHECKPOINT_FORMAT: &str = "semctl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const ATTR_MAP_KEY: &str = "control.attr_map";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dims: Dims,
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub memory_decay: f64,
    pub params: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, config: &TrainConfig, vocab: &Vocab) -> Self {
        let mut map: BTreeMap<String, Vec<f64>> = params
            .named()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.data().to_vec()))
            .collect();
        map.insert(ATTR_MAP_KEY.to_string(), params.control.attr_map.data().to_vec());
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dims: params.dims,
            config: config.clone(),
            vocab: vocab.clone(),
            memory_decay: params.state.memory_decay,
            params: map,
        }
    }

    /// Rebuilds the parameter set, checking every array length.
    pub fn params(&self) -> Result<ModelParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Contract(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.dims.vocab != self.vocab.len() {
            return Err(Error::Contract(format!(
                "checkpoint vocab has {} tokens but dims say {}",
                self.vocab.len(),
                self.dims.vocab
            )));
        }
        let mut cfg = self.config.clone();
        cfg.d_emb = self.dims.d_emb;
        cfg.d_s = self.dims.d_s;
        cfg.d_p = self.dims.d_p;
        cfg.d_z = self.dims.d_z;
        cfg.d_h = self.dims.d_h;
        cfg.memory_decay = self.memory_decay;
        // shapes only; every value is overwritten below
        let mut out = init_params(&cfg, self.dims.vocab, &mut Rng::new(0))?;
        let fill = |name: &str, t: &mut Tensor| -> Result<()> {
            let data = self
                .params
                .get(name)
                .ok_or_else(|| Error::Contract(format!("checkpoint lacks parameter {name}")))?;
            *t = Tensor::new(t.shape().to_vec(), data.clone()).map_err(|_| {
                Error::Contract(format!(
                    "parameter {name}: {} values for shape {:?}",
                    data.len(),
                    t.shape()
                ))
            })?;
            Ok(())
        };
        let names: Vec<&'static str> = out.named().iter().map(|(n, _)| *n).collect();
        for (name, t) in names.into_iter().zip(out.trainable_mut()) {
            fill(name, t)?;
        }
        fill(ATTR_MAP_KEY, &mut out.control.attr_map)?;
        out.validate()?;
        Ok(out)
    }
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, config: &TrainConfig, vocab: &Vocab) -> Result<()> {
    let w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(w, &Checkpoint::new(params, config, vocab))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, TrainConfig, Vocab)> {
    let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
    let params = ck.params()?;
    Ok((params, ck.config, ck.vocab))
}
