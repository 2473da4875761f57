//! Single-file checkpoints in the safetensors container.
//!
//! Tensor keys are `model/<param>`, `best/<param>`, `adam.m/<param>` and
//! `adam.v/<param>`; everything else lives in one JSON document under the
//! `checkpoint` metadata key.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::{tensor::TensorView, Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::model::{HybridModel, ModelConfig};

const FORMAT: &str = "hybrid-osr-checkpoint/1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    /// Parameters after the last completed epoch.
    pub params: BTreeMap<String, Tensor>,
    /// Parameters of the epoch with the best validation accuracy.
    pub best_params: BTreeMap<String, Tensor>,
    pub adam_config: AdamConfig,
    pub optimizer: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Every random stream of the run derives from `(seed, epoch)`, so the
    /// master seed plus the epoch counter is the full RNG state.
    pub seed: u64,
    /// `None` until a validation set has been scored.
    pub best_val_accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    model_config: ModelConfig,
    adam_config: AdamConfig,
    adam_step: u64,
    epoch: usize,
    seed: u64,
    /// f64 bit pattern, so the value round-trips exactly.
    best_val_accuracy_bits: Option<u64>,
}

fn to_bytes(t: &Tensor) -> Result<(Dtype, Vec<usize>, Vec<u8>)> {
    let flat = t.flatten_all()?;
    let (dtype, bytes) = match t.dtype() {
        DType::F32 => (
            Dtype::F32,
            flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        DType::F64 => (
            Dtype::F64,
            flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        other => {
            return Err(Error::Usage(format!("cannot checkpoint {other:?} tensors")));
        }
    };
    Ok((dtype, t.dims().to_vec(), bytes))
}

fn from_view(view: &TensorView<'_>, device: &Device) -> std::result::Result<Tensor, String> {
    let shape = view.shape().to_vec();
    let data = view.data();
    let t = match view.dtype() {
        Dtype::F32 => {
            let v: Vec<f32> = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::from_vec(v, shape, device)
        }
        Dtype::F64 => {
            let v: Vec<f64> = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::from_vec(v, shape, device)
        }
        other => return Err(format!("unsupported tensor dtype {other:?}")),
    };
    t.map_err(|e| e.to_string())
}

impl Checkpoint {
    /// Fresh checkpoint describing an untrained model.
    pub fn initial(model: &HybridModel, adam_config: AdamConfig, optimizer: AdamState, seed: u64) -> Result<Self> {
        let params = model.params().snapshot()?;
        Ok(Self {
            model_config: model.config().clone(),
            best_params: params.clone(),
            params,
            adam_config,
            optimizer,
            epoch: 0,
            seed,
            best_val_accuracy: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, (Dtype, Vec<usize>, Vec<u8>))> = Vec::new();
        let groups: [(&str, &BTreeMap<String, Tensor>); 4] = [
            ("model", &self.params),
            ("best", &self.best_params),
            ("adam.m", &self.optimizer.first),
            ("adam.v", &self.optimizer.second),
        ];
        for (prefix, map) in groups {
            for (name, t) in map {
                entries.push((format!("{prefix}/{name}"), to_bytes(t)?));
            }
        }
        let views = entries
            .iter()
            .map(|(k, (dtype, shape, bytes))| {
                TensorView::new(*dtype, shape.clone(), bytes).map(|v| (k.as_str(), v))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Usage(e.to_string()))?;
        let header = Header {
            format: FORMAT.into(),
            model_config: self.model_config.clone(),
            adam_config: self.adam_config,
            adam_step: self.optimizer.step,
            epoch: self.epoch,
            seed: self.seed,
            best_val_accuracy_bits: self.best_val_accuracy.map(f64::to_bits),
        };
        let metadata = HashMap::from([("checkpoint".to_string(), serde_json::to_string(&header)?)]);
        let bytes = safetensors::serialize(views, Some(metadata))
            .map_err(|e| Error::Usage(e.to_string()))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let fail = |reason: String| Error::CheckpointLoad {
            path: path.to_path_buf(),
            reason,
        };
        let buffer = std::fs::read(path).map_err(|e| fail(e.to_string()))?;
        let (_, metadata) = SafeTensors::read_metadata(&buffer).map_err(|e| fail(e.to_string()))?;
        let header_json = metadata
            .metadata()
            .as_ref()
            .and_then(|m| m.get("checkpoint"))
            .ok_or_else(|| fail("missing checkpoint header".into()))?;
        let header: Header = serde_json::from_str(header_json).map_err(|e| fail(e.to_string()))?;
        if header.format != FORMAT {
            return Err(fail(format!("unknown format {}", header.format)));
        }
        let tensors = SafeTensors::deserialize(&buffer).map_err(|e| fail(e.to_string()))?;
        let device = Device::Cpu;
        let mut groups: BTreeMap<&str, BTreeMap<String, Tensor>> = BTreeMap::new();
        for (key, view) in tensors.tensors() {
            let (prefix, name) = key
                .split_once('/')
                .ok_or_else(|| fail(format!("malformed tensor key {key}")))?;
            let prefix = match prefix {
                "model" => "model",
                "best" => "best",
                "adam.m" => "adam.m",
                "adam.v" => "adam.v",
                other => return Err(fail(format!("unknown tensor group {other}"))),
            };
            let t = from_view(&view, &device).map_err(&fail)?;
            groups.entry(prefix).or_default().insert(name.to_string(), t);
        }
        let mut take = |k| groups.remove(k).unwrap_or_default();
        Ok(Self {
            model_config: header.model_config,
            params: take("model"),
            best_params: take("best"),
            adam_config: header.adam_config,
            optimizer: AdamState {
                step: header.adam_step,
                first: take("adam.m"),
                second: take("adam.v"),
            },
            epoch: header.epoch,
            seed: header.seed,
            best_val_accuracy: header.best_val_accuracy_bits.map(f64::from_bits),
        })
    }

    /// Rebuilds the network from the stored configuration and loads either
    /// the best-validation or the last-epoch parameters.
    pub fn build_model(&self, best: bool, device: &Device) -> Result<HybridModel> {
        let dtype = self
            .params
            .values()
            .next()
            .map(|t| t.dtype())
            .unwrap_or(DType::F32);
        let model = HybridModel::new(self.model_config.clone(), 0, dtype, device)?;
        model
            .params()
            .restore(if best { &self.best_params } else { &self.params })?;
        Ok(model)
    }
}
