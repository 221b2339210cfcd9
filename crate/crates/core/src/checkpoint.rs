//! Versioned JSON checkpoints of trained states.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};
use crate::masks::InferenceNet;
use crate::model::{ClassifierParams, ConvLayer, ModelConfig};
use crate::training::{GroupMasks, TrainState};

pub const FORMAT: &str = "flat-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Base,
    Adv,
    Flat,
    GroupMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub round: usize,
    pub vocab_hash: String,
    pub model: ModelConfig,
    pub tensors: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_assignment: Option<Vec<usize>>,
    /// Training configuration, stored verbatim.
    pub config: serde_json::Value,
}

fn named(name: &str, t: &Tensor) -> NamedTensor {
    NamedTensor { name: name.to_string(), shape: t.shape().to_vec(), values: t.values().to_vec() }
}

impl Checkpoint {
    pub fn from_state(kind: ModelKind, state: &TrainState, vocab_hash: &str, config: serde_json::Value) -> Self {
        let mut tensors: Vec<NamedTensor> = state.classifier.named_tensors().into_iter().map(|(n, t)| named(&n, t)).collect();
        if let Some(net) = &state.inference {
            tensors.push(named("inference.weight", &net.weight));
            tensors.push(named("inference.bias", &net.bias));
        }
        if let Some(gm) = &state.groups {
            tensors.push(named("groups.values", &gm.values));
        }
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            round: state.round,
            vocab_hash: vocab_hash.to_string(),
            model: state.classifier.config(),
            tensors,
            group_assignment: state.groups.as_ref().map(|g| g.assignment.clone()),
            config,
        }
    }

    /// Rebuilds the trained state; refuses a checkpoint made for another vocabulary.
    pub fn to_state(&self, vocab_hash: &str) -> Result<TrainState> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        if self.vocab_hash != vocab_hash {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash mismatch: checkpoint {} but loaded vocabulary {}",
                self.vocab_hash, vocab_hash
            )));
        }
        let mut map: HashMap<&str, &NamedTensor> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut take = |name: &str| -> Result<Tensor> {
            let t = map.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            Tensor::new(t.shape.clone(), t.values.clone()).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))
        };
        let embedding = EmbeddingTable::from_tensor(take("embedding")?)?;
        let mut convs = Vec::new();
        for &w in &self.model.widths {
            convs.push(ConvLayer { width: w, weight: take(&format!("conv{w}.weight"))?, bias: take(&format!("conv{w}.bias"))? });
        }
        let classifier = ClassifierParams {
            embedding,
            convs,
            head_w: take("head.weight")?,
            head_b: take("head.bias")?,
            dropout: self.model.dropout,
        };
        check_shapes(&classifier)?;
        let mut state = TrainState::plain(classifier);
        state.round = self.round;
        if self.tensors.iter().any(|t| t.name == "inference.weight") {
            state.inference = Some(InferenceNet { weight: take("inference.weight")?, bias: take("inference.bias")? });
        }
        if let Some(assignment) = &self.group_assignment {
            state.groups = Some(GroupMasks { assignment: assignment.clone(), values: take("groups.values")? });
        }
        if let Some(extra) = map.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}

fn check_shapes(p: &ClassifierParams) -> Result<()> {
    let (d, c) = (p.embed_dim(), p.num_classes());
    let f = p.convs.first().map(|c| c.bias.len()).unwrap_or(0);
    for conv in &p.convs {
        if conv.weight.shape() != [conv.width, d, f] || conv.bias.shape() != [f] {
            return Err(Error::Checkpoint(format!("conv{} has shape {:?}", conv.width, conv.weight.shape())));
        }
    }
    if p.head_w.shape() != [p.convs.len() * f, c] {
        return Err(Error::Checkpoint(format!("head weight has shape {:?}", p.head_w.shape())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::training::init_classifier;

    fn state() -> TrainState {
        let cfg = ModelConfig { embed_dim: 4, filters: 3, ..Default::default() };
        let mut s = TrainState::masked(init_classifier(10, 2, &cfg, 1, None).unwrap());
        s.inference = Some(InferenceNet::random(4, 0.3, &mut rng_for(1, "x")));
        s.round = 2;
        s
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut s = state();
        let ck = Checkpoint::from_state(ModelKind::Flat, &s, "abc", serde_json::json!({"beta": 0.1}));
        ck.save(&path).unwrap();
        let mut back = Checkpoint::load(&path).unwrap().to_state("abc").unwrap();
        assert_eq!(back.classifier, s.classifier);
        assert_eq!(back.inference, s.inference);
        assert_eq!(back.round, 2);
        assert_eq!(back.importance(), s.importance());
    }

    #[test]
    fn vocab_mismatch_refused() {
        let ck = Checkpoint::from_state(ModelKind::Base, &state(), "abc", serde_json::Value::Null);
        let err = ck.to_state("def").unwrap_err().to_string();
        assert!(err.contains("vocabulary hash mismatch"), "{err}");
    }

    #[test]
    fn corrupted_shapes_refused() {
        let mut ck = Checkpoint::from_state(ModelKind::Base, &state(), "abc", serde_json::Value::Null);
        let head = ck.tensors.iter_mut().find(|t| t.name == "head.weight").unwrap();
        head.shape = vec![2, 9];
        head.values.truncate(18);
        assert!(ck.to_state("abc").is_err());
        let mut ck = Checkpoint::from_state(ModelKind::Base, &state(), "abc", serde_json::Value::Null);
        ck.tensors.retain(|t| t.name != "conv4.bias");
        assert!(ck.to_state("abc").unwrap_err().to_string().contains("conv4.bias"));
    }
}
