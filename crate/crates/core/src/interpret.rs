//! Integrated Gradients over the deployed (word-scaled) classifier.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attack::with_jobs;
use crate::corpus::{Vocab, PAD, UNK};
use crate::error::{Error, Result};
use crate::model::TextClassifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// All-zero embeddings.
    Zero,
    /// Every non-PAD token replaced by UNK.
    Unk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Predicted,
    Gold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IgConfig {
    pub steps: usize,
    pub baseline: Baseline,
    pub target: Target,
}

impl Default for IgConfig {
    fn default() -> Self {
        IgConfig { steps: 50, baseline: Baseline::Zero, target: Target::Predicted }
    }
}

impl IgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("integrated gradients needs at least one step".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionVector {
    pub ids: Vec<usize>,
    /// One value per position; 0 on PAD.
    pub attributions: Vec<f64>,
    pub target: usize,
    /// `|sum(attributions) - (f(input) - f(baseline))|`
    pub residual: f64,
    /// `f(input) - f(baseline)`
    pub delta: f64,
}

impl AttributionVector {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Residual as a fraction of `|f(input) - f(baseline)|`.
    pub fn relative_residual(&self) -> f64 {
        if self.delta == 0.0 { self.residual } else { self.residual / self.delta.abs() }
    }

    pub fn dump_record(&self, id: usize, vocab: &Vocab) -> serde_json::Value {
        let keep: Vec<usize> = (0..self.ids.len()).filter(|&i| self.ids[i] != PAD).collect();
        json!({
            "id": id,
            "tokens": keep.iter().map(|&i| vocab.word(self.ids[i])).collect::<Vec<_>>(),
            "attributions": keep.iter().map(|&i| self.attributions[i]).collect::<Vec<_>>(),
            "target": self.target,
            "residual": self.residual,
        })
    }
}

/// Right-Riemann Integrated Gradients of the target logit with respect to the
/// encoder input, summed over the embedding dimension per token.
pub fn integrated_gradients<M: TextClassifier>(model: &M, ids: &[usize], gold: Option<usize>, cfg: &IgConfig) -> Result<AttributionVector> {
    cfg.validate()?;
    let n = ids.len();
    let d = model.embed_dim();
    let e = model.input_embeddings(ids)?;
    let b = match cfg.baseline {
        Baseline::Zero => vec![0.0; e.len()],
        Baseline::Unk => model.input_embeddings(&ids.iter().map(|&i| if i == PAD { PAD } else { UNK }).collect::<Vec<_>>())?,
    };
    let target = match (cfg.target, gold) {
        (Target::Gold, Some(y)) => y,
        (Target::Gold, None) => return Err(Error::Invalid("gold target requested without a label".into())),
        (Target::Predicted, _) => crate::model::argmax(&model.logits(&e, n)?),
    };
    let m = cfg.steps;
    let mut avg = vec![0.0; e.len()];
    let mut point = vec![0.0; e.len()];
    for k in 1..=m {
        let a = k as f64 / m as f64;
        for ((p, ev), bv) in point.iter_mut().zip(&e).zip(&b) {
            *p = bv + a * (ev - bv);
        }
        let (_, g) = model.logit_gradient(&point, n, target)?;
        avg.iter_mut().zip(&g).for_each(|(s, gv)| *s += gv);
    }
    let attributions: Vec<f64> = (0..n)
        .map(|i| {
            if ids[i] == PAD {
                return 0.0;
            }
            (i * d..(i + 1) * d).map(|j| (e[j] - b[j]) * avg[j] / m as f64).sum()
        })
        .collect();
    let f_e = model.logits(&e, n)?[target];
    let f_b = model.logits(&b, n)?[target];
    let delta = f_e - f_b;
    let residual = (attributions.iter().sum::<f64>() - delta).abs();
    Ok(AttributionVector { ids: ids.to_vec(), attributions, target, residual, delta })
}

/// Attributions for many inputs, in input order.
pub fn attribute_all<M: TextClassifier>(
    model: &M,
    inputs: &[(&[usize], Option<usize>)],
    cfg: &IgConfig,
    jobs: Option<usize>,
) -> Result<Vec<AttributionVector>> {
    with_jobs(jobs, || inputs.par_iter().map(|&(ids, y)| integrated_gradients(model, ids, y, cfg)).collect())?
}

pub fn write_attribution_dump(path: &Path, attrs: &[AttributionVector], vocab: &Vocab) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (id, a) in attrs.iter().enumerate() {
        writeln!(f, "{}", a.dump_record(id, vocab)).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}
