//! Convolutional sentence classifier: embedding lookup, one convolution layer
//! per filter width, max-pool over time, linear head. Word masks scale the
//! embedding rows before the convolution.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::{EmbeddingTable, PAD};
use crate::error::{Error, Result};
use crate::masks::GlobalImportance;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Filters per width.
    pub filters: usize,
    pub widths: Vec<usize>,
    /// Dropout on the pooled features during training.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { embed_dim: 32, filters: 32, widths: vec![3, 4, 5], dropout: 0.0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.filters == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub width: usize,
    /// `[width, d, filters]`
    pub weight: Tensor,
    /// `[filters]`
    pub bias: Tensor,
}

/// Parameters of the classifier `f_theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub embedding: EmbeddingTable,
    pub convs: Vec<ConvLayer>,
    /// `[widths * filters, classes]`
    pub head_w: Tensor,
    /// `[classes]`
    pub head_b: Tensor,
    pub dropout: f64,
}

/// Logits, class probabilities and the argmax label.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub label: usize,
}

impl ModelOutput {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs = exps.into_iter().map(|e| e / z).collect();
        ModelOutput { label: argmax(&logits), logits, probs }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Graph handles for one bound copy of the classifier parameters.
#[derive(Debug, Clone)]
pub struct ClassifierVars {
    pub embedding: Var,
    pub convs: Vec<(Var, Var)>,
    pub head_w: Var,
    pub head_b: Var,
}

impl ClassifierParams {
    pub fn init(embedding: EmbeddingTable, num_classes: usize, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least two classes, got {num_classes}")));
        }
        let d = embedding.dim();
        if d != cfg.embed_dim {
            return Err(Error::Config(format!("embedding dim {d} does not match model embed_dim {}", cfg.embed_dim)));
        }
        let f = cfg.filters;
        let convs = cfg
            .widths
            .iter()
            .map(|&w| {
                let std = (2.0 / (w * d) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("std");
                let values = (0..w * d * f).map(|_| normal.sample(rng)).collect();
                ConvLayer { width: w, weight: Tensor::new(vec![w, d, f], values).expect("shape"), bias: Tensor::zeros(vec![f]) }
            })
            .collect();
        let fan_in = cfg.widths.len() * f;
        let bound = (1.0 / fan_in as f64).sqrt();
        let head = (0..fan_in * num_classes).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(ClassifierParams {
            embedding,
            convs,
            head_w: Tensor::new(vec![fan_in, num_classes], head)?,
            head_b: Tensor::zeros(vec![num_classes]),
            dropout: cfg.dropout,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head_b.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn filters(&self) -> usize {
        self.convs[0].bias.len()
    }

    /// Shortest input the convolutions accept.
    pub fn min_len(&self) -> usize {
        self.convs.iter().map(|c| c.width).max().unwrap_or(1)
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim(),
            filters: self.filters(),
            widths: self.convs.iter().map(|c| c.width).collect(),
            dropout: self.dropout,
        }
    }

    /// Parameter tensors in a fixed order, with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), self.embedding.tensor())];
        for c in &self.convs {
            out.push((format!("conv{}.weight", c.width), &c.weight));
            out.push((format!("conv{}.bias", c.width), &c.bias));
        }
        out.push(("head.weight".into(), &self.head_w));
        out.push(("head.bias".into(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![self.embedding.tensor_mut()];
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Puts every parameter on `g` as a tracked leaf.
    pub fn bind(&self, g: &mut Graph) -> ClassifierVars {
        ClassifierVars {
            embedding: g.param(self.embedding.tensor()),
            convs: self.convs.iter().map(|c| (g.param(&c.weight), g.param(&c.bias))).collect(),
            head_w: g.param(&self.head_w),
            head_b: g.param(&self.head_b),
        }
    }

    /// Like [`bind`](Self::bind) but without the embedding table and with
    /// every leaf constant; for gradients with respect to the inputs only.
    pub fn bind_encoder_constant(&self, g: &mut Graph) -> ClassifierVars {
        ClassifierVars {
            embedding: g.constant(Tensor::zeros(vec![1, self.embed_dim()])),
            convs: self.convs.iter().map(|c| (g.constant(c.weight.clone()), g.constant(c.bias.clone()))).collect(),
            head_w: g.constant(self.head_w.clone()),
            head_b: g.constant(self.head_b.clone()),
        }
    }

    /// Adds gradients from a finished backward pass into the parameters.
    /// The padding row never receives gradient.
    pub fn absorb_grads(&mut self, g: &Graph, vars: &ClassifierVars) -> Result<()> {
        let pairs: Vec<Var> = std::iter::once(vars.embedding)
            .chain(vars.convs.iter().flat_map(|&(w, b)| [w, b]))
            .chain([vars.head_w, vars.head_b])
            .collect();
        for (t, v) in self.tensors_mut().into_iter().zip(pairs) {
            match g.grad(v) {
                Some(gr) => t.accumulate_grad(gr)?,
                None => t.accumulate_grad(&vec![0.0; t.len()])?,
            }
        }
        self.embedding.zero_pad_row();
        Ok(())
    }

    /// Embedding rows for `ids`, optionally scaled per position; PAD rows are 0.
    pub fn embed_graph(&self, g: &mut Graph, vars: &ClassifierVars, ids: &[usize], mask: Option<Var>) -> Result<Var> {
        let x = g.embedding_lookup(vars.embedding, ids)?;
        match mask {
            Some(m) => g.scale_rows(x, m),
            None => Ok(x),
        }
    }

    /// Encoder and head on an `[n, d]` input node; returns `[1, C]` logits.
    pub fn encode_graph(&self, g: &mut Graph, vars: &ClassifierVars, x: Var, dropout: Option<&mut Rng>) -> Result<Var> {
        let n = g.shape(x)[0];
        if n < self.min_len() {
            return Err(Error::Invalid(format!("sequence length {n} shorter than widest filter {}", self.min_len())));
        }
        let mut pooled = Vec::with_capacity(vars.convs.len());
        for &(w, b) in &vars.convs {
            let c = g.conv1d(x, w, b)?;
            let r = g.relu(c)?;
            pooled.push(g.max_pool_over_time(r)?);
        }
        let mut h = g.concat(&pooled)?;
        if let Some(rng) = dropout.filter(|_| self.dropout > 0.0) {
            let keep = 1.0 - self.dropout;
            let m: Vec<f64> =
                (0..g.value(h).len()).map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 }).collect();
            let shape = g.shape(h).to_vec();
            let mv = g.input(shape, m)?;
            h = g.mul(h, mv)?;
        }
        let z = g.matmul(h, vars.head_w)?;
        g.add_bias(z, vars.head_b)
    }

    pub fn forward_graph(&self, g: &mut Graph, vars: &ClassifierVars, ids: &[usize], mask: Option<Var>) -> Result<Var> {
        let x = self.embed_graph(g, vars, ids, mask)?;
        self.encode_graph(g, vars, x, None)
    }

    /// Input rows for `ids` scaled by `mask` (1 when absent); PAD rows are 0.
    pub fn input_embeddings(&self, ids: &[usize], mask: Option<&[f64]>) -> Result<Vec<f64>> {
        let d = self.embed_dim();
        if let Some(m) = mask {
            if m.len() != ids.len() {
                return Err(Error::shape("forward", &[&[ids.len()], &[m.len()]]));
            }
        }
        let mut x = vec![0.0; ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            if id >= self.vocab_size() {
                return Err(Error::Invalid(format!("token id {id} out of range for vocabulary of {}", self.vocab_size())));
            }
            if id == PAD {
                continue;
            }
            let row = self.embedding.row(id);
            let out = &mut x[i * d..(i + 1) * d];
            match mask {
                Some(m) => out.iter_mut().zip(row).for_each(|(o, r)| *o = r * m[i]),
                None => out.copy_from_slice(row),
            }
        }
        Ok(x)
    }

    /// Inference-path logits for an `[n, d]` input.
    pub fn logits_from_embeddings(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        let d = self.embed_dim();
        if x.len() != n * d {
            return Err(Error::shape("logits", &[&[n, d], &[x.len()]]));
        }
        if n < self.min_len() {
            return Err(Error::Invalid(format!("sequence length {n} shorter than widest filter {}", self.min_len())));
        }
        let f = self.filters();
        let mut h = Vec::with_capacity(self.convs.len() * f);
        let mut acc = vec![0.0; f];
        for c in &self.convs {
            let (k, w, b) = (c.width, c.weight.values(), c.bias.values());
            let mut best = vec![f64::NEG_INFINITY; f];
            for t in 0..=n - k {
                acc.copy_from_slice(b);
                for j in 0..k {
                    let xr = &x[(t + j) * d..(t + j + 1) * d];
                    for (ci, &xv) in xr.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let wr = &w[(j * d + ci) * f..(j * d + ci + 1) * f];
                        for (a, wv) in acc.iter_mut().zip(wr) {
                            *a += xv * wv;
                        }
                    }
                }
                for (bv, &a) in best.iter_mut().zip(&acc) {
                    let r = a.max(0.0);
                    if r > *bv {
                        *bv = r;
                    }
                }
            }
            h.extend_from_slice(&best);
        }
        let cl = self.num_classes();
        let hw = self.head_w.values();
        let mut logits = self.head_b.values().to_vec();
        for (p, &hv) in h.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            for (l, wv) in logits.iter_mut().zip(&hw[p * cl..(p + 1) * cl]) {
                *l += hv * wv;
            }
        }
        Ok(logits)
    }

    /// Classifies `ids` with embeddings scaled per position by `mask`.
    pub fn forward(&self, ids: &[usize], mask: Option<&[f64]>) -> Result<ModelOutput> {
        let x = self.input_embeddings(ids, mask)?;
        Ok(ModelOutput::from_logits(self.logits_from_embeddings(&x, ids.len())?))
    }
}

/// Inference rule of a masked model: every embedding is scaled by the global
/// importance of its word.
pub fn predict_with_importance(params: &ClassifierParams, importance: &GlobalImportance, ids: &[usize]) -> Result<ModelOutput> {
    let mask = importance.mask_for(ids)?;
    params.forward(ids, Some(&mask))
}

/// A frozen classifier seen through its (scaled) input embeddings. Attacks
/// and attributions are written against this interface.
pub trait TextClassifier: Sync {
    fn num_classes(&self) -> usize;
    fn embed_dim(&self) -> usize;
    /// `[n, d]` encoder input for `ids`, including any deployed word scaling.
    fn input_embeddings(&self, ids: &[usize]) -> Result<Vec<f64>>;
    fn logits(&self, x: &[f64], n: usize) -> Result<Vec<f64>>;
    /// Logit of `class` and its gradient with respect to `x`.
    fn logit_gradient(&self, x: &[f64], n: usize, class: usize) -> Result<(f64, Vec<f64>)>;

    fn predict(&self, ids: &[usize]) -> Result<ModelOutput> {
        let x = self.input_embeddings(ids)?;
        Ok(ModelOutput::from_logits(self.logits(&x, ids.len())?))
    }
}

/// Snapshot of a trained classifier, optionally with a per-word input scale
/// (global importance for masked models, group masks for the group baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel {
    pub params: ClassifierParams,
    pub word_scale: Option<Vec<f64>>,
}

impl FrozenModel {
    pub fn plain(params: ClassifierParams) -> Self {
        FrozenModel { params, word_scale: None }
    }

    pub fn with_importance(params: ClassifierParams, importance: &GlobalImportance) -> Self {
        FrozenModel { params, word_scale: Some(importance.values().to_vec()) }
    }

    pub fn with_word_scale(params: ClassifierParams, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != params.vocab_size() {
            return Err(Error::shape("word_scale", &[&[params.vocab_size()], &[scale.len()]]));
        }
        Ok(FrozenModel { params, word_scale: Some(scale) })
    }

    fn mask(&self, ids: &[usize]) -> Option<Vec<f64>> {
        self.word_scale.as_ref().map(|s| ids.iter().map(|&i| if i == PAD { 0.0 } else { s.get(i).copied().unwrap_or(0.0) }).collect())
    }
}

impl TextClassifier for FrozenModel {
    fn num_classes(&self) -> usize {
        self.params.num_classes()
    }

    fn embed_dim(&self) -> usize {
        self.params.embed_dim()
    }

    fn input_embeddings(&self, ids: &[usize]) -> Result<Vec<f64>> {
        self.params.input_embeddings(ids, self.mask(ids).as_deref())
    }

    fn logits(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        self.params.logits_from_embeddings(x, n)
    }

    fn logit_gradient(&self, x: &[f64], n: usize, class: usize) -> Result<(f64, Vec<f64>)> {
        if class >= self.num_classes() {
            return Err(Error::Invalid(format!("class {class} out of range")));
        }
        let mut g = Graph::new();
        let vars = self.params.bind_encoder_constant(&mut g);
        let xv = g.param(&Tensor::new(vec![n, self.embed_dim()], x.to_vec())?);
        let logits = self.params.encode_graph(&mut g, &vars, xv, None)?;
        let target = g.select(logits, class)?;
        g.backward(target)?;
        let grad = g.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);
        Ok((g.scalar(target), grad))
    }
}
