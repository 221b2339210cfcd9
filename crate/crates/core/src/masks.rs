//! Variational word masks: a per-word inference network giving Bernoulli
//! selection probabilities, binary Gumbel-softmax sampling, mask entropy and
//! the vocabulary-wide importance view `phi`.

use rand::Rng as _;
use rayon::prelude::*;

use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::{EmbeddingTable, SynonymTable, PAD};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Column of the "select" logit.
pub const SELECT: usize = 0;

/// Single-layer map from an embedding to (select, drop) logits.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceNet {
    /// `[d, 2]`
    pub weight: Tensor,
    /// `[2]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct InferenceVars {
    pub weight: Var,
    pub bias: Var,
}

impl InferenceNet {
    /// Zero weights: every word starts at `phi = 0.5`.
    pub fn zeros(dim: usize) -> Self {
        InferenceNet { weight: Tensor::zeros(vec![dim, 2]), bias: Tensor::zeros(vec![2]) }
    }

    pub fn random(dim: usize, std: f64, rng: &mut Rng) -> Self {
        let normal = rand_distr::Normal::new(0.0, std).expect("std");
        let values = (0..dim * 2).map(|_| rand_distr::Distribution::sample(&normal, rng)).collect();
        InferenceNet { weight: Tensor::new(vec![dim, 2], values).expect("shape"), bias: Tensor::zeros(vec![2]) }
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn bind(&self, g: &mut Graph) -> InferenceVars {
        InferenceVars { weight: g.param(&self.weight), bias: g.param(&self.bias) }
    }

    pub fn absorb_grads(&mut self, g: &Graph, vars: &InferenceVars) -> Result<()> {
        for (t, v) in [(&mut self.weight, vars.weight), (&mut self.bias, vars.bias)] {
            match g.grad(v) {
                Some(gr) => t.accumulate_grad(gr)?,
                None => t.accumulate_grad(&vec![0.0; t.len()])?,
            }
        }
        Ok(())
    }

    /// Selection probability for one embedding row.
    pub fn select_prob(&self, row: &[f64]) -> f64 {
        let w = self.weight.values();
        let b = self.bias.values();
        let (mut s, mut d) = (b[0], b[1]);
        for (j, &x) in row.iter().enumerate() {
            s += x * w[2 * j];
            d += x * w[2 * j + 1];
        }
        // softmax over two logits, select coordinate
        1.0 / (1.0 + (d - s).exp())
    }
}

/// Per-position selection probabilities; inactive positions are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDistribution {
    pub probs: Vec<f64>,
    pub active: Vec<bool>,
}

impl MaskDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Selection probabilities for an `[n, d]` block of embeddings.
pub fn mask_probs(net: &InferenceNet, embeddings: &[f64], n: usize) -> Result<MaskDistribution> {
    let d = net.dim();
    if embeddings.len() != n * d {
        return Err(Error::shape("mask_probs", &[&[n, d], &[embeddings.len()]]));
    }
    let probs = embeddings.chunks(d).map(|r| net.select_prob(r)).collect();
    Ok(MaskDistribution { probs, active: vec![true; n] })
}

/// Selection probabilities for a token sequence; PAD positions are inactive.
pub fn mask_probs_for(net: &InferenceNet, table: &EmbeddingTable, ids: &[usize]) -> MaskDistribution {
    MaskDistribution {
        probs: ids.iter().map(|&i| net.select_prob(table.row(i))).collect(),
        active: ids.iter().map(|&i| i != PAD).collect(),
    }
}

/// Standard Gumbel draw.
pub fn gumbel(rng: &mut Rng) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Select coordinate of the two-way Gumbel-softmax for one position.
pub fn relaxed_mask(p: f64, g_sel: f64, g_drop: f64, tau: f64) -> f64 {
    let a = (p.ln() + g_sel) / tau;
    let b = ((1.0 - p).ln() + g_drop) / tau;
    1.0 / (1.0 + (b - a).exp())
}

/// Relaxed Bernoulli masks; PAD positions get 0. Draws that saturate in
/// floating point are pulled back into the open unit interval.
pub fn sample_masks(dist: &MaskDistribution, tau: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    check_tau(tau)?;
    const LO: f64 = f64::MIN_POSITIVE;
    const HI: f64 = 1.0 - f64::EPSILON / 2.0;
    Ok(dist
        .probs
        .iter()
        .zip(&dist.active)
        .map(|(&p, &on)| {
            let (gs, gd) = (gumbel(rng), gumbel(rng));
            if on {
                relaxed_mask(p, gs, gd, tau).clamp(LO, HI)
            } else {
                0.0
            }
        })
        .collect())
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {tau}")))
    }
}

/// Entropy of one Bernoulli(p), in nats.
pub fn entropy_of(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Sum of Bernoulli entropies over active positions.
pub fn bernoulli_entropy(dist: &MaskDistribution) -> f64 {
    dist.probs.iter().zip(&dist.active).filter(|(_, &on)| on).map(|(&p, _)| entropy_of(p)).sum()
}

/// `phi(w)` for every vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalImportance {
    phi: Vec<f64>,
}

impl GlobalImportance {
    pub fn from_values(phi: Vec<f64>) -> Self {
        GlobalImportance { phi }
    }

    pub fn values(&self) -> &[f64] {
        &self.phi
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<f64> {
        self.phi.get(id).copied()
    }

    /// Mask values for a sequence: `phi` per token, 0 on PAD.
    pub fn mask_for(&self, ids: &[usize]) -> Result<Vec<f64>> {
        ids.iter()
            .map(|&i| match i {
                PAD => Ok(0.0),
                _ => self.get(i).ok_or_else(|| Error::Invalid(format!("no importance score for token id {i}"))),
            })
            .collect()
    }

    /// Mean `|phi(a) - phi(b)|` over synonym pairs; `None` without pairs.
    pub fn mean_synonym_gap(&self, synonyms: &SynonymTable) -> Option<f64> {
        let gaps: Vec<f64> = synonyms
            .pairs()
            .filter_map(|(a, b)| Some((self.get(a)? - self.get(b)?).abs()))
            .collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }

    /// `(id, phi)` sorted by `phi` descending, ties by id.
    pub fn ranked(&self) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self.phi.iter().copied().enumerate().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

pub fn global_importance(net: &InferenceNet, table: &EmbeddingTable) -> GlobalImportance {
    let phi = (0..table.rows()).into_par_iter().map(|i| net.select_prob(table.row(i))).collect();
    GlobalImportance { phi }
}

/// Memoized `phi`, valid for one parameter generation. Owners bump the
/// generation on every parameter update.
#[derive(Debug, Clone, Default)]
pub struct ImportanceCache {
    entry: Option<(u64, GlobalImportance)>,
}

impl ImportanceCache {
    pub fn get(&mut self, generation: u64, net: &InferenceNet, table: &EmbeddingTable) -> &GlobalImportance {
        if self.entry.as_ref().is_none_or(|(g, _)| *g != generation) {
            self.entry = Some((generation, global_importance(net, table)));
        }
        &self.entry.as_ref().expect("filled").1
    }

    pub fn invalidate(&mut self) {
        self.entry = None;
    }

    pub fn is_valid_for(&self, generation: u64) -> bool {
        matches!(self.entry, Some((g, _)) if g == generation)
    }
}

/// `[n, 2]` log-probabilities (select, drop) for an `[n, d]` embedding node.
pub fn mask_log_probs_graph(g: &mut Graph, net: &InferenceVars, emb: Var) -> Result<Var> {
    let z = g.matmul(emb, net.weight)?;
    let z = g.add_bias(z, net.bias)?;
    g.log_softmax(z)
}

/// Entropy summed over active rows of a `[n, 2]` log-probability node.
pub fn entropy_graph(g: &mut Graph, log_probs: Var, active: &[bool]) -> Result<Var> {
    let p = softmax_from_log(g, log_probs)?;
    let plogp = g.mul(p, log_probs)?;
    let w: Vec<f64> = active.iter().flat_map(|&on| [if on { -1.0 } else { 0.0 }; 2]).collect();
    let wv = g.input(vec![active.len(), 2], w)?;
    let terms = g.mul(plogp, wv)?;
    g.sum(terms)
}

fn softmax_from_log(g: &mut Graph, log_probs: Var) -> Result<Var> {
    // exp of a normalized log-softmax is its own softmax
    g.softmax(log_probs)
}

/// Relaxed masks `[n]` from `[n, 2]` log-probabilities and frozen Gumbel
/// noise `[n, 2]`; inactive rows are zeroed.
pub fn sample_masks_graph(g: &mut Graph, log_probs: Var, noise: &[f64], tau: f64, active: &[bool]) -> Result<Var> {
    check_tau(tau)?;
    let n = active.len();
    let nv = g.input(vec![n, 2], noise.to_vec())?;
    let z = g.add(log_probs, nv)?;
    let z = g.scalar_mul(z, 1.0 / tau)?;
    let s = g.softmax(z)?;
    let m = g.column(s, SELECT)?;
    if active.iter().all(|&a| a) {
        return Ok(m);
    }
    let on = g.input(vec![n], active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect())?;
    g.mul(m, on)
}

/// Gumbel noise for `n` positions, laid out as `[n, 2]`.
pub fn gumbel_noise(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..2 * n).map(|_| gumbel(rng)).collect()
}

/// Differentiable `phi` for the given vocabulary ids, as an `[m]` node.
pub fn phi_graph(g: &mut Graph, table: Var, net: &InferenceVars, ids: &[usize]) -> Result<Var> {
    let rows = g.embedding_lookup(table, ids)?;
    let lp = mask_log_probs_graph(g, net, rows)?;
    let p = g.softmax(lp)?;
    g.column(p, SELECT)
}
