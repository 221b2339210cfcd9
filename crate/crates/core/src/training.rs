//! Loss terms and the training regimes: masked FLAT training with iterated
//! attack augmentation, traditional adversarial training, and the group-mask
//! baseline.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attack::{attack_dataset, AttackConfig, AttackResult, AttackSummary};
use crate::autodiff::{sgd_step, Graph, Tensor, Var};
use crate::corpus::{AdversarialPair, EmbeddingTable, Example, SynonymTable, PAD};
use crate::error::{Error, Result};
use crate::masks::{
    entropy_graph, gumbel_noise, mask_log_probs_graph, phi_graph, sample_masks_graph, GlobalImportance, ImportanceCache,
    InferenceNet, InferenceVars,
};
use crate::model::{ClassifierParams, ClassifierVars, FrozenModel, ModelConfig, TextClassifier};
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Relaxed Gumbel-softmax draws, one per token per step.
    Sampled,
    /// Every mask fixed at 1.
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatConfig {
    /// Entropy weight.
    pub beta: f64,
    /// Importance-regularizer weight.
    pub gamma: f64,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    /// Epochs of base training before the first round.
    pub base_epochs: usize,
    /// Epochs per attack/train round.
    pub epochs: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Training examples attacked per round; all when absent.
    pub attack_sample: Option<usize>,
    pub masks: MaskMode,
}

impl Default for FlatConfig {
    fn default() -> Self {
        FlatConfig {
            beta: 0.1,
            gamma: 0.001,
            tau: 0.5,
            lr: 0.2,
            clip_norm: Some(5.0),
            base_epochs: 10,
            epochs: 4,
            rounds: 3,
            batch_size: 32,
            seed: 0,
            attack_sample: None,
            masks: MaskMode::Sampled,
        }
    }
}

impl FlatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.rounds) {
            return Err(Error::Config(format!("rounds must lie in [1, 5], got {}", self.rounds)));
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::Config("beta and gamma must be nonnegative".into()));
        }
        crate::masks::check_tau(self.tau)?;
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("lr and batch_size must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// The same schedule with masks fixed at 1 and both regularizers off.
    pub fn traditional(&self) -> Self {
        FlatConfig { beta: 0.0, gamma: 0.0, masks: MaskMode::Ones, ..self.clone() }
    }
}

/// One learnable scalar per word cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMasks {
    /// Cluster of every vocabulary id.
    pub assignment: Vec<usize>,
    /// `[clusters, 1]`
    pub values: Tensor,
}

impl GroupMasks {
    pub fn word_scale(&self) -> Vec<f64> {
        self.assignment.iter().map(|&c| self.values.values()[c]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub classifier: ClassifierParams,
    pub inference: Option<InferenceNet>,
    pub groups: Option<GroupMasks>,
    pub round: usize,
    /// Accumulated adversarial set; only grows.
    pub adversarial: Vec<AdversarialPair>,
    /// Optimizer steps taken; doubles as the parameter generation.
    pub steps: u64,
    cache: ImportanceCache,
}

/// Graph handles of every trainable tensor in a [`TrainState`].
#[derive(Debug, Clone)]
pub struct Bound {
    pub cls: ClassifierVars,
    pub inf: Option<InferenceVars>,
    pub groups: Option<Var>,
}

impl TrainState {
    pub fn plain(classifier: ClassifierParams) -> Self {
        TrainState { classifier, inference: None, groups: None, round: 0, adversarial: Vec::new(), steps: 0, cache: ImportanceCache::default() }
    }

    /// Classifier plus a fresh inference network with every `phi` at 0.5.
    pub fn masked(classifier: ClassifierParams) -> Self {
        let d = classifier.embed_dim();
        TrainState { inference: Some(InferenceNet::zeros(d)), ..Self::plain(classifier) }
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            cls: self.classifier.bind(g),
            inf: self.inference.as_ref().map(|n| n.bind(g)),
            groups: self.groups.as_ref().map(|gm| g.param(&gm.values)),
        }
    }

    pub fn absorb_grads(&mut self, g: &Graph, b: &Bound) -> Result<()> {
        self.classifier.absorb_grads(g, &b.cls)?;
        if let (Some(net), Some(v)) = (self.inference.as_mut(), b.inf.as_ref()) {
            net.absorb_grads(g, v)?;
        }
        if let (Some(gm), Some(v)) = (self.groups.as_mut(), b.groups) {
            let gr = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; gm.values.len()]);
            gm.values.accumulate_grad(&gr)?;
        }
        Ok(())
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.classifier.tensors_mut();
        if let Some(n) = self.inference.as_mut() {
            v.extend(n.tensors_mut());
        }
        if let Some(gm) = self.groups.as_mut() {
            v.push(&mut gm.values);
        }
        v
    }

    /// `phi` for the current parameters; recomputed only after an update.
    pub fn importance(&mut self) -> Option<GlobalImportance> {
        let net = self.inference.as_ref()?;
        Some(self.cache.get(self.steps, net, &self.classifier.embedding).clone())
    }

    /// The deployed predictor: word scaling by `phi` or by group masks.
    pub fn frozen(&mut self) -> FrozenModel {
        if let Some(phi) = self.importance() {
            return FrozenModel::with_importance(self.classifier.clone(), &phi);
        }
        match &self.groups {
            Some(gm) => FrozenModel { params: self.classifier.clone(), word_scale: Some(gm.word_scale()) },
            None => FrozenModel::plain(self.classifier.clone()),
        }
    }
}

/// Mean over the batch of masked cross-entropy minus `beta` times the mask
/// entropy. Masks are drawn fresh per example.
pub fn prediction_loss(
    g: &mut Graph,
    bound: &Bound,
    state: &TrainState,
    batch: &[(&[usize], usize)],
    cfg: &FlatConfig,
    rng: &mut Rng,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Invalid("prediction loss over an empty batch".into()));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for &(ids, y) in batch {
        let active: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
        let emb = g.embedding_lookup(bound.cls.embedding, ids)?;
        let mut x = emb;
        let mut entropy = None;
        if let Some(inf) = &bound.inf {
            let lp = mask_log_probs_graph(g, inf, emb)?;
            if cfg.beta > 0.0 {
                entropy = Some(entropy_graph(g, lp, &active)?);
            }
            if cfg.masks == MaskMode::Sampled {
                let noise = gumbel_noise(ids.len(), rng);
                let m = sample_masks_graph(g, lp, &noise, cfg.tau, &active)?;
                x = g.scale_rows(emb, m)?;
            }
        }
        if let (Some(gv), Some(gm)) = (bound.groups, &state.groups) {
            let gids: Vec<usize> = ids.iter().map(|&i| gm.assignment[i]).collect();
            let m = g.embedding_lookup(gv, &gids)?;
            x = g.scale_rows(x, m)?;
        }
        let logits = state.classifier.encode_graph(g, &bound.cls, x, Some(rng))?;
        let lsm = g.log_softmax(logits)?;
        let ll = g.select(lsm, y)?;
        let mut term = g.scalar_mul(ll, -1.0)?;
        if let Some(h) = entropy {
            let bh = g.scalar_mul(h, -cfg.beta)?;
            term = g.add(term, bh)?;
        }
        terms.push(term);
    }
    let total = g.add_all(&terms)?;
    g.scalar_mul(total, 1.0 / batch.len() as f64)
}

/// Mean over pairs of the summed `|phi(orig) - phi(adv)|` at substituted
/// positions, through the differentiable inference network.
pub fn importance_regularizer_graph(g: &mut Graph, bound: &Bound, pairs: &[&AdversarialPair], vocab_size: usize) -> Result<Var> {
    let inf = bound.inf.as_ref().ok_or_else(|| Error::Invalid("importance regularizer needs an inference network".into()))?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for p in pairs {
        for s in p.substitutions() {
            if s.orig >= vocab_size || s.adv >= vocab_size {
                return Err(Error::Invalid(format!("substitution {} -> {} outside vocabulary of {vocab_size}", s.orig, s.adv)));
            }
            a.push(s.orig);
            b.push(s.adv);
        }
    }
    if a.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let pa = phi_graph(g, bound.cls.embedding, inf, &a)?;
    let pb = phi_graph(g, bound.cls.embedding, inf, &b)?;
    let d = g.sub(pa, pb)?;
    let d = g.abs(d)?;
    let s = g.sum(d)?;
    g.scalar_mul(s, 1.0 / pairs.len() as f64)
}

/// Value-only regularizer over a fixed importance table.
pub fn importance_regularizer(pairs: &[AdversarialPair], phi: &GlobalImportance) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in pairs {
        for s in p.substitutions() {
            let get = |i: usize| phi.get(i).ok_or_else(|| Error::Invalid(format!("no importance score for token id {i}")));
            total += (get(s.orig)? - get(s.adv)?).abs();
        }
    }
    Ok(total / pairs.len() as f64)
}

/// Prediction loss on the original batch, plus prediction loss on the
/// adversarial batch and `gamma` times the importance regularizer when
/// adversarial pairs are present.
pub fn flat_objective(
    g: &mut Graph,
    bound: &Bound,
    state: &TrainState,
    orig: &[&Example],
    adv: &[&AdversarialPair],
    cfg: &FlatConfig,
    rng: &mut Rng,
) -> Result<Var> {
    let ob: Vec<(&[usize], usize)> = orig.iter().map(|e| (e.ids.as_slice(), e.label)).collect();
    let mut loss = prediction_loss(g, bound, state, &ob, cfg, rng)?;
    if !adv.is_empty() {
        let ab: Vec<(&[usize], usize)> = adv.iter().map(|p| (p.adv_ids(), p.label())).collect();
        let la = prediction_loss(g, bound, state, &ab, cfg, rng)?;
        loss = g.add(loss, la)?;
        if cfg.gamma > 0.0 && bound.inf.is_some() {
            let li = importance_regularizer_graph(g, bound, adv, state.classifier.vocab_size())?;
            let li = g.scalar_mul(li, cfg.gamma)?;
            loss = g.add(loss, li)?;
        }
    }
    Ok(loss)
}

/// One optimizer step on the given batches; returns the loss value.
pub fn train_step(state: &mut TrainState, orig: &[&Example], adv: &[&AdversarialPair], cfg: &FlatConfig, rng: &mut Rng) -> Result<f64> {
    let mut g = Graph::new();
    let bound = state.bind(&mut g);
    let loss = flat_objective(&mut g, &bound, state, orig, adv, cfg, rng)?;
    let value = g.scalar(loss);
    g.backward(loss)?;
    state.absorb_grads(&g, &bound)?;
    sgd_step(&mut state.tensors_mut(), cfg.lr, cfg.clip_norm)?;
    state.classifier.embedding.zero_pad_row();
    state.steps += 1;
    Ok(value)
}

/// `epochs` passes over `train`; each batch is paired with the next slice of
/// the (cycled) adversarial set. `order` drives batch order, `noise` the mask
/// and dropout draws. Returns the mean loss of the last epoch.
pub fn train_epochs(
    state: &mut TrainState,
    train: &[Example],
    cfg: &FlatConfig,
    epochs: usize,
    order: &mut Rng,
    noise: &mut Rng,
) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let adversarial = std::mem::take(&mut state.adversarial);
    let mut last = f64::NAN;
    let mut adv_order: Vec<usize> = (0..adversarial.len()).collect();
    let mut adv_pos = adv_order.len();
    for _ in 0..epochs {
        let mut idx: Vec<usize> = (0..train.len()).collect();
        idx.shuffle(order);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in idx.chunks(cfg.batch_size) {
            let orig: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let mut adv = Vec::new();
            while !adv_order.is_empty() && adv.len() < chunk.len() {
                if adv_pos == adv_order.len() {
                    adv_order.shuffle(order);
                    adv_pos = 0;
                }
                adv.push(&adversarial[adv_order[adv_pos]]);
                adv_pos += 1;
                if adv.len() == adversarial.len() {
                    break;
                }
            }
            let l = train_step(state, &orig, &adv, cfg, noise);
            match l {
                Ok(v) => {
                    sum += v;
                    count += 1;
                }
                Err(e) => {
                    state.adversarial = adversarial;
                    return Err(e);
                }
            }
        }
        last = sum / count as f64;
    }
    state.adversarial = adversarial;
    Ok(last)
}

pub fn accuracy<M: TextClassifier>(model: &M, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Invalid("accuracy of an empty set".into()));
    }
    let mut hits = 0;
    for e in data {
        if model.predict(&e.ids)?.label == e.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Randomly initialized classifier over `vocab_size` words (or over the
/// given embedding table).
pub fn init_classifier(
    vocab_size: usize,
    num_classes: usize,
    model: &ModelConfig,
    seed: u64,
    pretrained: Option<EmbeddingTable>,
) -> Result<ClassifierParams> {
    let mut rng = rng_for(seed, "init");
    let emb = match pretrained {
        Some(t) => t,
        None => EmbeddingTable::random(vocab_size, model.embed_dim, &mut rng),
    };
    ClassifierParams::init(emb, num_classes, model, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub dev_acc: f64,
    pub after_attack_acc: Option<f64>,
    pub mean_phi_gap: Option<f64>,
    pub loss: Option<f64>,
    /// Pairs added this round.
    pub new_pairs: usize,
    /// Size of the accumulated adversarial set.
    pub adversarial: usize,
}

/// Plain cross-entropy training from `init` on clean data.
pub fn train_base(init: ClassifierParams, train: &[Example], dev: &[Example], cfg: &FlatConfig) -> Result<(TrainState, RoundMetrics)> {
    cfg.validate()?;
    let mut state = TrainState::plain(init);
    let (mut order, mut noise) = (rng_for(cfg.seed, "shuffle"), rng_for(cfg.seed, "masks"));
    let loss = train_epochs(&mut state, train, &cfg.traditional(), cfg.base_epochs, &mut order, &mut noise)?;
    let dev_acc = accuracy(&state.frozen(), dev)?;
    let m = RoundMetrics { round: 0, dev_acc, after_attack_acc: None, mean_phi_gap: None, loss: Some(loss), new_pairs: 0, adversarial: 0 };
    Ok((state, m))
}

pub struct Splits<'a> {
    pub train: &'a [Example],
    pub dev: &'a [Example],
}

/// Everything the caller may want to persist after a round.
pub struct RoundEvent<'a> {
    pub state: &'a TrainState,
    pub metrics: &'a RoundMetrics,
    /// Attack results on the training sample that fed this round.
    pub train_attacks: &'a [AttackResult],
    pub train_attack_examples: &'a [Example],
}

pub struct AttackSetup<'a> {
    pub synonyms: &'a SynonymTable,
    /// `None` disables the attack; rounds then train on clean data only.
    pub config: Option<&'a AttackConfig>,
    pub jobs: Option<usize>,
}

/// The latest checkpoint. A masked state that has not been updated yet still
/// deploys as the unmasked base classifier it was built from.
fn latest_checkpoint(state: &mut TrainState) -> FrozenModel {
    if state.steps == 0 {
        FrozenModel::plain(state.classifier.clone())
    } else {
        state.frozen()
    }
}

fn metrics_for(state: &mut TrainState, data: &Splits, atk: &AttackSetup, round: usize, loss: Option<f64>, new_pairs: usize) -> Result<RoundMetrics> {
    let model = latest_checkpoint(state);
    let dev_acc = accuracy(&model, data.dev)?;
    let after_attack_acc = match atk.config {
        Some(c) => Some(attack_dataset(&model, data.dev, atk.synonyms, c, atk.jobs)?.1.after_attack_acc),
        None => None,
    };
    let mean_phi_gap = state.importance().and_then(|phi| phi.mean_synonym_gap(atk.synonyms));
    Ok(RoundMetrics { round, dev_acc, after_attack_acc, mean_phi_gap, loss, new_pairs, adversarial: state.adversarial.len() })
}

fn run_rounds(
    mut state: TrainState,
    data: &Splits,
    atk: &AttackSetup,
    cfg: &FlatConfig,
    observer: &mut dyn FnMut(RoundEvent) -> Result<()>,
) -> Result<(TrainState, Vec<RoundMetrics>)> {
    cfg.validate()?;
    let mut shuffle = rng_for(cfg.seed, "shuffle");
    let mut sampler = rng_for(cfg.seed, "attack");
    let mut masks = rng_for(cfg.seed, "masks");
    let mut history = vec![metrics_for(&mut state, data, atk, 0, None, 0)?];
    observer(RoundEvent { state: &state, metrics: &history[0], train_attacks: &[], train_attack_examples: &[] })?;
    for round in 1..=cfg.rounds {
        state.round = round;
        let mut sample: Vec<Example> = data.train.to_vec();
        if let Some(k) = cfg.attack_sample.filter(|&k| k < sample.len()) {
            sample.shuffle(&mut sampler);
            sample.truncate(k);
        }
        let mut results = Vec::new();
        let mut new_pairs = 0;
        if let Some(c) = atk.config {
            let model = latest_checkpoint(&mut state);
            let (res, summary): (Vec<AttackResult>, AttackSummary) = attack_dataset(&model, &sample, atk.synonyms, c, atk.jobs)?;
            for r in &res {
                if let Some(p) = r.pair() {
                    state.adversarial.push(p.clone());
                    new_pairs += 1;
                }
            }
            if new_pairs == 0 && round == 1 {
                log::warn!("round 1 attack produced no adversarial examples; the model may already be robust");
            }
            log::info!("round {round}: {} successes of {} attacked", summary.successes, summary.successes + summary.failures);
            results = res;
        }
        let loss = train_epochs(&mut state, data.train, cfg, cfg.epochs, &mut shuffle, &mut masks)?;
        let m = metrics_for(&mut state, data, atk, round, Some(loss), new_pairs)?;
        log::info!("round {round}: dev {:.4} after-attack {:?}", m.dev_acc, m.after_attack_acc);
        history.push(m);
        observer(RoundEvent {
            state: &state,
            metrics: history.last().expect("pushed"),
            train_attacks: &results,
            train_attack_examples: if atk.config.is_some() { &sample } else { &[] },
        })?;
    }
    Ok((state, history))
}

/// Masked adversarial training from a base classifier. Round 0 reports the
/// base model; every later round attacks the latest parameters, adds the
/// successful pairs to the adversarial set and trains on both.
pub fn train_flat(
    base: &ClassifierParams,
    data: &Splits,
    atk: &AttackSetup,
    cfg: &FlatConfig,
    observer: &mut dyn FnMut(RoundEvent) -> Result<()>,
) -> Result<(TrainState, Vec<RoundMetrics>)> {
    run_rounds(TrainState::masked(base.clone()), data, atk, cfg, observer)
}

/// The same loop with masks fixed at 1 and no regularizers.
pub fn train_traditional_adv(
    base: &ClassifierParams,
    data: &Splits,
    atk: &AttackSetup,
    cfg: &FlatConfig,
    observer: &mut dyn FnMut(RoundEvent) -> Result<()>,
) -> Result<(TrainState, Vec<RoundMetrics>)> {
    run_rounds(TrainState::plain(base.clone()), data, atk, &cfg.traditional(), observer)
}

/// Lloyd's algorithm with k-means++ seeding over the rows of `points`
/// (`[n, d]`). Returns the cluster of each row.
pub fn kmeans(points: &[f64], d: usize, k: usize, iters: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let n = if d == 0 { 0 } else { points.len() / d };
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot form {k} clusters from {n} points")));
    }
    let row = |i: usize| &points[i * d..(i + 1) * d];
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers: Vec<Vec<f64>> = vec![row(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(row(pick).to_vec());
        let c = centers.last().expect("pushed").clone();
        for (i, m) in nearest.iter_mut().enumerate() {
            *m = m.min(dist2(row(i), &c));
        }
    }
    let mut assign = vec![0usize; n];
    for _ in 0..iters.max(1) {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let best = (0..k).min_by(|&x, &y| dist2(row(i), &centers[x]).total_cmp(&dist2(row(i), &centers[y]))).expect("k >= 1");
            if best != *a {
                *a = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            sums[a].iter_mut().zip(row(i)).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    Ok(assign)
}

/// Clusters the base model's word embeddings and trains one scalar mask per
/// cluster (initialized to 1) together with the classifier, with plain
/// cross-entropy on clean data.
pub fn train_group_mask_baseline(
    base: &ClassifierParams,
    data: &Splits,
    clusters: usize,
    cfg: &FlatConfig,
) -> Result<(TrainState, RoundMetrics)> {
    cfg.validate()?;
    let v = base.vocab_size();
    if clusters == 0 || clusters > v - 1 {
        return Err(Error::Config(format!("clusters must lie in [1, {}], got {clusters}", v - 1)));
    }
    let d = base.embed_dim();
    let words = &base.embedding.tensor().values()[d..];
    let assign = kmeans(words, d, clusters, 100, &mut rng_for(cfg.seed, "init"))?;
    let mut assignment = vec![0usize];
    assignment.extend(assign);
    let mut state = TrainState::plain(base.clone());
    state.groups = Some(GroupMasks { assignment, values: Tensor::filled(vec![clusters, 1], 1.0) });
    let (mut order, mut noise) = (rng_for(cfg.seed, "shuffle"), rng_for(cfg.seed, "masks"));
    let loss = train_epochs(&mut state, data.train, &cfg.traditional(), cfg.epochs * cfg.rounds, &mut order, &mut noise)?;
    let dev_acc = accuracy(&state.frozen(), data.dev)?;
    let m = RoundMetrics { round: 0, dev_acc, after_attack_acc: None, mean_phi_gap: None, loss: Some(loss), new_pairs: 0, adversarial: 0 };
    Ok((state, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AttackMeta;

    fn small(seed: u64) -> ClassifierParams {
        let cfg = ModelConfig { embed_dim: 4, filters: 3, ..Default::default() };
        init_classifier(12, 2, &cfg, seed, None).unwrap()
    }

    fn ex(ids: Vec<usize>, label: usize) -> Example {
        Example { ids, label, text: String::new() }
    }

    fn eval(state: &TrainState, f: impl FnOnce(&mut Graph, &Bound) -> Result<Var>) -> f64 {
        let mut g = Graph::without_grad();
        let b = state.bind(&mut g);
        let v = f(&mut g, &b).unwrap();
        g.scalar(v)
    }

    fn plain_ce(p: &ClassifierParams, ids: &[usize], y: usize) -> f64 {
        let o = p.forward(ids, None).unwrap();
        -o.probs[y].ln()
    }

    #[test]
    fn ones_without_beta_is_plain_ce() {
        let state = TrainState::masked(small(1));
        let cfg = FlatConfig { beta: 0.0, masks: MaskMode::Ones, ..Default::default() };
        let ids = vec![2, 3, 4, 5, 6, 0];
        let got = eval(&state, |g, b| prediction_loss(g, b, &state, &[(&ids, 1)], &cfg, &mut rng_for(0, "m")));
        assert!((got - plain_ce(&state.classifier, &ids, 1)).abs() < 1e-12);
    }

    #[test]
    fn zero_head_gives_ln2_and_entropy_offset() {
        let mut p = small(2);
        p.head_w = Tensor::zeros(p.head_w.shape().to_vec());
        let state = TrainState::masked(p);
        let ids = vec![2, 3, 4, 5, 0];
        let cfg = FlatConfig { beta: 0.0, ..Default::default() };
        let got = eval(&state, |g, b| prediction_loss(g, b, &state, &[(&ids, 0)], &cfg, &mut rng_for(0, "m")));
        assert!((got - 2f64.ln()).abs() < 1e-12);
        let cfg = FlatConfig { beta: 0.1, ..Default::default() };
        let got = eval(&state, |g, b| prediction_loss(g, b, &state, &[(&ids, 0)], &cfg, &mut rng_for(0, "m")));
        assert!((got - (2f64.ln() - 0.1 * 4.0 * 2f64.ln())).abs() < 1e-12);
    }

    fn pair(orig: Vec<usize>, adv: Vec<usize>, syn: &SynonymTable) -> AdversarialPair {
        AdversarialPair::new(ex(orig, 0), adv, syn, AttackMeta { attack: "t".into(), success: true, queries: 0 }).unwrap()
    }

    #[test]
    fn regularizer_values() {
        let syn = SynonymTable::from_pairs([(2, 3), (4, 5)]);
        let phi = GlobalImportance::from_values(vec![0.0, 0.5, 0.9, 0.4, 0.3, 0.2]);
        let p1 = pair(vec![2, 6, 6, 6, 6], vec![3, 6, 6, 6, 6], &syn);
        let p2 = pair(vec![4, 6, 6, 6, 6], vec![5, 6, 6, 6, 6], &syn);
        let none = pair(vec![4, 6, 6, 6, 6], vec![4, 6, 6, 6, 6], &syn);
        assert_eq!(importance_regularizer(&[none.clone()], &phi).unwrap(), 0.0);
        assert!((importance_regularizer(&[p1.clone()], &phi).unwrap() - 0.5).abs() < 1e-12);
        assert!((importance_regularizer(&[p1.clone(), p2.clone()], &phi).unwrap() - 0.3).abs() < 1e-12);

        let mut state = TrainState::masked(small(3));
        state.inference = Some(InferenceNet::random(4, 1.0, &mut rng_for(3, "x")));
        let phi = state.importance().unwrap();
        let want = importance_regularizer(&[p1.clone(), p2.clone()], &phi).unwrap();
        let got = eval(&state, |g, b| importance_regularizer_graph(g, b, &[&p1, &p2], 12));
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn gamma_zero_drops_regularizer() {
        let syn = SynonymTable::from_pairs([(2, 3)]);
        let mut state = TrainState::masked(small(4));
        state.inference = Some(InferenceNet::random(4, 1.0, &mut rng_for(4, "x")));
        let p = pair(vec![2, 6, 7, 8, 9], vec![3, 6, 7, 8, 9], &syn);
        let o = ex(vec![4, 5, 6, 7, 8], 1);
        let c0 = FlatConfig { gamma: 0.0, ..Default::default() };
        let c1 = FlatConfig { gamma: 0.5, ..Default::default() };
        let v0 = eval(&state, |g, b| flat_objective(g, b, &state, &[&o], &[&p], &c0, &mut rng_for(1, "m")));
        let v1 = eval(&state, |g, b| flat_objective(g, b, &state, &[&o], &[&p], &c1, &mut rng_for(1, "m")));
        let phi = state.importance().unwrap();
        let reg = importance_regularizer(&[p.clone()], &phi).unwrap();
        assert!((v1 - v0 - 0.5 * reg).abs() < 1e-12);
        let single = eval(&state, |g, b| flat_objective(g, b, &state, &[&o], &[], &c1, &mut rng_for(1, "m")));
        let ob = [(o.ids.as_slice(), 1)];
        let pred = eval(&state, |g, b| prediction_loss(g, b, &state, &ob, &c1, &mut rng_for(1, "m")));
        assert_eq!(single, pred);
    }

    #[test]
    fn step_updates_params_and_generation() {
        let mut state = TrainState::masked(small(5));
        let before = state.importance().unwrap();
        let data = vec![ex(vec![2, 3, 4, 5, 6], 0), ex(vec![7, 8, 9, 10, 11], 1)];
        let refs: Vec<&Example> = data.iter().collect();
        let cfg = FlatConfig { lr: 0.5, ..Default::default() };
        train_step(&mut state, &refs, &[], &cfg, &mut rng_for(0, "m")).unwrap();
        assert_eq!(state.steps, 1);
        let after = state.importance().unwrap();
        let fresh = crate::masks::global_importance(state.inference.as_ref().unwrap(), &state.classifier.embedding);
        assert_eq!(after, fresh);
        assert_ne!(before, after);
        assert!(state.classifier.embedding.row(PAD).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rounds_validation() {
        assert!(FlatConfig { rounds: 0, ..Default::default() }.validate().is_err());
        assert!(FlatConfig { rounds: 6, ..Default::default() }.validate().is_err());
        assert!(FlatConfig { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(FlatConfig::default().validate().is_ok());
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut pts = Vec::new();
        for i in 0..10 {
            let o = if i < 5 { 0.0 } else { 10.0 };
            pts.extend([o + 0.01 * i as f64, o]);
        }
        let a = kmeans(&pts, 2, 2, 50, &mut rng_for(0, "k")).unwrap();
        assert!(a[..5].iter().all(|&c| c == a[0]));
        assert!(a[5..].iter().all(|&c| c == a[5]));
        assert_ne!(a[0], a[5]);
        assert!(kmeans(&pts, 2, 11, 50, &mut rng_for(0, "k")).is_err());
    }

    #[test]
    fn group_masks_start_at_base() {
        let base = small(6);
        let data = vec![ex(vec![2, 3, 4, 5, 6], 0), ex(vec![7, 8, 9, 10, 11], 1)];
        let splits = Splits { train: &data, dev: &data };
        let cfg = FlatConfig { epochs: 0, ..Default::default() };
        let (mut st, _) = train_group_mask_baseline(&base, &splits, 3, &cfg).unwrap();
        let m = st.frozen();
        assert_eq!(m.predict(&data[0].ids).unwrap(), base.forward(&data[0].ids, None).unwrap());
        assert!(train_group_mask_baseline(&base, &splits, 12, &cfg).is_err());
        assert!(train_group_mask_baseline(&base, &splits, 0, &cfg).is_err());
        let (st1, _) = train_group_mask_baseline(&base, &splits, 1, &cfg).unwrap();
        assert!(st1.groups.unwrap().assignment[1..].iter().all(|&c| c == 0));
    }
}
