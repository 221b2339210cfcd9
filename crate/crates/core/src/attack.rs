//! Greedy synonym-substitution attacks against a frozen classifier.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{AdversarialPair, AttackMeta, Example, SynonymTable, Vocab, PAD, UNK};
use crate::error::{Error, Result};
use crate::model::{ModelOutput, TextClassifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Occlusion-ranked positions, best synonym per position (Textfooler-like).
    DeletionImportance,
    /// Saliency times probability drop ordering (PWWS-like).
    SaliencyWeighted,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::DeletionImportance => "deletion_importance",
            AttackKind::SaliencyWeighted => "saliency_weighted",
        })
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "deletion_importance" | "deletion" | "textfooler" => Ok(AttackKind::DeletionImportance),
            "saliency_weighted" | "saliency" | "pwws" => Ok(AttackKind::SaliencyWeighted),
            _ => Err(Error::Config(format!("unknown attack kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Upper bound on the fraction of non-PAD positions substituted.
    pub max_sub_ratio: f64,
    /// Synonyms evaluated per position.
    pub max_candidates: usize,
    /// Model queries per example.
    pub query_budget: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig { kind: AttackKind::DeletionImportance, max_sub_ratio: 0.3, max_candidates: 10, query_budget: 2000 }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_sub_ratio > 0.0 && self.max_sub_ratio <= 1.0) {
            return Err(Error::Config(format!("max_sub_ratio must lie in (0, 1], got {}", self.max_sub_ratio)));
        }
        if self.max_candidates == 0 || self.query_budget == 0 {
            return Err(Error::Config("max_candidates and query_budget must be positive".into()));
        }
        Ok(())
    }

    /// `ceil(rho * n)` for `n` non-PAD tokens.
    pub fn max_substitutions(&self, n_nonpad: usize) -> usize {
        (self.max_sub_ratio * n_nonpad as f64 - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// The model already misclassified the original.
    Skipped,
    Failed,
    Success,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub outcome: Outcome,
    pub gold: usize,
    pub pred_before: usize,
    pub pred_after: usize,
    pub queries: usize,
    /// Gold-class probability before the attack and after each committed substitution.
    pub trace: Vec<f64>,
    /// Final perturbed input, whether or not it flips the label; `None` when skipped.
    pub perturbed: Option<AdversarialPair>,
}

impl AttackResult {
    pub fn is_success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    /// The adversarial pair, only for successful attacks.
    pub fn pair(&self) -> Option<&AdversarialPair> {
        self.perturbed.as_ref().filter(|_| self.is_success())
    }

    /// Still predicted correctly after the attack attempt.
    pub fn survived(&self) -> bool {
        self.outcome == Outcome::Failed
    }

    /// One adversarial-dump line.
    pub fn dump_record(&self, id: usize, original: &Example, vocab: &Vocab) -> serde_json::Value {
        let adv = self.perturbed.as_ref().map(|p| p.adv_ids()).unwrap_or(&original.ids);
        let words = |ids: &[usize]| ids.iter().filter(|&&i| i != PAD).map(|&i| vocab.word(i).to_string()).collect::<Vec<_>>();
        let subs: Vec<_> = self
            .perturbed
            .iter()
            .flat_map(|p| p.substitutions())
            .map(|s| json!([s.pos, vocab.word(s.orig), vocab.word(s.adv)]))
            .collect();
        json!({
            "id": id,
            "orig_tokens": words(&original.ids),
            "adv_tokens": words(adv),
            "subs": subs,
            "gold": self.gold,
            "pred_before": self.pred_before,
            "pred_after": self.pred_after,
            "success": self.is_success(),
            "queries": self.queries,
        })
    }
}

struct Session<'a, M: TextClassifier> {
    model: &'a M,
    queries: usize,
    budget: usize,
}

impl<M: TextClassifier> Session<'_, M> {
    fn exhausted(&self) -> bool {
        self.queries >= self.budget
    }

    fn predict(&mut self, ids: &[usize]) -> Result<ModelOutput> {
        self.queries += 1;
        self.model.predict(ids)
    }

    /// Gold probability with position `i` replaced by a zero embedding.
    fn occluded(&mut self, x: &[f64], n: usize, i: usize, y: usize) -> Result<f64> {
        self.queries += 1;
        let d = self.model.embed_dim();
        let mut xo = x.to_vec();
        xo[i * d..(i + 1) * d].fill(0.0);
        Ok(ModelOutput::from_logits(self.model.logits(&xo, n)?).probs[y])
    }
}

fn finish(
    ex: &Example,
    kind: AttackKind,
    pred_before: usize,
    cur: Vec<usize>,
    cur_label: usize,
    trace: Vec<f64>,
    queries: usize,
    synonyms: &SynonymTable,
) -> Result<AttackResult> {
    let success = cur_label != ex.label;
    let meta = AttackMeta { attack: kind.to_string(), success, queries };
    let pair = AdversarialPair::new(ex.clone(), cur, synonyms, meta)?;
    Ok(AttackResult {
        outcome: if success { Outcome::Success } else { Outcome::Failed },
        gold: ex.label,
        pred_before,
        pred_after: cur_label,
        queries,
        trace,
        perturbed: Some(pair),
    })
}

fn skipped(ex: &Example, pred: usize, queries: usize) -> AttackResult {
    AttackResult { outcome: Outcome::Skipped, gold: ex.label, pred_before: pred, pred_after: pred, queries, trace: Vec::new(), perturbed: None }
}

fn order_desc(scores: &[(usize, f64)]) -> Vec<usize> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().map(|(i, _)| i).collect()
}

/// Ranks positions by the gold-probability drop under zero occlusion and
/// substitutes greedily in that order.
pub fn deletion_importance_attack<M: TextClassifier>(
    model: &M,
    ex: &Example,
    synonyms: &SynonymTable,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let y = ex.label;
    let mut s = Session { model, queries: 0, budget: cfg.query_budget };
    let orig = s.predict(&ex.ids)?;
    if orig.label != y {
        return Ok(skipped(ex, orig.label, s.queries));
    }
    let n = ex.ids.len();
    let x = model.input_embeddings(&ex.ids)?;
    let positions: Vec<usize> = (0..n).filter(|&i| ex.ids[i] != PAD).collect();
    let max_subs = cfg.max_substitutions(positions.len());
    let mut scores = Vec::with_capacity(positions.len());
    for &i in &positions {
        if s.exhausted() {
            break;
        }
        scores.push((i, orig.probs[y] - s.occluded(&x, n, i, y)?));
    }

    let mut cur = ex.ids.clone();
    let (mut cur_py, mut cur_label) = (orig.probs[y], orig.label);
    let mut trace = vec![cur_py];
    let mut subs = 0;
    'positions: for pos in order_desc(&scores) {
        if subs >= max_subs || cur_label != y {
            break;
        }
        let mut flip: Option<(usize, f64, usize)> = None;
        let mut best: Option<(usize, f64)> = None;
        for &cand in synonyms.synonyms(ex.ids[pos]).iter().take(cfg.max_candidates) {
            if s.exhausted() {
                break;
            }
            let mut trial = cur.clone();
            trial[pos] = cand;
            let out = s.predict(&trial)?;
            let py = out.probs[y];
            if out.label != y {
                if flip.is_none_or(|(_, fp, _)| py < fp) {
                    flip = Some((cand, py, out.label));
                }
            } else if best.is_none_or(|(_, bp)| py < bp) {
                best = Some((cand, py));
            }
        }
        if let Some((cand, py, label)) = flip {
            cur[pos] = cand;
            cur_label = label;
            trace.push(py);
            break 'positions;
        }
        if let Some((cand, py)) = best.filter(|&(_, py)| py < cur_py) {
            cur[pos] = cand;
            cur_py = py;
            trace.push(py);
            subs += 1;
        }
        if s.exhausted() {
            break;
        }
    }
    finish(ex, AttackKind::DeletionImportance, orig.label, cur, cur_label, trace, s.queries, synonyms)
}

/// Orders positions by `softmax(saliency) * best_drop` and substitutes each
/// position's best synonym greedily.
pub fn saliency_weighted_attack<M: TextClassifier>(
    model: &M,
    ex: &Example,
    synonyms: &SynonymTable,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let y = ex.label;
    let mut s = Session { model, queries: 0, budget: cfg.query_budget };
    let orig = s.predict(&ex.ids)?;
    if orig.label != y {
        return Ok(skipped(ex, orig.label, s.queries));
    }
    let p0 = orig.probs[y];
    let n = ex.ids.len();
    let positions: Vec<usize> = (0..n).filter(|&i| ex.ids[i] != PAD).collect();
    let max_subs = cfg.max_substitutions(positions.len());

    let mut saliency = Vec::with_capacity(positions.len());
    for &i in &positions {
        if s.exhausted() {
            break;
        }
        let mut t = ex.ids.clone();
        t[i] = UNK;
        saliency.push(p0 - s.predict(&t)?.probs[y]);
    }
    let max_s = saliency.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = saliency.iter().map(|v| (v - max_s).exp()).sum();

    // (position, best synonym, drop, flips?)
    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for (k, &sal) in saliency.iter().enumerate() {
        let pos = positions[k];
        let mut best: Option<(usize, f64)> = None;
        for &c in synonyms.synonyms(ex.ids[pos]).iter().take(cfg.max_candidates) {
            if s.exhausted() {
                break;
            }
            let mut t = ex.ids.clone();
            t[pos] = c;
            let py = s.predict(&t)?.probs[y];
            if best.is_none_or(|(_, bp)| py < bp) {
                best = Some((c, py));
            }
        }
        if let Some((c, py)) = best {
            let weight = (sal - max_s).exp() / z;
            cands.push((pos, c, weight * (p0 - py)));
        }
    }
    let best_syn: std::collections::HashMap<usize, usize> = cands.iter().map(|&(p, c, _)| (p, c)).collect();
    let order = order_desc(&cands.iter().map(|&(p, _, sc)| (p, sc)).collect::<Vec<_>>());

    let mut cur = ex.ids.clone();
    let (mut cur_py, mut cur_label) = (p0, orig.label);
    let mut trace = vec![p0];
    let mut subs = 0;
    for pos in order {
        if subs >= max_subs || cur_label != y || s.exhausted() {
            break;
        }
        let mut trial = cur.clone();
        trial[pos] = best_syn[&pos];
        let out = s.predict(&trial)?;
        if out.label != y || out.probs[y] < cur_py {
            cur = trial;
            (cur_py, cur_label) = (out.probs[y], out.label);
            trace.push(cur_py);
            subs += 1;
        }
    }
    finish(ex, AttackKind::SaliencyWeighted, orig.label, cur, cur_label, trace, s.queries, synonyms)
}

pub fn attack_example<M: TextClassifier>(model: &M, ex: &Example, synonyms: &SynonymTable, cfg: &AttackConfig) -> Result<AttackResult> {
    match cfg.kind {
        AttackKind::DeletionImportance => deletion_importance_attack(model, ex, synonyms, cfg),
        AttackKind::SaliencyWeighted => saliency_weighted_attack(model, ex, synonyms, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttackSummary {
    pub total: usize,
    pub successes: usize,
    pub failures: usize,
    pub skipped: usize,
    pub clean_acc: f64,
    pub after_attack_acc: f64,
    pub mean_queries: f64,
}

impl AttackSummary {
    pub fn from_results(results: &[AttackResult]) -> Self {
        let count = |o| results.iter().filter(|r| r.outcome == o).count();
        let (successes, failures, skipped) = (count(Outcome::Success), count(Outcome::Failed), count(Outcome::Skipped));
        let total = results.len();
        let frac = |k: usize| if total == 0 { 0.0 } else { k as f64 / total as f64 };
        AttackSummary {
            total,
            successes,
            failures,
            skipped,
            clean_acc: frac(total - skipped),
            after_attack_acc: frac(failures),
            mean_queries: if total == 0 { 0.0 } else { results.iter().map(|r| r.queries).sum::<usize>() as f64 / total as f64 },
        }
    }

    /// Fraction of originally-correct examples the attack flipped.
    pub fn flip_rate(&self) -> f64 {
        let attacked = self.successes + self.failures;
        if attacked == 0 { 0.0 } else { self.successes as f64 / attacked as f64 }
    }
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool when `None`.
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map(|p| p.install(f))
            .map_err(|e| Error::Config(format!("thread pool: {e}"))),
        None => Ok(f()),
    }
}

/// Attacks every example; results come back in input order.
pub fn attack_dataset<M: TextClassifier>(
    model: &M,
    examples: &[Example],
    synonyms: &SynonymTable,
    cfg: &AttackConfig,
    jobs: Option<usize>,
) -> Result<(Vec<AttackResult>, AttackSummary)> {
    cfg.validate()?;
    let results = with_jobs(jobs, || {
        examples.par_iter().map(|ex| attack_example(model, ex, synonyms, cfg)).collect::<Result<Vec<_>>>()
    })??;
    let summary = AttackSummary::from_results(&results);
    Ok((results, summary))
}

pub fn write_attack_dump(path: &Path, results: &[AttackResult], examples: &[Example], vocab: &Vocab) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (id, (r, ex)) in results.iter().zip(examples).enumerate() {
        writeln!(f, "{}", r.dump_record(id, ex, vocab)).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Bag-of-embeddings linear model: logits = sum_i x_i W + b.
    pub(crate) struct LinearBag {
        pub table: Vec<Vec<f64>>,
        pub w: Vec<Vec<f64>>,
        pub b: Vec<f64>,
    }

    impl TextClassifier for LinearBag {
        fn num_classes(&self) -> usize {
            self.b.len()
        }
        fn embed_dim(&self) -> usize {
            self.w.len()
        }
        fn input_embeddings(&self, ids: &[usize]) -> Result<Vec<f64>> {
            Ok(ids.iter().flat_map(|&i| if i == PAD { vec![0.0; self.embed_dim()] } else { self.table[i].clone() }).collect())
        }
        fn logits(&self, x: &[f64], _n: usize) -> Result<Vec<f64>> {
            let d = self.embed_dim();
            let mut out = self.b.clone();
            for row in x.chunks(d) {
                for (j, v) in row.iter().enumerate() {
                    for (c, o) in out.iter_mut().enumerate() {
                        *o += v * self.w[j][c];
                    }
                }
            }
            Ok(out)
        }
        fn logit_gradient(&self, x: &[f64], n: usize, class: usize) -> Result<(f64, Vec<f64>)> {
            let f = self.logits(x, n)?[class];
            Ok((f, (0..n).flat_map(|_| self.w.iter().map(move |r| r[class])).collect()))
        }
    }

    /// Vocabulary: 0 pad, 1 unk, 2 good, 3 great, 4 the, 5 movie, 6 fine.
    /// One feature; "good" carries +2, "great" -1, everything else 0.
    fn sentiment() -> (LinearBag, SynonymTable) {
        let table = vec![vec![0.0], vec![0.0], vec![2.0], vec![-1.0], vec![0.0], vec![0.0], vec![0.5]];
        let model = LinearBag { table, w: vec![vec![-1.0, 1.0]], b: vec![0.0, 0.0] };
        (model, SynonymTable::from_pairs([(2, 3), (4, 6)]))
    }

    fn ex(ids: Vec<usize>, label: usize) -> Example {
        Example { ids, label, text: String::new() }
    }

    #[test]
    fn single_substitution_flips() {
        let (m, syn) = sentiment();
        let e = ex(vec![4, 5, 2, 5], 1);
        for kind in [AttackKind::DeletionImportance, AttackKind::SaliencyWeighted] {
            let cfg = AttackConfig { kind, ..Default::default() };
            let r = attack_example(&m, &e, &syn, &cfg).unwrap();
            assert!(r.is_success(), "{kind}");
            let p = r.pair().unwrap();
            assert_eq!(p.adv_ids(), &[4, 5, 3, 5]);
            assert_eq!(p.substitutions().len(), 1);
            assert_eq!(r.pred_after, 0);
        }
    }

    #[test]
    fn constant_model_never_flips() {
        let (mut m, syn) = sentiment();
        m.w = vec![vec![0.0, 0.0]];
        m.b = vec![0.0, 1.0];
        let e = ex(vec![4, 5, 2, 5], 1);
        for kind in [AttackKind::DeletionImportance, AttackKind::SaliencyWeighted] {
            let r = attack_example(&m, &e, &syn, &AttackConfig { kind, ..Default::default() }).unwrap();
            assert_eq!(r.outcome, Outcome::Failed);
            assert!(r.pair().is_none());
            assert_eq!(r.perturbed.unwrap().substitutions().len(), 0);
        }
    }

    #[test]
    fn misclassified_is_skipped() {
        let (m, syn) = sentiment();
        let r = attack_example(&m, &ex(vec![4, 5, 2, 5], 0), &syn, &AttackConfig::default()).unwrap();
        assert_eq!(r.outcome, Outcome::Skipped);
        assert_eq!(r.queries, 1);
    }

    #[test]
    fn ratio_limit() {
        let cfg = AttackConfig::default();
        assert_eq!(cfg.max_substitutions(10), 3);
        assert_eq!(cfg.max_substitutions(11), 4);
        assert_eq!(cfg.max_substitutions(1), 1);
    }

    #[test]
    fn summary_partition() {
        let (m, syn) = sentiment();
        let data = vec![ex(vec![4, 5, 2, 5], 1), ex(vec![4, 5, 2, 5], 0), ex(vec![4, 5, 5, 5], 0), ex(vec![2, 2, 2, 6], 1)];
        let (res, s) = attack_dataset(&m, &data, &syn, &AttackConfig::default(), Some(2)).unwrap();
        assert_eq!(s.successes + s.failures + s.skipped, data.len());
        assert_eq!(res.len(), 4);
        assert_eq!(res[1].outcome, Outcome::Skipped);
        let (res2, _) = attack_dataset(&m, &data, &syn, &AttackConfig::default(), None).unwrap();
        assert_eq!(res, res2);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("pwws".parse::<AttackKind>().unwrap(), AttackKind::SaliencyWeighted);
        assert_eq!("deletion-importance".parse::<AttackKind>().unwrap(), AttackKind::DeletionImportance);
        assert!("gene".parse::<AttackKind>().is_err());
    }

    #[test]
    fn dump_record_fields() {
        let (m, syn) = sentiment();
        let vocab = Vocab::from_word_list(&["good", "great", "the", "movie", "fine"]);
        let e = ex(vec![4, 5, 2, 5], 1);
        let r = attack_example(&m, &e, &syn, &AttackConfig::default()).unwrap();
        let v = r.dump_record(7, &e, &vocab);
        assert_eq!(v["id"], 7);
        assert_eq!(v["subs"][0], json!([2, "good", "great"]));
        assert_eq!(v["success"], true);
    }
    fn exhaustive_flip_exists(m: &LinearBag, e: &Example, syn: &SynonymTable, max_subs: usize) -> bool {
        let options: Vec<Vec<usize>> =
            e.ids.iter().map(|&w| std::iter::once(w).chain(syn.synonyms(w).iter().copied()).collect()).collect();
        let mut idx = vec![0usize; e.ids.len()];
        loop {
            let cand: Vec<usize> = idx.iter().enumerate().map(|(p, &k)| options[p][k]).collect();
            let changed = cand.iter().zip(&e.ids).filter(|(a, b)| a != b).count();
            if changed <= max_subs && m.predict(&cand).unwrap().label != e.label {
                return true;
            }
            let mut p = 0;
            loop {
                if p == idx.len() {
                    return false;
                }
                idx[p] += 1;
                if idx[p] < options[p].len() {
                    break;
                }
                idx[p] = 0;
                p += 1;
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn greedy_sound_and_constrained(
            emb in proptest::collection::vec(-1.0f64..1.0, 16),
            w in proptest::collection::vec(-1.0f64..1.0, 4),
            ids in proptest::collection::vec(2usize..8, 5..=6),
            ratio in 0.2f64..1.0,
            saliency in proptest::bool::ANY,
        ) {
            let table: Vec<Vec<f64>> = (0..8).map(|i| if i == 0 { vec![0.0, 0.0] } else { emb[2 * i..2 * i + 2].to_vec() }).collect();
            let m = LinearBag { table, w: vec![w[0..2].to_vec(), w[2..4].to_vec()], b: vec![0.0, 0.0] };
            // groups {2,3,4} and {5,6,7}: at most two synonyms per word
            let syn = SynonymTable::from_pairs([(2, 3), (3, 4), (2, 4), (5, 6), (6, 7), (5, 7)]);
            let label = m.predict(&ids).unwrap().label;
            let e = ex(ids, label);
            let kind = if saliency { AttackKind::SaliencyWeighted } else { AttackKind::DeletionImportance };
            let cfg = AttackConfig { kind, max_sub_ratio: ratio, ..Default::default() };
            let r = attack_example(&m, &e, &syn, &cfg).unwrap();
            let p = r.perturbed.as_ref().unwrap();
            proptest::prop_assert!(p.substitutions().len() <= cfg.max_substitutions(e.ids.len()));
            for s in p.substitutions() {
                proptest::prop_assert!(syn.contains(s.orig, s.adv));
            }
            for w in r.trace.windows(2) {
                proptest::prop_assert!(w[1] < w[0] || r.is_success());
            }
            if !exhaustive_flip_exists(&m, &e, &syn, cfg.max_substitutions(e.ids.len())) {
                proptest::prop_assert!(!r.is_success());
            }
            if r.is_success() {
                proptest::prop_assert_ne!(m.predict(p.adv_ids()).unwrap().label, e.label);
            }
        }
    }
}
