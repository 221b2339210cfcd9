//! Robustness and interpretation-consistency metrics.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::attack::AttackResult;
use crate::corpus::{AdversarialPair, Example, SynonymTable, PAD};
use crate::error::{Error, Result};
use crate::interpret::AttributionVector;
use crate::masks::GlobalImportance;

/// Fraction of examples still classified correctly after the attack.
pub fn after_attack_accuracy(results: &[AttackResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Invalid("after-attack accuracy of an empty set".into()));
    }
    Ok(results.iter().filter(|r| r.survived()).count() as f64 / results.len() as f64)
}

/// Tau-b between two equally long series (Knight's algorithm). A constant
/// series gives 0.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("kendall_tau", &[&[a.len()], &[b.len()]]));
    }
    let n = a.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));

    let pairs = |run: u64| run * run.saturating_sub(1) / 2;
    let (mut ties_a, mut ties_ab) = (0u64, 0u64);
    let (mut run_a, mut run_ab) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (i, j) = (w[0], w[1]);
        if a[i] == a[j] {
            run_a += 1;
            if b[i] == b[j] {
                run_ab += 1;
            } else {
                ties_ab += pairs(run_ab);
                run_ab = 1;
            }
        } else {
            ties_a += pairs(run_a);
            ties_ab += pairs(run_ab);
            run_a = 1;
            run_ab = 1;
        }
    }
    ties_a += pairs(run_a);
    ties_ab += pairs(run_ab);

    let mut ys: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let swaps = merge_count(&mut ys);
    let mut ties_b = 0u64;
    let mut run_b = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_b += 1;
        } else {
            ties_b += pairs(run_b);
            run_b = 1;
        }
    }
    ties_b += pairs(run_b);

    let n0 = pairs(n as u64);
    let num = n0 as f64 - ties_a as f64 - ties_b as f64 + ties_ab as f64 - 2.0 * swaps as f64;
    let den = ((n0 - ties_a) as f64 * (n0 - ties_b) as f64).sqrt();
    Ok(if den == 0.0 { 0.0 } else { (num / den).clamp(-1.0, 1.0) })
}

/// Sorts `xs` ascending and returns the number of strict inversions.
fn merge_count(xs: &mut [f64]) -> u64 {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut xs[..mid]) + merge_count(&mut xs[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if xs[j] < xs[i] {
            merged.push(xs[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            merged.push(xs[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&xs[i..mid]);
    merged.extend_from_slice(&xs[j..n]);
    xs.copy_from_slice(&merged);
    swaps
}

fn non_pad(ids: &[usize]) -> Vec<usize> {
    (0..ids.len()).filter(|&i| ids[i] != PAD).collect()
}

/// Tau-b of two position-aligned attribution vectors over non-PAD positions.
pub fn attribution_tau(a: &AttributionVector, b: &AttributionVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("kendall_tau", &[&[a.len()], &[b.len()]]));
    }
    let keep = non_pad(&a.ids);
    let pick = |v: &AttributionVector| keep.iter().map(|&i| v.attributions[i]).collect::<Vec<_>>();
    kendall_tau(&pick(a), &pick(b))
}

/// Positions of the `k` largest attributions among non-PAD tokens; ties go to
/// the earlier position.
pub fn top_k_positions(attr: &[f64], ids: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut pos = non_pad(ids);
    if k == 0 || k > pos.len() {
        return Err(Error::Invalid(format!("top-k with k={k} over {} tokens", pos.len())));
    }
    pos.sort_by(|&i, &j| attr[j].total_cmp(&attr[i]).then(i.cmp(&j)));
    pos.truncate(k);
    Ok(pos)
}

/// Overlap of the two top-k word sets divided by `k`; words in the same
/// synonym group count as the same word, each matched at most once.
pub fn top_k_intersection(
    a: &[f64],
    b: &[f64],
    k: usize,
    synonyms: &SynonymTable,
    tokens_a: &[usize],
    tokens_b: &[usize],
) -> Result<f64> {
    if a.len() != tokens_a.len() || b.len() != tokens_b.len() {
        return Err(Error::shape("top_k_intersection", &[&[a.len()], &[tokens_a.len()], &[b.len()], &[tokens_b.len()]]));
    }
    let classes = |attr: &[f64], toks: &[usize]| -> Result<HashMap<usize, usize>> {
        let mut m = HashMap::new();
        for p in top_k_positions(attr, toks, k)? {
            *m.entry(synonyms.group_of(toks[p])).or_insert(0) += 1;
        }
        Ok(m)
    };
    let (ca, cb) = (classes(a, tokens_a)?, classes(b, tokens_b)?);
    let hits: usize = ca.iter().map(|(g, &c)| c.min(cb.get(g).copied().unwrap_or(0))).sum();
    Ok(hits as f64 / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassConsistency {
    pub pairs: usize,
    pub kendall_tau: f64,
    /// `(k, mean intersection)` over pairs long enough for `k`.
    pub top_k: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub per_class: BTreeMap<usize, ClassConsistency>,
    pub macro_kendall_tau: f64,
    pub macro_top_k: Vec<(usize, f64)>,
}

impl ConsistencyReport {
    pub fn top_k(&self, k: usize) -> Option<f64> {
        self.macro_top_k.iter().find(|&&(kk, _)| kk == k).map(|&(_, v)| v)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-gold-class means of Tau and top-k intersection, then their unweighted
/// mean over classes that have pairs.
pub fn consistency_report(
    pairs: &[(AttributionVector, AttributionVector, usize)],
    ks: &[usize],
    synonyms: &SynonymTable,
) -> Result<ConsistencyReport> {
    let mut by_class: BTreeMap<usize, Vec<&(AttributionVector, AttributionVector, usize)>> = BTreeMap::new();
    for p in pairs {
        by_class.entry(p.2).or_default().push(p);
    }
    if by_class.is_empty() {
        return Err(Error::Invalid("consistency report over zero pairs".into()));
    }
    let mut per_class = BTreeMap::new();
    for (&c, ps) in &by_class {
        let taus = ps.iter().map(|(a, b, _)| attribution_tau(a, b)).collect::<Result<Vec<_>>>()?;
        let mut top_k = Vec::new();
        for &k in ks {
            let vals = ps
                .iter()
                .filter(|(a, _, _)| non_pad(&a.ids).len() >= k)
                .map(|(a, b, _)| top_k_intersection(&a.attributions, &b.attributions, k, synonyms, &a.ids, &b.ids))
                .collect::<Result<Vec<_>>>()?;
            if !vals.is_empty() {
                top_k.push((k, mean(&vals)));
            }
        }
        per_class.insert(c, ClassConsistency { pairs: ps.len(), kendall_tau: mean(&taus), top_k });
    }
    let macro_kendall_tau = mean(&per_class.values().map(|c| c.kendall_tau).collect::<Vec<_>>());
    let macro_top_k = ks
        .iter()
        .filter_map(|&k| {
            let vals: Vec<f64> = per_class.values().filter_map(|c| c.top_k.iter().find(|t| t.0 == k).map(|t| t.1)).collect();
            (!vals.is_empty()).then(|| (k, mean(&vals)))
        })
        .collect();
    Ok(ConsistencyReport { per_class, macro_kendall_tau, macro_top_k })
}

/// Pearson r and, for more than two points, the two-sided p-value of the
/// t-test on r.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, Option<f64>)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Invalid(format!("pearson needs two equal series of length >= 2, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Invalid("pearson correlation of a constant series".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let p = (x.len() > 2).then(|| {
        let df = n - 2.0;
        if r.abs() == 1.0 {
            return 0.0;
        }
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        2.0 * (1.0 - dist.cdf(t.abs()))
    });
    Ok((r, p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordStats {
    pub id: usize,
    pub phi: f64,
    pub train_freq: usize,
    pub sub_freq: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub words: Vec<WordStats>,
    /// `None` when a series is constant.
    pub wi_wf: Option<f64>,
    pub wi_sf: Option<f64>,
    pub wf_sf: Option<f64>,
}

/// Ids of the replaced words over a set of adversarial pairs.
pub fn substituted_words(pairs: &[AdversarialPair]) -> impl Iterator<Item = usize> + '_ {
    pairs.iter().flat_map(|p| p.substitutions().iter().map(|s| s.orig))
}

/// Per-word importance, training frequency and substitution count (one per
/// replaced occurrence in the adversarial set), with their pairwise Pearson r.
pub fn correlation_analysis(phi: &GlobalImportance, train: &[Example], substituted: impl IntoIterator<Item = usize>) -> CorrelationReport {
    let v = phi.len();
    let mut wf = vec![0usize; v];
    for ex in train {
        for &i in &ex.ids {
            if i < v {
                wf[i] += 1;
            }
        }
    }
    let mut sf = vec![0usize; v];
    for w in substituted {
        if w < v {
            sf[w] += 1;
        }
    }
    let words: Vec<WordStats> = (crate::corpus::UNK + 1..v)
        .map(|id| WordStats { id, phi: phi.get(id).unwrap_or(0.0), train_freq: wf[id], sub_freq: sf[id] })
        .collect();
    let series = |f: fn(&WordStats) -> f64| words.iter().map(f).collect::<Vec<_>>();
    let (wi, wfs, sfs) = (series(|w| w.phi), series(|w| w.train_freq as f64), series(|w| w.sub_freq as f64));
    let r = |a: &[f64], b: &[f64]| pearson(a, b).ok().map(|t| t.0);
    CorrelationReport { wi_wf: r(&wi, &wfs), wi_sf: r(&wi, &sfs), wf_sf: r(&wfs, &sfs), words }
}

/// Report JSON with after-attack accuracy, consistency and correlations.
pub fn report_json(after_attack_acc: f64, consistency: Option<&ConsistencyReport>, correlation: Option<&CorrelationReport>) -> serde_json::Value {
    let kt = consistency.map(|c| {
        serde_json::json!({
            "per_class": c.per_class.iter().map(|(k, v)| (k.to_string(), v.kendall_tau)).collect::<BTreeMap<_, _>>(),
            "macro": c.macro_kendall_tau,
        })
    });
    let tk = consistency.map(|c| c.macro_top_k.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>());
    let pearson = correlation.map(|c| serde_json::json!({"wi_wf": c.wi_wf, "wi_sf": c.wi_sf, "wf_sf": c.wf_sf}));
    serde_json::json!({
        "after_attack_acc": after_attack_acc,
        "kendall_tau": kt,
        "top_k": tk,
        "pearson": pearson,
    })
}

/// `k<TAB>intersection` lines for plotting.
pub fn curve_tsv(report: &ConsistencyReport) -> String {
    let mut s = String::from("k\tintersection\n");
    for (k, v) in &report.macro_top_k {
        let _ = writeln!(s, "{k}\t{v}");
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
