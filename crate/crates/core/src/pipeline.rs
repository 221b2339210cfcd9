//! Multi-step evaluations: attack, attribute and score; the regularizer
//! ablation grid.

use serde::{Deserialize, Serialize};

use crate::attack::{attack_dataset, AttackConfig, AttackResult, AttackSummary};
use crate::corpus::{Example, SynonymTable};
use crate::error::Result;
use crate::interpret::{attribute_all, AttributionVector, IgConfig};
use crate::metrics::{consistency_report, ConsistencyReport};
use crate::model::{ClassifierParams, TextClassifier};
use crate::training::{accuracy, train_flat, AttackSetup, FlatConfig, Splits};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub attack: AttackConfig,
    pub ig: IgConfig,
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { attack: AttackConfig::default(), ig: IgConfig::default(), ks: (1..=10).collect() }
    }
}

pub type AttributionPair = (AttributionVector, AttributionVector, usize);

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub clean_acc: f64,
    pub summary: AttackSummary,
    pub results: Vec<AttackResult>,
    /// Original/perturbed attributions for every attacked example whose
    /// final perturbation changed at least one word.
    pub attributions: Vec<AttributionPair>,
    /// `None` when no pair qualifies.
    pub consistency: Option<ConsistencyReport>,
}

/// Attacks `data`, then compares Integrated Gradients on each original and
/// its final perturbation.
pub fn evaluate<M: TextClassifier>(
    model: &M,
    data: &[Example],
    synonyms: &SynonymTable,
    cfg: &EvalConfig,
    jobs: Option<usize>,
) -> Result<Evaluation> {
    let clean_acc = accuracy(model, data)?;
    let (results, summary) = attack_dataset(model, data, synonyms, &cfg.attack, jobs)?;
    let pairs: Vec<_> = results
        .iter()
        .filter_map(|r| r.perturbed.as_ref())
        .filter(|p| !p.substitutions().is_empty())
        .collect();
    let mut inputs = Vec::with_capacity(2 * pairs.len());
    for p in &pairs {
        inputs.push((p.original().ids.as_slice(), Some(p.label())));
        inputs.push((p.adv_ids(), Some(p.label())));
    }
    let attrs = attribute_all(model, &inputs, &cfg.ig, jobs)?;
    let mut it = attrs.into_iter();
    let attributions: Vec<AttributionPair> = pairs
        .iter()
        .map(|p| (it.next().expect("two per pair"), it.next().expect("two per pair"), p.label()))
        .collect();
    let consistency = if attributions.is_empty() { None } else { Some(consistency_report(&attributions, &cfg.ks, synonyms)?) };
    Ok(Evaluation { clean_acc, summary, results, attributions, consistency })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub beta: f64,
    pub gamma: f64,
    pub standard_acc: f64,
    pub after_attack_acc: f64,
}

/// FLAT training on the grid `{0, beta} x {0, gamma}`; rows in the order
/// (beta, gamma), (beta, 0), (0, gamma), (0, 0). Each cell is scored on `test`.
pub fn ablate(
    base: &ClassifierParams,
    data: &Splits,
    test: &[Example],
    atk: &AttackSetup,
    eval_attack: &AttackConfig,
    cfg: &FlatConfig,
) -> Result<Vec<AblationRow>> {
    let cells = [(cfg.beta, cfg.gamma), (cfg.beta, 0.0), (0.0, cfg.gamma), (0.0, 0.0)];
    let mut rows = Vec::with_capacity(cells.len());
    for (beta, gamma) in cells {
        let c = FlatConfig { beta, gamma, ..cfg.clone() };
        let (mut state, _) = train_flat(base, data, atk, &c, &mut |_| Ok(()))?;
        let model = state.frozen();
        let (_, summary) = attack_dataset(&model, test, atk.synonyms, eval_attack, atk.jobs)?;
        rows.push(AblationRow { beta, gamma, standard_acc: accuracy(&model, test)?, after_attack_acc: summary.after_attack_acc });
    }
    Ok(rows)
}

/// Table rendering of ablation rows.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("beta\tgamma\tstandard_acc\tafter_attack_acc\n");
    for r in rows {
        s.push_str(&format!("{}\t{}\t{:.4}\t{:.4}\n", r.beta, r.gamma, r.standard_acc, r.after_attack_acc));
    }
    s
}
