use serde::{Deserialize, Serialize};

use super::dataset::Example;
use super::synonyms::SynonymTable;
use crate::error::{Error, Result};

/// One replaced word: position, original id, substitute id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub pos: usize,
    pub orig: usize,
    pub adv: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackMeta {
    pub attack: String,
    pub success: bool,
    pub queries: usize,
}

/// An original example and its word-substituted counterpart. The gold label
/// is the original's.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialPair {
    original: Example,
    adv_ids: Vec<usize>,
    subs: Vec<Substitution>,
    pub meta: AttackMeta,
}

impl AdversarialPair {
    /// Validates that `adv_ids` differs from the original only at synonym
    /// substitutions and derives the substitution map.
    pub fn new(original: Example, adv_ids: Vec<usize>, synonyms: &SynonymTable, meta: AttackMeta) -> Result<Self> {
        if adv_ids.len() != original.ids.len() {
            return Err(Error::Pair(format!(
                "length {} differs from original length {}",
                adv_ids.len(),
                original.ids.len()
            )));
        }
        let mut subs = Vec::new();
        for (pos, (&orig, &adv)) in original.ids.iter().zip(&adv_ids).enumerate() {
            if orig == adv {
                continue;
            }
            if !synonyms.contains(orig, adv) {
                return Err(Error::Pair(format!("position {pos}: {adv} is not a synonym of {orig}")));
            }
            subs.push(Substitution { pos, orig, adv });
        }
        Ok(AdversarialPair { original, adv_ids, subs, meta })
    }

    pub fn original(&self) -> &Example {
        &self.original
    }

    pub fn adv_ids(&self) -> &[usize] {
        &self.adv_ids
    }

    pub fn substitutions(&self) -> &[Substitution] {
        &self.subs
    }

    pub fn label(&self) -> usize {
        self.original.label
    }

    /// The adversarial side as a standalone example.
    pub fn adversarial_example(&self, text: String) -> Example {
        Example { ids: self.adv_ids.clone(), label: self.original.label, text }
    }
}
