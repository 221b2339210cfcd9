use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::vocab::Vocab;
use crate::error::{Error, Result};

/// Symmetric synonym relation over vocabulary ids, with equivalence groups
/// given by its connected components.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymTable {
    syn: BTreeMap<usize, Vec<usize>>,
    group: BTreeMap<usize, usize>,
}

fn find(parent: &mut BTreeMap<usize, usize>, x: usize) -> usize {
    let p = *parent.entry(x).or_insert(x);
    if p == x {
        return x;
    }
    let root = find(parent, p);
    parent.insert(x, root);
    root
}

impl SynonymTable {
    /// Builds the symmetric closure of `pairs`, dropping self-links.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut sets: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for (a, b) in pairs {
            if a == b {
                continue;
            }
            sets.entry(a).or_default().insert(b);
            sets.entry(b).or_default().insert(a);
        }
        let mut parent = BTreeMap::new();
        for (&a, bs) in &sets {
            for &b in bs {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    // smallest id becomes the representative
                    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                    parent.insert(hi, lo);
                }
            }
        }
        let keys: Vec<usize> = parent.keys().copied().collect();
        let group = keys.into_iter().map(|k| (k, find(&mut parent, k))).collect();
        let syn = sets.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect();
        SynonymTable { syn, group }
    }

    /// Parses `word<TAB>syn1,syn2,...` lines against `vocab`. Out-of-vocabulary
    /// words are dropped; repeated headwords are merged with a warning.
    pub fn parse(path: &Path, content: &str, vocab: &Vocab) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut heads = BTreeSet::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (head, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "missing tab separator".into(),
            })?;
            let head = head.trim().to_lowercase();
            if !heads.insert(head.clone()) {
                log::warn!("{}:{}: duplicate headword {head:?}, merging", path.display(), i + 1);
            }
            let Some(h) = vocab.get(&head) else { continue };
            for s in rest.split(',').map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()) {
                if let Some(sid) = vocab.get(&s) {
                    pairs.push((h, sid));
                }
            }
        }
        Ok(Self::from_pairs(pairs))
    }

    pub fn is_empty(&self) -> bool {
        self.syn.is_empty()
    }

    /// Sorted synonyms of `id` (empty when it has none).
    pub fn synonyms(&self, id: usize) -> &[usize] {
        self.syn.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.synonyms(a).binary_search(&b).is_ok()
    }

    /// Representative of the equivalence group of `id`; words without
    /// synonyms form singleton groups.
    pub fn group_of(&self, id: usize) -> usize {
        self.group.get(&id).copied().unwrap_or(id)
    }

    pub fn same_group(&self, a: usize, b: usize) -> bool {
        a == b || self.group_of(a) == self.group_of(b)
    }

    /// Groups with at least two members, each sorted.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut by_rep: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&w, &r) in &self.group {
            by_rep.entry(r).or_default().push(w);
        }
        by_rep.into_values().collect()
    }

    /// Unordered synonym pairs `(a, b)` with `a < b`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.syn.iter().flat_map(|(&a, bs)| bs.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
    }

    pub fn words(&self) -> impl Iterator<Item = usize> + '_ {
        self.syn.keys().copied()
    }
}

pub fn load_synonyms(path: &Path, vocab: &Vocab) -> Result<SynonymTable> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SynonymTable::parse(path, &content, vocab)
}
