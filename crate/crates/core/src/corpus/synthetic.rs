//! Keyword-planted synthetic classification benchmark.
//!
//! Every class owns `K` keywords and every keyword owns `S` synonyms. A
//! sentence carries one or two keywords of its class, possibly fewer
//! keywords of another class, and neutral filler. Synonyms stand in for
//! planted keywords only with probability `p_syn`, so a model trained on the
//! output sees them rarely.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dataset::format_labeled;
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub keywords_per_class: usize,
    pub synonyms_per_keyword: usize,
    pub neutral_words: usize,
    pub sentence_len: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub p_syn: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 2,
            keywords_per_class: 5,
            synonyms_per_keyword: 2,
            neutral_words: 100,
            sentence_len: 12,
            train: 2000,
            dev: 400,
            test: 400,
            p_syn: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("classes", self.classes),
            ("keywords_per_class", self.keywords_per_class),
            ("synonyms_per_keyword", self.synonyms_per_keyword),
            ("neutral_words", self.neutral_words),
            ("train", self.train),
            ("dev", self.dev),
            ("test", self.test),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synthetic {name} must be positive")));
        }
        if self.sentence_len < 5 {
            return Err(Error::Config("synthetic sentence_len must be at least 5".into()));
        }
        if !(0.0..=1.0).contains(&self.p_syn) {
            return Err(Error::Config(format!("p_syn must lie in [0, 1], got {}", self.p_syn)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordRole {
    Keyword,
    Synonym,
    Neutral,
}

/// Word inventory of the benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    /// `keywords[c][k]`
    pub keywords: Vec<Vec<String>>,
    /// `synonyms[c][k][s]`
    pub synonyms: Vec<Vec<Vec<String>>>,
    pub neutral: Vec<String>,
}

impl Lexicon {
    pub fn new(cfg: &SyntheticConfig) -> Self {
        let keywords: Vec<Vec<String>> =
            (0..cfg.classes).map(|c| (0..cfg.keywords_per_class).map(|k| format!("k{c}x{k}")).collect()).collect();
        let synonyms = keywords
            .iter()
            .map(|ks| ks.iter().map(|k| (0..cfg.synonyms_per_keyword).map(|s| format!("{k}s{s}")).collect()).collect())
            .collect();
        let neutral = (0..cfg.neutral_words).map(|m| format!("w{m}")).collect();
        Lexicon { keywords, synonyms, neutral }
    }

    /// Role and owning class of every word.
    pub fn roles(&self) -> BTreeMap<String, (WordRole, Option<usize>)> {
        let mut m = BTreeMap::new();
        for (c, ks) in self.keywords.iter().enumerate() {
            for (k, kw) in ks.iter().enumerate() {
                m.insert(kw.clone(), (WordRole::Keyword, Some(c)));
                for s in &self.synonyms[c][k] {
                    m.insert(s.clone(), (WordRole::Synonym, Some(c)));
                }
            }
        }
        for w in &self.neutral {
            m.insert(w.clone(), (WordRole::Neutral, None));
        }
        m
    }

    /// `keyword<TAB>syn1,syn2,...` lines.
    pub fn synonym_file(&self) -> String {
        let mut s = String::new();
        for (c, ks) in self.keywords.iter().enumerate() {
            for (k, kw) in ks.iter().enumerate() {
                s.push_str(kw);
                s.push('\t');
                s.push_str(&self.synonyms[c][k].join(","));
                s.push('\n');
            }
        }
        s
    }

    /// `word<TAB>role<TAB>class` lines (`-` for neutral words).
    pub fn lexicon_file(&self) -> String {
        let mut s = String::new();
        for (w, (role, class)) in self.roles() {
            let role = match role {
                WordRole::Keyword => "keyword",
                WordRole::Synonym => "synonym",
                WordRole::Neutral => "neutral",
            };
            let class = class.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
            s.push_str(&format!("{w}\t{role}\t{class}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub lexicon: Lexicon,
    pub train: Vec<(usize, String)>,
    pub dev: Vec<(usize, String)>,
    pub test: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    pub synonyms: PathBuf,
    pub lexicon: PathBuf,
}

impl SyntheticPaths {
    pub fn in_dir(dir: &Path) -> Self {
        SyntheticPaths {
            train: dir.join("train.tsv"),
            dev: dir.join("dev.tsv"),
            test: dir.join("test.tsv"),
            synonyms: dir.join("synonyms.tsv"),
            lexicon: dir.join("lexicon.tsv"),
        }
    }
}

fn sentence(cfg: &SyntheticConfig, lex: &Lexicon, label: usize, rng: &mut Rng) -> String {
    let len = rng.random_range(cfg.sentence_len - 2..=cfg.sentence_len);
    let gold = rng.random_range(1..=2usize);
    let other = if cfg.classes > 1 { rng.random_range(0..gold) } else { 0 };
    let mut words: Vec<String> = (0..len).map(|_| lex.neutral.choose(rng).expect("neutral").clone()).collect();
    let mut slots: Vec<usize> = (0..len).collect();
    slots.shuffle(rng);
    let mut plant = |class: usize, slot: usize, rng: &mut Rng| {
        let k = rng.random_range(0..cfg.keywords_per_class);
        words[slot] = if rng.random_bool(cfg.p_syn) {
            lex.synonyms[class][k].choose(rng).expect("synonym").clone()
        } else {
            lex.keywords[class][k].clone()
        };
    };
    for &slot in &slots[..gold] {
        plant(label, slot, rng);
    }
    for &slot in &slots[gold..gold + other] {
        let c = (label + rng.random_range(1..cfg.classes)) % cfg.classes;
        plant(c, slot, rng);
    }
    words.join(" ")
}

fn split(cfg: &SyntheticConfig, lex: &Lexicon, n: usize, rng: &mut Rng) -> Vec<(usize, String)> {
    (0..n)
        .map(|_| {
            let label = rng.random_range(0..cfg.classes);
            (label, sentence(cfg, lex, label, rng))
        })
        .collect()
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let lexicon = Lexicon::new(cfg);
    let mut rng = rng_for(cfg.seed, "data");
    let train = split(cfg, &lexicon, cfg.train, &mut rng);
    let dev = split(cfg, &lexicon, cfg.dev, &mut rng);
    let test = split(cfg, &lexicon, cfg.test, &mut rng);
    Ok(SyntheticData { lexicon, train, dev, test })
}

/// Generates the benchmark and writes its files into `dir`.
pub fn write_synthetic(cfg: &SyntheticConfig, dir: &Path) -> Result<SyntheticPaths> {
    let data = generate_synthetic(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = SyntheticPaths::in_dir(dir);
    let write = |p: &Path, body: String| std::fs::write(p, body).map_err(|e| Error::io(p, e));
    let fmt = |rows: &[(usize, String)]| format_labeled(rows.iter().map(|(l, t)| (*l, t.as_str())));
    write(&paths.train, fmt(&data.train))?;
    write(&paths.dev, fmt(&data.dev))?;
    write(&paths.test, fmt(&data.test))?;
    write(&paths.synonyms, data.lexicon.synonym_file())?;
    write(&paths.lexicon, data.lexicon.lexicon_file())?;
    Ok(paths)
}
