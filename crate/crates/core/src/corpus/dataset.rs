use std::fmt::Write as _;
use std::path::Path;

use super::vocab::{Vocab, PAD};
use crate::error::{Error, Result};

/// One labeled, fixed-length example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub label: usize,
    pub text: String,
}

impl Example {
    pub fn non_pad_len(&self) -> usize {
        self.ids.iter().filter(|&&i| i != PAD).count()
    }
}

/// Parses `label<TAB>text` lines. Blank lines are skipped.
pub fn parse_labeled(path: &Path, content: &str, num_classes: Option<usize>) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let (label, text) = line.split_once('\t').ok_or_else(|| err("missing tab separator".into()))?;
        let label: usize = label.trim().parse().map_err(|_| err(format!("label {label:?} is not a non-negative integer")))?;
        if let Some(c) = num_classes {
            if label >= c {
                return Err(err(format!("label {label} out of range for {c} classes")));
            }
        }
        out.push((label, text.to_string()));
    }
    Ok(out)
}

pub fn read_labeled(path: &Path, num_classes: Option<usize>) -> Result<Vec<(usize, String)>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labeled(path, &content, num_classes)
}

pub fn encode_examples(rows: &[(usize, String)], vocab: &Vocab, max_len: usize) -> Vec<Example> {
    rows.iter()
        .map(|(label, text)| Example { ids: vocab.encode(text, max_len), label: *label, text: text.clone() })
        .collect()
}

/// Loads a TSV dataset, encoding each line to `max_len` ids.
pub fn load_dataset(path: &Path, vocab: &Vocab, max_len: usize, num_classes: usize) -> Result<Vec<Example>> {
    Ok(encode_examples(&read_labeled(path, Some(num_classes))?, vocab, max_len))
}

pub fn format_labeled<'a>(rows: impl IntoIterator<Item = (usize, &'a str)>) -> String {
    let mut s = String::new();
    for (label, text) in rows {
        let _ = writeln!(s, "{label}\t{text}");
    }
    s
}

pub fn save_dataset(path: &Path, examples: &[Example]) -> Result<()> {
    let body = format_labeled(examples.iter().map(|e| (e.label, e.text.as_str())));
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Number of distinct labels implied by the largest label seen.
pub fn infer_num_classes(rows: &[(usize, String)]) -> usize {
    rows.iter().map(|(l, _)| l + 1).max().unwrap_or(0)
}
