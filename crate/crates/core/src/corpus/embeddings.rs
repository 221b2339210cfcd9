use std::path::Path;

use rand_distr::{Distribution, Normal};

use super::vocab::{Vocab, PAD};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Standard deviation for randomly initialized rows.
pub const INIT_STD: f64 = 0.1;

/// `V x d` word-embedding matrix; row `PAD` is kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    matrix: Tensor,
}

impl EmbeddingTable {
    pub fn from_tensor(matrix: Tensor) -> Result<Self> {
        if matrix.shape().len() != 2 || matrix.shape()[0] == 0 {
            return Err(Error::shape("embedding_table", &[matrix.shape()]));
        }
        let mut t = EmbeddingTable { matrix };
        t.zero_pad_row();
        Ok(t)
    }

    /// Rows drawn from `N(0, INIT_STD)`.
    pub fn random(vocab_size: usize, dim: usize, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let values = (0..vocab_size * dim).map(|_| normal.sample(rng)).collect();
        Self::from_tensor(Tensor::new(vec![vocab_size, dim], values).expect("shape")).expect("non-empty")
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn rows(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.matrix
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.matrix
    }

    pub fn into_tensor(self) -> Tensor {
        self.matrix
    }

    pub fn zero_pad_row(&mut self) {
        let d = self.dim();
        self.matrix.values_mut()[PAD * d..(PAD + 1) * d].fill(0.0);
        if let Some(g) = self.matrix.grad_mut() {
            g[PAD * d..(PAD + 1) * d].fill(0.0);
        }
    }
}

/// Parses `word v1 ... vd` rows. Words missing from the file get random rows.
pub fn parse_embeddings(path: &Path, content: &str, vocab: &Vocab, rng: &mut Rng) -> Result<EmbeddingTable> {
    let mut dim = None;
    let mut found: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (i, line) in content.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let row: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| err(format!("bad number {p:?}"))))
            .collect::<Result<_>>()?;
        match dim {
            None if row.is_empty() => return Err(err("row has no values".into())),
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => return Err(err(format!("expected {d} values, got {}", row.len()))),
            _ => {}
        }
        if let Some(id) = vocab.get(&word.to_lowercase()) {
            found[id] = Some(row);
        }
    }
    let d = dim.ok_or_else(|| Error::Invalid(format!("{}: no embedding rows", path.display())))?;
    let mut table = EmbeddingTable::random(vocab.len(), d, rng);
    for (id, row) in found.into_iter().enumerate() {
        if let Some(row) = row {
            table.matrix.values_mut()[id * d..(id + 1) * d].copy_from_slice(&row);
        }
    }
    table.zero_pad_row();
    Ok(table)
}

pub fn load_embeddings(path: &Path, vocab: &Vocab, rng: &mut Rng) -> Result<EmbeddingTable> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(path, &content, vocab, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn known_rows_loaded_and_pad_zero() {
        let v = Vocab::from_word_list(&["good", "bad"]);
        let mut rng = rng_for(0, "init");
        let t = parse_embeddings(Path::new("-"), "good 1 2\n<pad> 5 5\nzzz 3 3\n", &v, &mut rng).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.row(v.id("good")), &[1.0, 2.0]);
        assert_eq!(t.row(PAD), &[0.0, 0.0]);
        assert!(t.row(v.id("bad")).iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn ragged_rows_rejected() {
        let v = Vocab::from_word_list(&["good"]);
        let mut rng = rng_for(0, "init");
        assert!(parse_embeddings(Path::new("-"), "good 1 2\nbad 1\n", &v, &mut rng).is_err());
    }
}
