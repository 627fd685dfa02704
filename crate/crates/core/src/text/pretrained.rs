use std::io::BufRead;

use hlpnn_tensor::{Rng, Tensor};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Word-table initialization range when no pretrained vector is available.
pub const WORD_INIT_RANGE: f64 = 0.25;

/// A `V × dim` table: rows of words found in `reader` (`token v1 … vD` lines)
/// take the file values, all others are drawn from `U(-0.25, 0.25)`.
pub fn load_pretrained_embeddings<R: BufRead>(reader: R, vocab: &Vocabulary, dim: usize, rng: &mut Rng) -> Result<Tensor> {
    let mut table = Tensor::uniform(&[vocab.num_words(), dim], -WORD_INIT_RANGE, WORD_INIT_RANGE, rng);
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Ingest {
                line: n + 1,
                message: format!("embedding value: {e}"),
            })?;
        if values.len() != dim {
            return Err(Error::Config(format!(
                "pretrained vector for `{token}` on line {} has dimension {}, model expects {dim}",
                n + 1,
                values.len()
            )));
        }
        let id = vocab.word_id(token);
        if vocab.word(id) == token {
            table.row_mut(id).copy_from_slice(&values);
        }
    }
    Ok(table)
}
