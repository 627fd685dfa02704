use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use hlpnn_tensor::{read_checkpoint, write_checkpoint, CheckpointHeader, ParamStore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo::{build_bias, CityRegistry};
use crate::model::{Hlpnn, ModelConfig, ModelDims};
use crate::text::Lexicon;

/// Everything besides the weights needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub dims: ModelDims,
    pub lexicon: Lexicon,
    pub registry: CityRegistry,
    pub seed: u64,
}

impl CheckpointMeta {
    /// Hex SHA-256 of the model configuration and table sizes.
    pub fn config_hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(&(&self.model, &self.dims))?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn bind(&self, store: &ParamStore) -> Result<Hlpnn> {
        Hlpnn::bind(self.model.clone(), self.dims, &build_bias(&self.registry), store)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, meta: &CheckpointMeta, store: &ParamStore) -> Result<()> {
    let header = CheckpointHeader {
        config_hash: meta.config_hash()?,
        seed: meta.seed,
        metadata: serde_json::to_value(meta)?,
    };
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, &header, store)?;
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint and verifies its configuration hash.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointMeta, ParamStore)> {
    let (header, store) = read_checkpoint(BufReader::new(File::open(path)?))?;
    let meta: CheckpointMeta = serde_json::from_value(header.metadata)?;
    if meta.config_hash()? != header.config_hash {
        return Err(Error::Config("checkpoint configuration hash mismatch".into()));
    }
    Ok((meta, store))
}
