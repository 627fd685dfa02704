//! Tokenization, vocabularies and per-user field encoding.

mod dataset;
mod encode;
mod pretrained;
mod tokenize;
mod vocab;

pub use dataset::{load_dataset, read_dataset, write_dataset, DatasetReader, UserRecord};
pub use encode::{assemble_user, decode_field, encode_field, EncodeConfig, EncodedField, EncodedUser};
pub use pretrained::{load_pretrained_embeddings, WORD_INIT_RANGE};
pub use tokenize::{mention_target, tokenize};
pub use vocab::{
    CategoryTable, Lexicon, Vocabulary, DEFAULT_CHAR_MIN_COUNT, DEFAULT_WORD_MIN_COUNT, PAD, PAD_TOKEN, UNK, UNK_TOKEN,
};
