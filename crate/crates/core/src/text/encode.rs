use serde::{Deserialize, Serialize};

use super::dataset::UserRecord;
use super::tokenize::tokenize;
use super::vocab::{Lexicon, Vocabulary, PAD};

/// Fixed geometry of encoded text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeConfig {
    /// Tokens per field.
    pub n_max: usize,
    /// Characters per token.
    pub k_max: usize,
    /// Tweets per user.
    pub t_max: usize,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig {
            n_max: 30,
            k_max: 20,
            t_max: 100,
        }
    }
}

/// One text field: `n_max` word ids, `n_max × k_max` char ids (row-major).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedField {
    pub word_ids: Vec<u32>,
    pub char_ids: Vec<u32>,
    pub length: usize,
    pub mask: Vec<bool>,
    pub k_max: usize,
}

impl EncodedField {
    pub fn chars(&self, pos: usize) -> &[u32] {
        &self.char_ids[pos * self.k_max..(pos + 1) * self.k_max]
    }

    /// Number of attendable positions (at least 1 after assembly).
    pub fn active(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn encode_field(tokens: &[String], vocab: &Vocabulary, n_max: usize, k_max: usize) -> EncodedField {
    let length = tokens.len().min(n_max);
    let mut word_ids = vec![PAD as u32; n_max];
    let mut char_ids = vec![PAD as u32; n_max * k_max];
    for (i, tok) in tokens.iter().take(length).enumerate() {
        word_ids[i] = vocab.word_id(tok) as u32;
        for (k, c) in tok.chars().take(k_max).enumerate() {
            char_ids[i * k_max + k] = vocab.char_id(c) as u32;
        }
    }
    let mask = (0..n_max).map(|i| i < length).collect();
    EncodedField {
        word_ids,
        char_ids,
        length,
        mask,
        k_max,
    }
}

/// Word strings of the real positions; out-of-vocabulary words read `<unk>`.
pub fn decode_field(field: &EncodedField, vocab: &Vocabulary) -> Vec<String> {
    field.word_ids[..field.length]
        .iter()
        .map(|&id| vocab.word(id as usize).to_string())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedUser {
    /// `t_used` tweets, then description, profile location, name.
    pub fields: Vec<EncodedField>,
    pub t_used: usize,
    pub language: usize,
    pub time_zone: usize,
}

impl EncodedUser {
    /// Rows of the fused feature matrix.
    pub fn fusion_rows(&self) -> usize {
        self.t_used + 6
    }
}

pub fn assemble_user(user: &UserRecord, lexicon: &Lexicon, cfg: &EncodeConfig) -> EncodedUser {
    let t_used = user.tweets.len().min(cfg.t_max);
    let texts = user.tweets[..t_used]
        .iter()
        .map(String::as_str)
        .chain([user.description.as_str(), user.profile_location.as_str(), user.name.as_str()]);
    let fields = texts
        .map(|text| {
            let mut f = encode_field(&tokenize(text), &lexicon.vocab, cfg.n_max, cfg.k_max);
            if f.length == 0 {
                // one attendable PAD token keeps every field non-empty
                f.length = 1;
                f.mask[0] = true;
            }
            f
        })
        .collect();
    EncodedUser {
        fields,
        t_used,
        language: lexicon.languages.id(&user.user_language),
        time_zone: lexicon.time_zones.id(&user.time_zone),
    }
}
