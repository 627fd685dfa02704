use std::collections::HashMap;

use hlpnn_tensor::{ParamId, ParamStore, Rng, Tape, Tensor, Var};

use super::config::{ModelConfig, ModelDims};
use super::layers::{
    bilstm, char_cnn, context_attention, encoder_layer, fuse, fusion_mask, masked_mean, Builder, ContextAttentionIds,
    ConvIds, EncoderIds, EncoderSettings, Init, LstmIds, FEATURE_TYPES,
};
use crate::error::{Error, Result};
use crate::geo::{BiasMatrix, CityRegistry, Gold};
use crate::graph::NetworkEmbeddings;
use crate::text::{assemble_user, EncodeConfig, EncodedUser, Lexicon, UserRecord, PAD, WORD_INIT_RANGE};

/// Range of the character, language and time-zone initializations.
pub const TABLE_INIT_RANGE: f64 = 1.0;

/// One labelled, encoded user ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub user_id: String,
    pub user: EncodedUser,
    /// Frozen network embedding; empty means the user is outside the graph.
    pub network: Vec<f64>,
    pub city: usize,
    pub country: usize,
    pub lat: f64,
    pub lon: f64,
}

impl Sample {
    /// Encodes a labelled user. The gold city must be in the registry.
    pub fn from_record(
        user: &UserRecord,
        lexicon: &Lexicon,
        registry: &CityRegistry,
        enc: &EncodeConfig,
        network: Option<&NetworkEmbeddings>,
    ) -> Result<Sample> {
        let label = user
            .gold_city
            .as_deref()
            .ok_or_else(|| Error::Registry(format!("user `{}` has no gold city", user.user_id)))?;
        let city = registry
            .city_idx(label)
            .ok_or_else(|| Error::Registry(format!("user `{}` has unknown city `{label}`", user.user_id)))?;
        Ok(Sample {
            user_id: user.user_id.clone(),
            user: assemble_user(user, lexicon, enc),
            network: network.and_then(|e| e.get(&user.user_id)).map(<[f64]>::to_vec).unwrap_or_default(),
            city,
            country: registry.country_of(city),
            lat: user.latitude,
            lon: user.longitude,
        })
    }

    pub fn gold(&self) -> Gold {
        Gold {
            city: self.city,
            lat: self.lat,
            lon: self.lon,
        }
    }
}

pub struct Forward {
    pub logits_co: Var,
    pub logits_ci: Var,
    /// `[B, M_co]`
    pub p_co: Var,
    /// `[B, M_ci]`
    pub p_ci: Var,
    /// `W_ci F_ci + b_ci`, before the penalty.
    pub city_scores: Var,
    /// Penalty `λ · P_co · Bias` added to the city scores, `[B, M_ci]`.
    pub penalty: Var,
}

pub struct Loss {
    pub total: Var,
    pub city: Var,
    pub country: Var,
}

struct Ids {
    word: ParamId,
    word_alt: Option<ParamId>,
    chars: ParamId,
    convs: Vec<ConvIds>,
    fwd: LstmIds,
    bwd: LstmIds,
    word_att: ContextAttentionIds,
    lang: ParamId,
    tz: ParamId,
    types: ParamId,
    enc_co: Vec<EncoderIds>,
    enc_ci: Vec<EncoderIds>,
    field_co: ContextAttentionIds,
    field_ci: ContextAttentionIds,
    head_co_w: ParamId,
    head_co_b: ParamId,
    head_ci_w: ParamId,
    head_ci_b: ParamId,
    lambda: ParamId,
}

/// The hierarchical network. Weights live in a separate [`ParamStore`]; this
/// value only holds the configuration, the bias matrix and parameter ids.
pub struct Hlpnn {
    cfg: ModelConfig,
    dims: ModelDims,
    bias: Tensor,
    ids: Ids,
}

impl Hlpnn {
    /// Creates fresh parameters. `word_table` overrides the uniform word
    /// initialization (e.g. pretrained vectors).
    pub fn create(
        cfg: ModelConfig,
        dims: ModelDims,
        bias: &BiasMatrix,
        rng: &mut Rng,
        word_table: Option<Tensor>,
    ) -> Result<(Hlpnn, ParamStore)> {
        let mut store = ParamStore::new();
        let model = {
            let mut b = Builder::create(&mut store, rng);
            Self::declare(cfg, dims, bias, &mut b, word_table)?
        };
        Ok((model, store))
    }

    /// Resolves the parameters of an existing store.
    pub fn bind(cfg: ModelConfig, dims: ModelDims, bias: &BiasMatrix, store: &ParamStore) -> Result<Hlpnn> {
        Self::declare(cfg, dims, bias, &mut Builder::bind(store), None)
    }

    fn declare(
        cfg: ModelConfig,
        dims: ModelDims,
        bias: &BiasMatrix,
        b: &mut Builder,
        word_table: Option<Tensor>,
    ) -> Result<Hlpnn> {
        cfg.validate()?;
        if (bias.n_countries, bias.n_cities) != (dims.countries, dims.cities) {
            return Err(Error::Config(format!(
                "bias matrix is {}×{}, model expects {}×{}",
                bias.n_countries, bias.n_cities, dims.countries, dims.cities
            )));
        }
        let d = cfg.word_dim;
        let w = cfg.hidden();
        let word_init = word_table.map_or(Init::Uniform(WORD_INIT_RANGE), Init::Given);
        let word = b.param("word.embed", &[dims.words, d], word_init)?;
        let word_alt = if cfg.use_char_cnn {
            None
        } else {
            Some(b.param("word.embed_alt", &[dims.words, d], Init::Uniform(WORD_INIT_RANGE))?)
        };
        let chars = b.param("char.embed", &[dims.chars, cfg.char_dim], Init::Uniform(TABLE_INIT_RANGE))?;
        let convs = cfg
            .filter_sizes
            .iter()
            .map(|&l| ConvIds::declare(b, &format!("char.conv{l}"), l, cfg.char_dim, cfg.filters_per_size))
            .collect::<Result<_>>()?;
        let fwd = LstmIds::declare(b, "lstm.fwd", w, d)?;
        let bwd = LstmIds::declare(b, "lstm.bwd", w, d)?;
        let word_att = ContextAttentionIds::declare(b, "word_att", w)?;
        let lang = b.param("lang.embed", &[dims.languages, w], Init::Uniform(TABLE_INIT_RANGE))?;
        let tz = b.param("tz.embed", &[dims.time_zones, w], Init::Uniform(TABLE_INIT_RANGE))?;
        let type_range = (1.0 / w as f64).sqrt();
        let types = b.param("type.embed", &[FEATURE_TYPES, w], Init::Uniform(type_range))?;
        let mut stack = |name: &str| -> Result<Vec<EncoderIds>> {
            (0..cfg.layers)
                .map(|i| EncoderIds::declare(b, &format!("enc.{name}.{i}"), w, cfg.ffn_dim))
                .collect()
        };
        let enc_co = stack("co")?;
        let enc_ci = stack("ci")?;
        let field_co = ContextAttentionIds::declare(b, "field_att.co", w)?;
        let field_ci = ContextAttentionIds::declare(b, "field_att.ci", w)?;
        let head_co_w = b.param("head.co.w", &[dims.countries, w], Init::Glorot)?;
        let head_co_b = b.param("head.co.b", &[dims.countries], Init::Zeros)?;
        let head_ci_w = b.param("head.ci.w", &[dims.cities, w], Init::Glorot)?;
        let head_ci_b = b.param("head.ci.b", &[dims.cities], Init::Zeros)?;
        let lambda = b.param("lambda", &[1], Init::Const(cfg.lambda_init))?;
        Ok(Hlpnn {
            cfg,
            dims,
            bias: bias.to_tensor(),
            ids: Ids {
                word,
                word_alt,
                chars,
                convs,
                fwd,
                bwd,
                word_att,
                lang,
                tz,
                types,
                enc_co,
                enc_ci,
                field_co,
                field_ci,
                head_co_w,
                head_co_b,
                head_ci_w,
                head_ci_b,
                lambda,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn lambda(&self, store: &ParamStore) -> f64 {
        store.get(self.ids.lambda).data()[0]
    }

    /// Applies the optional `λ ≥ 0` constraint.
    pub fn project(&self, store: &mut ParamStore) {
        if self.cfg.clamp_lambda {
            let l = &mut store.get_mut(self.ids.lambda).data_mut()[0];
            *l = l.max(0.0);
        }
    }

    /// `[U, 2D]` embeddings of the distinct (word, chars) tokens of `batch`,
    /// plus the row of each field position. Padding positions share a row.
    fn embed_tokens(&self, tape: &mut Tape, batch: &[&Sample], n: usize) -> Result<(Var, Vec<usize>)> {
        let k = self.cfg.max_chars;
        let pad_chars = vec![0u32; k];
        let mut unique: HashMap<(u32, &[u32]), usize> = HashMap::new();
        let mut words = Vec::new();
        let mut chars: Vec<usize> = Vec::new();
        let mut rows = Vec::new();
        let mut order: Vec<(u32, &[u32])> = Vec::new();
        for s in batch {
            for f in &s.user.fields {
                if f.k_max != k {
                    return Err(Error::Config(format!("field encoded with {} chars, model expects {k}", f.k_max)));
                }
                for t in 0..n {
                    let key = if t < f.length { (f.word_ids[t], f.chars(t)) } else { (0, &pad_chars[..]) };
                    let next = order.len();
                    let id = *unique.entry(key).or_insert(next);
                    if id == next {
                        order.push(key);
                    }
                    rows.push(id);
                }
            }
        }
        for (w, cs) in &order {
            words.push(*w as usize);
            chars.extend(cs.iter().map(|&c| c as usize));
        }
        let u = order.len();
        let table = tape.param(self.ids.word);
        let word_half = tape.embedding_lookup(table, &words)?;
        let char_half = match self.ids.word_alt {
            Some(alt) => {
                let alt = tape.param(alt);
                tape.embedding_lookup(alt, &words)?
            }
            None => {
                let ct = tape.param(self.ids.chars);
                let ce = tape.embedding_lookup(ct, &chars)?;
                // PAD characters embed as zero vectors.
                let keep = chars.iter().map(|&c| if c == PAD { 0.0 } else { 1.0 }).collect();
                let keep = tape.constant_from(&[u * k, 1], keep)?;
                let ce = tape.mul(ce, keep)?;
                let ce = tape.reshape(ce, &[u, k, self.cfg.char_dim])?;
                char_cnn(tape, ce, &self.ids.convs)?
            }
        };
        Ok((tape.concat(&[word_half, char_half], 1)?, rows))
    }

    pub fn forward(&self, tape: &mut Tape, batch: &[&Sample], rng: &mut Rng) -> Result<Forward> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let cfg = &self.cfg;
        let w = cfg.hidden();
        let fields: Vec<_> = batch.iter().flat_map(|s| &s.user.fields).collect();
        let g = fields.len();
        let n = fields.iter().map(|f| f.length).max().unwrap_or(1).max(1);
        let lengths: Vec<usize> = fields.iter().map(|f| f.length.min(n)).collect();
        let word_mask: Vec<bool> = lengths.iter().flat_map(|&l| (0..n).map(move |t| t < l)).collect();

        let (tokens, rows) = self.embed_tokens(tape, batch, n)?;
        let x = tape.embedding_lookup(tokens, &rows)?;
        let x = tape.reshape(x, &[g, n, w])?;
        let x = tape.dropout(x, cfg.dropout_lstm_input, rng)?;
        let h = bilstm(tape, x, &lengths, &self.ids.fwd, &self.ids.bwd)?;
        let text = if cfg.use_word_attention {
            context_attention(tape, &self.ids.word_att, h, &word_mask, cfg.heads)?.output
        } else {
            masked_mean(tape, h, &word_mask)?
        };

        let t_used: Vec<usize> = batch.iter().map(|s| s.user.t_used).collect();
        for s in batch {
            if s.user.fields.len() != s.user.t_used + 3 {
                return Err(Error::Config(format!(
                    "user `{}` has {} fields for {} tweets",
                    s.user_id,
                    s.user.fields.len(),
                    s.user.t_used
                )));
            }
        }
        let lang_table = tape.param(self.ids.lang);
        let lang = tape.embedding_lookup(lang_table, &batch.iter().map(|s| s.user.language).collect::<Vec<_>>())?;
        let tz_table = tape.param(self.ids.tz);
        let tz = tape.embedding_lookup(tz_table, &batch.iter().map(|s| s.user.time_zone).collect::<Vec<_>>())?;
        let mut net = Vec::with_capacity(batch.len() * w);
        for s in batch {
            match s.network.len() {
                0 => net.extend(std::iter::repeat_n(0.0, w)),
                len if len == w => net.extend_from_slice(&s.network),
                len => {
                    return Err(Error::Config(format!(
                        "network embedding of `{}` has dimension {len}, model expects {w}",
                        s.user_id
                    )))
                }
            }
        }
        let net = tape.constant_from(&[batch.len(), w], net)?;
        let types = tape.param(self.ids.types);
        let f = fuse(tape, text, &t_used, lang, tz, net, types)?;
        let row_mask = fusion_mask(&t_used, cfg.features.metadata, cfg.features.network);

        let set = EncoderSettings {
            heads: cfg.heads,
            dropout: cfg.dropout_encoder,
            eps: cfg.layer_norm_eps,
        };
        let mut pool = |stack: &[EncoderIds], att: &ContextAttentionIds, rng: &mut Rng| -> Result<Var> {
            let mut x = f;
            if cfg.use_encoders {
                for layer in stack {
                    x = encoder_layer(tape, layer, x, &row_mask, &set, rng)?;
                }
            }
            if cfg.use_field_attention {
                Ok(context_attention(tape, att, x, &row_mask, cfg.heads)?.output)
            } else {
                masked_mean(tape, x, &row_mask)
            }
        };
        let f_co = pool(&self.ids.enc_co, &self.ids.field_co, rng)?;
        let f_ci = pool(&self.ids.enc_ci, &self.ids.field_ci, rng)?;

        let (wco, bco) = (tape.param(self.ids.head_co_w), tape.param(self.ids.head_co_b));
        let logits_co = tape.matmul_nt(f_co, wco)?;
        let logits_co = tape.add(logits_co, bco)?;
        let p_co = tape.softmax(logits_co, 1)?;
        let bias = tape.constant(self.bias.clone());
        let lambda = tape.param(self.ids.lambda);
        let penalty = hierarchy_penalty(tape, p_co, bias, lambda)?;
        let (wci, bci) = (tape.param(self.ids.head_ci_w), tape.param(self.ids.head_ci_b));
        let city_scores = tape.matmul_nt(f_ci, wci)?;
        let city_scores = tape.add(city_scores, bci)?;
        let logits_ci = tape.add(city_scores, penalty)?;
        let p_ci = tape.softmax(logits_ci, 1)?;
        Ok(Forward {
            logits_co,
            logits_ci,
            p_co,
            p_ci,
            city_scores,
            penalty,
        })
    }

    /// Batch-mean of `−log P_ci[city] − α · log P_co[country]`, from logits.
    pub fn loss(&self, tape: &mut Tape, fwd: &Forward, batch: &[&Sample]) -> Result<Loss> {
        let cities: Vec<usize> = batch.iter().map(|s| s.city).collect();
        let countries: Vec<usize> = batch.iter().map(|s| s.country).collect();
        let city = cross_entropy(tape, fwd.logits_ci, &cities)?;
        let country = cross_entropy(tape, fwd.logits_co, &countries)?;
        let alpha = self.cfg.effective_alpha();
        let total = if alpha == 0.0 {
            city
        } else {
            let weighted = tape.scale(country, alpha);
            tape.add(city, weighted)?
        };
        Ok(Loss { total, city, country })
    }

    /// Country and city probabilities in evaluation mode.
    pub fn probabilities(&self, store: &ParamStore, batch: &[&Sample]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut tape = Tape::with_params(store);
        let fwd = self.forward(&mut tape, batch, &mut Rng::seed_from(0))?;
        let rows = |v: Var, m: usize| tape.value(v).chunks(m).map(<[f64]>::to_vec).collect::<Vec<_>>();
        Ok((rows(fwd.p_co, self.dims.countries), rows(fwd.p_ci, self.dims.cities)))
    }

    /// Most probable city per user (first index on ties).
    pub fn predict(&self, store: &ParamStore, batch: &[&Sample]) -> Result<Vec<usize>> {
        let (_, p_ci) = self.probabilities(store, batch)?;
        Ok(p_ci.iter().map(|row| argmax(row)).collect())
    }
}

/// `λ · (P_co · Bias)`; entry `j` equals `−λ (1 − P_co[country(j)])`.
pub fn hierarchy_penalty(tape: &mut Tape, p_co: Var, bias: Var, lambda: Var) -> Result<Var> {
    let pen = tape.matmul(p_co, bias)?;
    Ok(tape.mul(pen, lambda)?)
}

/// Mean negative log-likelihood of `gold` under `softmax(logits)`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, gold: &[usize]) -> Result<Var> {
    let ls = tape.log_softmax(logits, 1)?;
    let picked = tape.pick(ls, gold)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -1.0))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
