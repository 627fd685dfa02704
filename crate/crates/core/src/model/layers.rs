//! Differentiable building blocks. Every function records onto a [`Tape`] and
//! reads its weights through the parameter ids declared by a [`Builder`].

use hlpnn_tensor::{ParamId, ParamStore, Rng, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::text::WORD_INIT_RANGE;

/// How a freshly declared parameter is filled.
pub enum Init {
    Zeros,
    Const(f64),
    /// `U(-a, a)`.
    Uniform(f64),
    Glorot,
    Given(Tensor),
}

enum Mode<'a> {
    Create { store: &'a mut ParamStore, rng: &'a mut Rng },
    Bind { store: &'a ParamStore },
}

/// Declares parameters either by creating them or by resolving existing ones
/// (with a shape check) in a loaded store.
pub struct Builder<'a> {
    mode: Mode<'a>,
}

impl<'a> Builder<'a> {
    pub fn create(store: &'a mut ParamStore, rng: &'a mut Rng) -> Self {
        Builder {
            mode: Mode::Create { store, rng },
        }
    }

    pub fn bind(store: &'a ParamStore) -> Self {
        Builder {
            mode: Mode::Bind { store },
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        match &mut self.mode {
            Mode::Create { store, rng } => {
                let t = match init {
                    Init::Zeros => Tensor::zeros(shape),
                    Init::Const(v) => Tensor::full(shape, v),
                    Init::Uniform(a) => Tensor::uniform(shape, -a, a, rng),
                    Init::Glorot => Tensor::glorot(shape, rng),
                    Init::Given(t) => {
                        if t.shape() != shape {
                            return Err(Error::Config(format!(
                                "initial value for `{name}` has shape {:?}, expected {shape:?}",
                                t.shape()
                            )));
                        }
                        t
                    }
                };
                Ok(store.add(name, t)?)
            }
            Mode::Bind { store } => {
                let id = store
                    .id(name)
                    .ok_or_else(|| Error::Config(format!("parameter `{name}` missing from checkpoint")))?;
                let found = store.get(id).shape();
                if found != shape {
                    return Err(Error::Config(format!(
                        "parameter `{name}` has shape {found:?}, model expects {shape:?}"
                    )));
                }
                Ok(id)
            }
        }
    }
}

pub struct ConvIds {
    pub width: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl ConvIds {
    /// Filters start at `U(±0.25·√(3/fan_in))`, so with unit-range character
    /// embeddings the pre-activations spread like the word-embedding half.
    pub fn declare(b: &mut Builder, prefix: &str, width: usize, char_dim: usize, filters: usize) -> Result<Self> {
        let fan_in = width * char_dim;
        let range = WORD_INIT_RANGE * (3.0 / fan_in as f64).sqrt();
        Ok(ConvIds {
            width,
            w: b.param(&format!("{prefix}.w"), &[fan_in, filters], Init::Uniform(range))?,
            b: b.param(&format!("{prefix}.b"), &[filters], Init::Zeros)?,
        })
    }
}

/// Per filter width: convolution, relu, max over positions; widths
/// concatenated. `chars[U, K, d] -> [U, Σ filters]`.
pub fn char_cnn(tape: &mut Tape, chars: Var, convs: &[ConvIds]) -> Result<Var> {
    let mut pooled = Vec::with_capacity(convs.len());
    for c in convs {
        let windows = tape.unfold(chars, c.width)?;
        let w = tape.param(c.w);
        let b = tape.param(c.b);
        let z = tape.matmul(windows, w)?;
        let z = tape.add(z, b)?;
        let z = tape.relu(z);
        pooled.push(tape.max_axis(z, 1)?);
    }
    Ok(tape.concat(&pooled, 1)?)
}

/// Gate order in the packed weights: input, forget, cell, output.
pub struct LstmIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmIds {
    pub fn declare(b: &mut Builder, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        Ok(LstmIds {
            w_ih: b.param(&format!("{prefix}.w_ih"), &[input, 4 * hidden], Init::Glorot)?,
            w_hh: b.param(&format!("{prefix}.w_hh"), &[hidden, 4 * hidden], Init::Glorot)?,
            b: b.param(&format!("{prefix}.b"), &[4 * hidden], Init::Given(Tensor::new(vec![4 * hidden], bias)?))?,
            hidden,
        })
    }
}

/// One LSTM direction over `x[G, N, I]` with prefix lengths. Outputs at
/// positions `>= length` are zero; in reverse the state stays zero until the
/// first real position.
pub fn lstm(tape: &mut Tape, x: Var, lengths: &[usize], ids: &LstmIds, reverse: bool) -> Result<Var> {
    let (g, n) = (tape.shape(x)[0], tape.shape(x)[1]);
    let hd = ids.hidden;
    if lengths.len() != g {
        return Err(Error::Config(format!("{} lengths for {g} sequences", lengths.len())));
    }
    let w_ih = tape.param(ids.w_ih);
    let w_hh = tape.param(ids.w_hh);
    let b = tape.param(ids.b);
    let gx = tape.matmul(x, w_ih)?;
    let gx = tape.add(gx, b)?;
    let mut h = tape.constant(Tensor::zeros(&[g, hd]));
    let mut c = tape.constant(Tensor::zeros(&[g, hd]));
    let mut outs = vec![h; n];
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        let gt = tape.slice(gx, 1, t, 1)?;
        let gt = tape.reshape(gt, &[g, 4 * hd])?;
        let rec = tape.matmul(h, w_hh)?;
        let z = tape.add(gt, rec)?;
        let zi = tape.slice(z, 1, 0, hd)?;
        let zf = tape.slice(z, 1, hd, hd)?;
        let zg = tape.slice(z, 1, 2 * hd, hd)?;
        let zo = tape.slice(z, 1, 3 * hd, hd)?;
        let (i, f, gg, o) = (tape.sigmoid(zi), tape.sigmoid(zf), tape.tanh(zg), tape.sigmoid(zo));
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, gg)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new);
        let h_new = tape.mul(o, tc)?;
        let live: Vec<f64> = lengths.iter().map(|&l| if t < l { 1.0 } else { 0.0 }).collect();
        let out = if live.iter().all(|&m| m == 1.0) {
            (h, c) = (h_new, c_new);
            h_new
        } else {
            let m = tape.constant_from(&[g, 1], live)?;
            if reverse {
                c = tape.mul(c_new, m)?;
                h = tape.mul(h_new, m)?;
                h
            } else {
                (h, c) = (h_new, c_new);
                tape.mul(h_new, m)?
            }
        };
        outs[t] = tape.reshape(out, &[g, 1, hd])?;
    }
    Ok(tape.concat(&outs, 1)?)
}

/// `[→h, ←h]` for every position: `[G, N, I] -> [G, N, 2H]`.
pub fn bilstm(tape: &mut Tape, x: Var, lengths: &[usize], fwd: &LstmIds, bwd: &LstmIds) -> Result<Var> {
    let f = lstm(tape, x, lengths, fwd, false)?;
    let b = lstm(tape, x, lengths, bwd, true)?;
    Ok(tape.concat(&[f, b], 2)?)
}

/// Multi-head projections `W^Q, W^K, W^V, W^O`, each `W × W`.
pub struct AttentionIds {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
}

impl AttentionIds {
    pub fn declare(b: &mut Builder, prefix: &str, width: usize) -> Result<Self> {
        let mut p = |n: &str| b.param(&format!("{prefix}.{n}"), &[width, width], Init::Glorot);
        Ok(AttentionIds {
            w_q: p("w_q")?,
            w_k: p("w_k")?,
            w_v: p("w_v")?,
            w_o: p("w_o")?,
        })
    }
}

/// Attention with a single learned query vector.
pub struct ContextAttentionIds {
    pub query: ParamId,
    pub proj: AttentionIds,
}

impl ContextAttentionIds {
    pub fn declare(b: &mut Builder, prefix: &str, width: usize) -> Result<Self> {
        let a = (1.0 / width as f64).sqrt();
        Ok(ContextAttentionIds {
            query: b.param(&format!("{prefix}.query"), &[1, width], Init::Uniform(a))?,
            proj: AttentionIds::declare(b, prefix, width)?,
        })
    }
}

pub struct Attended {
    /// `[G, W]`
    pub output: Var,
    /// `[G, N, heads]`, each head's weights summing to 1 over positions.
    pub weights: Var,
}

fn mask_bias(mask: &[bool]) -> Vec<f64> {
    mask.iter().map(|&m| if m { 0.0 } else { f64::NEG_INFINITY }).collect()
}

/// Pools `h[G, N, W]` with the learned query; masked positions get `-inf`
/// scores.
pub fn context_attention(
    tape: &mut Tape,
    ids: &ContextAttentionIds,
    h: Var,
    mask: &[bool],
    heads: usize,
) -> Result<Attended> {
    let (g, n, w) = dims3(tape, h)?;
    check_mask(mask, g * n)?;
    let dk = w / heads;
    let q = tape.param(ids.query);
    let (w_q, w_k, w_v, w_o) = proj_vars(tape, &ids.proj);
    let qp = tape.matmul(q, w_q)?;
    let kp = tape.matmul(h, w_k)?;
    let vp = tape.matmul(h, w_v)?;
    let s = tape.mul(kp, qp)?;
    let s = tape.reshape(s, &[g, n, heads, dk])?;
    let s = tape.sum_axis(s, 3)?;
    let s = tape.reshape(s, &[g, n, heads])?;
    let s = tape.scale(s, 1.0 / (dk as f64).sqrt());
    let bias = tape.constant_from(&[g, n, 1], mask_bias(mask))?;
    let s = tape.add(s, bias)?;
    let a = tape.softmax(s, 1)?;
    let a4 = tape.reshape(a, &[g, n, heads, 1])?;
    let v4 = tape.reshape(vp, &[g, n, heads, dk])?;
    let ctx = tape.mul(a4, v4)?;
    let ctx = tape.sum_axis(ctx, 1)?;
    let ctx = tape.reshape(ctx, &[g, w])?;
    Ok(Attended {
        output: tape.matmul(ctx, w_o)?,
        weights: a,
    })
}

/// Mean of the unmasked rows: `[G, N, W] -> [G, W]`.
pub fn masked_mean(tape: &mut Tape, h: Var, mask: &[bool]) -> Result<Var> {
    let (g, n, _) = dims3(tape, h)?;
    check_mask(mask, g * n)?;
    let m = tape.constant_from(&[g, n, 1], mask.iter().map(|&b| b as u8 as f64).collect())?;
    let inv: Vec<f64> = mask
        .chunks(n)
        .map(|row| 1.0 / row.iter().filter(|&&b| b).count().max(1) as f64)
        .collect();
    let inv = tape.constant_from(&[g, 1], inv)?;
    let hm = tape.mul(h, m)?;
    let s = tape.sum_axis(hm, 1)?;
    let s = tape.reshape(s, &[g, tape.shape(h)[2]])?;
    Ok(tape.mul(s, inv)?)
}

/// Multi-head self-attention over `x[B, R, W]`; masked keys get `-inf`.
pub fn self_attention(tape: &mut Tape, ids: &AttentionIds, x: Var, key_mask: &[bool], heads: usize) -> Result<Var> {
    let (b, r, w) = dims3(tape, x)?;
    check_mask(key_mask, b * r)?;
    let dk = w / heads;
    let (w_q, w_k, w_v, w_o) = proj_vars(tape, ids);
    let mut split = |p: Var| -> Result<Var> {
        let y = tape.matmul(x, p)?;
        let y = tape.reshape(y, &[b, r, heads, dk])?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        Ok(tape.reshape(y, &[b * heads, r, dk])?)
    };
    let (q, k, v) = (split(w_q)?, split(w_k)?, split(w_v)?);
    let s = tape.bmm_nt(q, k)?;
    let s = tape.scale(s, 1.0 / (dk as f64).sqrt());
    let s = tape.reshape(s, &[b, heads, r, r])?;
    let bias = tape.constant_from(&[b, 1, 1, r], mask_bias(key_mask))?;
    let s = tape.add(s, bias)?;
    let a = tape.softmax(s, 3)?;
    let a = tape.reshape(a, &[b * heads, r, r])?;
    let ctx = tape.bmm(a, v)?;
    let ctx = tape.reshape(ctx, &[b, heads, r, dk])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[b, r, w])?;
    Ok(tape.matmul(ctx, w_o)?)
}

pub struct EncoderIds {
    pub attn: AttentionIds,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
}

impl EncoderIds {
    pub fn declare(b: &mut Builder, prefix: &str, width: usize, ffn: usize) -> Result<Self> {
        Ok(EncoderIds {
            attn: AttentionIds::declare(b, &format!("{prefix}.attn"), width)?,
            ln1_g: b.param(&format!("{prefix}.ln1.g"), &[width], Init::Const(1.0))?,
            ln1_b: b.param(&format!("{prefix}.ln1.b"), &[width], Init::Zeros)?,
            w1: b.param(&format!("{prefix}.ffn.w1"), &[width, ffn], Init::Glorot)?,
            b1: b.param(&format!("{prefix}.ffn.b1"), &[ffn], Init::Zeros)?,
            w2: b.param(&format!("{prefix}.ffn.w2"), &[ffn, width], Init::Glorot)?,
            b2: b.param(&format!("{prefix}.ffn.b2"), &[width], Init::Zeros)?,
            ln2_g: b.param(&format!("{prefix}.ln2.g"), &[width], Init::Const(1.0))?,
            ln2_b: b.param(&format!("{prefix}.ln2.b"), &[width], Init::Zeros)?,
        })
    }
}

pub struct EncoderSettings {
    pub heads: usize,
    pub dropout: f64,
    pub eps: f64,
}

/// Post-norm transformer layer; dropout hits each sub-layer output before
/// the residual addition.
pub fn encoder_layer(
    tape: &mut Tape,
    ids: &EncoderIds,
    x: Var,
    key_mask: &[bool],
    set: &EncoderSettings,
    rng: &mut Rng,
) -> Result<Var> {
    let a = self_attention(tape, &ids.attn, x, key_mask, set.heads)?;
    let a = tape.dropout(a, set.dropout, rng)?;
    let y = tape.add(x, a)?;
    let (g1, b1) = (tape.param(ids.ln1_g), tape.param(ids.ln1_b));
    let y = tape.layer_norm(y, g1, b1, set.eps)?;
    let (w1, bb1, w2, bb2) = (tape.param(ids.w1), tape.param(ids.b1), tape.param(ids.w2), tape.param(ids.b2));
    let f = tape.matmul(y, w1)?;
    let f = tape.add(f, bb1)?;
    let f = tape.relu(f);
    let f = tape.matmul(f, w2)?;
    let f = tape.add(f, bb2)?;
    let f = tape.dropout(f, set.dropout, rng)?;
    let z = tape.add(y, f)?;
    let (g2, b2) = (tape.param(ids.ln2_g), tape.param(ids.ln2_b));
    Ok(tape.layer_norm(z, g2, b2, set.eps)?)
}

/// Feature-type rows: tweet, description, location, name, language, time
/// zone, network.
pub const FEATURE_TYPES: usize = 7;

/// Builds `F[B, R, W]` with `R = max(t_used) + 6`. Rows per user: tweets,
/// description, location, name, language, time zone, network, then zero
/// padding. `text` holds every user's `t_used + 3` field vectors in order.
/// Each real row gets its type embedding added; padding stays zero.
pub fn fuse(tape: &mut Tape, text: Var, t_used: &[usize], lang: Var, tz: Var, net: Var, types: Var) -> Result<Var> {
    let b = t_used.len();
    let w = tape.shape(text)[1];
    let g: usize = t_used.iter().map(|t| t + 3).sum();
    if tape.shape(text)[0] != g {
        return Err(Error::Config(format!("{} text rows for {g} fields", tape.shape(text)[0])));
    }
    for v in [lang, tz, net] {
        if tape.shape(v) != [b, w] {
            return Err(Error::Config(format!("feature rows {:?}, expected [{b}, {w}]", tape.shape(v))));
        }
    }
    let r = t_used.iter().max().copied().unwrap_or(0) + 6;
    let zero_row = g + 3 * b;
    let mut rows = Vec::with_capacity(b * r);
    let mut kinds = Vec::with_capacity(b * r);
    let mut offset = 0;
    for (u, &t) in t_used.iter().enumerate() {
        for i in 0..r {
            let (row, kind) = match i {
                i if i < t => (offset + i, 0),
                i if i < t + 3 => (offset + i, 1 + i - t),
                i if i == t + 3 => (g + u, 4),
                i if i == t + 4 => (g + b + u, 5),
                i if i == t + 5 => (g + 2 * b + u, 6),
                _ => (zero_row, FEATURE_TYPES),
            };
            rows.push(row);
            kinds.push(kind);
        }
        offset += t + 3;
    }
    let zero = tape.constant(Tensor::zeros(&[1, w]));
    let table = tape.concat(&[text, lang, tz, net, zero], 0)?;
    let raw = tape.embedding_lookup(table, &rows)?;
    let type_table = tape.concat(&[types, zero], 0)?;
    let added = tape.embedding_lookup(type_table, &kinds)?;
    let f = tape.add(raw, added)?;
    Ok(tape.reshape(f, &[b, r, w])?)
}

/// Attendable rows of the fused matrix for the given feature setting. A user
/// with nothing enabled keeps the first row.
pub fn fusion_mask(t_used: &[usize], metadata: bool, network: bool) -> Vec<bool> {
    let r = t_used.iter().max().copied().unwrap_or(0) + 6;
    let mut mask = Vec::with_capacity(t_used.len() * r);
    for &t in t_used {
        let start = mask.len();
        mask.extend((0..r).map(|i| match i {
            i if i < t => true,
            i if i < t + 5 => metadata,
            i if i == t + 5 => network,
            _ => false,
        }));
        if !mask[start..].contains(&true) {
            mask[start] = true;
        }
    }
    mask
}

fn proj_vars(tape: &mut Tape, ids: &AttentionIds) -> (Var, Var, Var, Var) {
    (tape.param(ids.w_q), tape.param(ids.w_k), tape.param(ids.w_v), tape.param(ids.w_o))
}

fn dims3(tape: &Tape, x: Var) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [a, b, c] => Ok((a, b, c)),
        ref s => Err(Error::Config(format!("expected a rank-3 input, got {s:?}"))),
    }
}

fn check_mask(mask: &[bool], expected: usize) -> Result<()> {
    if mask.len() != expected {
        return Err(Error::Config(format!("mask has {} entries, expected {expected}", mask.len())));
    }
    Ok(())
}
