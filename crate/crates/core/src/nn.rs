//! Transformer building blocks evaluated on a [`Session`].

use cxa_tensor::{Mask, Tensor, Var};

use crate::error::Result;
use crate::params::{ParamBuilder, ParamId, Session};

/// Sinusoidal position table: row `t` holds `sin(t/10000^(2i/d))` in even
/// columns and the matching cosines in odd columns.
pub fn sinusoidal_positions(steps: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; steps * d_model];
    for t in 0..steps {
        for i in (0..d_model).step_by(2) {
            let freq = 10000f64.powf(-(i as f64) / d_model as f64);
            let angle = t as f64 * freq;
            data[t * d_model + i] = angle.sin();
            if i + 1 < d_model {
                data[t * d_model + i + 1] = angle.cos();
            }
        }
    }
    Tensor::new([steps.max(1), d_model], data).expect("positive extents")
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Self {
            weight: pb.weight(format!("{name}.weight"), fan_in, fan_out),
            bias: bias.then(|| pb.zeros(format!("{name}.bias"), fan_out)),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.var(self.weight), self.bias.map(|b| s.var(b)));
        Ok(s.tape.linear(x, w, b)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, d: usize) -> Self {
        Self {
            gain: pb.ones(format!("{name}.gain"), d),
            bias: pb.zeros(format!("{name}.bias"), d),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (g, b) = (s.var(self.gain), s.var(self.bias));
        Ok(s.tape.layer_norm(x, g, b)?)
    }
}

/// Projected keys and values split into heads, `[B·H, T, d_k]` each.
#[derive(Clone, Copy, Debug)]
pub struct KeyValues {
    pub keys: Var,
    pub values: Var,
}

/// Multi-head scaled dot-product attention with bias-free projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(pb: &mut ParamBuilder, name: &str, d_model: usize, heads: usize) -> Self {
        Self {
            query: Linear::new(pb, &format!("{name}.query"), d_model, d_model, false),
            key: Linear::new(pb, &format!("{name}.key"), d_model, d_model, false),
            value: Linear::new(pb, &format!("{name}.value"), d_model, d_model, false),
            output: Linear::new(pb, &format!("{name}.output"), d_model, d_model, false),
            heads,
            d_model,
        }
    }

    pub fn key_values(&self, s: &mut Session, source: Var) -> Result<KeyValues> {
        let k = self.key.forward(s, source)?;
        let v = self.value.forward(s, source)?;
        Ok(KeyValues {
            keys: s.tape.split_heads(k, self.heads)?,
            values: s.tape.split_heads(v, self.heads)?,
        })
    }

    /// Attends from `queries` (`[B, Tq, d]`) over already projected keys and
    /// values. A mask is `Tq × Tk`.
    pub fn attend(&self, s: &mut Session, queries: Var, kv: KeyValues, mask: Option<&Mask>) -> Result<Var> {
        let q = self.query.forward(s, queries)?;
        let q = s.tape.split_heads(q, self.heads)?;
        let scores = s.tape.bmm(q, kv.keys, true)?;
        let d_k = (self.d_model / self.heads) as f64;
        let scores = s.tape.scale(scores, 1.0 / d_k.sqrt());
        let weights = s.tape.softmax_masked(scores, mask)?;
        let context = s.tape.bmm(weights, kv.values, false)?;
        let merged = s.tape.merge_heads(context, self.heads)?;
        self.output.forward(s, merged)
    }

    pub fn forward(&self, s: &mut Session, queries: Var, source: Var, mask: Option<&Mask>) -> Result<Var> {
        let kv = self.key_values(s, source)?;
        self.attend(s, queries, kv, mask)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub hidden: Linear,
    pub output: Linear,
}

impl FeedForward {
    pub fn new(pb: &mut ParamBuilder, name: &str, d_model: usize, d_ff: usize) -> Self {
        Self {
            hidden: Linear::new(pb, &format!("{name}.hidden"), d_model, d_ff, true),
            output: Linear::new(pb, &format!("{name}.output"), d_ff, d_model, true),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.hidden.forward(s, x)?;
        let h = s.tape.relu(h);
        self.output.forward(s, h)
    }
}

/// Pre-LN encoder layer: `x + SelfAttn(LN(x))`, then `· + FFN(LN(·))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(pb: &mut ParamBuilder, name: &str, d_model: usize, heads: usize, d_ff: usize) -> Self {
        Self {
            attn_norm: LayerNorm::new(pb, &format!("{name}.attn_norm"), d_model),
            attn: MultiHeadAttention::new(pb, &format!("{name}.attn"), d_model, heads),
            ffn_norm: LayerNorm::new(pb, &format!("{name}.ffn_norm"), d_model),
            ffn: FeedForward::new(pb, &format!("{name}.ffn"), d_model, d_ff),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let n = self.attn_norm.forward(s, x)?;
        let a = self.attn.forward(s, n, n, None)?;
        let h = s.tape.add(x, a)?;
        let n = self.ffn_norm.forward(s, h)?;
        let f = self.ffn.forward(s, n)?;
        Ok(s.tape.add(h, f)?)
    }
}

/// Pre-LN decoder layer: causal self-attention, cross-attention over the
/// encoder memory, feed-forward; each with a residual connection.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross_norm: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new(pb: &mut ParamBuilder, name: &str, d_model: usize, heads: usize, d_ff: usize) -> Self {
        Self {
            self_norm: LayerNorm::new(pb, &format!("{name}.self_norm"), d_model),
            self_attn: MultiHeadAttention::new(pb, &format!("{name}.self_attn"), d_model, heads),
            cross_norm: LayerNorm::new(pb, &format!("{name}.cross_norm"), d_model),
            cross_attn: MultiHeadAttention::new(pb, &format!("{name}.cross_attn"), d_model, heads),
            ffn_norm: LayerNorm::new(pb, &format!("{name}.ffn_norm"), d_model),
            ffn: FeedForward::new(pb, &format!("{name}.ffn"), d_model, d_ff),
        }
    }

    /// Runs the layer on new target positions `x`. The self-attention keys
    /// and values of `x` are appended to `cache`, which then covers every
    /// position seen so far; `mask` constrains `x` against the whole cache.
    pub fn forward(
        &self,
        s: &mut Session,
        x: Var,
        memory: KeyValues,
        cache: &mut Option<KeyValues>,
        mask: Option<&Mask>,
    ) -> Result<Var> {
        let n = self.self_norm.forward(s, x)?;
        let fresh = self.self_attn.key_values(s, n)?;
        let kv = match cache.take() {
            None => fresh,
            Some(old) => KeyValues {
                keys: s.tape.concat(&[old.keys, fresh.keys], 1)?,
                values: s.tape.concat(&[old.values, fresh.values], 1)?,
            },
        };
        *cache = Some(kv);
        let a = self.self_attn.attend(s, n, kv, mask)?;
        let h = s.tape.add(x, a)?;
        let n = self.cross_norm.forward(s, h)?;
        let c = self.cross_attn.attend(s, n, memory, None)?;
        let h = s.tape.add(h, c)?;
        let n = self.ffn_norm.forward(s, h)?;
        let f = self.ffn.forward(s, n)?;
        Ok(s.tape.add(h, f)?)
    }
}
