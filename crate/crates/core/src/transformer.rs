//! The cascaded cross-attention transformer: one Pre-LN encoder per input
//! stream, residual cross-attention stages that fold the other streams into
//! the ego encoding, and a greedy autoregressive decoder.

use cxa_tensor::{Mask, Tensor, Var};

use crate::batch::Batch;
use crate::config::{Modality, ModelConfig, EGO_DIM};
use crate::error::{CoreError, Result};
use crate::nn::{sinusoidal_positions, DecoderLayer, EncoderLayer, KeyValues, LayerNorm, Linear, MultiHeadAttention};
use crate::params::{ParamBuilder, Session};

#[derive(Clone, Debug)]
pub struct EncoderStream {
    pub modality: Modality,
    pub input_dim: usize,
    pub embed: Linear,
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
    pub d_model: usize,
}

impl EncoderStream {
    pub fn new(pb: &mut ParamBuilder, modality: Modality, cfg: &ModelConfig) -> Self {
        let name = format!("encoder.{}", modality.token().to_ascii_lowercase());
        let input_dim = modality.input_dim();
        Self {
            modality,
            input_dim,
            embed: Linear::new(pb, &format!("{name}.embed"), input_dim, cfg.d_model, true),
            layers: (0..cfg.n_encoder_layers)
                .map(|l| EncoderLayer::new(pb, &format!("{name}.layer{l}"), cfg.d_model, cfg.n_heads, cfg.d_ff))
                .collect(),
            final_norm: LayerNorm::new(pb, &format!("{name}.final_norm"), cfg.d_model),
            d_model: cfg.d_model,
        }
    }

    /// `[B, T, d_in] → [B, T, d_model]`.
    pub fn forward(&self, s: &mut Session, input: Var) -> Result<Var> {
        let shape = s.tape.shape(input).to_vec();
        if shape.len() != 3 || shape[2] != self.input_dim {
            return Err(CoreError::ModalityInput {
                modality: self.modality.to_string(),
                detail: format!("input shape {shape:?}, expected [batch, steps, {}]", self.input_dim),
            });
        }
        let x = self.embed.forward(s, input)?;
        let pos = s.tape.constant(sinusoidal_positions(shape[1], self.d_model));
        let mut x = s.tape.add_broadcast(x, pos)?;
        for layer in &self.layers {
            x = layer.forward(s, x)?;
        }
        self.final_norm.forward(s, x)
    }
}

/// One residual cross-attention stage: `E ← MHA(LN(E), X, X) + E`.
#[derive(Clone, Debug)]
pub struct CascadeStage {
    pub norm: LayerNorm,
    pub attn: MultiHeadAttention,
}

#[derive(Clone, Debug, Default)]
pub struct CascadedFusion {
    pub stages: Vec<CascadeStage>,
}

impl CascadedFusion {
    pub fn new(pb: &mut ParamBuilder, cfg: &ModelConfig, others: &[Modality]) -> Self {
        let stages = others
            .iter()
            .map(|m| {
                let name = format!("fusion.{}", m.token().to_ascii_lowercase());
                CascadeStage {
                    norm: LayerNorm::new(pb, &format!("{name}.norm"), cfg.d_model),
                    attn: MultiHeadAttention::new(pb, &format!("{name}.attn"), cfg.d_model, cfg.n_heads),
                }
            })
            .collect();
        Self { stages }
    }

    /// Folds each encoding of `others`, in order, into the ego encoding.
    pub fn forward(&self, s: &mut Session, ego: Var, others: &[Var]) -> Result<Var> {
        cascaded_cross_attention(s, &self.stages, ego, others)
    }
}

/// Starting from the ego encoding, each stage computes
/// `fused ← MHA(LN(fused), E, E) + fused` for the next encoding `E`.
/// With no other encodings the ego encoding is returned untouched.
pub fn cascaded_cross_attention(s: &mut Session, stages: &[CascadeStage], ego: Var, others: &[Var]) -> Result<Var> {
    let shape = s.tape.shape(ego).to_vec();
    if shape.len() != 3 || shape[1] == 0 {
        return Err(CoreError::InvalidConfig(format!("ego encoding has shape {shape:?}")));
    }
    if stages.len() != others.len() {
        return Err(CoreError::InvalidConfig(format!(
            "{} cascade stages for {} encodings",
            stages.len(),
            others.len()
        )));
    }
    let mut fused = ego;
    for (stage, &enc) in stages.iter().zip(others) {
        let other = s.tape.shape(enc);
        if other[0] != shape[0] || other[2] != shape[2] {
            return Err(CoreError::InvalidConfig(format!("encoding {other:?} cannot fuse with {shape:?}")));
        }
        let q = stage.norm.forward(s, fused)?;
        let a = stage.attn.forward(s, q, enc, None)?;
        fused = s.tape.add(a, fused)?;
    }
    Ok(fused)
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub embed: Linear,
    pub layers: Vec<DecoderLayer>,
    pub final_norm: LayerNorm,
    pub head: Linear,
    pub d_model: usize,
}

impl Decoder {
    pub fn new(pb: &mut ParamBuilder, cfg: &ModelConfig) -> Self {
        Self {
            embed: Linear::new(pb, "decoder.embed", EGO_DIM, cfg.d_model, true),
            layers: (0..cfg.n_decoder_layers)
                .map(|l| DecoderLayer::new(pb, &format!("decoder.layer{l}"), cfg.d_model, cfg.n_heads, cfg.d_ff))
                .collect(),
            final_norm: LayerNorm::new(pb, "decoder.final_norm", cfg.d_model),
            head: Linear::new(pb, "decoder.head", cfg.d_model, EGO_DIM, true),
            d_model: cfg.d_model,
        }
    }

    fn memory(&self, s: &mut Session, memory: Var) -> Result<Vec<KeyValues>> {
        self.layers.iter().map(|l| l.cross_attn.key_values(s, memory)).collect()
    }

    /// Runs target positions `start..start+len` given as `tokens` (`[B, len, 7]`).
    fn run(
        &self,
        s: &mut Session,
        tokens: Var,
        start: usize,
        memory: &[KeyValues],
        caches: &mut [Option<KeyValues>],
        mask: Option<&Mask>,
    ) -> Result<Var> {
        let len = s.tape.shape(tokens)[1];
        let table = sinusoidal_positions(start + len, self.d_model);
        let rows = Tensor::new([len, self.d_model], table.data()[start * self.d_model..].to_vec())?;
        let pos = s.tape.constant(rows);
        let x = self.embed.forward(s, tokens)?;
        let mut x = s.tape.add_broadcast(x, pos)?;
        for ((layer, mem), cache) in self.layers.iter().zip(memory).zip(caches.iter_mut()) {
            x = layer.forward(s, x, *mem, cache, mask)?;
        }
        let x = self.final_norm.forward(s, x)?;
        self.head.forward(s, x)
    }

    /// Greedy autoregressive decoding: the first input is `seed` (`[B, 1, 7]`)
    /// and each later input is the previous output. Returns `[B, t_pred, 7]`.
    pub fn decode_greedy(&self, s: &mut Session, memory: Var, seed: Var, t_pred: usize) -> Result<Var> {
        if t_pred < 1 {
            return Err(CoreError::InvalidConfig("t_pred must be at least 1".into()));
        }
        let mem = self.memory(s, memory)?;
        let mut caches = vec![None; self.layers.len()];
        let mut prev = seed;
        let mut outputs = Vec::with_capacity(t_pred);
        for step in 0..t_pred {
            prev = self.run(s, prev, step, &mem, &mut caches, None)?;
            outputs.push(prev);
        }
        if outputs.len() == 1 {
            return Ok(outputs[0]);
        }
        Ok(s.tape.concat(&outputs, 1)?)
    }

    /// Decodes all positions at once from given inputs (`[B, T, 7]`) under a
    /// causal mask; output row `i` sees inputs `0..=i` only.
    pub fn decode_teacher_forced(&self, s: &mut Session, memory: Var, inputs: Var) -> Result<Var> {
        let len = s.tape.shape(inputs)[1];
        let mem = self.memory(s, memory)?;
        let mut caches = vec![None; self.layers.len()];
        let mask = Mask::causal(len);
        self.run(s, inputs, 0, &mem, &mut caches, Some(&mask))
    }
}

#[derive(Clone, Debug)]
pub struct CxaTransformer {
    pub streams: Vec<EncoderStream>,
    pub fusion: CascadedFusion,
    pub decoder: Decoder,
    pub t_pred: usize,
}

impl CxaTransformer {
    pub fn new(pb: &mut ParamBuilder, cfg: &ModelConfig) -> Self {
        let modalities = cfg.modalities.modalities();
        let streams = modalities.iter().map(|&m| EncoderStream::new(pb, m, cfg)).collect();
        let fusion = CascadedFusion::new(pb, cfg, &modalities[1..]);
        let decoder = Decoder::new(pb, cfg);
        Self {
            streams,
            fusion,
            decoder,
            t_pred: cfg.t_pred,
        }
    }

    /// Encodes every active stream and fuses them, `[B, T_obs, d_model]`.
    pub fn encode(&self, s: &mut Session, batch: &Batch) -> Result<Var> {
        let mut encodings = Vec::with_capacity(self.streams.len());
        for stream in &self.streams {
            let input = batch.input(stream.modality).ok_or_else(|| CoreError::ModalityInput {
                modality: stream.modality.to_string(),
                detail: "missing from the batch".into(),
            })?;
            let x = s.tape.constant(input.clone());
            encodings.push(stream.forward(s, x)?);
        }
        self.fusion.forward(s, encodings[0], &encodings[1..])
    }

    pub fn forward(&self, s: &mut Session, batch: &Batch) -> Result<Var> {
        self.forward_steps(s, batch, self.t_pred)
    }

    pub fn forward_steps(&self, s: &mut Session, batch: &Batch, steps: usize) -> Result<Var> {
        let memory = self.encode(s, batch)?;
        let seed = s.tape.constant(batch.seed_pose());
        self.decoder.decode_greedy(s, memory, seed, steps)
    }
}
