//! Recurrent baselines: a triple-stream LSTM that merges per-stream final
//! states, and an LSTM over the per-timestep concatenation of all inputs.

use cxa_tensor::Var;

use crate::batch::Batch;
use crate::config::{Modality, ModelConfig, EGO_DIM};
use crate::error::{CoreError, Result};
use crate::nn::Linear;
use crate::params::{ParamBuilder, ParamId, Session};

/// LSTM cell with gate order input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new(pb: &mut ParamBuilder, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            input_weight: pb.weight(format!("{name}.input_weight"), input, 4 * hidden),
            hidden_weight: pb.weight(format!("{name}.hidden_weight"), hidden, 4 * hidden),
            bias: pb.zeros(format!("{name}.bias"), 4 * hidden),
            hidden,
        }
    }

    /// One step on `x` (`[B, d_in]`).
    pub fn step(&self, s: &mut Session, x: Var, state: LstmState) -> Result<LstmState> {
        let (wx, wh, b) = (s.var(self.input_weight), s.var(self.hidden_weight), s.var(self.bias));
        let gx = s.tape.linear(x, wx, Some(b))?;
        let gh = s.tape.linear(state.h, wh, None)?;
        let gates = s.tape.add(gx, gh)?;
        let n = self.hidden;
        let i = s.tape.slice(gates, 1, 0, n)?;
        let f = s.tape.slice(gates, 1, n, n)?;
        let g = s.tape.slice(gates, 1, 2 * n, n)?;
        let o = s.tape.slice(gates, 1, 3 * n, n)?;
        let (i, f, g, o) = (s.tape.sigmoid(i), s.tape.sigmoid(f), s.tape.tanh(g), s.tape.sigmoid(o));
        let keep = s.tape.mul(f, state.c)?;
        let write = s.tape.mul(i, g)?;
        let c = s.tape.add(keep, write)?;
        let tc = s.tape.tanh(c);
        let h = s.tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    pub fn zero_state(&self, s: &mut Session, batch: usize) -> LstmState {
        let z = cxa_tensor::Tensor::zeros([batch, self.hidden]);
        LstmState {
            h: s.tape.constant(z.clone()),
            c: s.tape.constant(z),
        }
    }

    /// Runs over every step of `seq` (`[B, T, d_in]`) and returns the final state.
    pub fn encode(&self, s: &mut Session, seq: Var) -> Result<LstmState> {
        let shape = s.tape.shape(seq).to_vec();
        let mut state = self.zero_state(s, shape[0]);
        for t in 0..shape[1] {
            let x = s.tape.slice(seq, 1, t, 1)?;
            let x = s.tape.reshape(x, &[shape[0], shape[2]])?;
            state = self.step(s, x, state)?;
        }
        Ok(state)
    }
}

/// Recurrent decoder shared by both baselines: feeds back its own pose.
#[derive(Clone, Debug)]
pub struct LstmDecoder {
    pub cell: LstmCell,
    pub head: Linear,
}

impl LstmDecoder {
    pub fn new(pb: &mut ParamBuilder, hidden: usize) -> Self {
        Self {
            cell: LstmCell::new(pb, "decoder.cell", EGO_DIM, hidden),
            head: Linear::new(pb, "decoder.head", hidden, EGO_DIM, true),
        }
    }

    pub fn decode(&self, s: &mut Session, init: LstmState, seed: Var, t_pred: usize) -> Result<Var> {
        let b = s.tape.shape(seed)[0];
        let mut prev = s.tape.reshape(seed, &[b, EGO_DIM])?;
        let mut state = init;
        let mut outputs = Vec::with_capacity(t_pred);
        for _ in 0..t_pred {
            state = self.cell.step(s, prev, state)?;
            prev = self.head.forward(s, state.h)?;
            outputs.push(s.tape.reshape(prev, &[b, 1, EGO_DIM])?);
        }
        if outputs.len() == 1 {
            return Ok(outputs[0]);
        }
        Ok(s.tape.concat(&outputs, 1)?)
    }
}

fn stream_input(s: &mut Session, batch: &Batch, m: Modality) -> Result<Var> {
    let t = batch.input(m).ok_or_else(|| CoreError::ModalityInput {
        modality: m.to_string(),
        detail: "missing from the batch".into(),
    })?;
    Ok(s.tape.constant(t.clone()))
}

#[derive(Clone, Debug)]
pub struct TripleStreamLstm {
    pub modalities: Vec<Modality>,
    pub encoders: Vec<LstmCell>,
    pub merge_hidden: Linear,
    pub merge_cell: Linear,
    pub decoder: LstmDecoder,
    pub t_pred: usize,
}

impl TripleStreamLstm {
    pub fn new(pb: &mut ParamBuilder, cfg: &ModelConfig) -> Self {
        let modalities = cfg.modalities.modalities();
        let h = cfg.d_model;
        let encoders = modalities
            .iter()
            .map(|m| LstmCell::new(pb, &format!("encoder.{}", m.token().to_ascii_lowercase()), m.input_dim(), h))
            .collect();
        let k = modalities.len();
        Self {
            merge_hidden: Linear::new(pb, "merge.hidden", k * h, h, true),
            merge_cell: Linear::new(pb, "merge.cell", k * h, h, true),
            decoder: LstmDecoder::new(pb, h),
            modalities,
            encoders,
            t_pred: cfg.t_pred,
        }
    }

    pub fn forward(&self, s: &mut Session, batch: &Batch) -> Result<Var> {
        let mut hs = Vec::new();
        let mut cs = Vec::new();
        for (m, cell) in self.modalities.iter().zip(&self.encoders) {
            let x = stream_input(s, batch, *m)?;
            let st = cell.encode(s, x)?;
            hs.push(st.h);
            cs.push(st.c);
        }
        let (h, c) = if hs.len() == 1 {
            (hs[0], cs[0])
        } else {
            (s.tape.concat(&hs, 1)?, s.tape.concat(&cs, 1)?)
        };
        let init = LstmState {
            h: self.merge_hidden.forward(s, h)?,
            c: self.merge_cell.forward(s, c)?,
        };
        let seed = s.tape.constant(batch.seed_pose());
        self.decoder.decode(s, init, seed, self.t_pred)
    }
}

#[derive(Clone, Debug)]
pub struct LipLstm {
    pub modalities: Vec<Modality>,
    pub encoder: LstmCell,
    pub decoder: LstmDecoder,
    pub t_pred: usize,
}

impl LipLstm {
    pub fn new(pb: &mut ParamBuilder, cfg: &ModelConfig) -> Self {
        let modalities = cfg.modalities.modalities();
        let width = modalities.iter().map(|m| m.input_dim()).sum();
        Self {
            encoder: LstmCell::new(pb, "encoder", width, cfg.d_model),
            decoder: LstmDecoder::new(pb, cfg.d_model),
            modalities,
            t_pred: cfg.t_pred,
        }
    }

    /// Width of the concatenated per-timestep input.
    pub fn input_width(&self) -> usize {
        self.modalities.iter().map(|m| m.input_dim()).sum()
    }

    pub fn forward(&self, s: &mut Session, batch: &Batch) -> Result<Var> {
        let inputs = self
            .modalities
            .iter()
            .map(|&m| stream_input(s, batch, m))
            .collect::<Result<Vec<_>>>()?;
        let x = if inputs.len() == 1 { inputs[0] } else { s.tape.concat(&inputs, 2)? };
        let init = self.encoder.encode(s, x)?;
        let seed = s.tape.constant(batch.seed_pose());
        self.decoder.decode(s, init, seed, self.t_pred)
    }
}
