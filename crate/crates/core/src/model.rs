//! A configured forecaster together with its parameters.

use cxa_tensor::{Tensor, Var};

use crate::batch::Batch;
use crate::config::{ModelConfig, ModelKind};
use crate::error::Result;
use crate::lstm::{LipLstm, TripleStreamLstm};
use crate::params::{ParamBuilder, ParamSet, Session};
use crate::transformer::CxaTransformer;

#[derive(Clone, Debug)]
pub enum Architecture {
    Cxa(CxaTransformer),
    TripleLstm(TripleStreamLstm),
    LipLstm(LipLstm),
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub architecture: Architecture,
}

impl Model {
    /// Builds the architecture and draws its parameters from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut pb = ParamBuilder::new(seed);
        let architecture = match config.kind {
            ModelKind::Cxa => Architecture::Cxa(CxaTransformer::new(&mut pb, &config)),
            ModelKind::TripleLstm => Architecture::TripleLstm(TripleStreamLstm::new(&mut pb, &config)),
            ModelKind::LipLstm => Architecture::LipLstm(LipLstm::new(&mut pb, &config)),
        };
        Ok(Self {
            config,
            params: pb.finish(),
            architecture,
        })
    }

    /// Predicted future poses, `[B, t_pred, 7]`.
    pub fn forward(&self, s: &mut Session, batch: &Batch) -> Result<Var> {
        match &self.architecture {
            Architecture::Cxa(m) => m.forward(s, batch),
            Architecture::TripleLstm(m) => m.forward(s, batch),
            Architecture::LipLstm(m) => m.forward(s, batch),
        }
    }

    /// Mean squared error of the greedy decode against the batch targets.
    pub fn loss(&self, s: &mut Session, batch: &Batch) -> Result<Var> {
        let pred = self.forward(s, batch)?;
        let target = s.tape.constant(batch.target.clone());
        Ok(s.tape.mse_loss(pred, target)?)
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let mut s = Session::frozen(&self.params);
        let out = self.forward(&mut s, batch)?;
        Ok(s.tape.value(out).clone())
    }
}

/// Scales the quaternion part of each predicted pose to unit length. Metrics
/// always use the raw outputs.
pub fn renormalize_quaternions(poses: &mut [f64]) {
    for pose in poses.chunks_exact_mut(7) {
        let n = pose[3..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            for v in &mut pose[3..] {
                *v /= n;
            }
        }
    }
}
