//! Named parameter storage and the per-pass binding of parameters to a tape.

use cxa_tensor::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named model parameters.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(|id| &mut self.tensors[id.0])
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub(crate) fn replace_tensors(&mut self, tensors: Vec<Tensor>) {
        debug_assert_eq!(tensors.len(), self.tensors.len());
        self.tensors = tensors;
    }
}

/// Allocates parameters in declaration order, drawing initial values from
/// a seeded stream.
pub struct ParamBuilder {
    rng: ChaCha8Rng,
    set: ParamSet,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            set: ParamSet::default(),
        }
    }

    fn push(&mut self, name: String, t: Tensor) -> ParamId {
        debug_assert!(self.set.id(&name).is_none(), "duplicate parameter {name}");
        self.set.names.push(name);
        self.set.tensors.push(t);
        ParamId(self.set.tensors.len() - 1)
    }

    /// A `[fan_in, fan_out]` matrix drawn from `U(−√(1/fan_in), √(1/fan_in))`.
    pub fn weight(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize) -> ParamId {
        let bound = (1.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.gen_range(-bound..bound)).collect();
        let t = Tensor::new([fan_in, fan_out], data).expect("positive extents");
        self.push(name.into(), t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, n: usize) -> ParamId {
        self.push(name.into(), Tensor::zeros([n]))
    }

    pub fn ones(&mut self, name: impl Into<String>, n: usize) -> ParamId {
        self.push(name.into(), Tensor::full([n], 1.0))
    }

    pub fn finish(self) -> ParamSet {
        self.set
    }
}

/// A tape plus the variables that stand for each parameter during one pass.
pub struct Session {
    pub tape: Tape,
    vars: Vec<Var>,
}

impl Session {
    /// Binds every parameter as a differentiable leaf.
    pub fn trainable(params: &ParamSet) -> Self {
        let mut tape = Tape::new();
        let vars = params.tensors.iter().map(|t| tape.param(t.clone())).collect();
        Self { tape, vars }
    }

    /// Binds every parameter as a constant, for inference.
    pub fn frozen(params: &ParamSet) -> Self {
        let mut tape = Tape::new();
        let vars = params.tensors.iter().map(|t| tape.constant(t.clone())).collect();
        Self { tape, vars }
    }

    /// Wraps an existing tape whose leaves `vars` stand for the parameters
    /// in order.
    pub fn from_parts(tape: Tape, vars: Vec<Var>) -> Self {
        Self { tape, vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }
}
