//! Finite-difference checks of every differentiable tape operation and of
//! the full training loss of each forecaster at tiny sizes.

use std::collections::BTreeMap;
use std::sync::Arc;

use cxa_datagen::geometry::EgoPose;
use cxa_datagen::keypoints::NeighborMode;
use cxa_datagen::sample::TrajectorySample;
use cxa_datagen::scene::{SceneMode, SCENE_DIM};
use cxa_tensor::fixtures::{Cube, MiscalibratedCube};
use cxa_tensor::{finite_diff_gradcheck, GradcheckReport, Mask, Tape, Tensor, TensorError, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::batch::Batch;
use crate::config::{ModalitySet, ModelConfig, ModelKind};
use crate::model::Model;
use crate::nn::{DecoderLayer, EncoderLayer};
use crate::params::{ParamBuilder, Session};

pub const GRADCHECK_STEP: f64 = 1e-6;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
/// End-to-end checks place targets this fraction of the way from the
/// initial prediction to the synthetic future. Rounding noise in the loss
/// scales with the residual, and at this distance it stays below the
/// tolerance times the relative-error floor.
pub const TARGET_BLEND: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Coordinates compared at full relative precision.
    pub above_floor: usize,
    /// Parameter index, element, analytic and numeric value at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub passed: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn worst(&self) -> Option<&CheckResult> {
        self.checks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub ops: bool,
    pub transformer: bool,
    pub baselines: bool,
    /// Include a deliberately wrong backward rule, which must fail.
    pub corrupt: bool,
    /// Overrides the step of every end-to-end check.
    pub model_step: Option<f64>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            ops: true,
            transformer: true,
            baselines: true,
            corrupt: false,
            model_step: None,
        }
    }
}

impl SuiteOptions {
    pub fn none() -> Self {
        Self {
            ops: false,
            transformer: false,
            baselines: false,
            corrupt: false,
            model_step: None,
        }
    }
}

type Loss = Box<dyn Fn(&mut Tape, &[Var]) -> cxa_tensor::Result<Var>>;

fn record(name: &str, f: Loss, params: &[Tensor]) -> CheckResult {
    record_with_step(name, f, params, GRADCHECK_STEP)
}

fn record_with_step(name: &str, f: Loss, params: &[Tensor], step: f64) -> CheckResult {
    match finite_diff_gradcheck(f, params, step) {
        Ok(GradcheckReport {
            max_rel_error,
            coordinates,
            above_floor,
            worst,
            analytic,
            numeric,
        }) => CheckResult {
            name: name.into(),
            max_rel_error,
            coordinates,
            above_floor,
            worst: worst.map(|(p, e)| (p, e, analytic, numeric)),
            passed: max_rel_error <= GRADCHECK_TOLERANCE,
            error: None,
        },
        Err(e) => CheckResult {
            name: name.into(),
            max_rel_error: f64::INFINITY,
            coordinates: 0,
            above_floor: 0,
            worst: None,
            passed: false,
            error: Some(e.to_string()),
        },
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("valid shape")
}

fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.01 + v.abs());
    }
    t
}

/// Projection onto a scalar with fixed, well-spread positive weights.
fn weighted_sum(t: &mut Tape, x: Var) -> cxa_tensor::Result<Var> {
    let n = t.value(x).len();
    let w: Vec<f64> = (0..n).map(|i| 0.5 + 0.25 * ((i * 7 + 3) % 11) as f64).collect();
    let w = t.constant(Tensor::new(t.shape(x).to_vec(), w)?);
    let p = t.mul(x, w)?;
    Ok(t.sum(p))
}

fn op_checks(rng: &mut ChaCha8Rng) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut add = |name: &str, f: Loss, params: Vec<Tensor>| out.push(record(name, f, &params));

    add(
        "matmul",
        Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        vec![random(rng, &[2, 3, 4]), random(rng, &[4, 5])],
    );
    add(
        "bmm",
        Box::new(|t, v| {
            let y = t.bmm(v[0], v[1], false)?;
            weighted_sum(t, y)
        }),
        vec![random(rng, &[2, 3, 4]), random(rng, &[2, 4, 3])],
    );
    add(
        "bmm_transposed",
        Box::new(|t, v| {
            let y = t.bmm(v[0], v[1], true)?;
            weighted_sum(t, y)
        }),
        vec![random(rng, &[2, 3, 4]), random(rng, &[2, 5, 4])],
    );
    add(
        "linear",
        Box::new(|t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            weighted_sum(t, y)
        }),
        vec![random(rng, &[2, 3, 4]), random(rng, &[4, 5]), random(rng, &[5])],
    );
    add(
        "add_sub_mul",
        Box::new(|t, v| {
            let a = t.add(v[0], v[1])?;
            let b = t.sub(a, v[2])?;
            let c = t.mul(b, v[1])?;
            weighted_sum(t, c)
        }),
        vec![random(rng, &[3, 4]), random(rng, &[3, 4]), random(rng, &[3, 4])],
    );
    add(
        "add_broadcast_scale",
        Box::new(|t, v| {
            let y = t.add_broadcast(v[0], v[1])?;
            let y = t.scale(y, -1.7);
            weighted_sum(t, y)
        }),
        vec![random(rng, &[2, 3, 4]), random(rng, &[3, 4])],
    );
    add(
        "relu",
        Box::new(|t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y)
        }),
        vec![away_from_zero(rng, &[4, 5])],
    );
    add(
        "sigmoid_tanh",
        Box::new(|t, v| {
            let a = t.sigmoid(v[0]);
            let b = t.tanh(v[1]);
            let c = t.mul(a, b)?;
            weighted_sum(t, c)
        }),
        vec![random(rng, &[3, 5]), random(rng, &[3, 5])],
    );
    add(
        "softmax",
        Box::new(|t, v| {
            let y = t.softmax_rows(v[0])?;
            weighted_sum(t, y)
        }),
        vec![random(rng, &[2, 3, 5])],
    );
    add(
        "softmax_causal",
        Box::new(|t, v| {
            let mask = Mask::causal(4);
            let y = t.softmax_masked(v[0], Some(&mask))?;
            weighted_sum(t, y)
        }),
        vec![random(rng, &[2, 4, 4])],
    );
    add(
        "layer_norm",
        Box::new(|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(t, y)
        }),
        vec![random(rng, &[2, 3, 6]), random(rng, &[6]), random(rng, &[6])],
    );
    add(
        "split_merge_heads",
        Box::new(|t, v| {
            let s = t.split_heads(v[0], 2)?;
            let s = t.tanh(s);
            let m = t.merge_heads(s, 2)?;
            weighted_sum(t, m)
        }),
        vec![random(rng, &[2, 3, 4])],
    );
    add(
        "concat_slice_reshape",
        Box::new(|t, v| {
            let c = t.concat(&[v[0], v[1]], 1)?;
            let s = t.slice(c, 1, 1, 3)?;
            let r = t.reshape(s, &[6, 4])?;
            let r = t.tanh(r);
            weighted_sum(t, r)
        }),
        vec![random(rng, &[2, 2, 4]), random(rng, &[2, 3, 4])],
    );
    add(
        "sum_mean",
        Box::new(|t, v| {
            let sq = t.mul(v[0], v[0])?;
            let a = t.sum(sq);
            let b = t.mean(v[0]);
            let ab = t.mul(a, b)?;
            Ok(ab)
        }),
        vec![random(rng, &[3, 4])],
    );
    add(
        "mse_loss",
        Box::new(|t, v| t.mse_loss(v[0], v[1])),
        vec![random(rng, &[3, 4]), random(rng, &[3, 4])],
    );
    add(
        "custom_cube",
        Box::new(|t, v| {
            let y = t.custom(Arc::new(Cube), &[v[0]])?;
            weighted_sum(t, y)
        }),
        vec![random(rng, &[3, 3])],
    );
    out
}

/// Random samples with realistic value ranges for the given channels.
pub fn synthetic_samples(n: usize, t_obs: usize, t_pred: usize, seed: u64) -> Vec<TrajectorySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pose_rows = |rng: &mut ChaCha8Rng, steps: usize, first_identity: bool| -> Vec<f64> {
                (0..steps)
                    .flat_map(|t| {
                        if first_identity && t == 0 {
                            return EgoPose::IDENTITY.to_row().to_vec();
                        }
                        let yaw: f64 = rng.gen_range(-0.5..0.5);
                        vec![
                            0.6 * t as f64 + rng.gen_range(-0.2..0.2),
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.02..0.02),
                            (yaw / 2.0).cos(),
                            0.0,
                            0.0,
                            (yaw / 2.0).sin(),
                        ]
                    })
                    .collect()
            };
            let ego_past = pose_rows(&mut rng, t_obs, true);
            let ego_future = pose_rows(&mut rng, t_pred, false);
            let mut neighbors = BTreeMap::new();
            for mode in NeighborMode::ALL {
                let row = mode.row_dim();
                let v: Vec<f64> = (0..t_obs * row)
                    .map(|k| {
                        // the last two slots stay empty
                        if k % row >= 3 * mode.per_person_dim() {
                            0.0
                        } else if k % 2 == 0 {
                            rng.gen_range(0.0..480.0)
                        } else {
                            rng.gen_range(0.0..270.0)
                        }
                    })
                    .collect();
                neighbors.insert(mode, v);
            }
            let scene = SceneMode::ALL
                .iter()
                .map(|&m| (m, (0..t_obs * SCENE_DIM).map(|_| rng.gen_range(0.0..1.0)).collect()))
                .collect();
            TrajectorySample {
                id: i as u64,
                source_seed: seed,
                origin: EgoPose::IDENTITY,
                ego_past,
                ego_future,
                neighbors,
                scene,
            }
        })
        .collect()
}

/// Gradcheck of the mean-squared training loss of `config` on two samples.
/// Targets sit close to the initial prediction, as they would late in
/// training.
pub fn model_check(name: &str, config: ModelConfig, seed: u64) -> CheckResult {
    model_check_with_step(name, config, seed, GRADCHECK_STEP)
}

pub fn model_check_with_step(name: &str, config: ModelConfig, seed: u64, step: f64) -> CheckResult {
    let model = match Model::new(config, seed) {
        Ok(m) => m,
        Err(e) => {
            return CheckResult {
                name: name.into(),
                max_rel_error: f64::INFINITY,
                coordinates: 0,
                above_floor: 0,
                worst: None,
                passed: false,
                error: Some(e.to_string()),
            }
        }
    };
    let samples = synthetic_samples(2, model.config.t_obs, model.config.t_pred, seed ^ 0xabc);
    let refs: Vec<&TrajectorySample> = samples.iter().collect();
    let batch = match Batch::assemble(&refs, model.config.modalities) {
        Ok(b) => b,
        Err(e) => {
            return CheckResult {
                name: name.into(),
                max_rel_error: f64::INFINITY,
                coordinates: 0,
                above_floor: 0,
                worst: None,
                passed: false,
                error: Some(e.to_string()),
            }
        }
    };
    let mut batch = batch;
    match model.predict(&batch) {
        Ok(pred) => {
            let blended: Vec<f64> = pred
                .data()
                .iter()
                .zip(batch.target.data())
                .map(|(p, t)| p + TARGET_BLEND * (t - p))
                .collect();
            batch.target = Tensor::new(batch.target.shape().to_vec(), blended).expect("same shape");
        }
        Err(e) => {
            return CheckResult {
                name: name.into(),
                max_rel_error: f64::INFINITY,
                coordinates: 0,
                above_floor: 0,
                worst: None,
                passed: false,
                error: Some(e.to_string()),
            }
        }
    }
    let params = model.params.tensors().to_vec();
    let f: Loss = Box::new(move |tape: &mut Tape, vars: &[Var]| {
        let mut s = Session::from_parts(std::mem::take(tape), vars.to_vec());
        let loss = model.loss(&mut s, &batch);
        *tape = s.tape;
        loss.map_err(|e| TensorError::InvalidArgument(e.to_string()))
    });
    record_with_step(name, f, &params, step)
}

/// Single Pre-LN layers with their inputs, through a weighted-sum readout.
fn layer_checks(rng: &mut ChaCha8Rng) -> Vec<CheckResult> {
    let (d, heads, d_ff) = (8, 2, 16);
    let mut pb = ParamBuilder::new(rng.gen());
    let encoder = EncoderLayer::new(&mut pb, "enc", d, heads, d_ff);
    let decoder = DecoderLayer::new(&mut pb, "dec", d, heads, d_ff);
    let set = pb.finish();
    let n = set.len();
    let mut params = set.tensors().to_vec();
    params.push(random(rng, &[1, 3, d]));
    params.push(random(rng, &[1, 4, d]));

    let enc = encoder.clone();
    let encoder_loss: Loss = Box::new(move |tape: &mut Tape, vars: &[Var]| {
        let mut s = Session::from_parts(std::mem::take(tape), vars[..n].to_vec());
        let y = enc.forward(&mut s, vars[n]);
        *tape = s.tape;
        weighted_sum(tape, y.map_err(|e| TensorError::InvalidArgument(e.to_string()))?)
    });
    let dec = decoder.clone();
    let decoder_loss: Loss = Box::new(move |tape: &mut Tape, vars: &[Var]| {
        let mut s = Session::from_parts(std::mem::take(tape), vars[..n].to_vec());
        let out = (|| {
            let memory = dec.cross_attn.key_values(&mut s, vars[n])?;
            let mask = Mask::causal(4);
            dec.forward(&mut s, vars[n + 1], memory, &mut None, Some(&mask))
        })();
        *tape = s.tape;
        weighted_sum(tape, out.map_err(|e| TensorError::InvalidArgument(e.to_string()))?)
    });
    vec![
        record("pre_ln_encoder_layer", encoder_loss, &params),
        record("pre_ln_decoder_layer", decoder_loss, &params),
    ]
}

/// Tiny transformer configurations with the seed each is checked at.
pub fn transformer_cases() -> Vec<(&'static str, ModelConfig, u64)> {
    let set = |s: &str| -> ModalitySet { s.parse().expect("valid set") };
    vec![
        ("cxa_transformer_y+p+s", ModelConfig::tiny(ModelKind::Cxa, set("y+p+s")), 1),
        ("cxa_transformer_y+b+d", ModelConfig::tiny(ModelKind::Cxa, set("y+b+d")), 2),
        ("cxa_transformer_y", ModelConfig::tiny(ModelKind::Cxa, ModalitySet::EGO_ONLY), 3),
    ]
}

pub fn baseline_cases() -> Vec<(&'static str, ModelConfig, u64)> {
    let full: ModalitySet = "y+p+s".parse().expect("valid set");
    vec![
        ("triple_stream_lstm_y+p+s", ModelConfig::tiny(ModelKind::TripleLstm, full), 4),
        ("lip_lstm_y+p+s", ModelConfig::tiny(ModelKind::LipLstm, full), 5),
    ]
}

pub fn run_gradcheck_suite(options: SuiteOptions) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let mut checks = Vec::new();
    if options.ops {
        checks.extend(op_checks(&mut rng));
        checks.extend(layer_checks(&mut rng));
    }
    let mut cases = Vec::new();
    if options.transformer {
        cases.extend(transformer_cases());
    }
    if options.baselines {
        cases.extend(baseline_cases());
    }
    for (name, config, seed) in cases {
        let step = options.model_step.unwrap_or(GRADCHECK_STEP);
        checks.push(model_check_with_step(name, config, seed, step));
    }
    if options.corrupt {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0062_6164);
        let x = random(&mut rng, &[3, 3]);
        checks.push(record(
            "corrupted_cube_backward",
            Box::new(|t, v| {
                let y = t.custom(Arc::new(MiscalibratedCube), &[v[0]])?;
                weighted_sum(t, y)
            }),
            &[x],
        ));
    }
    SuiteReport { checks }
}
