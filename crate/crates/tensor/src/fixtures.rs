//! Ops with intentionally wrong backward rules, used to prove that the
//! gradient checker catches broken derivatives.

use crate::error::Result;
use crate::tape::CustomOp;
use crate::tensor::Tensor;

/// Elementwise `x³` whose backward returns `2x²` instead of `3x²`.
pub struct MiscalibratedCube;

impl CustomOp for MiscalibratedCube {
    fn name(&self) -> &str {
        "miscalibrated_cube"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * v * v).collect())
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &[f64]) -> Vec<Vec<f64>> {
        vec![inputs[0]
            .data()
            .iter()
            .zip(grad_output)
            .map(|(x, g)| 2.0 * x * x * g)
            .collect()]
    }
}

/// Correct elementwise `x³`, the control for [`MiscalibratedCube`].
pub struct Cube;

impl CustomOp for Cube {
    fn name(&self) -> &str {
        "cube"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        MiscalibratedCube.forward(inputs)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &[f64]) -> Vec<Vec<f64>> {
        vec![inputs[0]
            .data()
            .iter()
            .zip(grad_output)
            .map(|(x, g)| 3.0 * x * x * g)
            .collect()]
    }
}
