//! Straight-line reference implementations on plain row-major matrices,
//! sharing nothing with the tape code beyond the parameter values.
#![allow(dead_code)]

use cxa_core::nn::{LayerNorm, Linear, MultiHeadAttention};
use cxa_core::params::ParamSet;
use cxa_core::transformer::CascadeStage;
use cxa_tensor::LAYER_NORM_EPS;

#[derive(Clone, Debug)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.at(i, k) * other.at(k, j);
                }
                out[i * other.cols + j] = acc;
            }
        }
        Matrix::new(self.rows, other.cols, out)
    }

    pub fn plus(&self, other: &Matrix) -> Matrix {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn columns(&self, start: usize, len: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * len);
        for r in 0..self.rows {
            data.extend_from_slice(&self.data[r * self.cols + start..r * self.cols + start + len]);
        }
        Matrix::new(self.rows, len, data)
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        assert_eq!(self.data.len(), other.len());
        self.data.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn weight(params: &ParamSet, lin: &Linear) -> Matrix {
    let w = params.get(lin.weight);
    Matrix::new(w.shape()[0], w.shape()[1], w.data().to_vec())
}

pub fn layer_norm(params: &ParamSet, norm: &LayerNorm, x: &Matrix) -> Matrix {
    let (g, b) = (params.get(norm.gain).data(), params.get(norm.bias).data());
    let mut out = Vec::with_capacity(x.data.len());
    for r in 0..x.rows {
        let row = &x.data[r * x.cols..(r + 1) * x.cols];
        let mean = row.iter().sum::<f64>() / x.cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.cols as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for c in 0..x.cols {
            out.push((row[c] - mean) * inv * g[c] + b[c]);
        }
    }
    Matrix::new(x.rows, x.cols, out)
}

/// Scaled dot-product attention per head, heads concatenated, then the
/// output projection. `causal` hides keys after the query's own position.
pub fn attention(params: &ParamSet, mha: &MultiHeadAttention, queries: &Matrix, source: &Matrix, causal: bool) -> Matrix {
    let q = queries.matmul(&weight(params, &mha.query));
    let k = source.matmul(&weight(params, &mha.key));
    let v = source.matmul(&weight(params, &mha.value));
    let dk = mha.d_model / mha.heads;
    let mut context = vec![0.0; queries.rows * mha.d_model];
    for h in 0..mha.heads {
        let (qh, kh, vh) = (q.columns(h * dk, dk), k.columns(h * dk, dk), v.columns(h * dk, dk));
        for i in 0..qh.rows {
            let visible = if causal { i + 1 } else { kh.rows };
            let scores: Vec<f64> = (0..visible)
                .map(|j| (0..dk).map(|c| qh.at(i, c) * kh.at(j, c)).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let total: f64 = exp.iter().sum();
            for c in 0..dk {
                let mut acc = 0.0;
                for j in 0..visible {
                    acc += exp[j] / total * vh.at(j, c);
                }
                context[i * mha.d_model + h * dk + c] = acc;
            }
        }
    }
    Matrix::new(queries.rows, mha.d_model, context).matmul(&weight(params, &mha.output))
}

/// `fused ← E_Y; for each E: fused ← MHA(LN(fused), E, E) + fused`.
pub fn cascade(params: &ParamSet, stages: &[CascadeStage], ego: &Matrix, others: &[Matrix]) -> Matrix {
    let mut fused = ego.clone();
    for (stage, e) in stages.iter().zip(others) {
        let normed = layer_norm(params, &stage.norm, &fused);
        fused = attention(params, &stage.attn, &normed, e, false).plus(&fused);
    }
    fused
}
