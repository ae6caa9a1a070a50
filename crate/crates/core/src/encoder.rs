//! A small pre-norm ViT encoder with seeded weights.
//!
//! Each block computes
//!
//! ```text
//! y = x + MHSA(LN₁(x))
//! z = y + W₂ᵀ·gelu(W₁ᵀ·LN₂(y) + b₁) + b₂
//! ```
//!
//! with `MHSA(u) = concat_h(softmax(Q_h K_hᵀ/√d_h) V_h) W_o + b_o` and
//! `Q = u W_q + b_q` (likewise K, V). LayerNorm uses the population variance
//! and `ε = 1e-6`; GELU is the tanh approximation.

use serde::{Deserialize, Serialize};

use crate::embedding::TokenSet;
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_bt, softmax_rows, Matrix};
use crate::rng;

pub const LAYER_NORM_EPS: f64 = 1e-6;

const ENCODER_STREAM: u64 = 0x656e63;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            depth: 24,
            dim: 256,
            heads: 8,
            mlp_ratio: 4.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 4 != 0 {
            return Err(Error::config("dim", "must be a positive multiple of 4"));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::config("heads", format!("must divide dim {}", self.dim)));
        }
        if !(self.mlp_ratio > 0.0) || self.hidden() == 0 {
            return Err(Error::config("mlp_ratio", "must give a positive hidden width"));
        }
        Ok(())
    }

    /// MLP hidden width, `round(mlp_ratio · dim)`.
    pub fn hidden(&self) -> usize {
        (self.mlp_ratio * self.dim as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl BlockWeights {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let (c, h) = (cfg.dim, cfg.hidden());
        Self {
            ln1_gamma: vec![1.0; c],
            ln1_beta: vec![0.0; c],
            wq: Matrix::zeros(c, c),
            bq: vec![0.0; c],
            wk: Matrix::zeros(c, c),
            bk: vec![0.0; c],
            wv: Matrix::zeros(c, c),
            bv: vec![0.0; c],
            wo: Matrix::zeros(c, c),
            bo: vec![0.0; c],
            ln2_gamma: vec![1.0; c],
            ln2_beta: vec![0.0; c],
            w1: Matrix::zeros(c, h),
            b1: vec![0.0; h],
            w2: Matrix::zeros(h, c),
            b2: vec![0.0; c],
        }
    }

    /// Matrices uniform in `±1/√fan_in`; biases zero; LayerNorm gains one.
    pub fn random(cfg: &EncoderConfig, seed: u64, block: usize) -> Self {
        let (c, h) = (cfg.dim, cfg.hidden());
        let mut r = rng::stream(seed, &[ENCODER_STREAM, block as u64]);
        let bc = 1.0 / (c as f64).sqrt();
        let bh = 1.0 / (h as f64).sqrt();
        let mut w = Self::zeros(cfg);
        w.wq = Matrix::random_uniform(c, c, -bc, bc, &mut r);
        w.wk = Matrix::random_uniform(c, c, -bc, bc, &mut r);
        w.wv = Matrix::random_uniform(c, c, -bc, bc, &mut r);
        w.wo = Matrix::random_uniform(c, c, -bc, bc, &mut r);
        w.w1 = Matrix::random_uniform(c, h, -bc, bc, &mut r);
        w.w2 = Matrix::random_uniform(h, c, -bh, bh, &mut r);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub blocks: Vec<BlockWeights>,
}

impl EncoderWeights {
    pub fn random(cfg: &EncoderConfig, seed: u64) -> Self {
        Self {
            blocks: (0..cfg.depth).map(|b| BlockWeights::random(cfg, seed, b)).collect(),
        }
    }

    pub fn zeros(cfg: &EncoderConfig) -> Self {
        Self {
            blocks: (0..cfg.depth).map(|_| BlockWeights::zeros(cfg)).collect(),
        }
    }
}

pub fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64]) -> Matrix {
    let mut out = x.clone();
    let c = x.cols() as f64;
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gamma[k] + beta[k];
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // √(2/π)
    0.5 * x * (1.0 + (K * (x + 0.044715 * x * x * x)).tanh())
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut y = matmul(x, w)?;
    for r in 0..y.rows() {
        for (v, bias) in y.row_mut(r).iter_mut().zip(b) {
            *v += bias;
        }
    }
    Ok(y)
}

fn columns(m: &Matrix, start: usize, width: usize) -> Matrix {
    Matrix::from_fn(m.rows(), width, |r, c| m[(r, start + c)])
}

fn self_attention(u: &Matrix, w: &BlockWeights, heads: usize) -> Result<Matrix> {
    let q = affine(u, &w.wq, &w.bq)?;
    let k = affine(u, &w.wk, &w.bk)?;
    let v = affine(u, &w.wv, &w.bv)?;
    let dh = u.cols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Matrix::zeros(u.rows(), u.cols());
    for h in 0..heads {
        let (qh, kh, vh) = (columns(&q, h * dh, dh), columns(&k, h * dh, dh), columns(&v, h * dh, dh));
        let probs = softmax_rows(&matmul_bt(&qh, &kh)?.scale(scale));
        let out = matmul(&probs, &vh)?;
        for r in 0..out.rows() {
            concat.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(out.row(r));
        }
    }
    affine(&concat, &w.wo, &w.bo)
}

pub fn block_forward(x: &Matrix, w: &BlockWeights, heads: usize) -> Result<Matrix> {
    let y = x.add(&self_attention(&layer_norm(x, &w.ln1_gamma, &w.ln1_beta), w, heads)?)?;
    let hidden = affine(&layer_norm(&y, &w.ln2_gamma, &w.ln2_beta), &w.w1, &w.b1)?.map(gelu);
    y.add(&affine(&hidden, &w.w2, &w.b2)?)
}

pub fn encoder_forward(tokens: &TokenSet, cfg: &EncoderConfig, weights: &EncoderWeights) -> Result<TokenSet> {
    if tokens.dim() != cfg.dim {
        return Err(Error::ShapeMismatch {
            op: "encoder_forward",
            left: tokens.features.shape(),
            right: (tokens.features.rows(), cfg.dim),
        });
    }
    if weights.blocks.len() != cfg.depth {
        return Err(Error::invalid(
            "encoder_forward",
            format!("{} weight blocks for depth {}", weights.blocks.len(), cfg.depth),
        ));
    }
    let mut x = tokens.features.clone();
    for w in &weights.blocks {
        x = block_forward(&x, w, cfg.heads)?;
    }
    TokenSet::new(x, tokens.grid.clone())
}
