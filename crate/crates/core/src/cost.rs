//! Closed-form compute model standing in for wall-clock latency.
//!
//! Counts, for `N` tokens of width `C`, MLP hidden width `H = mlp_ratio·C`
//! and `L` encoder blocks:
//!
//! | term        | count                                   |
//! |-------------|-----------------------------------------|
//! | attention   | `L · (4·N·C² + 2·N²·C)`                 |
//! | mlp         | `L · 2·N·C·H·2`                         |
//! | embedding   | `tokens · P² · channels · C` per kernel |
//! | enhancement | `2·N_f·M·C + 4·K_c·K_f·C`               |
//!
//! `N_f` is the fine token count, `M` the number of historical queries, and
//! `K_f`, `K_c` the selected fine and coarse token counts.

use serde::{Deserialize, Serialize};

use crate::embedding::PatchGridSpec;
use crate::encoder::EncoderConfig;
use crate::enhancement::SelectionMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopReport {
    pub tokens_per_view: u64,
    pub attention_flops: u64,
    pub mlp_flops: u64,
    pub embedding_flops: u64,
    pub enhancement_flops: u64,
    pub total: u64,
}

impl FlopReport {
    fn with_total(mut self) -> Self {
        self.total = self.attention_flops + self.mlp_flops + self.embedding_flops + self.enhancement_flops;
        self
    }

    pub fn encoder_flops(&self) -> u64 {
        self.attention_flops + self.mlp_flops
    }

    pub fn add_embedding(mut self, flops: u64) -> Self {
        self.embedding_flops += flops;
        self.with_total()
    }

    /// Component-wise sum; `tokens_per_view` is kept from `self` unless zero.
    pub fn accumulate(mut self, other: &FlopReport) -> Self {
        if self.tokens_per_view == 0 {
            self.tokens_per_view = other.tokens_per_view;
        }
        self.attention_flops += other.attention_flops;
        self.mlp_flops += other.mlp_flops;
        self.embedding_flops += other.embedding_flops;
        self.enhancement_flops += other.enhancement_flops;
        self.with_total()
    }
}

/// `(attention, mlp)` for one block.
pub fn block_flops(n: u64, dim: u64, hidden: u64) -> (u64, u64) {
    (4 * n * dim * dim + 2 * n * n * dim, 2 * n * dim * hidden * 2)
}

pub fn embedding_flops(grid: &PatchGridSpec, channels: usize, dim: usize) -> u64 {
    let p = grid.patch_size as u64;
    grid.tokens() as u64 * p * p * channels as u64 * dim as u64
}

/// Encoder and enhancement cost for one view. Embedding is added separately
/// with [`FlopReport::add_embedding`].
pub fn flops_estimate(n: usize, cfg: &EncoderConfig, selection: &SelectionMask, queries: usize) -> FlopReport {
    let (n, c, depth) = (n as u64, cfg.dim as u64, cfg.depth as u64);
    let (attn, mlp) = block_flops(n, c, cfg.hidden() as u64);
    let n_fine = selection.entropies.len() as u64;
    let (kf, kc) = (selection.fine_indices.len() as u64, selection.coarse_indices.len() as u64);
    FlopReport {
        tokens_per_view: n,
        attention_flops: depth * attn,
        mlp_flops: depth * mlp,
        embedding_flops: 0,
        enhancement_flops: 2 * n_fine * queries as u64 * c + 4 * kc * kf * c,
        total: 0,
    }
    .with_total()
}
