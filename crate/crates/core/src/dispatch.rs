//! Forward strategy selection.
//!
//! The rule is a fixed decision list over the problem shape:
//!
//! | condition            | strategy              |
//! |----------------------|-----------------------|
//! | `dtype == I8`        | `Int8TwoStage`        |
//! | packed documents     | `VarlenPacked`        |
//! | one query            | `SingleQueryRerank`   |
//! | otherwise            | `BatchedMultiquery`   |
//!
//! Tile sizes come from a small lookup: `bq = min(32, next_pow2(L_q))`,
//! `bd = 64` for `d <= 128` and `32` above, capped at `next_pow2(L_d)`, and
//! a query chunk of 128 rows. Split-K and query-reuse variants are not
//! provided; new tags can be added without changing existing selections.

use serde::{Deserialize, Serialize};

use crate::types::{ElemType, TileConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyTag {
    SingleQueryRerank,
    BatchedMultiquery,
    VarlenPacked,
    Int8TwoStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardStrategy {
    pub tag: StrategyTag,
    pub tile: TileConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemShape {
    pub n_queries: usize,
    pub n_docs: usize,
    pub q_len: usize,
    pub doc_len: usize,
    pub dim: usize,
    pub dtype: ElemType,
    pub packed: bool,
}

impl ProblemShape {
    pub fn new(n_queries: usize, n_docs: usize, q_len: usize, doc_len: usize, dim: usize, dtype: ElemType) -> Self {
        Self {
            n_queries,
            n_docs,
            q_len,
            doc_len,
            dim,
            dtype,
            packed: false,
        }
    }

    pub fn packed(mut self) -> Self {
        self.packed = true;
        self
    }
}

pub fn tile_for(q_len: usize, doc_len: usize, dim: usize) -> TileConfig {
    let bq = TileConfig::DEFAULT_BQ.min(q_len.max(1).next_power_of_two());
    let bd_cap = if dim <= 128 { TileConfig::DEFAULT_BD } else { 32 };
    let bd = bd_cap.min(doc_len.max(1).next_power_of_two());
    TileConfig {
        bq,
        bd,
        // bq is a power of two no larger than 32, so it divides 128.
        qchunk: TileConfig::DEFAULT_QCHUNK,
    }
}

pub fn dispatch(shape: &ProblemShape) -> ForwardStrategy {
    let tag = if shape.dtype == ElemType::I8 {
        StrategyTag::Int8TwoStage
    } else if shape.packed {
        StrategyTag::VarlenPacked
    } else if shape.n_queries == 1 {
        StrategyTag::SingleQueryRerank
    } else {
        StrategyTag::BatchedMultiquery
    };
    ForwardStrategy {
        tag,
        tile: tile_for(shape.q_len, shape.doc_len, shape.dim),
    }
}
