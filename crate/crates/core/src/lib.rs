//! Exact MaxSim late-interaction scoring without materializing the
//! similarity tensor.
//!
//! The forward pass tiles queries and documents, folds each similarity tile
//! into a running per-row maximum and saves one argmax index per query
//! token. The backward pass inverts that map into a CSR so every gradient
//! row has a single owner. Around the core sit INT8 and padding-free
//! variants, out-of-core streamed ranking, a Chamfer-distance instance of the
//! same pattern and dense reference oracles for all of it.

pub mod backward;
pub mod chamfer;
pub mod dispatch;
pub mod error;
pub mod forward;
mod kernel;
pub mod quant;
pub mod reference;
pub mod stats;
pub mod streamio;
pub mod synth;
pub mod train;
pub mod types;
pub mod varlen;

pub use backward::{
    backward_dispatch, build_inverse_csr, fused_backward, grad_docs_csr, grad_docs_scatter, grad_query, BackwardConfig,
    BackwardPath, CsrInverse,
};
pub use chamfer::{chamfer_backward, chamfer_forward, ChamferForward, PointSet};
pub use dispatch::{dispatch, ForwardStrategy, ProblemShape, StrategyTag};
pub use error::{Error, Result};
pub use forward::{fused_score_batch, fused_score_pair, query_chunk_decompose, score_query_chunks, RunningRowState};
pub use kernel::dot;
pub use quant::{fused_score_int8, quantize_per_token, two_stage_topk, QuantizedMatrix};
pub use streamio::format::{read_embeddings, write_embeddings, EmbeddingData};
pub use streamio::stream::{stream_score_topk, FileReader, MemoryReader};
pub use streamio::topk::{Ranked, TopKHeap};
pub use streamio::traffic::{model_traffic, TrafficMode, TrafficReport, TrafficShape};
pub use types::{
    validate_pair, ArgmaxMap, DocBatch, DocSource, ElemType, EmbeddingMatrix, Gradients, ScoreMatrix, TileConfig,
};
pub use varlen::{fused_score_varlen, pack, unpack, PackedCorpus};
