//! Embedding files, out-of-core streamed ranking and traffic accounting.

pub mod format;
pub mod stream;
pub mod topk;
pub mod traffic;
