//! Residual vector-quantized action tokenizer.

pub mod codebook;
pub mod kmeans;
pub mod quantizer;
pub mod train;

pub use codebook::{CodebookLayer, LayerAssignment};
pub use kmeans::{kmeans_fit, KMeans};
pub use quantizer::{quantize_layer, Assignment, CodeTuple, Quantized, ResidualQuantizer, RvqConfig, RvqLoss};
pub use train::{action_chunks, codebook_utilization, init_codebooks, reconstruction_error, train_rvq, RvqStepLog, RvqTrainConfig, RvqTrainSummary};
