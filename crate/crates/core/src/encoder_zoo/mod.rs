//! The three encoder-classifier variants used as ensemble members, their
//! parameter inventories, forward pass and checkpoint format.

mod checkpoint;
mod config;
mod model;

use thiserror::Error;

use crate::tensor_core::TensorError;

pub use checkpoint::{load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use config::{EncoderConfig, Variant};
pub use model::{
    apply_block, block_prefix, build_encoder, forward, forward_graph, parameter_inventory, Init, Logits,
    ModelParameters, ParamVars, CLASSIFIER_BIAS, CLASSIFIER_WEIGHT, EMBEDDING_PROJECTION, POSITION_EMBEDDING,
    SHARED_BLOCK, TOKEN_EMBEDDING,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    BadConfig(String),
    #[error("sequence {index}: expected length {expected}, got {got}")]
    BadSequenceLength { index: usize, expected: usize, got: usize },
    #[error("sequence {index}: token id {id} outside the vocabulary")]
    IdOutOfVocab { index: usize, id: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
