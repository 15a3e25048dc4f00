pub mod cli;
pub mod data_ingest;
pub mod encoder_zoo;
pub mod ensemble;
pub mod metrics;
pub mod tensor_core;
pub mod text_pipeline;
pub mod training;

pub type Tensor32 = tensor_core::Tensor<f32>;
pub type Tensor64 = tensor_core::Tensor<f64>;
pub type Graph32 = tensor_core::Graph<f32>;
pub type Graph64 = tensor_core::Graph<f64>;
pub type Model32 = encoder_zoo::ModelParameters<f32>;
pub type Model64 = encoder_zoo::ModelParameters<f64>;
pub type Logits32 = encoder_zoo::Logits<f32>;
pub type Logits64 = encoder_zoo::Logits<f64>;
