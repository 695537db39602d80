pub mod data;
pub mod fsutil;
pub mod graph;
pub mod model;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vmd;

#[cfg(test)]
mod testutil;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
