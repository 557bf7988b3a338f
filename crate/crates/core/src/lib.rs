//! Lightweight two-head detector built from pointwise/depthwise blocks, with
//! the training, augmentation and evaluation machinery around it.

pub mod augment;
pub mod data;
pub mod detection;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod loss;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{BBox, SoftBox};
pub use graph::NetGraph;
pub use model::WeightStore;
pub use scalar::Scalar;
pub use tensor::{Activation, Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type BBox32 = BBox<f32>;
pub type BBox64 = BBox<f64>;
pub type WeightStore32 = WeightStore<f32>;
pub type WeightStore64 = WeightStore<f64>;
