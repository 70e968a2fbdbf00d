pub mod bench;
pub mod chamfer;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use chamfer::PointCloud;
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams, Variant};
pub use tensor::{Element, Tensor, Window};
