pub mod autograd;
pub mod bitcodec;
pub mod data;
pub mod distillation;
pub mod error;
pub mod evaluation;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub mod entropy;
pub mod networks;
pub mod nn;

/// Single-precision instantiations.
pub type Rbn32 = networks::Rbn<f32>;
pub type Unified32 = networks::Unified<f32>;
pub type CompTeacher32 = networks::CompTeacher<f32>;
pub type IspTeacher32 = networks::IspTeacher<f32>;
pub type Cascaded32 = networks::Cascaded<f32>;
pub type Tensor32 = Tensor<f32>;

/// Double-precision instantiations.
pub type Rbn64 = networks::Rbn<f64>;
pub type Unified64 = networks::Unified<f64>;
pub type CompTeacher64 = networks::CompTeacher<f64>;
pub type IspTeacher64 = networks::IspTeacher<f64>;
pub type Cascaded64 = networks::Cascaded<f64>;
pub type Tensor64 = Tensor<f64>;
