//! Minimal tensor and layer toolkit with hand-written backward passes.

pub mod conv;
pub mod layers;
pub mod param;
pub mod spectral;
pub mod tensor;

pub use conv::{Conv2d, ConvCache, ConvShape};
pub use layers::{BatchNorm2d, BatchNormCache, Linear, Mode};
pub use param::{Adam, AdamConfig, ParamId, ParamStore};
pub use spectral::PowerState;
pub use tensor::{Real, Tensor};
