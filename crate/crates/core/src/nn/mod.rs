//! Small reverse-mode differentiation engine covering the layers of the
//! video-to-vocoder network. Generic over `f32` (training) and `f64`
//! (gradient checks).

mod conv;
mod graph;
mod gru;
mod params;
mod tensor;

pub use conv::{
    conv3d_naive, conv3d_out_dims, conv_transpose2d_naive, conv_transpose2d_out_dims, Conv3dGeometry,
    Conv3dSpec, ConvT2dSpec,
};
pub use graph::{BnUpdate, Gradients, Graph, Var};
pub use gru::gru_reference;
pub use params::{ParamId, ParamKind, ParamStore};
pub use tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
