//! Dense linear algebra, small MLPs with exact gradients, and seeded randomness.

mod matrix;
mod mlp;
mod rng;

pub(crate) use matrix::gemm;
pub use matrix::{cholesky_logdet, dot, logdet_psd, solve_psd, Cholesky, Matrix, Vector, MAX_JITTER, MIN_JITTER};
pub use mlp::{
    mlp_apply, mlp_grads, read_checkpoint, write_checkpoint, Activation, BatchJacobian, DropoutMask, ForwardCache,
    Layer, MlpParams, ParamSlot,
};
pub use rng::RngStream;
