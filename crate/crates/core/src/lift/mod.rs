//! Quadratic lifting of the swing model and the tensor kernels it relies on.

mod hessian;
mod system;
pub mod tensor;

pub use hessian::{Hessian, LiftedHessian};
pub use system::{
    build_quadratic, lift_state, mean_angle_output, quadratic_rhs, shift_system, LiftedState,
    QuadraticSystem,
};
pub use tensor::{
    kron_factor_product, mode_k_fold, mode_k_unfold, project_hessian, DenseTensor, KronMode,
    QuadraticTensor,
};
