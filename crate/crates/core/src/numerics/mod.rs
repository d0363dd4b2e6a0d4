//! Dense double-precision linear algebra, layer primitives with manual
//! backpropagation, Adam, a finite-difference gradient checker and seeded
//! random streams.

mod gradcheck;
mod linear;
mod ops;
mod optim;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, relative_error};
pub use linear::LinearLayer;
pub use ops::{
    cross_entropy, cross_entropy_logit_grad, l2_normalize, l2_normalize_backward, log_sum_exp,
    relu, relu_backward, softmax, sorted_sum, softmax_in_place, tanh, tanh_backward, LOG_FLOOR, NORM_EPS,
};
pub use optim::{AdamConfig, OptimizerState, Parameters};
pub use rng::{Rng, RngState};
pub use tensor::{dot, Tensor2};
