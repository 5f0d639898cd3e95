//! Dense tensors, a define-by-run reverse-mode tape, parameter sets, and SGD.

pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use optim::{l2_param_distance, sgd_step, OptimConfig};
pub use params::{GradMap, Param, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
