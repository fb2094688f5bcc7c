//! Dense-tensor numerics with reverse-mode autodiff, the SGD optimizer,
//! and learning-rate schedules.

pub mod kernels;
mod optim;
mod schedule;
mod tape;
mod tensor;

pub use kernels::{argmax_rows, softmax_rows};
pub use optim::{ema_update, sgd_step, SgdState};
pub use schedule::LrSchedule;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
