//! Toy decoder-only transformer with its own reverse-mode tape, Adam, and
//! checkpoint format. Serves both as teacher and as truncated student.

mod checkpoint;
mod model;
mod optim;
mod tape;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use model::{make_student, ForwardVars, ModelConfig, Param, ToyDecoder};
pub use optim::{Adam, AdamConfig};
pub use tape::{mse, Gradients, SemTarget, Tape, Var};
pub use tensor::{log_softmax_row, softmax_row, Matrix, Scalar};
pub use train::{mean_cross_entropy, next_token_targets, train_lm, BatchSampler, LmTrainConfig};
