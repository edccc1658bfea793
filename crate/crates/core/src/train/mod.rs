//! Loss, optimizer, checkpoint format, and the training loop.

pub mod checkpoint;
pub mod fit;
pub mod loss;
pub mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use fit::{fit, EpochStats, FitLog, TrainConfig, TrainSample};
pub use loss::{combined_loss, orientation_loss, pose_loss_graph, position_loss, LossNodes};
pub use optim::{step_lr, Adam};
