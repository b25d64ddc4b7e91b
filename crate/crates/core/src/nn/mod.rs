//! Small CPU neural-network stack: NHWC tensors, the handful of layers the
//! key classifiers need, two losses, Adam and a training loop.

pub mod io;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use io::{load_weights, save_weights};
pub use network::{argmax, LayerKind, LayerSpec, NetworkSpec, NetworkWeights};
pub use tensor::Tensor;
pub use train::{evaluate, train, Confusion, Labeled, LossKind, LrSchedule, TrainConfig, TrainOutcome};
