//! Neural building blocks on top of `candle-core` autograd: a named,
//! seed-keyed parameter store, layers, recurrent cells, attention, Adam with
//! per-group learning-rate multipliers, checkpoint files and a
//! finite-difference gradient checker.

mod attention;
mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod params;
mod rnn;

pub use attention::{positional_encoding, FftBlock, MultiHeadAttention, VariancePredictor};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, TensorEntry, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, GradCheckReport, TensorGradError};
pub use layers::{
    dropout, length_mask, mask_rows, pad_ids, sigmoid, softmax_last, Conv1d, Ctx, Embedding, LayerNorm, Linear,
    PadMode,
};
pub use optim::{Adam, AdamConfig};
pub use params::{HostTensor, Init, ParamStore};
pub use rnn::{Blstm, Gru, Lstm};
