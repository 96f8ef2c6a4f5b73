//! Convolutional segment embedding trained with a contrastive (Siamese) or
//! triplet objective. Forward and backward passes are hand-written over one
//! flat f64 parameter vector; every branch of a loss term reads the same
//! vector.

mod checkpoint;
mod loss;
mod net;
mod train;

pub use checkpoint::{
    decode_params, encode_params, load_params, read_embeddings, save_params, write_embeddings, write_loss_curve,
};
pub use loss::{contrastive_grad, contrastive_loss, triplet_grad, triplet_loss};
pub use net::{backward, forward, forward_trace, ConvSpec, LayerSlot, Layout, NetArch, NetworkParams, Trace};
pub use train::{
    batch_loss, batch_loss_grad, embed_all, pad_or_truncate, train, training_set, Example, TrainConfig, TrainMode,
    TrainOutcome,
};
