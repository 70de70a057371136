//! Encoder, attentional decoder, CNN classifier and the recurrent cells they
//! are made of.

mod attention;
mod cells;
mod checkpoint;
mod classifier;
mod model;

pub use attention::Attention;
pub use cells::{blend_rows, Gru, Linear, Lstm, LstmState, INIT_SCALE};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use classifier::CnnClassifier;
pub use model::{EncoderOutput, ModelDims, SeqInput, SoftSequence, TransferModel, MAX_GEN_LEN};
