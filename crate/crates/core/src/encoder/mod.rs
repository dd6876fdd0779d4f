//! Tokenizer, trainable encoder and the access-controlled oracle views.

pub mod model;
pub mod oracle;
pub mod pretrain;
pub mod tokenizer;

pub use model::{EncoderConfig, EncoderModel, EncodingResult, PackedBatch};
pub use oracle::{AccessLevel, OracleHandle, OracleInput, TargetEncoder};
pub use pretrain::{mlm_loss, pretrain_encoder, train_mlm, LayoutPolicy, PretrainConfig, TrainedEncoder};
pub use tokenizer::{encode_input, Tokenizer};
