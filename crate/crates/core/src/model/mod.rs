//! The multi-task segmentation/classification network.

mod checkpoint;
mod config;
mod layers;
mod net;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
    CHECKPOINT_VERSION,
};
pub use config::NetConfig;
pub use layers::{
    AttentionCache, AttentionGate, BatchNorm, BnUpdate, Classifier, Conv, ConvBlock, ConvLstm,
    LstmState, LstmStepCache, Mode, Pass, BN_MOMENTUM,
};
pub use net::{
    stack_frames, EncoderOutput, FetalNet, FramePrediction, NetOutput, OutputGrads, SegHead, Tape,
};
pub use params::{Grads, Init, ModelParams, ParamId, ParamSpec};
