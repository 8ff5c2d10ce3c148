//! Training harness: configuration, Adam, the deterministic epoch loop,
//! evaluation, and the component ablation matrix.

mod ablate;
mod config;
mod eval;
mod optim;
mod trainer;

pub use ablate::{ablation_variants, run_ablation, write_ablation_csv, AblationRow};
pub use config::{load_train_config, TrainConfig};
pub use eval::{evaluate, measure_prediction, EvalResult, FrameEval};
pub use optim::Adam;
pub use trainer::{prepare_clips, train, EpochLog, TrainOutcome};

/// SplitMix64 finalizer, used to derive independent per-step seeds.
pub(crate) fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
