use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::evaluate;
use super::mix_seed;
use super::optim::Adam;
use crate::data::{augment_clip, load_samples, DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::loss::{loss_with_grads, LossBreakdown};
use crate::metrics::MetricReport;
use crate::model::{stack_frames, FetalNet, ModelParams, Pass};

// Seed streams.
const INIT: u64 = 0;
const SHUFFLE: u64 = 1;
const AUGMENT: u64 = 2;
const DROPOUT: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Frame-weighted mean of the batch losses.
    pub train_loss: LossBreakdown,
    pub val: Option<MetricReport>,
}

pub struct TrainOutcome {
    pub net: FetalNet,
    pub params: ModelParams,
    pub history: Vec<EpochLog>,
}

/// Load a manifest at network resolution and cut its clips into windows of
/// `clip_len` frames.
pub fn prepare_clips(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let samples = load_samples(manifest, cfg.net.input_size, cfg.letterbox)?;
    let clips: Vec<Sample> = samples
        .iter()
        .flat_map(|s| s.windows(cfg.net.clip_len))
        .collect();
    if clips.is_empty() && !manifest.entries.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no clip has {} frames",
            cfg.net.clip_len
        )));
    }
    Ok(clips)
}

fn check_clips(cfg: &TrainConfig, clips: &[Sample]) -> Result<()> {
    let size = cfg.net.input_size;
    for c in clips {
        if c.len() != cfg.net.clip_len {
            return Err(Error::InvalidInput(format!(
                "clip {} has {} frames, expected {}",
                c.clip_id,
                c.len(),
                cfg.net.clip_len
            )));
        }
        if c.frames.iter().any(|f| f.width() != size || f.height() != size) {
            return Err(Error::InvalidInput(format!(
                "clip {} is not at the {size}×{size} network resolution",
                c.clip_id
            )));
        }
    }
    Ok(())
}

/// Train from seeded initial weights. Clip order is reshuffled every epoch,
/// never the frame order inside a clip. `on_epoch` sees each log entry as it
/// is produced. The run is a pure function of `cfg` and the data.
pub fn train(
    cfg: &TrainConfig,
    train_clips: &[Sample],
    val_clips: &[Sample],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_clips(cfg, train_clips)?;
    let net = FetalNet::new(cfg.net.clone())?;
    let mut params = net.init_params(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, INIT, 0)));
    let mut history = Vec::new();
    if cfg.epochs > 0 && train_clips.is_empty() {
        return Err(Error::InvalidInput("no training clips".into()));
    }
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.weight_decay);
    let size = cfg.net.input_size;
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_clips.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SHUFFLE, epoch as u64)));
        let mut sum = LossBreakdown::default();
        let mut frames_seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let clips: Vec<Sample> = batch
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        let key = (epoch * train_clips.len() + i) as u64;
                        augment_clip(&train_clips[i], mix_seed(cfg.seed, AUGMENT, key)).0
                    } else {
                        train_clips[i].clone()
                    }
                })
                .collect();
            let x = stack_frames(clips.iter().map(|c| c.frames.as_slice()), size)?;
            let targets: Vec<_> = clips.iter().flat_map(Sample::targets).collect();
            let mut pass = Pass::train(mix_seed(cfg.seed, DROPOUT, step));
            let (out, tape) = net.forward(&params, &x, clips.len(), &mut pass)?;
            let (loss, dout) = loss_with_grads(&out, &targets, &cfg.loss_weights)?;
            let mut grads = params.zero_grads();
            net.backward(&params, &tape.expect("training pass records"), &dout, &mut grads)?;
            pass.apply_bn_updates(&mut params);
            adam.step(&mut params, &grads);
            step += 1;

            let n = targets.len();
            sum.total += loss.total * n as f64;
            sum.dice += loss.dice * n as f64;
            sum.ce += loss.ce * n as f64;
            frames_seen += n;
        }
        let k = frames_seen.max(1) as f64;
        let val = if val_clips.is_empty() {
            None
        } else {
            Some(evaluate(&net, &params, val_clips, None, false)?.report)
        };
        let log = EpochLog {
            epoch: epoch + 1,
            train_loss: LossBreakdown {
                total: sum.total / k,
                dice: sum.dice / k,
                ce: sum.ce / k,
            },
            val,
        };
        on_epoch(&log);
        history.push(log);
    }
    Ok(TrainOutcome {
        net,
        params,
        history,
    })
}
