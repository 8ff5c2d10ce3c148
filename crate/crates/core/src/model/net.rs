//! The multi-task graph: per-frame encoder, recurrent ConvLSTM bottleneck,
//! attention-gated decoder with stacked side outputs, and a classification
//! branch fed by the recurrent state.
//!
//! Frames of a batch are laid out clip-major: frame `t` of clip `b` is sample
//! `b * clip_len + t`. The encoder and decoder treat all frames as one batch;
//! only the ConvLSTM walks the time axis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::NetConfig;
use super::layers::{
    AttentionCache, AttentionGate, Classifier, ClassifierCache, ConvBlock, ConvBlockCache,
    ConvLstm, Conv, LstmState, LstmStepCache, Pass,
};
use super::params::{Grads, LayoutBuilder, ModelParams, ParamSpec};
use crate::error::{Error, Result};
use crate::raster::Plane;
use crate::tensor::{self, sigmoid, Tensor};

/// Per-frame network output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    /// Aggregated foreground probability, `input_size × input_size`.
    pub seg_prob: Plane,
    /// Four class logits; absent when the classification branch is disabled.
    pub class_logits: Option<[f64; 4]>,
    /// Per-side probabilities after upsampling (one map without the stacked
    /// module).
    pub side_probs: Vec<Plane>,
}

impl FramePrediction {
    pub fn predicted_class(&self) -> Option<usize> {
        self.class_logits.map(|l| {
            l.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
    }
}

/// Raw logits for a batch of frames.
#[derive(Clone, Debug)]
pub struct NetOutput {
    /// `[frames, 1, H, W]`, the summed side logits.
    pub seg_logits: Tensor,
    /// Upsampled per-side logits, each `[frames, 1, H, W]`.
    pub side_logits: Vec<Tensor>,
    /// `[frames, 4, 1, 1]`.
    pub class_logits: Option<Tensor>,
}

impl NetOutput {
    pub fn frames(&self) -> usize {
        self.seg_logits.n()
    }

    pub fn prediction(&self, frame: usize) -> FramePrediction {
        let to_plane = |t: &Tensor| {
            Plane::from_vec(t.w(), t.h(), t.sample(frame).iter().map(|&v| sigmoid(v)).collect())
                .expect("plane shape")
        };
        FramePrediction {
            seg_prob: to_plane(&self.seg_logits),
            class_logits: self.class_logits.as_ref().map(|l| {
                let s = l.sample(frame);
                [s[0], s[1], s[2], s[3]]
            }),
            side_probs: self.side_logits.iter().map(to_plane).collect(),
        }
    }

    pub fn predictions(&self) -> Vec<FramePrediction> {
        (0..self.frames()).map(|i| self.prediction(i)).collect()
    }
}

/// Gradients of a scalar loss with respect to the network outputs.
#[derive(Clone, Debug)]
pub struct OutputGrads {
    pub seg_logits: Tensor,
    pub class_logits: Option<Tensor>,
}

/// Everything a training-mode forward pass keeps for backward.
pub struct Tape {
    clips: usize,
    clip_len: usize,
    encoder: Vec<ConvBlockCache>,
    pool_args: Vec<([usize; 4], Vec<usize>)>,
    lstm: Vec<LstmStepCache>,
    classifier: Option<ClassifierCache>,
    gates: Vec<AttentionCache>,
    decoder: Vec<ConvBlockCache>,
    /// Inputs of the decoder upsampling (shape only matters) per level.
    below_hw: Vec<(usize, usize, usize)>,
    decoder_out: Vec<Tensor>,
}

impl Tape {
    /// Gate activations of every ConvLSTM step.
    pub fn lstm_gates(&self) -> impl Iterator<Item = &Tensor> {
        self.lstm.iter().flat_map(|c| c.gates.iter())
    }

    /// Attention coefficient maps, deepest gate first.
    pub fn attention_maps(&self) -> impl Iterator<Item = &Tensor> {
        self.gates.iter().map(|c| &c.alpha)
    }
}

/// Segmentation head: 3×3 side convolutions to one channel, bilinear
/// upsampling to the input size, element-wise sum.
#[derive(Clone, Debug)]
pub struct SegHead {
    /// One per decoder level (deepest first) with the stacked module, otherwise
    /// a single head on the last decoder.
    pub sides: Vec<Conv>,
}

/// Intermediate tensors of the encoder, exposed for compositional checks.
pub struct EncoderOutput {
    pub skips: Vec<Tensor>,
    pub bottleneck: Tensor,
}

/// The network graph for one [`NetConfig`].
#[derive(Clone, Debug)]
pub struct FetalNet {
    config: NetConfig,
    specs: Vec<ParamSpec>,
    pub encoder: Vec<ConvBlock>,
    pub lstm: ConvLstm,
    pub gates: Vec<AttentionGate>,
    pub decoder: Vec<ConvBlock>,
    pub head: SegHead,
    pub classifier: Option<Classifier>,
}

impl FetalNet {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut b = LayoutBuilder::default();
        let enc_w = config.encoder_widths();
        let dec_w = config.decoder_widths();
        let p = config.dropout_block;

        let mut encoder = Vec::with_capacity(5);
        let mut prev = 1;
        for (i, &w) in enc_w.iter().enumerate() {
            encoder.push(ConvBlock::declare(&mut b, &format!("enc{i}"), prev, w, p));
            prev = w;
        }
        let hidden = config.hidden_width();
        let lstm = ConvLstm::declare(&mut b, "lstm", enc_w[4], hidden, config.convlstm_kernel);

        let mut gates = Vec::new();
        let mut decoder = Vec::with_capacity(4);
        let mut below = hidden;
        for (i, &w) in dec_w.iter().enumerate() {
            let skip = enc_w[3 - i];
            if config.attention_gates {
                gates.push(AttentionGate::declare(&mut b, &format!("ag{i}"), skip, below));
            }
            decoder.push(ConvBlock::declare(&mut b, &format!("dec{i}"), below + skip, w, p));
            below = w;
        }

        let sides = if config.stacked_module {
            dec_w
                .iter()
                .enumerate()
                .map(|(i, &w)| Conv::declare(&mut b, &format!("side{i}"), w, 1, 3, true))
                .collect()
        } else {
            vec![Conv::declare(&mut b, "head", dec_w[3], 1, 3, true)]
        };

        let classifier = config.classification_branch.then(|| {
            Classifier::declare(
                &mut b,
                "cls",
                hidden,
                config.bottleneck_size(),
                config.num_classes,
                config.dropout_cls,
            )
        });

        Ok(FetalNet {
            config,
            specs: b.specs,
            encoder,
            lstm,
            gates,
            decoder,
            head: SegHead { sides },
            classifier,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// Fan-in normal weights, zero biases, unit/zero batch-norm affine terms.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelParams {
        ModelParams::initialize(&self.specs, rng)
    }

    /// Confirm that `params` has exactly this graph's names and shapes.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let mut diffs = Vec::new();
        for spec in &self.specs {
            match params.specs().iter().find(|s| s.name == spec.name) {
                None => diffs.push(format!("missing {} {:?}", spec.name, spec.shape)),
                Some(s) if s.shape != spec.shape => diffs.push(format!(
                    "{}: expected {:?}, found {:?}",
                    spec.name, spec.shape, s.shape
                )),
                _ => {}
            }
        }
        for s in params.specs() {
            if !self.specs.iter().any(|x| x.name == s.name) {
                diffs.push(format!("unexpected {} {:?}", s.name, s.shape));
            }
        }
        if params.specs().len() == self.specs.len()
            && diffs.is_empty()
            && params.specs().iter().zip(&self.specs).any(|(a, b)| a.name != b.name)
        {
            diffs.push("tensor order differs".into());
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::CheckpointMismatch(diffs.join("; ")))
        }
    }

    /// Encoder alone: skips at widths `n, 2n, 4n, 8n` and the `16n` bottleneck
    /// input.
    pub fn encode(&self, params: &ModelParams, frames: &Tensor, pass: &mut Pass) -> Result<EncoderOutput> {
        let (out, _) = self.encode_recorded(params, frames, pass, false)?;
        Ok(out)
    }

    #[allow(clippy::type_complexity)]
    fn encode_recorded(
        &self,
        params: &ModelParams,
        frames: &Tensor,
        pass: &mut Pass,
        record: bool,
    ) -> Result<(EncoderOutput, (Vec<ConvBlockCache>, Vec<([usize; 4], Vec<usize>)>))> {
        let size = self.config.input_size;
        frames.expect_shape("network input", [frames.n(), 1, size, size])?;
        let mut caches = Vec::new();
        let mut pools = Vec::new();
        let mut skips: Vec<Tensor> = Vec::with_capacity(4);
        let (mut x, cache) = self.encoder[0].forward(params, frames, pass)?;
        if record {
            caches.push(cache);
        }
        for block in &self.encoder[1..] {
            let (pooled, arg) = tensor::max_pool2(&x);
            if record {
                pools.push((x.shape(), arg));
            }
            skips.push(x);
            let (y, cache) = block.forward(params, &pooled, pass)?;
            if record {
                caches.push(cache);
            }
            x = y;
        }
        Ok((
            EncoderOutput {
                skips,
                bottleneck: x,
            },
            (caches, pools),
        ))
    }

    /// Run a batch of `clips` clips whose frames are stacked clip-major in
    /// `frames` (`[clips · T, 1, H, W]`). In training mode the returned tape
    /// supports [`FetalNet::backward`].
    pub fn forward(
        &self,
        params: &ModelParams,
        frames: &Tensor,
        clips: usize,
        pass: &mut Pass,
    ) -> Result<(NetOutput, Option<Tape>)> {
        if clips == 0 || frames.n() == 0 {
            return Err(Error::InvalidInput("empty clip batch".into()));
        }
        if frames.n() % clips != 0 {
            return Err(Error::shape(
                "clip batch",
                format!("a multiple of {clips} frames"),
                frames.n(),
            ));
        }
        let record = pass.is_train();
        let clip_len = frames.n() / clips;

        let (enc, (enc_caches, pool_args)) = self.encode_recorded(params, frames, pass, record)?;

        // Recurrent bottleneck, zero state at the start of every clip.
        let s = self.config.bottleneck_size();
        let hidden = self.lstm.hidden;
        let mut hs = Tensor::zeros([frames.n(), hidden, s, s]);
        let mut state = LstmState::zeros(clips, hidden, s);
        let mut lstm_caches = Vec::new();
        for t in 0..clip_len {
            let idx: Vec<usize> = (0..clips).map(|b| b * clip_len + t).collect();
            let x_t = enc.bottleneck.gather(&idx);
            let (next, cache) = self.lstm.step(params, &x_t, &state)?;
            hs.scatter(&idx, &next.h);
            if record {
                lstm_caches.push(cache);
            }
            state = next;
        }

        let (class_logits, cls_cache) = match &self.classifier {
            Some(c) => {
                let (l, cache) = c.forward(params, &hs, pass)?;
                (Some(l), Some(cache))
            }
            None => (None, None),
        };

        let mut gate_caches = Vec::new();
        let mut dec_caches = Vec::new();
        let mut below_hw = Vec::new();
        let mut decoder_out: Vec<Tensor> = Vec::with_capacity(4);
        for (i, block) in self.decoder.iter().enumerate() {
            let below = decoder_out.last().unwrap_or(&hs);
            let skip = &enc.skips[3 - i];
            let gated = match self.gates.get(i) {
                Some(gate) => {
                    let (y, cache) = gate.forward(params, skip, below)?;
                    if record {
                        gate_caches.push(cache);
                    }
                    y
                }
                None => skip.clone(),
            };
            let up = tensor::resize_bilinear(below, skip.h(), skip.w());
            let cat = Tensor::concat_channels(&up, &gated)?;
            below_hw.push((below.c(), below.h(), below.w()));
            let (d, cache) = block.forward(params, &cat, pass)?;
            if record {
                dec_caches.push(cache);
            }
            decoder_out.push(d);
        }

        let (seg_logits, side_logits) = self.segmentation_head(params, &decoder_out)?;

        let output = NetOutput {
            seg_logits,
            side_logits,
            class_logits,
        };
        let tape = record.then(|| Tape {
            clips,
            clip_len,
            encoder: enc_caches,
            pool_args,
            lstm: lstm_caches,
            classifier: cls_cache,
            gates: gate_caches,
            decoder: dec_caches,
            below_hw,
            decoder_out,
        });
        Ok((output, tape))
    }

    /// Side logits of each decoder output (deepest first), upsampled to the
    /// input size, and their sum.
    pub fn segmentation_head(
        &self,
        params: &ModelParams,
        decoder_out: &[Tensor],
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let size = self.config.input_size;
        let feats: &[Tensor] = if self.config.stacked_module {
            decoder_out
        } else {
            &decoder_out[decoder_out.len() - 1..]
        };
        let mut sides = Vec::with_capacity(feats.len());
        for (conv, f) in self.head.sides.iter().zip(feats) {
            let logit = conv.forward(params, f)?;
            sides.push(tensor::resize_bilinear(&logit, size, size));
        }
        let mut total = sides[0].clone();
        for s in &sides[1..] {
            total.add_assign(s);
        }
        Ok((total, sides))
    }

    /// Accumulate parameter gradients for a recorded pass.
    pub fn backward(
        &self,
        params: &ModelParams,
        tape: &Tape,
        d: &OutputGrads,
        grads: &mut Grads,
    ) -> Result<()> {
        let size = self.config.input_size;
        let frames = tape.clips * tape.clip_len;
        d.seg_logits
            .expect_shape("seg logit gradient", [frames, 1, size, size])?;

        // Head: every side receives the full aggregated gradient.
        let n_levels = self.decoder.len();
        let mut d_dec: Vec<Option<Tensor>> = (0..n_levels).map(|_| None).collect();
        let first_level = n_levels - self.head.sides.len();
        for (k, conv) in self.head.sides.iter().enumerate() {
            let level = first_level + k;
            let f = &tape.decoder_out[level];
            let dlogit = tensor::resize_bilinear_backward(&d.seg_logits, f.h(), f.w());
            d_dec[level] = Some(conv.backward(params, grads, f, &dlogit));
        }

        let mut d_skips: Vec<Option<Tensor>> = (0..4).map(|_| None).collect();
        let mut carry: Option<Tensor> = None;
        for i in (0..n_levels).rev() {
            let mut dd = match (d_dec[i].take(), carry.take()) {
                (Some(a), Some(b)) => {
                    let mut a = a;
                    a.add_assign(&b);
                    a
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => Tensor::zeros(tape.decoder_out[i].shape()),
            };
            dd = self.decoder[i].backward(params, grads, &tape.decoder[i], &dd)?;
            let (bc, bh, bw) = tape.below_hw[i];
            let (dup, dgated) = dd.split_channels(bc);
            let mut dbelow = tensor::resize_bilinear_backward(&dup, bh, bw);
            let dskip = match self.gates.get(i) {
                Some(gate) => {
                    let (dx, dg) = gate.backward(params, grads, &tape.gates[i], &dgated);
                    dbelow.add_assign(&dg);
                    dx
                }
                None => dgated,
            };
            d_skips[3 - i] = Some(dskip);
            carry = Some(dbelow);
        }
        let mut dh = carry.expect("decoder has levels");

        if let (Some(cls), Some(cache), Some(dl)) =
            (&self.classifier, &tape.classifier, &d.class_logits)
        {
            dh.add_assign(&cls.backward(params, grads, cache, dl));
        }

        // Backpropagation through time.
        let hidden = self.lstm.hidden;
        let s = self.config.bottleneck_size();
        let mut d_bottleneck = Tensor::zeros([frames, self.encoder[4].out_channels(), s, s]);
        let mut dh_next = Tensor::zeros([tape.clips, hidden, s, s]);
        let mut dc_next = Tensor::zeros([tape.clips, hidden, s, s]);
        for t in (0..tape.clip_len).rev() {
            let idx: Vec<usize> = (0..tape.clips).map(|b| b * tape.clip_len + t).collect();
            let mut dht = dh.gather(&idx);
            dht.add_assign(&dh_next);
            let (dx, dhp, dcp) =
                self.lstm
                    .backward_step(params, grads, &tape.lstm[t], &dht, &dc_next);
            d_bottleneck.scatter(&idx, &dx);
            dh_next = dhp;
            dc_next = dcp;
        }

        let mut dx = d_bottleneck;
        for l in (1..self.encoder.len()).rev() {
            let dpooled = self.encoder[l].backward(params, grads, &tape.encoder[l], &dx)?;
            let (shape, arg) = &tape.pool_args[l - 1];
            dx = tensor::max_pool2_backward(*shape, arg, &dpooled);
            if let Some(ds) = d_skips[l - 1].take() {
                dx.add_assign(&ds);
            }
        }
        self.encoder[0].backward(params, grads, &tape.encoder[0], &dx)?;
        Ok(())
    }

    /// Frame-by-frame predictions for one clip. Recurrent state starts at zero;
    /// in evaluation mode the prediction for frame `t` depends only on frames
    /// `1..=t`.
    pub fn forward_clip(
        &self,
        params: &ModelParams,
        frames: &[Plane],
        pass: &mut Pass,
    ) -> Result<Vec<FramePrediction>> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("clip has no frames".into()));
        }
        let batch = stack_frames(std::iter::once(frames), self.config.input_size)?;
        let (out, _) = self.forward(params, &batch, 1, pass)?;
        Ok(out.predictions())
    }
}

/// Stack clips of equally many frames into a clip-major batch tensor.
pub fn stack_frames<'a>(clips: impl IntoIterator<Item = &'a [Plane]>, size: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut clip_len = None;
    for clip in clips {
        if *clip_len.get_or_insert(clip.len()) != clip.len() {
            return Err(Error::InvalidInput("clips in a batch differ in length".into()));
        }
        for f in clip {
            if f.width() != size || f.height() != size {
                return Err(Error::shape(
                    "frame size",
                    (size, size),
                    (f.width(), f.height()),
                ));
            }
            data.extend_from_slice(f.data());
            n += 1;
        }
    }
    Tensor::from_vec([n, 1, size, size], data)
}
