//! Building blocks of the network. Each layer only stores [`ParamId`]s; weights
//! live in [`ModelParams`] so one graph description serves any number of
//! parameter sets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Grads, Init, LayoutBuilder, ModelParams, ParamId};
use crate::error::{Error, Result};
use crate::tensor::{self, sigmoid, BatchNormCache, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, active dropout, caches recorded for backward.
    Train,
    /// Running statistics, dropout is the identity.
    Eval,
}

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-forward-pass state: the mode, the dropout stream, and the batch-norm
/// statistics to fold into the running estimates afterwards.
pub struct Pass {
    mode: Mode,
    rng: ChaCha8Rng,
    bn_updates: Vec<BnUpdate>,
}

impl Pass {
    pub fn train(seed: u64) -> Self {
        Pass {
            mode: Mode::Train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_updates: Vec::new(),
        }
    }

    pub fn eval() -> Self {
        Pass {
            mode: Mode::Eval,
            rng: ChaCha8Rng::seed_from_u64(0),
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    /// Fold the recorded batch statistics into the running estimates.
    pub fn apply_bn_updates(&self, params: &mut ModelParams) {
        for u in &self.bn_updates {
            for (r, m) in params.get_mut(u.running_mean).iter_mut().zip(&u.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, v) in params.get_mut(u.running_var).iter_mut().zip(&u.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }

    fn dropout_mask(&mut self, n: usize, c: usize, p: f64) -> Option<Vec<f64>> {
        if self.mode == Mode::Eval || p == 0.0 {
            return None;
        }
        Some(tensor::dropout2d_mask(n, c, p, &mut self.rng))
    }
}

/// Stride-1 same-padded convolution.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv {
    pub(crate) fn declare(
        b: &mut LayoutBuilder,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = b.add(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel, kernel],
            true,
            Init::Kaiming { fan_in },
        );
        let bias = bias.then(|| b.add(format!("{name}.bias"), vec![out_channels], true, Init::Zeros));
        Conv {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn forward(&self, p: &ModelParams, x: &Tensor) -> Result<Tensor> {
        if x.c() != self.in_channels {
            return Err(Error::shape("conv input channels", self.in_channels, x.c()));
        }
        Ok(tensor::conv2d(
            x,
            p.get(self.weight),
            self.bias.map(|b| p.get(b)),
            self.out_channels,
            self.kernel,
        ))
    }

    pub fn backward(&self, p: &ModelParams, g: &mut Grads, x: &Tensor, dy: &Tensor) -> Tensor {
        match self.bias {
            Some(bias) => {
                let (dw, db) = g.pair_mut(self.weight, bias);
                tensor::conv2d_backward(x, p.get(self.weight), dy, self.kernel, dw, Some(db))
            }
            None => tensor::conv2d_backward(
                x,
                p.get(self.weight),
                dy,
                self.kernel,
                g.get_mut(self.weight),
                None,
            ),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub(crate) fn declare(b: &mut LayoutBuilder, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: b.add(format!("{name}.gamma"), vec![channels], true, Init::Ones),
            beta: b.add(format!("{name}.beta"), vec![channels], true, Init::Zeros),
            running_mean: b.add(
                format!("{name}.running_mean"),
                vec![channels],
                false,
                Init::Zeros,
            ),
            running_var: b.add(
                format!("{name}.running_var"),
                vec![channels],
                false,
                Init::Ones,
            ),
        }
    }

    pub fn forward(
        &self,
        p: &ModelParams,
        x: &Tensor,
        pass: &mut Pass,
    ) -> (Tensor, Option<BatchNormCache>) {
        match pass.mode {
            Mode::Eval => (
                tensor::batch_norm_eval(
                    x,
                    p.get(self.gamma),
                    p.get(self.beta),
                    p.get(self.running_mean),
                    p.get(self.running_var),
                ),
                None,
            ),
            Mode::Train => {
                let (y, cache) = tensor::batch_norm_train(x, p.get(self.gamma), p.get(self.beta));
                pass.bn_updates.push(BnUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    mean: cache.mean.clone(),
                    var: cache.var_unbiased.clone(),
                });
                (y, Some(cache))
            }
        }
    }

    pub fn backward(
        &self,
        p: &ModelParams,
        g: &mut Grads,
        cache: &BatchNormCache,
        dy: &Tensor,
    ) -> Tensor {
        let (dgamma, dbeta) = g.pair_mut(self.gamma, self.beta);
        tensor::batch_norm_backward(cache, p.get(self.gamma), dy, dgamma, dbeta)
    }
}

/// Conv3x3-BatchNorm-ReLU-Conv3x3-BatchNorm-ReLU-Dropout2D.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub conv2: Conv,
    pub bn2: BatchNorm,
    pub dropout: f64,
}

#[derive(Debug)]
pub struct ConvBlockCache {
    input: Tensor,
    bn1: Option<BatchNormCache>,
    relu1: Tensor,
    bn2: Option<BatchNormCache>,
    relu2: Tensor,
    mask: Option<Vec<f64>>,
}

impl ConvBlock {
    pub(crate) fn declare(
        b: &mut LayoutBuilder,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        dropout: f64,
    ) -> Self {
        ConvBlock {
            conv1: Conv::declare(b, &format!("{name}.conv1"), in_channels, out_channels, 3, true),
            bn1: BatchNorm::declare(b, &format!("{name}.bn1"), out_channels),
            conv2: Conv::declare(b, &format!("{name}.conv2"), out_channels, out_channels, 3, true),
            bn2: BatchNorm::declare(b, &format!("{name}.bn2"), out_channels),
            dropout,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels
    }

    pub fn forward(
        &self,
        p: &ModelParams,
        x: &Tensor,
        pass: &mut Pass,
    ) -> Result<(Tensor, ConvBlockCache)> {
        let y = self.conv1.forward(p, x)?;
        let (mut relu1, bn1) = self.bn1.forward(p, &y, pass);
        tensor::relu(&mut relu1);
        let y = self.conv2.forward(p, &relu1)?;
        let (mut relu2, bn2) = self.bn2.forward(p, &y, pass);
        tensor::relu(&mut relu2);
        let mask = pass.dropout_mask(relu2.n(), relu2.c(), self.dropout);
        let out = match &mask {
            Some(m) => {
                let mut o = relu2.clone();
                tensor::scale_channels(&mut o, m);
                o
            }
            None => relu2.clone(),
        };
        Ok((
            out,
            ConvBlockCache {
                input: x.clone(),
                bn1,
                relu1,
                bn2,
                relu2,
                mask,
            },
        ))
    }

    pub fn backward(
        &self,
        p: &ModelParams,
        g: &mut Grads,
        cache: &ConvBlockCache,
        dy: &Tensor,
    ) -> Result<Tensor> {
        let (bn1, bn2) = match (&cache.bn1, &cache.bn2) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::InvalidInput(
                    "backward requires a training-mode forward pass".into(),
                ))
            }
        };
        let mut d = dy.clone();
        if let Some(m) = &cache.mask {
            tensor::scale_channels(&mut d, m);
        }
        tensor::relu_backward(&cache.relu2, &mut d);
        let d = self.bn2.backward(p, g, bn2, &d);
        let mut d = self.conv2.backward(p, g, &cache.relu1, &d);
        tensor::relu_backward(&cache.relu1, &mut d);
        let d = self.bn1.backward(p, g, bn1, &d);
        Ok(self.conv1.backward(p, g, &cache.input, &d))
    }
}

/// Additive attention gate: `α = σ(ψ·ReLU(W_x x + W_g up(g) + b) + b_ψ)`,
/// output `α ⊙ x`.
#[derive(Clone, Debug)]
pub struct AttentionGate {
    pub wx: Conv,
    pub wg: Conv,
    pub psi: Conv,
}

#[derive(Debug)]
pub struct AttentionCache {
    x: Tensor,
    g: Tensor,
    q: Tensor,
    /// Attention coefficients, shape `[n, 1, h, w]`.
    pub alpha: Tensor,
}

impl AttentionGate {
    pub(crate) fn declare(b: &mut LayoutBuilder, name: &str, x_channels: usize, g_channels: usize) -> Self {
        let inter = (x_channels / 2).max(1);
        AttentionGate {
            wx: Conv::declare(b, &format!("{name}.wx"), x_channels, inter, 1, true),
            wg: Conv::declare(b, &format!("{name}.wg"), g_channels, inter, 1, false),
            psi: Conv::declare(b, &format!("{name}.psi"), inter, 1, 1, true),
        }
    }

    pub fn forward(&self, p: &ModelParams, x: &Tensor, g: &Tensor) -> Result<(Tensor, AttentionCache)> {
        if g.n() != x.n()
            || g.h() == 0
            || g.w() == 0
            || x.h() % g.h() != 0
            || x.w() % g.w() != 0
        {
            return Err(Error::shape(
                "attention gating signal",
                format!("batch {} with a grid dividing {}x{}", x.n(), x.h(), x.w()),
                g.shape(),
            ));
        }
        // Bilinear weights sum to one, so projecting before upsampling equals
        // projecting the upsampled signal.
        let gg = tensor::resize_bilinear(&self.wg.forward(p, g)?, x.h(), x.w());
        let mut q = self.wx.forward(p, x)?;
        q.add_assign(&gg);
        tensor::relu(&mut q);
        let alpha = self.psi.forward(p, &q)?.map(sigmoid);
        let mut out = x.clone();
        let plane = x.plane_len();
        for i in 0..x.n() {
            let a = alpha.sample(i);
            for ch in out.sample_mut(i).chunks_mut(plane) {
                ch.iter_mut().zip(a).for_each(|(v, a)| *v *= a);
            }
        }
        Ok((
            out,
            AttentionCache {
                x: x.clone(),
                g: g.clone(),
                q,
                alpha,
            },
        ))
    }

    /// Returns the gradients with respect to `x` and `g`.
    pub fn backward(
        &self,
        p: &ModelParams,
        grads: &mut Grads,
        cache: &AttentionCache,
        dy: &Tensor,
    ) -> (Tensor, Tensor) {
        let x = &cache.x;
        let plane = x.plane_len();
        let mut dx = dy.clone();
        let mut dz = Tensor::zeros(cache.alpha.shape());
        for i in 0..x.n() {
            let a = cache.alpha.sample(i);
            let dzi = dz.sample_mut(i);
            for (dch, xch) in dy.sample(i).chunks(plane).zip(x.sample(i).chunks(plane)) {
                for ((acc, d), xv) in dzi.iter_mut().zip(dch).zip(xch) {
                    *acc += d * xv;
                }
            }
            for (acc, a) in dzi.iter_mut().zip(a) {
                *acc *= a * (1.0 - a);
            }
            for ch in dx.sample_mut(i).chunks_mut(plane) {
                ch.iter_mut().zip(a).for_each(|(v, a)| *v *= a);
            }
        }
        let mut dq = self.psi.backward(p, grads, &cache.q, &dz);
        tensor::relu_backward(&cache.q, &mut dq);
        dx.add_assign(&self.wx.backward(p, grads, x, &dq));
        let dgg = tensor::resize_bilinear_backward(&dq, cache.g.h(), cache.g.w());
        let dg = self.wg.backward(p, grads, &cache.g, &dgg);
        (dx, dg)
    }
}

/// Convolutional LSTM cell; gates are stacked `[i, f, o, g]` along channels.
#[derive(Clone, Debug)]
pub struct ConvLstm {
    pub conv: Conv,
    pub hidden: usize,
}

#[derive(Debug)]
pub struct LstmStepCache {
    xh: Tensor,
    /// Gate activations `[i, f, o, g]`, each `[b, hidden, s, s]`.
    pub gates: [Tensor; 4],
    c_prev: Tensor,
    tanh_c: Tensor,
}

#[derive(Clone, Debug)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize, size: usize) -> Self {
        LstmState {
            h: Tensor::zeros([batch, hidden, size, size]),
            c: Tensor::zeros([batch, hidden, size, size]),
        }
    }
}

impl ConvLstm {
    pub(crate) fn declare(b: &mut LayoutBuilder, name: &str, input: usize, hidden: usize, kernel: usize) -> Self {
        ConvLstm {
            conv: Conv::declare(b, name, input + hidden, 4 * hidden, kernel, true),
            hidden,
        }
    }

    pub fn step(
        &self,
        p: &ModelParams,
        x: &Tensor,
        state: &LstmState,
    ) -> Result<(LstmState, LstmStepCache)> {
        if state.h.shape() != state.c.shape()
            || state.h.c() != self.hidden
            || state.h.n() != x.n()
            || state.h.h() != x.h()
            || state.h.w() != x.w()
        {
            return Err(Error::shape(
                "convlstm state",
                [x.n(), self.hidden, x.h(), x.w()],
                (state.h.shape(), state.c.shape()),
            ));
        }
        let xh = Tensor::concat_channels(x, &state.h)?;
        let z = self.conv.forward(p, &xh)?;
        let hc = self.hidden * x.plane_len();
        let shape = state.h.shape();
        let mut gates: [Tensor; 4] = std::array::from_fn(|_| Tensor::zeros(shape));
        for i in 0..x.n() {
            let zi = z.sample(i);
            for (k, gate) in gates.iter_mut().enumerate() {
                let src = &zi[k * hc..(k + 1) * hc];
                let dst = gate.sample_mut(i);
                if k == 3 {
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d = s.tanh());
                } else {
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d = sigmoid(*s));
                }
            }
        }
        let [gi, gf, go, gg] = &gates;
        let mut c = Tensor::zeros(shape);
        let mut tanh_c = Tensor::zeros(shape);
        let mut h = Tensor::zeros(shape);
        for j in 0..c.data().len() {
            let cv = gf.data()[j] * state.c.data()[j] + gi.data()[j] * gg.data()[j];
            let t = cv.tanh();
            c.data_mut()[j] = cv;
            tanh_c.data_mut()[j] = t;
            h.data_mut()[j] = go.data()[j] * t;
        }
        Ok((
            LstmState { h, c },
            LstmStepCache {
                xh,
                gates,
                c_prev: state.c.clone(),
                tanh_c,
            },
        ))
    }

    /// Backward through one step given the gradients reaching `h_t` and
    /// `c_t`; returns gradients for `(x_t, h_{t-1}, c_{t-1})`.
    pub fn backward_step(
        &self,
        p: &ModelParams,
        g: &mut Grads,
        cache: &LstmStepCache,
        dh: &Tensor,
        dc: &Tensor,
    ) -> (Tensor, Tensor, Tensor) {
        let [gi, gf, go, gg] = &cache.gates;
        let shape = dh.shape();
        let hc = self.hidden * dh.plane_len();
        let mut dz = Tensor::zeros([shape[0], 4 * self.hidden, shape[2], shape[3]]);
        let mut dc_prev = Tensor::zeros(shape);
        for i in 0..shape[0] {
            let off = i * hc;
            let dzi = dz.sample_mut(i);
            for j in 0..hc {
                let k = off + j;
                let (iv, fv, ov, gv) = (gi.data()[k], gf.data()[k], go.data()[k], gg.data()[k]);
                let t = cache.tanh_c.data()[k];
                let dhv = dh.data()[k];
                let dct = dc.data()[k] + dhv * ov * (1.0 - t * t);
                dzi[j] = dct * gv * iv * (1.0 - iv);
                dzi[hc + j] = dct * cache.c_prev.data()[k] * fv * (1.0 - fv);
                dzi[2 * hc + j] = dhv * t * ov * (1.0 - ov);
                dzi[3 * hc + j] = dct * iv * (1.0 - gv * gv);
                dc_prev.data_mut()[k] = dct * fv;
            }
        }
        let dxh = self.conv.backward(p, g, &cache.xh, &dz);
        let (dx, dh_prev) = dxh.split_channels(dxh.c() - self.hidden);
        (dx, dh_prev, dc_prev)
    }
}

/// Adaptive average pooling → Dropout2D → fully connected layer.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub weight: ParamId,
    pub bias: ParamId,
    pub grid: usize,
    pub classes: usize,
    pub dropout: f64,
}

#[derive(Debug)]
pub struct ClassifierCache {
    features: Tensor,
    mask: Option<Vec<f64>>,
    in_hw: (usize, usize),
}

impl Classifier {
    pub(crate) fn declare(
        b: &mut LayoutBuilder,
        name: &str,
        channels: usize,
        grid: usize,
        classes: usize,
        dropout: f64,
    ) -> Self {
        let features = channels * grid * grid;
        Classifier {
            weight: b.add(
                format!("{name}.weight"),
                vec![classes, features],
                true,
                Init::Kaiming { fan_in: features },
            ),
            bias: b.add(format!("{name}.bias"), vec![classes], true, Init::Zeros),
            grid,
            classes,
            dropout,
        }
    }

    pub fn forward(
        &self,
        p: &ModelParams,
        h: &Tensor,
        pass: &mut Pass,
    ) -> Result<(Tensor, ClassifierCache)> {
        let mut features = tensor::adaptive_avg_pool(h, self.grid, self.grid);
        let expected = p.get(self.weight).len() / self.classes;
        if features.sample_len() != expected {
            return Err(Error::shape("classifier features", expected, features.sample_len()));
        }
        let mask = pass.dropout_mask(features.n(), features.c(), self.dropout);
        if let Some(m) = &mask {
            tensor::scale_channels(&mut features, m);
        }
        let logits = tensor::linear(&features, p.get(self.weight), p.get(self.bias), self.classes);
        Ok((
            logits,
            ClassifierCache {
                features,
                mask,
                in_hw: (h.h(), h.w()),
            },
        ))
    }

    pub fn backward(&self, p: &ModelParams, g: &mut Grads, cache: &ClassifierCache, dy: &Tensor) -> Tensor {
        let (dw, db) = g.pair_mut(self.weight, self.bias);
        let mut d = tensor::linear_backward(&cache.features, p.get(self.weight), dy, dw, db);
        if let Some(m) = &cache.mask {
            tensor::scale_channels(&mut d, m);
        }
        tensor::adaptive_avg_pool_backward(&d, cache.in_hw.0, cache.in_hw.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build<T>(f: impl FnOnce(&mut LayoutBuilder) -> T) -> (T, ModelParams) {
        let mut b = LayoutBuilder::default();
        let layer = f(&mut b);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ModelParams::initialize(&b.specs, &mut rng);
        (layer, params)
    }

    #[test]
    fn conv_block_keeps_spatial_size() {
        let (block, params) = build(|b| ConvBlock::declare(b, "blk", 3, 8, 0.2));
        let x = Tensor::full([2, 3, 6, 6], 0.5);
        let (y, _) = block.forward(&params, &x, &mut Pass::eval()).unwrap();
        assert_eq!(y.shape(), [2, 8, 6, 6]);
        let bad = Tensor::zeros([1, 4, 6, 6]);
        assert!(matches!(
            block.forward(&params, &bad, &mut Pass::eval()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn conv_block_zero_weights_negative_bias_outputs_zero() {
        let (block, mut params) = build(|b| ConvBlock::declare(b, "blk", 2, 4, 0.2));
        params.get_mut(block.conv1.weight).fill(0.0);
        params.get_mut(block.conv2.weight).fill(0.0);
        params.get_mut(block.conv2.bias.unwrap()).fill(-1.0);
        let x = Tensor::full([1, 2, 5, 5], 3.0);
        let (y, _) = block.forward(&params, &x, &mut Pass::eval()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_dropout_is_identity() {
        let (block, params) = build(|b| ConvBlock::declare(b, "blk", 1, 3, 0.9));
        let x = Tensor::full([1, 1, 4, 4], 1.0);
        let (a, _) = block.forward(&params, &x, &mut Pass::eval()).unwrap();
        let (b, _) = block.forward(&params, &x, &mut Pass::eval()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn attention_with_zero_psi_halves_input() {
        let (gate, mut params) = build(|b| AttentionGate::declare(b, "ag", 2, 4));
        params.get_mut(gate.psi.weight).fill(0.0);
        let x = Tensor::full([1, 2, 4, 4], 3.0);
        let g = Tensor::full([1, 4, 2, 2], -1.0);
        let (y, cache) = gate.forward(&params, &x, &g).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| (v - 1.5).abs() < 1e-15));
        assert!(cache.alpha.data().iter().all(|&a| a == 0.5));
    }

    #[test]
    fn attention_scalar_hand_evaluation() {
        let (gate, mut params) = build(|b| AttentionGate::declare(b, "ag", 1, 1));
        params.get_mut(gate.wx.weight).fill(1.0);
        params.get_mut(gate.wg.weight).fill(1.0);
        params.get_mut(gate.psi.weight).fill(1.0);
        let x = Tensor::full([1, 1, 1, 1], 2.0);
        let g = Tensor::full([1, 1, 1, 1], -2.0);
        let (y, _) = gate.forward(&params, &x, &g).unwrap();
        assert_eq!(y.data(), &[1.0]);
    }

    #[test]
    fn attention_rejects_incompatible_gating_grid() {
        let (gate, params) = build(|b| AttentionGate::declare(b, "ag", 2, 2));
        let x = Tensor::zeros([1, 2, 6, 6]);
        let g = Tensor::zeros([1, 2, 4, 4]);
        assert!(gate.forward(&params, &x, &g).is_err());
    }

    #[test]
    fn lstm_zero_weights_is_a_fixed_point() {
        let (cell, mut params) = build(|b| ConvLstm::declare(b, "lstm", 2, 2, 3));
        params.get_mut(cell.conv.weight).fill(0.0);
        let x = Tensor::full([1, 2, 3, 3], 5.0);
        let (s, _) = cell.step(&params, &x, &LstmState::zeros(1, 2, 3)).unwrap();
        assert!(s.h.data().iter().all(|&v| v == 0.0));
        assert!(s.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_scalar_recurrence_matches_hand_evaluation() {
        let (cell, mut params) = build(|b| ConvLstm::declare(b, "lstm", 1, 1, 3));
        params.get_mut(cell.conv.weight).fill(1.0);
        let x = Tensor::full([1, 1, 1, 1], 1.0);
        let (s, cache) = cell.step(&params, &x, &LstmState::zeros(1, 1, 1)).unwrap();
        let sig1 = 1.0 / (1.0 + (-1.0f64).exp());
        let c = sig1 * 1.0f64.tanh();
        let h = sig1 * c.tanh();
        assert!((s.c.data()[0] - c).abs() < 1e-15);
        assert!((s.h.data()[0] - h).abs() < 1e-15);
        for gate in &cache.gates[..3] {
            assert!((gate.data()[0] - sig1).abs() < 1e-15);
        }
    }

    #[test]
    fn lstm_rejects_mismatched_state() {
        let (cell, params) = build(|b| ConvLstm::declare(b, "lstm", 2, 2, 3));
        let x = Tensor::zeros([1, 2, 3, 3]);
        assert!(cell.step(&params, &x, &LstmState::zeros(1, 2, 4)).is_err());
    }

    #[test]
    fn classifier_bias_passthrough_and_constant_pooling() {
        let (cls, mut params) = build(|b| Classifier::declare(b, "cls", 3, 2, 4, 0.4));
        params.get_mut(cls.weight).fill(0.0);
        params.get_mut(cls.bias).copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let h = Tensor::full([1, 3, 2, 2], 0.7);
        let (y, _) = cls.forward(&params, &h, &mut Pass::eval()).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);

        params.get_mut(cls.weight).fill(0.5);
        params.get_mut(cls.bias).fill(0.0);
        let (y, _) = cls.forward(&params, &h, &mut Pass::eval()).unwrap();
        for &v in y.data() {
            assert!((v - 0.7 * 0.5 * 2.0 * 2.0 * 3.0).abs() < 1e-12);
        }
    }
}
