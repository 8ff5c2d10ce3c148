use crate::model::{Grads, ModelParams};

/// Adam with L2 weight decay added to the gradient. Non-trainable tensors
/// (batch-norm running statistics) are left alone.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64, weight_decay: f64) -> Self {
        let zeros = || params.specs().iter().map(|s| vec![0.0; s.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Grads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = params
            .iter()
            .filter(|(_, s, _)| s.trainable)
            .map(|(id, _, _)| id)
            .collect();
        for id in ids {
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for (i, w) in params.get_mut(id).iter_mut().enumerate() {
                let gi = g[i] + self.weight_decay * *w;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FetalNet, NetConfig};
    use rand::SeedableRng;

    #[test]
    fn first_step_moves_by_lr() {
        let net = FetalNet::new(NetConfig::toy(1, 16, 1)).unwrap();
        let mut p = net.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        let before = p.clone();
        let mut g = p.zero_grads();
        let id = p.id("side3.weight").unwrap();
        g.get_mut(id)[0] = 0.5;
        let mut opt = Adam::new(&p, 1e-3, 0.0);
        opt.step(&mut p, &g);
        // Bias-corrected first step is lr · sign(g).
        assert!((before.get(id)[0] - p.get(id)[0] - 1e-3).abs() < 1e-9);
        for (a, b) in before.iter().zip(p.iter()) {
            if a.0 != id {
                assert_eq!(a.2, b.2, "{}", a.1.name);
            }
        }
    }

    #[test]
    fn decay_shrinks_weights_without_gradient() {
        let net = FetalNet::new(NetConfig::toy(1, 16, 1)).unwrap();
        let mut p = net.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        let id = p.id("enc0.conv1.weight").unwrap();
        let w0 = p.get(id)[0];
        let g = p.zero_grads();
        let mut opt = Adam::new(&p, 1e-2, 0.1);
        opt.step(&mut p, &g);
        assert!(p.get(id)[0].abs() < w0.abs());
        let rv = p.id("enc0.bn1.running_var").unwrap();
        assert!(p.get(rv).iter().all(|&v| v == 1.0));
    }
}
