//! AdamW over named parameter lists.

use crate::tensor::Tensor;

/// Decoupled weight decay Adam. Decay is skipped for biases and norm
/// parameters (any name containing "bias" or "norm").
pub struct AdamW {
    params: Vec<(String, Tensor)>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(params: Vec<(String, Tensor)>) -> Self {
        let m = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        AdamW {
            params,
            m,
            v,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }

    pub fn zero_grad(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    /// One update with the given learning rate; parameters without a
    /// gradient are left untouched.
    pub fn step(&mut self, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (name, p)) in self.params.iter().enumerate() {
            let Some(grad) = p.grad() else { continue };
            let decay = if name.contains("bias") || name.contains("norm") {
                0.0
            } else {
                self.weight_decay
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.update_data(|data| {
                for j in 0..data.len() {
                    let g = grad[j];
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    data[j] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + decay * data[j]);
                }
            });
        }
    }
}

/// Stage-1 schedule: constant `base` until `drop_frac` of the epochs have
/// run, then one order of magnitude lower.
pub fn stage1_lr(base: f64, epoch: usize, total: usize, drop_frac: f64) -> f64 {
    if (epoch as f64) < drop_frac * total as f64 {
        base
    } else {
        base * 0.1
    }
}

/// Stage-2 schedule: halved at `halvings` even intervals.
pub fn stage2_lr(base: f64, epoch: usize, total: usize, halvings: usize) -> f64 {
    if halvings == 0 || total == 0 {
        return base;
    }
    let interval = total.div_ceil(halvings + 1);
    base * 0.5f64.powi((epoch / interval.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        let x = Tensor::from_vec(vec![5.0, -3.0], &[2]).requires_grad(true);
        let mut opt = AdamW::new(vec![("x".into(), x.clone())]);
        opt.weight_decay = 0.0;
        for _ in 0..400 {
            opt.zero_grad();
            let loss = x.mul(&x).sum_all();
            loss.backward();
            opt.step(0.05);
        }
        assert!(x.to_vec().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn decay_skipped_for_bias_and_norm() {
        let w = Tensor::from_vec(vec![1.0], &[1]).requires_grad(true);
        let b = Tensor::from_vec(vec![1.0], &[1]).requires_grad(true);
        let g = Tensor::from_vec(vec![1.0], &[1]).requires_grad(true);
        let mut opt = AdamW::new(vec![
            ("layer.w".into(), w.clone()),
            ("layer.b.bias".into(), b.clone()),
            ("layer.norm.gamma".into(), g.clone()),
        ]);
        // zero gradient, so only decay can move anything
        opt.zero_grad();
        let loss = w.scale(0.0).add(&b.scale(0.0)).add(&g.scale(0.0)).sum_all();
        loss.backward();
        opt.step(0.1);
        assert!(w.to_vec()[0] < 1.0, "weight should decay");
        assert_eq!(b.to_vec()[0], 1.0, "bias must not decay");
        assert_eq!(g.to_vec()[0], 1.0, "norm must not decay");
    }

    #[test]
    fn untouched_params_keep_values() {
        let w = Tensor::from_vec(vec![2.0], &[1]).requires_grad(true);
        let mut opt = AdamW::new(vec![("w".into(), w.clone())]);
        opt.step(0.1); // no grad yet
        assert_eq!(w.to_vec()[0], 2.0);
    }

    #[test]
    fn schedules_match_shape() {
        assert_eq!(stage1_lr(3e-4, 0, 30, 0.6), 3e-4);
        assert_eq!(stage1_lr(3e-4, 17, 30, 0.6), 3e-4);
        assert!((stage1_lr(3e-4, 18, 30, 0.6) - 3e-5).abs() < 1e-18);
        assert_eq!(stage2_lr(1e-4, 0, 100, 4), 1e-4);
        assert_eq!(stage2_lr(1e-4, 99, 100, 4), 1e-4 * 0.5f64.powi(4));
    }
}
