//! Training losses and the contrastive negative queue.

use crate::tensor::Tensor;

/// FIFO ring of detached unit-norm representations serving as contrastive
/// negatives.
#[derive(Debug, Clone)]
pub struct NegativeQueue {
    buffer: Vec<Vec<f64>>,
    capacity: usize,
    head: usize,
    dim: usize,
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> Self {
        assert!(capacity > 0, "contract violation: queue capacity must be positive");
        NegativeQueue { buffer: Vec::with_capacity(capacity), capacity, head: 0, dim }
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Enqueue a detached representation, evicting the oldest when full.
    pub fn push(&mut self, repr: &Tensor) {
        let v = repr.to_vec();
        assert_eq!(v.len(), self.dim, "dimension error: queue expects dim {}", self.dim);
        if self.buffer.len() < self.capacity {
            self.buffer.push(v);
        } else {
            self.buffer[self.head] = v;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Exact membership test (used to verify FIFO eviction).
    pub fn contains(&self, repr: &[f64]) -> bool {
        self.buffer.iter().any(|v| v == repr)
    }

    /// Constant `[len, dim]` matrix of the stored negatives.
    pub fn as_matrix(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.buffer.len() * self.dim);
        for v in &self.buffer {
            data.extend_from_slice(v);
        }
        Tensor::from_vec(data, &[self.buffer.len(), self.dim])
    }
}

/// InfoNCE in the MoCo form, positive included in the denominator:
/// `-log( exp(s+/tau) / (exp(s+/tau) + sum_i exp(s-_i/tau)) )`.
///
/// Gradients flow to `d` only; `d_pos` and the queue are detached. With all
/// similarities equal the loss is exactly `ln(Q + 1)`.
pub fn info_nce(d: &Tensor, d_pos: &Tensor, queue: &NegativeQueue, tau: f64) -> Tensor {
    assert!(tau > 0.0, "contract violation: temperature must be positive");
    assert!(!queue.is_empty(), "contract violation: info_nce needs a non-empty queue");
    let dim = d.numel();
    assert_eq!(d_pos.numel(), dim, "dimension error: representation widths differ");

    let q = queue.len();
    let pos = d_pos.detach().reshape(&[dim, 1]);
    let s_pos = d.reshape(&[1, dim]).matmul(&pos).reshape(&[1]);
    let s_neg = queue.as_matrix().matmul(&d.reshape(&[dim, 1])).reshape(&[q]);
    let logits = Tensor::concat(&[&s_pos, &s_neg], 0).scale(1.0 / tau);

    // log-sum-exp with a constant max shift (exact: lse is shift invariant)
    let m = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.add_scalar(-m).exp().sum_all().ln().add_scalar(m);
    lse.sub(&s_pos.scale(1.0 / tau)).reshape(&[1])
}

/// Mean absolute error; the subgradient at exact zeros is taken as 0.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Tensor {
    assert_eq!(pred.shape(), target.shape(), "dimension error: l1_loss shapes differ");
    pred.sub(target).abs().mean_all()
}

/// Unweighted sum of the contrastive and reconstruction terms.
pub fn composite_loss(l_cl: &Tensor, l_rec: &Tensor) -> Tensor {
    l_cl.add(l_rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::grad_check;

    fn unit(rng: &mut Rng, dim: usize) -> Tensor {
        Tensor::from_vec((0..dim).map(|_| rng.normal()).collect(), &[dim]).l2_normalize()
    }

    #[test]
    fn uniform_similarities_give_ln_q_plus_one() {
        // d orthogonal basis-ish construction: use identical vectors so all
        // similarities are exactly equal (s+ == s- == 1)
        let dim = 8;
        let d = Tensor::from_vec(
            {
                let mut v = vec![0.0; dim];
                v[0] = 1.0;
                v
            },
            &[dim],
        );
        let mut queue = NegativeQueue::new(16, dim);
        for _ in 0..16 {
            queue.push(&d);
        }
        let loss = info_nce(&d, &d, &queue, 0.07).item();
        let expect = (16.0 + 1.0f64).ln();
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
    }

    #[test]
    fn perfect_alignment_drives_loss_to_zero() {
        // s+ = 50 with tau = 0.07 and orthogonal negatives
        let dim = 4;
        let d = Tensor::from_vec(vec![50.0, 0.0, 0.0, 0.0], &[4]);
        let pos = Tensor::from_vec(vec![1.0, 0.0, 0.0, 0.0], &[4]);
        let neg = Tensor::from_vec(vec![0.0, 1.0, 0.0, 0.0], &[4]);
        let mut queue = NegativeQueue::new(8, dim);
        for _ in 0..8 {
            queue.push(&neg);
        }
        let loss = info_nce(&d, &pos, &queue, 0.07).item();
        assert!(loss >= 0.0 && loss < 1e-6, "loss {loss}");
    }

    #[test]
    fn info_nce_is_nonnegative() {
        let mut rng = Rng::new(3);
        let mut queue = NegativeQueue::new(32, 8);
        for _ in 0..32 {
            queue.push(&unit(&mut rng, 8));
        }
        for _ in 0..20 {
            let d = unit(&mut rng, 8);
            let pos = unit(&mut rng, 8);
            assert!(info_nce(&d, &pos, &queue, 0.07).item() >= 0.0);
        }
    }

    #[test]
    #[should_panic(expected = "non-empty queue")]
    fn empty_queue_rejected() {
        let d = Tensor::from_vec(vec![1.0, 0.0], &[2]);
        let queue = NegativeQueue::new(4, 2);
        let _ = info_nce(&d, &d, &queue, 0.07);
    }

    #[test]
    fn gradient_matches_finite_differences_and_stays_on_anchor() {
        let mut rng = Rng::new(11);
        let mut queue = NegativeQueue::new(8, 6);
        for _ in 0..8 {
            queue.push(&unit(&mut rng, 6));
        }
        let pos = unit(&mut rng, 6);
        let d0 = unit(&mut rng, 6);
        let err = grad_check(|d| info_nce(d, &pos, &queue, 0.07), &d0, 1e-5);
        assert!(err < 1e-4, "info_nce grad err {err}");
    }

    #[test]
    fn queue_fifo_eviction() {
        let dim = 3;
        let mut queue = NegativeQueue::new(4, dim);
        let make = |i: usize| {
            let mut v = vec![0.0; dim];
            v[0] = i as f64;
            Tensor::from_vec(v, &[dim])
        };
        for i in 0..4 {
            queue.push(&make(i));
        }
        let first = make(0).to_vec();
        assert!(queue.contains(&first));
        queue.push(&make(4)); // evicts the oldest
        assert!(!queue.contains(&first));
        assert_eq!(queue.len(), 4);
        assert!(queue.contains(&make(4).to_vec()));
    }

    #[test]
    fn l1_basics() {
        let a = Tensor::from_vec(vec![0.2, 0.4, 0.6, 0.8], &[4]);
        assert_eq!(l1_loss(&a, &a).item(), 0.0);
        let b = a.add_scalar(0.5);
        assert!((l1_loss(&b, &a).item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn l1_subgradient_at_zero_is_zero() {
        let a = Tensor::from_vec(vec![0.3, 0.3], &[2]).requires_grad(true);
        let b = Tensor::from_vec(vec![0.3, 0.1], &[2]);
        l1_loss(&a, &b).backward();
        let g = a.grad().unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn composite_is_plain_sum() {
        let a = Tensor::scalar(0.3);
        let b = Tensor::scalar(0.2);
        assert!((composite_loss(&a, &b).item() - 0.5).abs() < 1e-15);
    }
}
