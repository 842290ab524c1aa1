//! Adam optimizer, exponential learning-rate decay, and an early stopper.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::Tensor;

/// Adam with bias correction. First/second moment buffers are kept per
/// parameter, in parameter-index order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Rc<Tensor>]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
        }
    }

    /// One update. Parameters without a gradient this step are left alone
    /// (their moment buffers are not advanced either).
    pub fn step(&mut self, params: &mut [Rc<Tensor>], grads: &[Option<Tensor>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter mismatch");
        assert_eq!(params.len(), grads.len(), "gradient/parameter mismatch");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = Rc::make_mut(&mut params[i]);
            for ((pe, ge), (me, ve)) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.data.iter_mut().zip(v.data.iter_mut()))
            {
                *me = self.beta1 * *me + (1.0 - self.beta1) * ge;
                *ve = self.beta2 * *ve + (1.0 - self.beta2) * ge * ge;
                let mhat = *me / bc1;
                let vhat = *ve / bc2;
                *pe -= lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Exponential decay from `base` down to `floor_fraction·base` across
/// `total_epochs`: epoch 0 runs at `base`, the last epoch at the floor.
pub fn decayed_learning_rate(
    base: f64,
    epoch: usize,
    total_epochs: usize,
    floor_fraction: f64,
) -> f64 {
    if total_epochs <= 1 {
        return base;
    }
    let progress = epoch as f64 / (total_epochs - 1) as f64;
    base * floor_fraction.powf(progress)
}

/// Stop when the validation loss has not strictly improved for `patience`
/// consecutive observations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    epochs_seen: usize,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_seen: 0,
            since_best: 0,
        }
    }

    /// Record one validation loss; returns `true` when training should stop.
    /// The caller is responsible for snapshotting parameters whenever
    /// [`EarlyStopper::improved`] was set by the call.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        let epoch = self.epochs_seen;
        self.epochs_seen += 1;
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            false
        } else {
            self.since_best += 1;
            self.since_best >= self.patience
        }
    }

    /// Whether the most recent [`EarlyStopper::observe`] call improved on
    /// the best loss so far.
    pub fn improved(&self) -> bool {
        self.since_best == 0 && self.epochs_seen > 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Graph;

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        let target = Rc::new(Tensor::from_vec(1, 3, vec![0.3, -1.2, 2.5]));
        let mut params = vec![Rc::new(Tensor::zeros(1, 3))];
        let mut adam = Adam::new(&params);
        for _ in 0..600 {
            let mut g = Graph::new(true, 0);
            let x = g.param(0, Rc::clone(&params[0]));
            let loss = g.quadratic_loss(x, Rc::clone(&target));
            let grads = g.backward(loss, 1);
            drop(g);
            adam.step(&mut params, &grads, 0.05);
        }
        for (p, t) in params[0].data.iter().zip(&target.data) {
            assert!((p - t).abs() < 1e-5, "converged to {p}, wanted {t}");
        }
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        // with bias correction the very first update moves by ≈ lr·sign(g)
        let mut params = vec![Rc::new(Tensor::from_vec(1, 1, vec![0.0]))];
        let mut adam = Adam::new(&params);
        let grads = vec![Some(Tensor::from_vec(1, 1, vec![3.7]))];
        adam.step(&mut params, &grads, 0.01);
        assert!((params[0].data[0] + 0.01).abs() < 1e-6);
    }

    #[test]
    fn learning_rate_decays_to_five_percent() {
        let base = 1.9e-3;
        let total = 60;
        assert!((decayed_learning_rate(base, 0, total, 0.05) - base).abs() < 1e-18);
        let last = decayed_learning_rate(base, total - 1, total, 0.05);
        assert!((last - 0.05 * base).abs() < 1e-12);
        // strictly decreasing in between
        let mut prev = f64::INFINITY;
        for e in 0..total {
            let lr = decayed_learning_rate(base, e, total, 0.05);
            assert!(lr < prev);
            prev = lr;
        }
        // degenerate schedules stay at base
        assert_eq!(decayed_learning_rate(base, 0, 1, 0.05), base);
    }

    #[test]
    fn early_stopper_on_flat_history() {
        let mut es = EarlyStopper::new(5);
        assert!(!es.observe(1.0)); // sets best
        assert!(es.improved());
        for k in 0..4 {
            assert!(!es.observe(1.0), "flat observation {k} too early to stop");
            assert!(!es.improved());
        }
        assert!(es.observe(1.0)); // fifth non-improvement
        assert_eq!(es.best_epoch, 0);
        assert_eq!(es.best_loss, 1.0);
    }

    #[test]
    fn early_stopper_resets_on_improvement() {
        let mut es = EarlyStopper::new(2);
        assert!(!es.observe(1.0));
        assert!(!es.observe(1.1));
        assert!(!es.observe(0.9)); // improvement resets the counter
        assert!(es.improved());
        assert!(!es.observe(0.95));
        assert!(es.observe(0.96));
        assert_eq!(es.best_epoch, 2);
        assert!((es.best_loss - 0.9).abs() < 1e-15);
    }
}
