use serde::{Deserialize, Serialize};

/// Multiply the learning rate by `factor` after `patience` consecutive
/// epochs without a decrease of more than `min_delta` in the monitored value.
/// The first observation always counts as an improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceOnPlateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    wait: usize,
}

impl ReduceOnPlateau {
    pub fn new(lr: f64, factor: f64, patience: usize, min_delta: f64) -> Self {
        ReduceOnPlateau {
            lr,
            factor,
            patience,
            min_delta,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Record one epoch's monitored value; returns the learning rate for the next epoch.
    pub fn observe(&mut self, value: f64) -> f64 {
        if value < self.best - self.min_delta {
            self.best = value;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr *= self.factor;
                self.wait = 0;
            }
        }
        self.lr
    }

    /// Learning rate in force during each epoch of `history`.
    pub fn replay(lr0: f64, factor: f64, patience: usize, min_delta: f64, history: &[f64]) -> Vec<f64> {
        let mut s = ReduceOnPlateau::new(lr0, factor, patience, min_delta);
        let mut out = Vec::with_capacity(history.len());
        for &v in history {
            out.push(s.lr);
            s.observe(v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> ReduceOnPlateau {
        ReduceOnPlateau::new(1e-4, 0.1, 10, 1e-8)
    }

    #[test]
    fn decreasing_history_keeps_lr() {
        let mut s = sched();
        for i in 0..50 {
            assert_eq!(s.observe(1.0 - i as f64 * 0.01), 1e-4);
        }
    }

    #[test]
    fn ten_flat_epochs_reduce_to_1e5() {
        let mut s = sched();
        s.observe(0.5);
        for k in 1..=10 {
            let lr = s.observe(0.5);
            if k < 10 {
                assert_eq!(lr, 1e-4);
            } else {
                assert!((lr - 1e-5).abs() < 1e-20);
            }
        }
    }

    #[test]
    fn nine_flat_then_improvement_keeps_lr() {
        let mut s = sched();
        s.observe(0.5);
        for _ in 0..9 {
            s.observe(0.5);
        }
        assert_eq!(s.observe(0.4), 1e-4);
        // The counter restarted: nine more flat epochs still do not reduce.
        for _ in 0..9 {
            assert_eq!(s.observe(0.4), 1e-4);
        }
    }

    #[test]
    fn ties_within_tolerance_do_not_count() {
        let mut s = sched();
        s.observe(1.0);
        for _ in 0..10 {
            s.observe(1.0 - 5e-9);
        }
        assert!(s.lr < 1e-4);
    }

    #[test]
    fn replay_is_a_nonincreasing_step_function() {
        let hist: Vec<f64> = (0..60).map(|i| if i < 5 { 1.0 / (i + 1) as f64 } else { 0.3 }).collect();
        let lrs = ReduceOnPlateau::replay(1e-3, 0.1, 10, 1e-8, &hist);
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(lrs[0], 1e-3);
        assert!(lrs[59] < 1e-5);
    }
}
