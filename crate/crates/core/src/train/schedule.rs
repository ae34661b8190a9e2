use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::OptimizerState;
use crate::tensor::Scalar;

/// Per-epoch cosine annealing from `eta0` down to `eta_min` over `t_max` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub eta0: f64,
    pub eta_min: f64,
    pub t_max: usize,
    pub epoch: usize,
}

impl CosineSchedule {
    pub fn new(eta0: f64, eta_min: f64, t_max: usize) -> Self {
        CosineSchedule {
            eta0,
            eta_min,
            t_max,
            epoch: 0,
        }
    }

    /// Learning rate for the current epoch; holds at `eta_min` past `t_max`.
    pub fn lr(&self) -> f64 {
        if self.t_max == 0 {
            return self.eta0;
        }
        let e = self.epoch.min(self.t_max) as f64;
        self.eta_min + 0.5 * (self.eta0 - self.eta_min) * (1.0 + (PI * e / self.t_max as f64).cos())
    }

    pub fn advance(&mut self) {
        self.epoch += 1;
    }
}

/// Returns the schedule to epoch 0 and clears the optimizer's moments.
pub fn rewind<T: Scalar>(schedule: &mut CosineSchedule, optimizer: &mut OptimizerState<T>) {
    schedule.epoch = 0;
    optimizer.reset();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::OptimizerConfig;

    #[test]
    fn endpoints_and_midpoint() {
        let mut s = CosineSchedule::new(1e-3, 0.0, 10);
        assert_eq!(s.lr(), 1e-3);
        s.epoch = 10;
        assert!(s.lr().abs() < 1e-18);
        s.epoch = 5;
        assert!((s.lr() - 5e-4).abs() < 1e-15);
        let floor = CosineSchedule {
            epoch: 10,
            ..CosineSchedule::new(1.0, 0.1, 10)
        };
        assert!((floor.lr() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn monotone_without_rewind() {
        let mut s = CosineSchedule::new(0.01, 0.001, 37);
        let mut prev = s.lr();
        for _ in 0..50 {
            s.advance();
            assert!(s.lr() <= prev);
            assert!(s.lr() >= 0.001 && s.lr() <= 0.01);
            prev = s.lr();
        }
    }

    #[test]
    fn rewind_restores_eta0_and_is_idempotent() {
        let mut s = CosineSchedule::new(0.02, 0.0, 5);
        let mut o = OptimizerState::<f32>::new(OptimizerConfig::adam());
        s.advance();
        s.advance();
        rewind(&mut s, &mut o);
        assert_eq!(s.lr(), 0.02);
        let snapshot = s;
        rewind(&mut s, &mut o);
        assert_eq!(s, snapshot);
        assert!(o.is_fresh());
    }
}
