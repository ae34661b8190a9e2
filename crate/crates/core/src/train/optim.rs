use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `Adam` never decays weights; `AdamW` applies decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            weight_decay,
            ..Self::adam()
        }
    }
}

/// Adaptive-moment state for a list of parameter tensors.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub cfg: OptimizerConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(cfg: OptimizerConfig) -> Self {
        OptimizerState {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Clears moments and the step counter.
    pub fn reset(&mut self) {
        self.m.clear();
        self.v.clear();
        self.t = 0;
    }

    pub fn is_fresh(&self) -> bool {
        self.t == 0 && self.m.is_empty() && self.v.is_empty()
    }

    /// One bias-corrected adaptive-moment step.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer_step", "parameter count", params.len(), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "optimizer_step",
                    format!("param {i}"),
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.shape() != g.shape()) {
            return Err(Error::shape("optimizer_step", "moment shapes", "parameter shapes", "stale moments"));
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let decay = match c.kind {
            OptimizerKind::AdamW => lr * c.weight_decay,
            OptimizerKind::Adam => 0.0,
        };
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                let gj = gj.to_f64v();
                let mj = c.beta1 * m.data()[j].to_f64v() + (1.0 - c.beta1) * gj;
                let vj = c.beta2 * v.data()[j].to_f64v() + (1.0 - c.beta2) * gj * gj;
                m.data_mut()[j] = T::from_f64(mj);
                v.data_mut()[j] = T::from_f64(vj);
                let mhat = mj / bc1;
                let vhat = vj / bc2;
                let mut x = pd[j].to_f64v();
                x -= decay * x;
                x -= lr * mhat / (vhat.sqrt() + c.eps);
                pd[j] = T::from_f64(x);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut opt = OptimizerState::new(OptimizerConfig::adam());
        opt.step(&mut [&mut p], &[Tensor::zeros(&[3])], 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn first_step_is_sign_of_gradient() {
        let mut p = Tensor::<f64>::zeros(&[3]);
        let g = Tensor::from_f64(&[3], &[0.3, -5.0, 1e-3]).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::adam());
        opt.step(&mut [&mut p], &[g], 0.01).unwrap();
        for (x, s) in p.data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - 0.01 * s).abs() < 1e-6, "{x}");
        }
    }

    #[test]
    fn decoupled_decay_shrinks_params() {
        let mut p = Tensor::<f64>::from_f64(&[1], &[2.0]).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::adamw(0.5));
        opt.step(&mut [&mut p], &[Tensor::zeros(&[1])], 0.1).unwrap();
        assert!((p.item() - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(x, y) = (x - 3)^2 + 10 (y + 1)^2, optimum (3, -1)
        let mut p = Tensor::<f64>::zeros(&[2]);
        let mut opt = OptimizerState::new(OptimizerConfig::adam());
        for i in 0..600 {
            let (x, y) = (p.data()[0], p.data()[1]);
            let g = Tensor::from_f64(&[2], &[2.0 * (x - 3.0), 20.0 * (y + 1.0)]).unwrap();
            let lr = 0.1 * 0.99f64.powi(i);
            opt.step(&mut [&mut p], &[g], lr).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-3, "{:?}", p.data());
        assert!((p.data()[1] + 1.0).abs() < 1e-3, "{:?}", p.data());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let mut opt = OptimizerState::new(OptimizerConfig::adam());
        assert!(opt.step(&mut [&mut p], &[Tensor::zeros(&[3])], 0.1).is_err());
        assert!(opt.step(&mut [&mut p], &[], 0.1).is_err());
    }

    #[test]
    fn reset_matches_fresh_state() {
        let g1 = Tensor::<f64>::from_f64(&[2], &[0.4, -0.1]).unwrap();
        let g2 = Tensor::<f64>::from_f64(&[2], &[-0.2, 0.7]).unwrap();
        let mut p = Tensor::<f64>::from_f64(&[2], &[1.0, 1.0]).unwrap();
        let mut used = OptimizerState::new(OptimizerConfig::adamw(0.01));
        used.step(&mut [&mut p], &[g1], 0.1).unwrap();
        used.reset();
        assert!(used.is_fresh());
        let mut a = p.clone();
        let mut b = p.clone();
        used.step(&mut [&mut a], &[g2.clone()], 0.1).unwrap();
        OptimizerState::new(OptimizerConfig::adamw(0.01)).step(&mut [&mut b], &[g2], 0.1).unwrap();
        assert_eq!(a, b);
    }
}
