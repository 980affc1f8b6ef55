use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.1,
            lr_decay_factor: 0.1,
            lr_decay_every_epochs: 25,
            momentum: 0.5,
            weight_decay: 0.0,
            epochs: 50,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return Err(Error::config("lr_decay_factor must be positive"));
        }
        if self.lr_decay_every_epochs == 0 {
            return Err(Error::config("lr_decay_every_epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }

    /// Step schedule `base_lr * factor^floor(epoch / every)`.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_decay_factor.powi((epoch / self.lr_decay_every_epochs) as i32)
    }
}

/// One momentum step with coupled weight decay:
/// `v <- momentum*v - lr*(grad + weight_decay*param)`, `param <- param + v`.
pub fn sgd_momentum_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    config: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape("params, grads and velocity differ in count"));
    }
    let lr = config.lr(epoch);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape(format!(
                "param {:?}, grad {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = config.momentum * *vi - lr * (gi + config.weight_decay * *pi);
            *pi += *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn plain_sgd_when_momentum_and_decay_are_zero() {
        let cfg = TrainConfig { base_lr: 0.5, momentum: 0.0, weight_decay: 0.0, ..Default::default() };
        let mut p = [t(&[1.0, 2.0])];
        let mut v = [t(&[0.0, 0.0])];
        sgd_momentum_step(&mut p, &[t(&[0.2, -0.4])], &mut v, &cfg, 0).unwrap();
        assert_eq!(p[0].data(), &[0.9, 2.2]);
    }

    #[test]
    fn step_schedule() {
        let cfg = TrainConfig { base_lr: 1.0, lr_decay_factor: 0.1, lr_decay_every_epochs: 25, ..Default::default() };
        assert_eq!(cfg.lr(0), 1.0);
        assert_eq!(cfg.lr(24), 1.0);
        assert!((cfg.lr(25) - 0.1).abs() < 1e-15);
        assert!((cfg.lr(50) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = [t(&[1.0, -3.0])];
        let mut v = [t(&[0.0, 0.0])];
        sgd_momentum_step(&mut p, &[t(&[0.0, 0.0])], &mut v, &cfg, 3).unwrap();
        assert_eq!(p[0].data(), &[1.0, -3.0]);
    }

    #[test]
    fn momentum_accumulates() {
        let cfg = TrainConfig { base_lr: 1.0, momentum: 0.5, weight_decay: 0.0, ..Default::default() };
        let mut p = [t(&[0.0])];
        let mut v = [t(&[0.0])];
        sgd_momentum_step(&mut p, &[t(&[1.0])], &mut v, &cfg, 0).unwrap();
        sgd_momentum_step(&mut p, &[t(&[1.0])], &mut v, &cfg, 0).unwrap();
        // v1 = -1, v2 = -1.5
        assert_eq!(p[0].data(), &[-2.5]);
    }

    #[test]
    fn validation_and_shape_errors() {
        assert!(TrainConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { base_lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { weight_decay: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        let mut p = [t(&[1.0])];
        let mut v = [t(&[0.0, 0.0])];
        assert!(sgd_momentum_step(&mut p, &[t(&[1.0])], &mut v, &TrainConfig::default(), 0).is_err());
    }
}
