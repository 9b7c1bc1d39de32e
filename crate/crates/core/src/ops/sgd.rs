//! Stochastic gradient descent with momentum and a step-decay schedule.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// What `decay_interval` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayUnit {
    Iterations,
    Epochs,
}

#[derive(Debug, Clone)]
pub struct SgdConfig {
    pub learning_rate: f32,
    /// Multiplier applied every `decay_interval` units; in (0, 1].
    pub decay_factor: f32,
    pub decay_interval: u64,
    pub decay_unit: DecayUnit,
    pub momentum: f32,
    pub batch_size: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        // 0 is allowed as a degenerate rate (useful as a fixed-point check)
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay factor {} must be in (0, 1]",
                self.decay_factor
            )));
        }
        if self.decay_interval == 0 {
            return Err(Error::InvalidConfig("decay interval must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum {} must be in [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }

    /// Step-decayed rate: lr0 * factor^floor(elapsed / interval), where
    /// `elapsed` counts iterations or epochs per `decay_unit`.
    pub fn lr_at(&self, elapsed: u64) -> f32 {
        let steps = (elapsed / self.decay_interval) as i32;
        self.learning_rate * self.decay_factor.powi(steps)
    }
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.003,
            decay_factor: 0.5,
            decay_interval: 150_000,
            decay_unit: DecayUnit::Iterations,
            momentum: 0.9,
            batch_size: 30,
        }
    }
}

/// Momentum SGD: v = momentum * v + g; w -= lr * v.
/// Velocities are kept per parameter slot, in the order first seen.
pub struct Sgd {
    pub config: SgdConfig,
    velocities: Vec<Tensor>,
    named_velocities: HashMap<String, Tensor>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sgd {
            config,
            velocities: Vec::new(),
            named_velocities: HashMap::new(),
        })
    }

    /// Update one named parameter; velocity state is keyed by name.
    /// `elapsed` is in the config's decay unit.
    pub fn update_named(
        &mut self,
        name: &str,
        param: &mut Tensor,
        grad: &Tensor,
        elapsed: u64,
    ) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::ShapeMismatch(format!(
                "param {:?} vs grad {:?} for {}",
                param.shape(),
                grad.shape(),
                name
            )));
        }
        let vel = match self.named_velocities.get_mut(name) {
            Some(v) => {
                if v.shape() != param.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "velocity {:?} vs param {:?} for {}",
                        v.shape(),
                        param.shape(),
                        name
                    )));
                }
                v
            }
            None => self
                .named_velocities
                .entry(name.to_string())
                .or_insert(Tensor::zeros(param.shape())?),
        };
        let lr = self.config.lr_at(elapsed);
        let mu = self.config.momentum;
        for ((p, v), &g) in param
            .data_mut()
            .iter_mut()
            .zip(vel.data_mut().iter_mut())
            .zip(grad.data())
        {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
        Ok(())
    }

    /// One update over an aligned parameter/gradient list. `elapsed` is in
    /// the config's decay unit and selects the decayed learning rate.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], elapsed: u64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} params vs {} grads",
                params.len(),
                grads.len()
            )));
        }
        if self.velocities.is_empty() {
            for p in params.iter() {
                self.velocities.push(Tensor::zeros(p.shape())?);
            }
        }
        if self.velocities.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} slots, got {}",
                self.velocities.len(),
                params.len()
            )));
        }
        let lr = self.config.lr_at(elapsed);
        let mu = self.config.momentum;
        for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut self.velocities) {
            if param.shape() != grad.shape() || param.shape() != vel.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "param {:?} / grad {:?} / velocity {:?}",
                    param.shape(),
                    grad.shape(),
                    vel.shape()
                )));
            }
            let pd = param.data_mut();
            let vd = vel.data_mut();
            for ((p, v), &g) in pd.iter_mut().zip(vd.iter_mut()).zip(grad.data()) {
                *v = mu * *v + g;
                *p -= lr * *v;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_schedule_at_150k() {
        let cfg = SgdConfig::default();
        assert_eq!(cfg.lr_at(0), 0.003);
        assert_eq!(cfg.lr_at(149_999), 0.003);
        assert_eq!(cfg.lr_at(150_000), 0.0015);
    }

    #[test]
    fn tenth_every_two_epochs() {
        let cfg = SgdConfig {
            learning_rate: 0.0001,
            decay_factor: 0.1,
            decay_interval: 2,
            decay_unit: DecayUnit::Epochs,
            momentum: 0.9,
            batch_size: 4,
        };
        assert!((cfg.lr_at(2) - 0.00001).abs() <= 1e-12);
        assert!((cfg.lr_at(4) - 0.000001).abs() <= 1e-12);
    }

    #[test]
    fn lr_stays_positive_after_many_decays() {
        let cfg = SgdConfig {
            decay_interval: 1,
            ..SgdConfig::default()
        };
        for e in [0u64, 10, 100] {
            assert!(cfg.lr_at(e) > 0.0, "lr at {}", e);
        }
    }

    #[test]
    fn zero_grad_zero_momentum_is_fixed_point() {
        let cfg = SgdConfig {
            momentum: 0.0,
            ..SgdConfig::default()
        };
        let mut sgd = Sgd::new(cfg).unwrap();
        let mut w = Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        let before = w.clone();
        let g = Tensor::zeros(&[3]).unwrap();
        sgd.step(&mut [&mut w], &[&g], 0).unwrap();
        assert_eq!(w.data(), before.data());
    }

    #[test]
    fn momentum_accumulates() {
        let cfg = SgdConfig {
            learning_rate: 1.0,
            decay_factor: 1.0,
            decay_interval: 1,
            decay_unit: DecayUnit::Iterations,
            momentum: 0.5,
            batch_size: 1,
        };
        let mut sgd = Sgd::new(cfg).unwrap();
        let mut w = Tensor::zeros(&[1]).unwrap();
        let g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        sgd.step(&mut [&mut w], &[&g], 0).unwrap();
        assert_eq!(w.data(), &[-1.0]); // v = 1
        sgd.step(&mut [&mut w], &[&g], 0).unwrap();
        assert_eq!(w.data(), &[-2.5]); // v = 1.5
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SgdConfig {
            learning_rate: -1.0,
            ..SgdConfig::default()
        };
        assert!(matches!(Sgd::new(cfg), Err(Error::InvalidConfig(_))));
    }
}
