//! Adam and learning-rate schedules.

use crate::model::{ParamGrads, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear warm-up to `peak` over `warmup` steps, then inverse square-root decay.
    WarmupDecay {
        peak: f64,
        warmup: usize,
    },
}

impl LrSchedule {
    /// Learning rate at 1-based `step`.
    pub fn at(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::WarmupDecay { peak, warmup } => {
                let s = step.max(1) as f64;
                let w = warmup.max(1) as f64;
                peak * (s / w).min((w / s).sqrt())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            schedule: LrSchedule::Constant(1e-3),
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

impl Adam {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> usize {
        self.step
    }

    /// Continues the schedule as if `steps` updates had already happened.
    pub fn set_steps(&mut self, steps: usize) {
        self.step = steps;
    }

    /// Applies one update; returns the learning rate used. Parameters
    /// without a gradient keep their moments untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamGrads) -> f64 {
        self.step += 1;
        let lr = self.cfg.schedule.at(self.step);
        let norm = grads
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let scale = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (id, g) in grads {
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.get_mut(*id).data_mut();
            for j in 0..p.len() {
                let gj = g[j] * scale;
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.cfg.eps);
            }
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn warmup_then_decay() {
        let s = LrSchedule::WarmupDecay {
            peak: 1.0,
            warmup: 4,
        };
        assert_eq!(s.at(1), 0.25);
        assert_eq!(s.at(4), 1.0);
        assert_eq!(s.at(16), 0.5);
        assert_eq!(LrSchedule::Constant(1e-5).at(1000), 1e-5);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut params = ParamSet::default();
        let id = params.push("x", Tensor::vector(vec![3.0, -2.0]));
        let mut opt = Adam::new(
            &params,
            AdamConfig {
                schedule: LrSchedule::Constant(0.1),
                clip_norm: None,
                ..AdamConfig::default()
            },
        );
        for _ in 0..500 {
            let g: Vec<f64> = params.get(id).data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut params, &vec![(id, g)]);
        }
        assert!(params.get(id).data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        let mut params = ParamSet::default();
        let id = params.push("x", Tensor::vector(vec![1.0, 1.0]));
        let mut opt = Adam::new(
            &params,
            AdamConfig {
                schedule: LrSchedule::Constant(0.01),
                clip_norm: Some(1.0),
                ..AdamConfig::default()
            },
        );
        opt.step(&mut params, &vec![(id, vec![100.0, -0.5])]);
        let x = params.get(id).data();
        assert!((x[0] - 0.99).abs() < 1e-8);
        assert!((x[1] - 1.01).abs() < 1e-8);
    }
}
