//! AdamW with decoupled weight decay and a cosine learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::graph::Gradients;
use crate::neural::params::ParamStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// First/second moment accumulators, created lazily per parameter. Step
/// counts are tracked per parameter so a tensor first touched late still
/// gets correct bias correction.
#[derive(Default)]
pub struct AdamState {
    slots: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    /// Step count for one parameter (0 when never updated).
    pub fn steps_for(&self, name: &str) -> u64 {
        self.slots.get(name).map_or(0, |s| s.t)
    }
}

/// One AdamW update over exactly the parameters present in `grads`.
/// Decay is decoupled: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    for (name, grad) in grads.iter() {
        let tensor = store.get_mut(name)?;
        if tensor.len() != grad.len() {
            return Err(Error::Shape(format!(
                "gradient for {name} has {} entries, parameter has {}",
                grad.len(),
                tensor.len()
            )));
        }
        let slot = state.slots.entry(name.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; grad.len()],
            v: vec![0.0; grad.len()],
            t: 0,
        });
        slot.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(slot.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(slot.t as i32);
        for ((p, &g), (m, v)) in tensor
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * *p);
        }
    }
    Ok(())
}

/// Cosine decay from `base_lr` to `min_lr` over `total_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, min_lr: f64, total_steps: usize) -> Result<Self> {
        if !(base_lr.is_finite() && min_lr.is_finite()) || base_lr <= 0.0 || min_lr < 0.0 {
            return Err(Error::Config(format!(
                "learning rates must be positive/nonnegative finite, got base {base_lr}, min {min_lr}"
            )));
        }
        if min_lr > base_lr {
            return Err(Error::Config(format!(
                "min_lr {min_lr} exceeds base_lr {base_lr}"
            )));
        }
        if total_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        Ok(LrSchedule {
            base_lr,
            min_lr,
            total_steps,
        })
    }

    pub fn at(&self, step: usize) -> f64 {
        cosine_lr(self.base_lr, self.min_lr, step, self.total_steps)
    }
}

/// min + 0.5 (base - min) (1 + cos(pi * step / total)); steps past the end
/// stay at `min_lr`.
pub fn cosine_lr(base_lr: f64, min_lr: f64, step: usize, total_steps: usize) -> f64 {
    if step >= total_steps {
        return min_lr;
    }
    let frac = step as f64 / total_steps as f64;
    min_lr + 0.5 * (base_lr - min_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::graph::Graph;
    use crate::neural::tensor::Tensor;

    fn single_param_store(value: f64) -> ParamStore {
        let mut s = ParamStore::new(0);
        s.insert("p", Tensor::new(vec![1], vec![value]).unwrap().with_grad())
            .unwrap();
        s
    }

    fn grads_for(store: &ParamStore, grad_value: f64) -> Gradients {
        // Build loss = grad_value * p so dloss/dp = grad_value exactly.
        let mut g = Graph::new();
        let p = g.param(store, "p").unwrap();
        let k = g.scale(p, grad_value);
        let loss = g.sum_all(k);
        g.backward(loss).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With zero decay the first update is lr * g / (|g| + eps).
        let mut store = single_param_store(1.0);
        let grads = grads_for(&store, 0.5);
        let mut state = AdamState::new();
        adamw_step(&mut store, &grads, &mut state, 0.01, 0.0).unwrap();
        let expected = 1.0 - 0.01 * (0.5 / (0.5 + ADAM_EPS));
        let got = store.get("p").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn zero_gradient_pure_decay_shrinks_param() {
        let mut store = single_param_store(2.0);
        let grads = grads_for(&store, 0.0);
        let mut state = AdamState::new();
        adamw_step(&mut store, &grads, &mut state, 0.1, 0.01).unwrap();
        let expected = 2.0 * (1.0 - 0.1 * 0.01);
        let got = store.get("p").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn absent_gradient_leaves_param_untouched() {
        let mut store = single_param_store(3.0);
        store
            .insert("q", Tensor::new(vec![1], vec![5.0]).unwrap().with_grad())
            .unwrap();
        let grads = grads_for(&store, 1.0);
        let mut state = AdamState::new();
        adamw_step(&mut store, &grads, &mut state, 0.1, 0.5).unwrap();
        assert_eq!(store.get("q").unwrap().data()[0].to_bits(), 5.0f64.to_bits());
        assert_eq!(state.steps_for("q"), 0);
        assert_eq!(state.steps_for("p"), 1);
    }

    #[test]
    fn two_steps_match_hand_computation() {
        let mut store = single_param_store(1.0);
        let mut state = AdamState::new();
        let lr = 0.01;
        let (g1, g2) = (0.3, -0.2);

        let grads1 = grads_for(&store, g1);
        adamw_step(&mut store, &grads1, &mut state, lr, 0.0).unwrap();
        let grads2 = grads_for(&store, g2);
        adamw_step(&mut store, &grads2, &mut state, lr, 0.0).unwrap();

        let mut p = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for (t, g) in [(1, g1), (2, g2)] {
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g;
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m / (1.0 - ADAM_BETA1.powi(t));
            let v_hat = v / (1.0 - ADAM_BETA2.powi(t));
            p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        let got = store.get("p").unwrap().data()[0];
        assert!((got - p).abs() < 1e-15, "{got} vs {p}");
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(1e-3, 1e-5, 0, 100), 1e-3);
        let mid = cosine_lr(1e-3, 1e-5, 50, 100);
        let expected = 1e-5 + 0.5 * (1e-3 - 1e-5);
        assert!((mid - expected).abs() < 1e-18);
        assert_eq!(cosine_lr(1e-3, 1e-5, 100, 100), 1e-5);
        assert_eq!(cosine_lr(1e-3, 1e-5, 250, 100), 1e-5);
    }

    #[test]
    fn cosine_is_monotone_nonincreasing() {
        let mut prev = f64::INFINITY;
        for step in 0..=200 {
            let lr = cosine_lr(5e-4, 1e-6, step, 200);
            assert!(lr <= prev + 1e-18);
            prev = lr;
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(LrSchedule::new(1e-3, 1e-5, 10).is_ok());
        assert!(LrSchedule::new(0.0, 0.0, 10).is_err());
        assert!(LrSchedule::new(1e-3, 2e-3, 10).is_err());
        assert!(LrSchedule::new(1e-3, 1e-5, 0).is_err());
        assert!(LrSchedule::new(f64::NAN, 0.0, 10).is_err());
    }
}
