use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Bias-corrected Adam update with L2 decay folded into the gradient.
///
/// Every parameter must carry a gradient; all gradients are cleared afterwards.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    if let Some((name, _)) = store.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(Error::State(format!("parameter `{name}` has no gradient")));
    }
    for (_, p) in store.iter_mut() {
        let grad = p.grad.take().expect("checked above");
        p.steps += 1;
        let bc1 = 1.0 - cfg.beta1.powi(p.steps as i32);
        let bc2 = 1.0 - cfg.beta2.powi(p.steps as i32);
        let values = p.value.data_mut();
        for (j, g) in grad.data().iter().enumerate() {
            let g = g + cfg.weight_decay * values[j];
            p.m[j] = cfg.beta1 * p.m[j] + (1.0 - cfg.beta1) * g;
            p.v[j] = cfg.beta2 * p.v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = p.m[j] / bc1;
            let v_hat = p.v[j] / bc2;
            values[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn cfg(lr: f64, wd: f64) -> AdamConfig {
        AdamConfig {
            lr,
            weight_decay: wd,
            ..AdamConfig::default()
        }
    }

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn zero_grad_is_null_update() {
        let mut s = store(0.37);
        s.zero_grads();
        adam_step(&mut s, &cfg(0.01, 0.0)).unwrap();
        assert_eq!(s.value("x").unwrap().item(), 0.37);
        assert!(s.get("x").unwrap().grad.is_none());
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut s = store(1.0);
        s.accumulate_grad("x", &[1.0]).unwrap();
        adam_step(&mut s, &cfg(0.01, 0.0)).unwrap();
        // m_hat = 1, v_hat = 1 -> step = 0.01 / (1 + 1e-8)
        let step = 1.0 - s.value("x").unwrap().item();
        assert!((step - 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_scalar_reimplementation() {
        let (lr, b1, b2, eps, wd) = (0.05, 0.9, 0.999, 1e-8, 0.1);
        let mut s = store(0.5);
        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            s.accumulate_grad("x", &[2.0]).unwrap();
            adam_step(&mut s, &cfg(lr, wd)).unwrap();
            let g = 2.0 + wd * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((s.value("x").unwrap().item() - x).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut s = store(1.0);
        let err = adam_step(&mut s, &cfg(0.01, 0.0)).unwrap_err();
        assert!(matches!(&err, Error::State(m) if m.contains("`x`")));
    }
}
