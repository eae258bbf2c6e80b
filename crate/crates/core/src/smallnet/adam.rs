use super::GradBundle;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort the step
/// before anything is modified.
pub fn adam_step(params: &mut [f64], grads: &GradBundle, state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.values().iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "adam: gradient {i} is {} at step {}",
            grads.values()[i],
            state.step + 1
        )));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads.values())
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5, -1.0, 2.0];
        let before = p.clone();
        let mut st = AdamState::new(3, AdamConfig::default());
        adam_step(&mut p, &GradBundle::zeros(3), &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 on step one, so the update is lr * g / (|g| + eps)
        let g = vec![0.3, -7.0, 1e-3];
        let mut p = vec![0.0; 3];
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(3, cfg);
        adam_step(&mut p, &GradBundle::from_values(g.clone()), &mut st).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            let want = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((pi - want).abs() < 1e-15, "{pi} vs {want}");
            assert!((pi.abs() - cfg.lr).abs() < 1e-5 * cfg.lr / gi.abs().min(1.0));
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = vec![1.0, 2.0];
        let mut st = AdamState::new(2, AdamConfig::default());
        let err = adam_step(&mut p, &GradBundle::from_values(vec![1.0, f64::NAN]), &mut st);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn trajectories_repeat() {
        let run = || {
            let mut p = vec![1.0, -1.0];
            let mut st = AdamState::new(2, AdamConfig::default());
            for i in 0..50 {
                let g = GradBundle::from_values(vec![p[0] * 2.0 + i as f64 * 0.01, p[1].sin()]);
                adam_step(&mut p, &g, &mut st).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
