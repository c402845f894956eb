use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Every gradient is checked before any
    /// parameter changes, so a non-finite gradient leaves the state untouched.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], names: &[String]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                return Err(NnError::Shape(format!("tensor {k} size changed")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                let name = names.get(k).cloned().unwrap_or_else(|| format!("#{k}"));
                return Err(NnError::NonFiniteGradient(name));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(state: &mut AdamState, p: &mut Vec<f64>, g: &[f64]) -> Result<(), NnError> {
        state.step(&mut [p.as_mut_slice()], &[g], &["p".to_string()])
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut s = AdamState::new(AdamConfig::default(), &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..5 {
            run(&mut s, &mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::new(AdamConfig::default(), &[2]);
        let mut p = vec![0.0, 0.0];
        run(&mut s, &mut p, &[3.0, -0.25]).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let expect = |g: f64| -0.01 * g / (g.abs() + 1e-8);
        assert!((p[0] - expect(3.0)).abs() < 1e-15);
        assert!((p[1] - expect(-0.25)).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(cfg, &[2]);
        let mut p = vec![0.3, 0.7];
        run(&mut s, &mut p, &[1.0, 2.0]).unwrap();
        assert_eq!(p, vec![0.3, 0.7]);
    }

    #[test]
    fn non_finite_gradient_names_the_tensor() {
        let mut s = AdamState::new(AdamConfig::default(), &[1, 2]);
        let mut a = vec![0.0];
        let mut b = vec![0.0, 0.0];
        let names = vec!["alpha".to_string(), "beta".to_string()];
        let err = s
            .step(&mut [a.as_mut_slice(), b.as_mut_slice()], &[&[1.0], &[0.0, f64::NAN]], &names)
            .unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient("beta".into()));
        assert_eq!(a, vec![0.0]);
        assert_eq!(s.steps_taken(), 0);
    }

    #[test]
    fn updates_are_deterministic() {
        let go = || {
            let mut s = AdamState::new(AdamConfig::default(), &[2]);
            let mut p = vec![0.1, 0.2];
            for k in 0..10 {
                run(&mut s, &mut p, &[k as f64 * 0.3 - 1.0, 0.5]).unwrap();
            }
            p
        };
        assert_eq!(go(), go());
    }
}
