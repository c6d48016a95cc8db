use serde::{Deserialize, Serialize};

use super::NeuralError;

/// Adam with bias correction. Moment buffers are allocated on the first
/// step to match the parameter layout and checked on every later step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<(), NeuralError> {
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(NeuralError::Shape("parameter/gradient layout mismatch".into()));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(NeuralError::NonFiniteGradient);
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len()
            || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len())
        {
            return Err(NeuralError::Shape("optimizer state does not match parameters".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
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
        let mut opt = Adam::new(0.1);
        let mut w = vec![1.0, -2.0];
        opt.step(vec![&mut w], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(w, vec![1.0, -2.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn quadratic_descends() {
        // f(w) = w^2 from w = 1 with lr = 0.1: momentum carries w past the
        // minimum after 11 steps, then the oscillation decays.
        let mut opt = Adam::new(0.1);
        let mut w = [1.0f64];
        let mut trace = vec![w[0]];
        for _ in 0..50 {
            let g = [2.0 * w[0]];
            opt.step(vec![&mut w], &[&g]).unwrap();
            trace.push(w[0]);
        }
        for k in 1..=11 {
            assert!(trace[k].abs() < trace[k - 1].abs(), "step {k}");
        }
        let first_swing = trace[12..32].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let second_swing = trace[32..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(second_swing < first_swing);
        assert!(trace[50].abs() < 0.01, "final {}", trace[50]);
    }

    #[test]
    fn identical_states_identical_results() {
        let mut a = Adam::new(0.01);
        let mut b = a.clone();
        let (mut wa, mut wb) = ([0.3, 0.7], [0.3, 0.7]);
        a.step(vec![&mut wa], &[&[0.5, -1.0]]).unwrap();
        b.step(vec![&mut wb], &[&[0.5, -1.0]]).unwrap();
        assert_eq!(wa, wb);
        assert_eq!(a, b);
    }

    #[test]
    fn nan_gradient_rejected() {
        let mut opt = Adam::new(0.1);
        let mut w = [1.0];
        assert_eq!(
            opt.step(vec![&mut w], &[&[f64::NAN]]),
            Err(NeuralError::NonFiniteGradient)
        );
        assert_eq!(w, [1.0]);
        assert_eq!(opt.steps(), 0);
    }
}
