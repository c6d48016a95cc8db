use std::f64::consts::{LN_2, PI};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::neural::{Cache, Gradients, Mlp, NeuralError};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh(u)^2)`, exact for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Gaussian policy squashed through `tanh`. The trunk emits per-dimension
/// means followed by per-dimension log standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquashedPolicy {
    pub trunk: Mlp,
    act_dim: usize,
    log_std_min: f64,
    log_std_max: f64,
}

/// A reparameterized batch of actions with what the reverse pass needs.
#[derive(Debug, Clone)]
pub struct PolicySample {
    /// Squashed actions in `[-1, 1]`.
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
    pre_tanh: Array2<f64>,
    std_noise: Array2<f64>,
    std: Array2<f64>,
    clamped: Array2<bool>,
    cache: Cache,
}

impl SquashedPolicy {
    pub fn new<R: Rng + ?Sized>(
        sizes_hidden: &[usize],
        obs_dim: usize,
        act_dim: usize,
        noisy: bool,
        sigma0: f64,
        log_std_range: (f64, f64),
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend(sizes_hidden);
        sizes.push(2 * act_dim);
        Self {
            trunk: Mlp::new(&sizes, noisy, sigma0, rng),
            act_dim,
            log_std_min: log_std_range.0,
            log_std_max: log_std_range.1,
        }
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    fn split(&self, out: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<bool>) {
        let d = self.act_dim;
        let mean = out.slice(s![.., ..d]).to_owned();
        let raw = out.slice(s![.., d..]);
        let clamped = raw.mapv(|v| v < self.log_std_min || v > self.log_std_max);
        let log_std = raw.mapv(|v| v.clamp(self.log_std_min, self.log_std_max));
        (mean, log_std, clamped)
    }

    /// Means and clamped log standard deviations for a batch.
    pub fn distribution(
        &self,
        obs: ArrayView2<f64>,
        noise_on: bool,
    ) -> Result<(Array2<f64>, Array2<f64>), NeuralError> {
        let out = self.trunk.predict(obs, noise_on)?;
        let (m, ls, _) = self.split(&out);
        Ok((m, ls))
    }

    /// Draws `a = tanh(mean + std * xi)` with `xi ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        obs: ArrayView2<f64>,
        noise_on: bool,
        rng: &mut R,
    ) -> Result<PolicySample, NeuralError> {
        let xi = Array2::from_shape_simple_fn((obs.nrows(), self.act_dim), || {
            rng.sample::<f64, _>(StandardNormal)
        });
        self.sample_with(obs, noise_on, xi)
    }

    /// As [`sample`](Self::sample) with the Gaussian draw supplied.
    pub fn sample_with(
        &self,
        obs: ArrayView2<f64>,
        noise_on: bool,
        std_noise: Array2<f64>,
    ) -> Result<PolicySample, NeuralError> {
        let (out, cache) = self.trunk.forward(obs, noise_on)?;
        let (mean, log_std, clamped) = self.split(&out);
        if std_noise.dim() != mean.dim() {
            return Err(NeuralError::Shape("noise shape does not match action batch".into()));
        }
        let std = log_std.mapv(f64::exp);
        let pre_tanh = &mean + &(&std * &std_noise);
        let actions = pre_tanh.mapv(f64::tanh);
        let mut log_prob = Array1::zeros(obs.nrows());
        for i in 0..obs.nrows() {
            let mut lp = 0.0;
            for j in 0..self.act_dim {
                let xi = std_noise[[i, j]];
                lp += -0.5 * xi * xi - log_std[[i, j]] - 0.5 * (2.0 * PI).ln()
                    - log_one_minus_tanh_sq(pre_tanh[[i, j]]);
            }
            log_prob[i] = lp;
        }
        Ok(PolicySample {
            actions,
            log_prob,
            pre_tanh,
            std_noise,
            std,
            clamped,
            cache,
        })
    }

    /// Deterministic action `tanh(mean)` for one observation.
    pub fn mean_action(&self, obs: &[f64], noise_on: bool) -> Result<Vec<f64>, NeuralError> {
        let out = self.trunk.predict_one(obs, noise_on)?;
        Ok(out[..self.act_dim].iter().map(|m| m.tanh()).collect())
    }

    /// Log-density of a squashed action with every component in `(-1, 1)`.
    pub fn log_prob(&self, obs: &[f64], action: &[f64], noise_on: bool) -> Result<f64, NeuralError> {
        if action.len() != self.act_dim {
            return Err(NeuralError::Dimension {
                expected: self.act_dim,
                got: action.len(),
            });
        }
        let view = ArrayView2::from_shape((1, obs.len()), obs)
            .map_err(|e| NeuralError::Shape(e.to_string()))?;
        let (mean, log_std) = self.distribution(view, noise_on)?;
        let mut lp = 0.0;
        for (j, &a) in action.iter().enumerate() {
            let u = a.atanh();
            let std = log_std[[0, j]].exp();
            let z = (u - mean[[0, j]]) / std;
            lp += -0.5 * z * z - log_std[[0, j]] - 0.5 * (2.0 * PI).ln() - log_one_minus_tanh_sq(u);
        }
        Ok(lp)
    }

    /// Reverse pass for a loss that depends on the sampled actions and their
    /// log-probabilities, given `dL/da` per action and `dL/dlogp` per row.
    pub fn backward(
        &self,
        sample: &PolicySample,
        dl_da: ArrayView2<f64>,
        dl_dlogp: ArrayView1<f64>,
    ) -> Result<Gradients, NeuralError> {
        let (n, d) = sample.actions.dim();
        if dl_da.dim() != (n, d) || dl_dlogp.len() != n {
            return Err(NeuralError::Shape("loss gradient does not match sample".into()));
        }
        let mut dy = Array2::zeros((n, 2 * d));
        for i in 0..n {
            for j in 0..d {
                let a = sample.actions[[i, j]];
                let u = sample.pre_tanh[[i, j]];
                // d log(1 - tanh^2 u)/du = -2 tanh u, entering logp with a minus sign
                let du = dl_da[[i, j]] * (1.0 - a * a) + dl_dlogp[i] * 2.0 * u.tanh();
                dy[[i, j]] = du;
                dy[[i, d + j]] = if sample.clamped[[i, j]] {
                    0.0
                } else {
                    du * sample.std[[i, j]] * sample.std_noise[[i, j]] - dl_dlogp[i]
                };
            }
        }
        let (grads, _) = self.trunk.backward(&sample.cache, dy.view())?;
        Ok(grads)
    }
}

/// Row-wise numerically stable softmax and log-softmax.
pub fn log_softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stable_log_det_matches_direct_form() {
        for &u in &[-3.0, -0.7, 0.0, 0.2, 1.5, 4.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log_one_minus_tanh_sq(u) - direct).abs() < 1e-12, "u={u}");
        }
        assert!(log_one_minus_tanh_sq(40.0).is_finite());
        assert!(log_one_minus_tanh_sq(-40.0).is_finite());
    }

    #[test]
    fn sampled_log_prob_matches_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pol = SquashedPolicy::new(&[8], 3, 2, false, 0.5, (-5.0, 2.0), &mut rng);
        let obs = Array2::from_shape_vec((4, 3), (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let smp = pol.sample(obs.view(), false, &mut rng).unwrap();
        for i in 0..4 {
            let o = obs.row(i).to_vec();
            let a = smp.actions.row(i).to_vec();
            let lp = pol.log_prob(&o, &a, false).unwrap();
            assert!((lp - smp.log_prob[i]).abs() < 1e-8);
        }
    }

    // One-dimensional squashed density integrates to one (midpoint rule on
    // a fine grid over (-1, 1)).
    #[test]
    fn density_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pol = SquashedPolicy::new(&[], 1, 1, false, 0.5, (-5.0, 2.0), &mut rng);
        pol.trunk.layers_mut()[0].nu_w.fill(0.0);
        for (mean, log_std) in [(0.3, -0.5), (-1.2, 0.4), (0.0, -1.5)] {
            pol.trunk.layers_mut()[0].nu_b[0] = mean;
            pol.trunk.layers_mut()[0].nu_b[1] = log_std;
            let n = 200_000;
            let h = 2.0 / n as f64;
            let mut total = 0.0;
            for k in 0..n {
                let a = -1.0 + (k as f64 + 0.5) * h;
                total += pol.log_prob(&[0.0], &[a], false).unwrap().exp() * h;
            }
            assert!((total - 1.0).abs() < 1e-3, "mean={mean} ls={log_std} total={total}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut pol = SquashedPolicy::new(&[6], 3, 2, true, 0.5, (-5.0, 2.0), &mut rng);
        pol.trunk.resample_noise(&mut rng);
        let obs = Array2::from_shape_simple_fn((5, 3), || rng.gen_range(-1.0..1.0));
        let xi = Array2::from_shape_simple_fn((5, 2), || rng.sample::<f64, _>(StandardNormal));
        let wa = Array2::from_shape_simple_fn((5, 2), || rng.gen_range(-1.0..1.0));
        let wl = 0.3;
        let loss = |p: &SquashedPolicy| {
            let s = p.sample_with(obs.view(), true, xi.clone()).unwrap();
            (&s.actions * &wa).sum() + wl * s.log_prob.sum()
        };
        let smp = pol.sample_with(obs.view(), true, xi.clone()).unwrap();
        let g = pol
            .backward(&smp, wa.view(), Array1::from_elem(5, wl).view())
            .unwrap();
        let analytic: Vec<Vec<f64>> = g.slices().iter().map(|s| s.to_vec()).collect();
        let h = 1e-6;
        let mut probe = pol.clone();
        for (b, block) in analytic.iter().enumerate() {
            for (i, &ga) in block.iter().enumerate() {
                let orig = probe.trunk.param_slices()[b][i];
                probe.trunk.param_slices_mut()[b][i] = orig + h;
                let up = loss(&probe);
                probe.trunk.param_slices_mut()[b][i] = orig - h;
                let down = loss(&probe);
                probe.trunk.param_slices_mut()[b][i] = orig;
                let num = (up - down) / (2.0 * h);
                assert!(
                    crate::neural::relative_error(ga, num) < 1e-5,
                    "block {b} elem {i}: {ga} vs {num}"
                );
            }
        }
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let z = ndarray::arr2(&[[1000.0, 1001.0, 999.0], [0.0, 0.0, 0.0]]);
        let l = log_softmax(z.view());
        for row in l.rows() {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
