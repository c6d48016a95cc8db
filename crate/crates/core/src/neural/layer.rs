use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

/// Learnable noise scales and the most recently drawn noise of a noisy layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma_w: Array2<f64>,
    pub sigma_b: Array1<f64>,
    pub eps_w: Array2<f64>,
    pub eps_b: Array1<f64>,
}

/// Affine layer `y = W x + b`, optionally with parameter noise
/// `W = nu_w + sigma_w * eps_w`, `b = nu_b + sigma_b * eps_b`.
///
/// Weights are stored `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub nu_w: Array2<f64>,
    pub nu_b: Array1<f64>,
    pub noise: Option<NoiseParams>,
}

impl DenseLayer {
    /// Means uniform in `±1/sqrt(fan_in)`, biases likewise.
    pub fn plain<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound);
        Self {
            nu_w: Array2::from_shape_simple_fn((outputs, inputs), || u.sample(rng)),
            nu_b: Array1::from_shape_simple_fn(outputs, || u.sample(rng)),
            noise: None,
        }
    }

    /// Plain initialization plus constant scales `sigma0 / sqrt(fan_in)` and
    /// zero noise (call [`DenseLayer::resample_noise`] before use).
    pub fn noisy<R: Rng + ?Sized>(inputs: usize, outputs: usize, sigma0: f64, rng: &mut R) -> Self {
        let mut layer = Self::plain(inputs, outputs, rng);
        let s = sigma0 / (inputs as f64).sqrt();
        layer.noise = Some(NoiseParams {
            sigma_w: Array2::from_elem((outputs, inputs), s),
            sigma_b: Array1::from_elem(outputs, s),
            eps_w: Array2::zeros((outputs, inputs)),
            eps_b: Array1::zeros(outputs),
        });
        layer
    }

    pub fn inputs(&self) -> usize {
        self.nu_w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.nu_w.nrows()
    }

    pub fn is_noisy(&self) -> bool {
        self.noise.is_some()
    }

    pub fn param_count(&self) -> usize {
        let base = self.nu_w.len() + self.nu_b.len();
        if self.is_noisy() {
            2 * base
        } else {
            base
        }
    }

    pub fn resample_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if let Some(n) = self.noise.as_mut() {
            n.eps_w.mapv_inplace(|_| StandardNormal.sample(rng));
            n.eps_b.mapv_inplace(|_| StandardNormal.sample(rng));
        }
    }

    /// Effective weights and bias for this pass.
    pub fn effective(&self, noise_on: bool) -> (Array2<f64>, Array1<f64>) {
        match (&self.noise, noise_on) {
            (Some(n), true) => (
                &self.nu_w + &(&n.sigma_w * &n.eps_w),
                &self.nu_b + &(&n.sigma_b * &n.eps_b),
            ),
            _ => (self.nu_w.clone(), self.nu_b.clone()),
        }
    }

    /// Pre-activation output for a batch laid out `(batch, inputs)`.
    pub fn forward(&self, x: ArrayView2<f64>, noise_on: bool) -> Array2<f64> {
        let (w, b) = self.effective(noise_on);
        let mut y = x.dot(&w.t());
        y += &b.insert_axis(Axis(0));
        y
    }

    pub(crate) fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = vec![
            self.nu_w.as_slice().expect("standard layout"),
            self.nu_b.as_slice().expect("standard layout"),
        ];
        if let Some(n) = &self.noise {
            v.push(n.sigma_w.as_slice().expect("standard layout"));
            v.push(n.sigma_b.as_slice().expect("standard layout"));
        }
        v
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            self.nu_w.as_slice_mut().expect("standard layout"),
            self.nu_b.as_slice_mut().expect("standard layout"),
        ];
        if let Some(n) = &mut self.noise {
            v.push(n.sigma_w.as_slice_mut().expect("standard layout"));
            v.push(n.sigma_b.as_slice_mut().expect("standard layout"));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer() {
        let l = DenseLayer {
            nu_w: Array2::eye(2),
            nu_b: Array1::zeros(2),
            noise: None,
        };
        let y = l.forward(array![[1.0, 2.0]].view(), true);
        assert_eq!(y, array![[1.0, 2.0]]);
    }

    #[test]
    fn scalar_noisy_layer() {
        let l = DenseLayer {
            nu_w: array![[2.0]],
            nu_b: array![0.0],
            noise: Some(NoiseParams {
                sigma_w: array![[0.5]],
                sigma_b: array![0.0],
                eps_w: array![[1.0]],
                eps_b: array![0.0],
            }),
        };
        assert_eq!(l.forward(array![[3.0]].view(), true), array![[7.5]]);
        assert_eq!(l.forward(array![[3.0]].view(), false), array![[6.0]]);
    }

    #[test]
    fn noisy_has_twice_the_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = DenseLayer::plain(7, 5, &mut rng);
        let n = DenseLayer::noisy(7, 5, 0.5, &mut rng);
        assert_eq!(p.param_count(), 40);
        assert_eq!(n.param_count(), 2 * p.param_count());
        let bound = 1.0 / 7f64.sqrt();
        assert!(p.nu_w.iter().all(|w| w.abs() <= bound));
        assert!(n
            .noise
            .as_ref()
            .unwrap()
            .sigma_w
            .iter()
            .all(|&s| (s - 0.5 * bound).abs() < 1e-15));
    }

    #[test]
    fn zero_sigma_collapses_for_any_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut l = DenseLayer::noisy(3, 4, 0.0, &mut rng);
        l.resample_noise(&mut rng);
        let x = array![[0.3, -1.0, 2.0]];
        assert_eq!(l.forward(x.view(), true), l.forward(x.view(), false));
    }
}
