use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::DenseLayer;
use super::optim::Adam;
use super::NeuralError;

/// Feed-forward network: tanh on hidden layers, identity on the output.
/// Equality compares parameters and noise only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    // Bumped whenever parameters or noise change; a forward cache is only
    // valid for the generation that produced it.
    #[serde(skip)]
    generation: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations retained by [`Mlp::forward`] for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Array2<f64>>,
    noise_on: bool,
    generation: u64,
}

/// Parameter gradients of one layer. Noise-scale gradients are present
/// exactly when the layer is noisy (zero if the pass ran with noise off).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub nu_w: Array2<f64>,
    pub nu_b: Array1<f64>,
    pub sigma_w: Option<Array2<f64>>,
    pub sigma_b: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrad {
                    nu_w: Array2::zeros(l.nu_w.raw_dim()),
                    nu_b: Array1::zeros(l.nu_b.raw_dim()),
                    sigma_w: l.noise.as_ref().map(|n| Array2::zeros(n.sigma_w.raw_dim())),
                    sigma_b: l.noise.as_ref().map(|n| Array1::zeros(n.sigma_b.raw_dim())),
                })
                .collect(),
        }
    }

    /// Flattened views, in the same order as [`Mlp::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        for g in &self.layers {
            v.push(g.nu_w.as_slice().expect("standard layout"));
            v.push(g.nu_b.as_slice().expect("standard layout"));
            if let (Some(sw), Some(sb)) = (&g.sigma_w, &g.sigma_b) {
                v.push(sw.as_slice().expect("standard layout"));
                v.push(sb.as_slice().expect("standard layout"));
            }
        }
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        for g in &mut self.layers {
            v.push(g.nu_w.as_slice_mut().expect("standard layout"));
            v.push(g.nu_b.as_slice_mut().expect("standard layout"));
            if let (Some(sw), Some(sb)) = (&mut g.sigma_w, &mut g.sigma_b) {
                v.push(sw.as_slice_mut().expect("standard layout"));
                v.push(sb.as_slice_mut().expect("standard layout"));
            }
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Mlp {
    /// Builds a network with layer widths `sizes` (input first, output last).
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], noisy: bool, sigma0: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                if noisy {
                    DenseLayer::noisy(w[0], w[1], sigma0, rng)
                } else {
                    DenseLayer::plain(w[0], w[1], rng)
                }
            })
            .collect();
        Self::from_layers(layers).expect("sizes chain by construction")
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NeuralError> {
        if layers.is_empty() {
            return Err(NeuralError::Shape("network has no layers".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].outputs() != w[1].inputs() {
                return Err(NeuralError::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].outputs(),
                    i + 1,
                    w[1].inputs()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.nu_b.len() != l.outputs() {
                return Err(NeuralError::Shape(format!("layer {i} bias length")));
            }
            if let Some(n) = &l.noise {
                if n.sigma_w.dim() != l.nu_w.dim()
                    || n.eps_w.dim() != l.nu_w.dim()
                    || n.sigma_b.len() != l.outputs()
                    || n.eps_b.len() != l.outputs()
                {
                    return Err(NeuralError::Shape(format!("layer {i} noise shapes")));
                }
            }
        }
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn is_noisy(&self) -> bool {
        self.layers.iter().any(DenseLayer::is_noisy)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.param_slices()).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| l.param_slices_mut())
            .collect()
    }

    /// Redraws every noise entry i.i.d. standard normal. No-op for plain nets.
    pub fn resample_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.is_noisy() {
            self.generation += 1;
            for l in &mut self.layers {
                l.resample_noise(rng);
            }
        }
    }

    /// Batched forward pass over rows of `x`.
    pub fn forward(&self, x: ArrayView2<f64>, noise_on: bool) -> Result<(Array2<f64>, Cache), NeuralError> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.as_standard_layout().into_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(h.view(), noise_on);
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            inputs.push(h);
            h = z;
        }
        Ok((
            h,
            Cache {
                inputs,
                noise_on,
                generation: self.generation,
            },
        ))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, x: ArrayView2<f64>, noise_on: bool) -> Result<Array2<f64>, NeuralError> {
        self.check_input(x.ncols())?;
        let mut h = x.as_standard_layout().into_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(h.view(), noise_on);
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        Ok(h)
    }

    pub fn predict_one(&self, x: &[f64], noise_on: bool) -> Result<Vec<f64>, NeuralError> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| NeuralError::Shape(e.to_string()))?;
        Ok(self.predict(view, noise_on)?.into_raw_vec_and_offset().0)
    }

    fn check_input(&self, got: usize) -> Result<(), NeuralError> {
        if got != self.input_dim() {
            return Err(NeuralError::Dimension {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    /// Reverse pass. Returns parameter gradients and the gradient with
    /// respect to the network input.
    pub fn backward(&self, cache: &Cache, dl_dy: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>), NeuralError> {
        if cache.generation != self.generation || cache.inputs.len() != self.layers.len() {
            return Err(NeuralError::StaleCache);
        }
        if dl_dy.ncols() != self.output_dim() || dl_dy.nrows() != cache.inputs[0].nrows() {
            return Err(NeuralError::Dimension {
                expected: self.output_dim(),
                got: dl_dy.ncols(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = dl_dy.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let mut d_w = g.t().dot(x);
            if !d_w.is_standard_layout() {
                d_w = d_w.as_standard_layout().into_owned();
            }
            let d_b = g.sum_axis(Axis(0));
            let (sigma_w, sigma_b) = match &layer.noise {
                Some(n) if cache.noise_on => (Some(&d_w * &n.eps_w), Some(&d_b * &n.eps_b)),
                Some(n) => (
                    Some(Array2::zeros(n.sigma_w.raw_dim())),
                    Some(Array1::zeros(n.sigma_b.raw_dim())),
                ),
                None => (None, None),
            };
            let (w, _) = layer.effective(cache.noise_on);
            let mut dx = g.dot(&w);
            if i > 0 {
                // x is the tanh output of the previous layer
                dx.zip_mut_with(x, |d, &a| *d *= 1.0 - a * a);
            }
            grads.push(LayerGrad {
                nu_w: d_w,
                nu_b: d_b,
                sigma_w,
                sigma_b,
            });
            g = dx;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, g))
    }

    /// One optimizer step. Rejects non-finite gradients without touching
    /// any parameter.
    pub fn apply_gradients(&mut self, grads: &Gradients, opt: &mut Adam) -> Result<(), NeuralError> {
        let g = grads.slices();
        opt.step(self.param_slices_mut(), &g)
    }

    /// `self = tau * online + (1 - tau) * self`, for every mean and scale.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        let src = online.param_slices();
        for (dst, src) in self.param_slices_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NeuralError> {
        let file = NetworkFile {
            format: NETWORK_FORMAT.into(),
            version: NETWORK_VERSION,
            network: self.clone(),
        };
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NeuralError> {
        let file: NetworkFile = serde_json::from_slice(&fs::read(path)?)?;
        if file.format != NETWORK_FORMAT || file.version != NETWORK_VERSION {
            return Err(NeuralError::Checkpoint(format!(
                "unsupported network file {} v{}",
                file.format, file.version
            )));
        }
        Mlp::from_layers(file.network.layers)
    }
}

const NETWORK_FORMAT: &str = "cbatt-mlp";
const NETWORK_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    format: String,
    version: u32,
    network: Mlp,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = Mlp::new(&[3, 4, 2], false, 0.5, &mut rng());
        let x = Array2::zeros((2, 4));
        assert!(matches!(
            net.forward(x.view(), false),
            Err(NeuralError::Dimension { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn rejects_mismatched_layers() {
        let mut r = rng();
        let a = DenseLayer::plain(3, 4, &mut r);
        let b = DenseLayer::plain(5, 1, &mut r);
        assert!(Mlp::from_layers(vec![a, b]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng();
        let mut net = Mlp::new(&[3, 5, 2], true, 0.5, &mut r);
        net.resample_noise(&mut r);
        let x = array![[0.1, 0.2, -0.3], [1.0, 0.0, 0.5]];
        let (_, cache) = net.forward(x.view(), true).unwrap();
        let (g, dx) = net.backward(&cache, Array2::zeros((2, 2)).view()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_linear_gradient() {
        let layer = DenseLayer {
            nu_w: array![[1.5]],
            nu_b: array![0.2],
            noise: None,
        };
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let x = array![[3.0]];
        let (_, cache) = net.forward(x.view(), false).unwrap();
        let (g, dx) = net.backward(&cache, array![[2.0]].view()).unwrap();
        assert_eq!(g.layers[0].nu_w[[0, 0]], 2.0 * 3.0);
        assert_eq!(g.layers[0].nu_b[0], 2.0);
        assert_eq!(dx[[0, 0]], 2.0 * 1.5);
    }

    #[test]
    fn stale_cache_detected() {
        let mut r = rng();
        let mut net = Mlp::new(&[2, 3, 1], true, 0.5, &mut r);
        let x = array![[0.5, -0.5]];
        let (_, cache) = net.forward(x.view(), true).unwrap();
        net.resample_noise(&mut r);
        assert!(matches!(
            net.backward(&cache, array![[1.0]].view()),
            Err(NeuralError::StaleCache)
        ));
    }

    #[test]
    fn soft_update_is_convex_combination() {
        let mut r = rng();
        let online = Mlp::new(&[2, 3, 1], true, 0.5, &mut r);
        let mut target = Mlp::new(&[2, 3, 1], true, 0.5, &mut r);
        let before = target.clone();
        target.soft_update_from(&online, 0.25);
        for ((t, b), o) in target
            .param_slices()
            .iter()
            .zip(before.param_slices())
            .zip(online.param_slices())
        {
            for ((&t, &b), &o) in t.iter().zip(b).zip(o) {
                assert_eq!(t, 0.25 * o + 0.75 * b);
            }
        }
    }

    #[test]
    fn resample_is_seeded() {
        let base = Mlp::new(&[4, 6, 2], true, 0.5, &mut rng());
        let mut a = base.clone();
        let mut b = base.clone();
        a.resample_noise(&mut ChaCha8Rng::seed_from_u64(5));
        b.resample_noise(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a.layers, b.layers);
        let mut plain = Mlp::new(&[4, 6, 2], false, 0.5, &mut rng());
        let snapshot = plain.clone();
        plain.resample_noise(&mut rng());
        assert_eq!(plain.layers, snapshot.layers);
    }

    #[test]
    fn noise_is_standard_normal() {
        let mut r = rng();
        let mut net = Mlp::new(&[100, 1000], true, 0.5, &mut r);
        net.resample_noise(&mut r);
        let eps = &net.layers()[0].noise.as_ref().unwrap().eps_w;
        let n = eps.len() as f64;
        let mean = eps.sum() / n;
        let var = eps.mapv(|e| (e - mean).powi(2)).sum() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn checkpoint_round_trips_bits() {
        let mut r = rng();
        let mut net = Mlp::new(&[7, 16, 16, 3], true, 0.5, &mut r);
        net.resample_noise(&mut r);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        let back = Mlp::load(&path).unwrap();
        for (a, b) in net.param_slices().iter().zip(back.param_slices()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(back.layers, net.layers);
    }
}
