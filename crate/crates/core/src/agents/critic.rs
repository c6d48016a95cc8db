use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{Adam, Mlp, NeuralError};

/// Online critic with a slowly tracking target copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub online: Mlp,
    pub target: Mlp,
    pub opt: Adam,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], noisy: bool, sigma0: f64, lr: f64, rng: &mut R) -> Self {
        let online = Mlp::new(sizes, noisy, sigma0, rng);
        Self {
            target: online.clone(),
            online,
            opt: Adam::new(lr),
        }
    }

    /// One gradient step on `0.5 * mean((Q - y)^2)`. With `columns`, row `i`
    /// regresses output `columns[i]` only; otherwise the single output.
    pub fn regress(
        &mut self,
        x: ArrayView2<f64>,
        y: &Array1<f64>,
        columns: Option<&[usize]>,
        noise_on: bool,
    ) -> Result<f64, NeuralError> {
        let (q, cache) = self.online.forward(x, noise_on)?;
        let n = x.nrows() as f64;
        let mut dq = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for i in 0..x.nrows() {
            let c = columns.map_or(0, |cols| cols[i]);
            let d = q[[i, c]] - y[i];
            loss += 0.5 * d * d / n;
            dq[[i, c]] = d / n;
        }
        let (g, _) = self.online.backward(&cache, dq.view())?;
        self.online.apply_gradients(&g, &mut self.opt)?;
        Ok(loss)
    }

    pub fn soft_update(&mut self, tau: f64) {
        self.target.soft_update_from(&self.online, tau);
    }
}

/// One or two critics. With two, every value estimate is the elementwise
/// minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticSet {
    pub q1: Critic,
    pub q2: Option<Critic>,
}

impl CriticSet {
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        twin: bool,
        noisy: bool,
        sigma0: f64,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        let q1 = Critic::new(sizes, noisy, sigma0, lr, rng);
        let q2 = twin.then(|| Critic::new(sizes, noisy, sigma0, lr, rng));
        Self { q1, q2 }
    }

    pub fn is_twin(&self) -> bool {
        self.q2.is_some()
    }

    /// Elementwise minimum over the target networks, noise off.
    pub fn min_target(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NeuralError> {
        let mut q = self.q1.target.predict(x, false)?;
        if let Some(c2) = &self.q2 {
            let q2 = c2.target.predict(x, false)?;
            Zip::from(&mut q).and(&q2).for_each(|a, &b| *a = a.min(b));
        }
        Ok(q)
    }

    /// Elementwise minimum over the online networks.
    pub fn min_online(&self, x: ArrayView2<f64>, noise_on: bool) -> Result<Array2<f64>, NeuralError> {
        let mut q = self.q1.online.predict(x, noise_on)?;
        if let Some(c2) = &self.q2 {
            let q2 = c2.online.predict(x, noise_on)?;
            Zip::from(&mut q).and(&q2).for_each(|a, &b| *a = a.min(b));
        }
        Ok(q)
    }

    /// Regresses every critic to `y`; returns the per-critic losses.
    pub fn regress(
        &mut self,
        x: ArrayView2<f64>,
        y: &Array1<f64>,
        columns: Option<&[usize]>,
        noise_on: bool,
    ) -> Result<(f64, Option<f64>), NeuralError> {
        let l1 = self.q1.regress(x, y, columns, noise_on)?;
        let l2 = match &mut self.q2 {
            Some(c) => Some(c.regress(x, y, columns, noise_on)?),
            None => None,
        };
        Ok((l1, l2))
    }

    pub fn soft_update(&mut self, tau: f64) {
        self.q1.soft_update(tau);
        if let Some(c) = &mut self.q2 {
            c.soft_update(tau);
        }
    }

    pub fn resample_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.q1.online.resample_noise(rng);
        if let Some(c) = &mut self.q2 {
            c.online.resample_noise(rng);
        }
    }

    /// Minimum of the online critics at single-output rows `x`, and
    /// `d min / d x` routed through whichever critic attains it.
    pub fn min_online_input_grad(
        &self,
        x: ArrayView2<f64>,
        noise_on: bool,
    ) -> Result<(Array1<f64>, Array2<f64>), NeuralError> {
        let (q1, c1) = self.q1.online.forward(x, noise_on)?;
        let n = x.nrows();
        match &self.q2 {
            None => {
                let (_, dx) = self.q1.online.backward(&c1, Array2::ones((n, 1)).view())?;
                Ok((q1.column(0).to_owned(), dx))
            }
            Some(c2) => {
                let (q2, cache2) = c2.online.forward(x, noise_on)?;
                let mut pick1 = Array2::zeros((n, 1));
                let mut pick2 = Array2::zeros((n, 1));
                let mut qmin = Array1::zeros(n);
                for i in 0..n {
                    if q1[[i, 0]] <= q2[[i, 0]] {
                        pick1[[i, 0]] = 1.0;
                        qmin[i] = q1[[i, 0]];
                    } else {
                        pick2[[i, 0]] = 1.0;
                        qmin[i] = q2[[i, 0]];
                    }
                }
                let (_, dx1) = self.q1.online.backward(&c1, pick1.view())?;
                let (_, dx2) = c2.online.backward(&cache2, pick2.view())?;
                Ok((qmin, dx1 + dx2))
            }
        }
    }
}
