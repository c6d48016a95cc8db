use ndarray::{Array1, Array2};
use rand::Rng;

/// Replay record in feature space: normalized observations and the squashed
/// action vector the agent emitted (a single action index for discrete
/// agents).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// A sampled minibatch laid out row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub act: Array2<f64>,
    pub rew: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub done: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rew.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rew.is_empty()
    }

    pub fn from_transitions(items: &[&Transition]) -> Self {
        let n = items.len();
        let od = items.first().map_or(0, |t| t.s.len());
        let ad = items.first().map_or(0, |t| t.a.len());
        let mut b = Batch {
            obs: Array2::zeros((n, od)),
            act: Array2::zeros((n, ad)),
            rew: Array1::zeros(n),
            next_obs: Array2::zeros((n, od)),
            done: Array1::zeros(n),
        };
        for (i, t) in items.iter().enumerate() {
            b.obs.row_mut(i).assign(&ndarray::aview1(&t.s));
            b.act.row_mut(i).assign(&ndarray::aview1(&t.a));
            b.next_obs.row_mut(i).assign(&ndarray::aview1(&t.s_next));
            b.rew[i] = t.r;
            b.done[i] = if t.done { 1.0 } else { 0.0 };
        }
        b
    }
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Batch {
        let picks: Vec<&Transition> = self
            .sample_indices(n, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect();
        Batch::from_transitions(&picks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(r: f64) -> Transition {
        Transition {
            s: vec![r, 0.0],
            a: vec![0.5],
            r,
            s_next: vec![r + 1.0, 0.0],
            done: r > 5.0,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(t(i as f64));
        }
        assert_eq!(b.len(), 3);
        let rs: Vec<f64> = (0..3).map(|i| b.get(i).r).collect();
        assert_eq!(rs, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn batch_layout() {
        let mut b = ReplayBuffer::new(10);
        b.push(t(7.0));
        let batch = b.sample(4, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(batch.obs.dim(), (4, 2));
        assert_eq!(batch.act.dim(), (4, 1));
        assert!(batch.done.iter().all(|&d| d == 1.0));
        assert!(batch.next_obs.column(0).iter().all(|&v| v == 8.0));
    }

    #[test]
    fn sampling_is_uniform() {
        let n = 50;
        let mut b = ReplayBuffer::new(n);
        for i in 0..n {
            b.push(t(i as f64));
        }
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in b.sample_indices(draws, &mut rng) {
            counts[i] += 1;
        }
        let p = 1.0 / n as f64;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 5.0 * sd, "count {c} vs {mean}");
        }
    }
}
