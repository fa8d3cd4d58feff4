use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Linear warmup followed by cosine decay to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        LrSchedule {
            base,
            warmup_steps: (warmup_fraction * total_steps as f64).round() as usize,
            total_steps,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        0.5 * self.base * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
    }
}

/// Per-tensor update settings; `None` leaves the tensor untouched.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Update {
    pub lr_scale: f64,
    pub weight_decay: f64,
}

/// SGD with heavy-ball momentum: `v = mu v + g + wd w`, `w -= lr v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
    steps: usize,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(store: &ParamStore<T>, momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: store.iter().map(|(_, _, t)| vec![T::zero(); t.numel()]).collect(),
            steps: 0,
        }
    }

    /// Number of calls to [`Sgd::step`].
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Vec<T>], lr: f64, updates: &[Option<Update>]) {
        let mu = T::lit(self.momentum);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(u) = updates[i] else { continue };
            let (rate, wd) = (T::lit(lr * u.lr_scale), T::lit(u.weight_decay));
            let w = store.get_mut(id).data_mut();
            for ((wv, &g), v) in w.iter_mut().zip(&grads[i]).zip(&mut self.velocity[i]) {
                *v = mu * *v + g + wd * *wv;
                *wv -= rate * *v;
            }
        }
        self.steps += 1;
    }
}

/// Weight decay applies to convolution and dense kernels only.
pub fn default_updates<T: Scalar>(store: &ParamStore<T>, weight_decay: f64) -> Vec<Option<Update>> {
    store
        .iter()
        .map(|(_, _, t)| {
            Some(Update {
                lr_scale: 1.0,
                weight_decay: if t.shape().len() >= 2 { weight_decay } else { 0.0 },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::new(1.0, 0.1, 100);
        assert_eq!(s.at(0), 0.1);
        assert_eq!(s.at(9), 1.0);
        assert!((s.at(10) - 1.0).abs() < 1e-15);
        assert!(s.at(99) < 0.01);
        assert!(s.at(55) < s.at(30));
    }

    #[test]
    fn momentum_step() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::full(&[1], 1.0));
        let mut opt = Sgd::new(&store, 0.5);
        let up = vec![Some(Update { lr_scale: 1.0, weight_decay: 0.0 })];
        opt.step(&mut store, &[vec![1.0]], 0.1, &up);
        assert!((store.get(crate::params::ParamId(0)).item() - 0.9).abs() < 1e-15);
        opt.step(&mut store, &[vec![1.0]], 0.1, &up);
        assert!((store.get(crate::params::ParamId(0)).item() - 0.75).abs() < 1e-15);
        assert_eq!(opt.steps(), 2);
    }
}
