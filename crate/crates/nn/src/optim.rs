use crate::store::{EntryKind, ParamStore};
use crate::{Grads, Real, Tensor};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Option<Tensor<S>>>,
    second: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every trainable parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Grads<S>) {
        self.step += 1;
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (S::from_f64_lossy(self.beta1), S::from_f64_lossy(self.beta2));
        let step_size = S::from_f64_lossy(self.lr / c1);
        let c2_sqrt = S::from_f64_lossy(c2.sqrt());
        let eps = S::from_f64_lossy(self.eps);
        let ids: Vec<_> = store.param_ids().collect();
        for id in ids {
            debug_assert_eq!(store.entry(id).kind, EntryKind::Param);
            let Some(g) = grads.get(id) else { continue };
            let m = self.first[id.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second[id.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let p = store.get_mut(id).data_mut();
            for (((p, &g), m), v) in p
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                *p -= step_size * *m / ((*v).sqrt() / c2_sqrt + eps);
            }
        }
    }
}
