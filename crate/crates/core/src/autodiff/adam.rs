use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are allocated lazily per
/// parameter, in the store's canonical order.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Option<Tensor>>,
    pub second_moment: Vec<Option<Tensor>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        AdamState {
            config,
            step: 0,
            first_moment: vec![None; store.len()],
            second_moment: vec![None; store.len()],
        }
    }

    /// One update over `ids`. Every listed parameter must hold a gradient;
    /// gradients of the listed parameters are cleared afterwards.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            if store.get(id).grad.is_none() {
                return Err(Error::MissingGrad(store.get(id).name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for &id in ids {
            let p = store.get_mut(id);
            let grad = p.grad.take().expect("checked above");
            let shape = p.value.shape().to_vec();
            let m = self.first_moment[id.index()].get_or_insert_with(|| Tensor::zeros(&shape));
            let v = self.second_moment[id.index()].get_or_insert_with(|| Tensor::zeros(&shape));
            let values = p.value.data_mut();
            for (k, g) in grad.data().iter().enumerate() {
                let mk = &mut m.data_mut()[k];
                *mk = beta1 * *mk + (1.0 - beta1) * g;
                let vk = &mut v.data_mut()[k];
                *vk = beta2 * *vk + (1.0 - beta2) * g * g;
                let m_hat = m.data()[k] / bc1;
                let v_hat = v.data()[k] / bc2;
                values[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::scalar(w));
        (store, id)
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let (mut store, id) = scalar_store(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        store.accumulate(id, &[3.0]);
        adam.step(&mut store, &[id]).unwrap();
        let moved = store.value(id).item() - 1.0;
        assert!((moved + 0.0005).abs() < 1e-9, "moved {moved}");
        assert!(store.get(id).grad.is_none());
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let (mut store, id) = scalar_store(2.5);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        store.accumulate(id, &[0.0]);
        adam.step(&mut store, &[id]).unwrap();
        assert_eq!(store.value(id).item(), 2.5);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        let err = adam.step(&mut store, &[id]).unwrap_err();
        assert!(matches!(err, Error::MissingGrad(name) if name == "w"));
        assert_eq!(adam.step, 0);
    }

    /// Independent scalar Adam written out longhand.
    fn reference_adam(w0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * (w - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn quadratic_converges_and_matches_reference() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = AdamState::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..100 {
            let w = store.value(id).item();
            store.accumulate(id, &[2.0 * (w - 3.0)]);
            adam.step(&mut store, &[id]).unwrap();
        }
        let w = store.value(id).item();
        assert!((w - 3.0).abs() < 0.5, "w = {w}");
        assert!((w - reference_adam(0.0, 0.1, 100)).abs() < 1e-12);
    }
}
