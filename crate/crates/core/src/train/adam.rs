use std::collections::BTreeMap;

use crate::Real;

/// Adam with bias correction. Moments are kept per parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        Some((self.m.get(name)?, self.v.get(name)?))
    }

    /// Advances the step counter; call once per optimizer step, before the
    /// per-parameter updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Updates one parameter in place. `Err` carries nothing: the caller
    /// knows which parameter it passed.
    pub fn update(&mut self, name: &str, param: &mut [T], grad: &[T]) -> Result<(), ()> {
        assert!(self.t > 0, "begin_step must precede update");
        assert_eq!(param.len(), grad.len(), "{name}: gradient length");
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(());
        }
        let m = self.m.entry(name.to_string()).or_insert_with(|| vec![T::zero(); param.len()]);
        let v = self.v.entry(name.to_string()).or_insert_with(|| vec![T::zero(); param.len()]);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
