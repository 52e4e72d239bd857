use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplier applied to the learning rate at the end of every epoch.
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let shapes: Vec<usize> = store.ids().map(|id| store.value(id).len()).collect();
        Self {
            config,
            lr: config.lr,
            step: 0,
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn end_epoch(&mut self) {
        self.lr *= self.config.decay;
    }
}

/// One bias-corrected Adam update from the store's gradient slots. A
/// non-finite gradient aborts before any parameter is touched.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    for id in store.ids() {
        if store.grad(id).data().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(store.name(id).to_string()));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let g = store.grad(id).data().to_vec();
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let w = store.value_mut(id).data_mut();
        for i in 0..g.len() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= state.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Init;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = ParamStore::new(0);
        let id = s.add("w", &[3], Init::Zeros).unwrap();
        s.grad_mut(id).data_mut().copy_from_slice(&[2.0, -0.5, 0.0]);
        let mut st = AdamState::new(AdamConfig::default(), &s);
        adam_step(&mut s, &mut st).unwrap();
        let w = s.value(id).data();
        assert!((w[0] + 1e-3).abs() < 1e-9);
        assert!((w[1] - 1e-3).abs() < 1e-9);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = ParamStore::new(0);
        let id = s.add("w", &[2], Init::Zeros).unwrap();
        let mut st = AdamState::new(
            AdamConfig {
                lr: 0.05,
                decay: 1.0,
                ..AdamConfig::default()
            },
            &s,
        );
        for _ in 0..2000 {
            let w = s.value(id).data().to_vec();
            s.grad_mut(id).data_mut().copy_from_slice(&[2.0 * (w[0] - 3.0), 2.0 * (w[1] + 1.0)]);
            adam_step(&mut s, &mut st).unwrap();
        }
        let w = s.value(id).data();
        assert!((w[0] - 3.0).abs() < 1e-3 && (w[1] + 1.0).abs() < 1e-3, "{w:?}");
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let mut s = ParamStore::new(0);
        let a = s.add("a", &[1], Init::Zeros).unwrap();
        let b = s.add("b", &[1], Init::Zeros).unwrap();
        s.grad_mut(a).data_mut()[0] = 1.0;
        s.grad_mut(b).data_mut()[0] = f64::NAN;
        let mut st = AdamState::new(AdamConfig::default(), &s);
        match adam_step(&mut s, &mut st) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "b"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.value(a).data()[0], 0.0);
        assert_eq!(st.steps(), 0);
    }

    #[test]
    fn decay_shrinks_lr() {
        let s = ParamStore::new(0);
        let mut st = AdamState::new(AdamConfig::default(), &s);
        st.end_epoch();
        st.end_epoch();
        assert!((st.lr() - 1e-3 * 0.81).abs() < 1e-15);
    }
}
