use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tensor::{Param, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates and the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<R> {
    pub step: u64,
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
}

impl<R: Real> AdamState<R> {
    pub fn new(params: &[Param<R>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<R: Real>(
    params: &mut [Param<R>],
    grads: &[Tensor<R>],
    state: &mut AdamState<R>,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim(format!(
            "{} params, {} grads, {}/{} moments",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.tensor.shape() != g.shape() {
            return Err(Error::dim(format!(
                "gradient {:?} for `{}` {:?}",
                g.shape(),
                p.name,
                p.tensor.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = R::from_f64_lossy(cfg.beta1);
    let b2 = R::from_f64_lossy(cfg.beta2);
    let one = R::one();
    let c1 = R::from_f64_lossy(1.0 - cfg.beta1.powi(t));
    let c2 = R::from_f64_lossy(1.0 - cfg.beta2.powi(t));
    let lr = R::from_f64_lossy(cfg.learning_rate);
    let eps = R::from_f64_lossy(cfg.epsilon);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let theta = p.tensor.data_mut();
        for (((th, &gi), mi), vi) in theta
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *th = *th - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(vals: Vec<f64>) -> Param<f64> {
        Param {
            name: "w".into(),
            tensor: Tensor::from_vec(&[vals.len()], vals).unwrap(),
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = vec![param(vec![1.0, -2.0])];
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &[Tensor::zeros(&[2])], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(ps[0].tensor.data(), &[1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut ps = vec![param(vec![1.0])];
        let mut st = AdamState::new(&ps);
        st.m[0].data_mut()[0] = 0.5;
        st.v[0].data_mut()[0] = 0.25;
        adam_step(&mut ps, &[Tensor::zeros(&[1])], &mut st, &AdamConfig::default()).unwrap();
        assert!((st.m[0].data()[0] - 0.45).abs() < 1e-15);
        assert!((st.v[0].data()[0] - 0.24975).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        for g in [1e-3, 0.5, -7.0, 1e4] {
            let mut ps = vec![param(vec![0.3])];
            let mut st = AdamState::new(&ps);
            let grad = Tensor::from_vec(&[1], vec![g]).unwrap();
            adam_step(&mut ps, &[grad], &mut st, &cfg).unwrap();
            let delta = ps[0].tensor.data()[0] - 0.3;
            let expected = cfg.learning_rate * g.abs() / (g.abs() + cfg.epsilon);
            assert!((delta.abs() - expected).abs() < 1e-15, "g={g}");
            assert!((delta.abs() - cfg.learning_rate).abs() < 1e-8);
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn deterministic() {
        let cfg = AdamConfig::default();
        let run = || {
            let mut ps = vec![param(vec![0.1, 0.2, 0.3])];
            let mut st = AdamState::new(&ps);
            for i in 0..5 {
                let g = Tensor::from_vec(&[3], vec![i as f64, -0.5, 0.25 * i as f64]).unwrap();
                adam_step(&mut ps, &[g], &mut st, &cfg).unwrap();
            }
            (ps, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut ps = vec![param(vec![0.0, 0.0])];
        let mut st = AdamState::new(&ps);
        let cfg = AdamConfig::default();
        let nan = Tensor::from_vec(&[2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(adam_step(&mut ps, &[nan], &mut st, &cfg), Err(Error::NonFinite(_))));
        let short = Tensor::zeros(&[1]);
        assert!(adam_step(&mut ps, &[short], &mut st, &cfg).is_err());
        assert_eq!(st.step, 0);
    }
}
