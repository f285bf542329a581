//! Glorot initialization, L2 weight penalty and the Adam optimizer.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{ParamKind, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Samples `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<f32> {
    let a = glorot_bound(fan_in, fan_out);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-a..=a) as f32).collect();
    Tensor::from_vec(shape, data).expect("shape and length agree")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub lambda: f64,
    pub applies_to: BTreeSet<ParamKind>,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig { lambda: 1e-4, applies_to: BTreeSet::from([ParamKind::Weight]) }
    }
}

impl RegConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        RegConfig { lambda, ..Default::default() }
    }
}

/// Adds `2 * lambda * w` to the gradient of every covered parameter and
/// returns the penalty `lambda * sum(w^2)`.
pub fn add_l2_grad<T: Real>(params: &mut ParamStore<T>, cfg: &RegConfig) -> Result<f64> {
    if cfg.lambda.is_nan() || cfg.lambda < 0.0 {
        return Err(Error::Data(format!("lambda must be non-negative, got {}", cfg.lambda)));
    }
    if cfg.lambda == 0.0 {
        return Ok(0.0);
    }
    let lambda = T::lit(cfg.lambda);
    let two_lambda = T::lit(2.0 * cfg.lambda);
    let mut penalty = 0.0;
    for (_, p) in params.iter_mut() {
        if !p.trainable() || !cfg.applies_to.contains(&p.kind) {
            continue;
        }
        penalty += (lambda * p.value.sum_sq()).as_f64();
        for (g, &w) in p.grad.data_mut().iter_mut().zip(p.value.data()) {
            *g += two_lambda * w;
        }
    }
    Ok(penalty)
}

/// Penalty only, without touching gradients.
pub fn l2_penalty<T: Real>(params: &ParamStore<T>, cfg: &RegConfig) -> f64 {
    params
        .iter()
        .filter(|(_, p)| p.trainable() && cfg.applies_to.contains(&p.kind))
        .map(|(_, p)| cfg.lambda * p.value.sum_sq().as_f64())
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moments for every trainable parameter, in store order.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub step: u64,
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    slots: Vec<usize>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let slots: Vec<usize> = (0..params.len()).filter(|&i| params.get(i).trainable()).collect();
        let zeros = || slots.iter().map(|&i| Tensor::zeros(params.get(i).value.shape())).collect();
        AdamState { step: 0, config, m: zeros(), v: zeros(), slots }
    }

    /// Parameter indices the moments belong to.
    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    /// One bias-corrected Adam update from the gradients currently stored in
    /// `params`.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.slots.len() != self.m.len() || self.slots.iter().any(|&i| i >= params.len()) {
            return Err(Error::Data("optimizer state does not match parameter store".into()));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let t = self.step as i32;
        let correct1 = T::lit(1.0 - c.beta1.powi(t));
        let correct2 = T::lit(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for ((m, v), &idx) in self.m.iter_mut().zip(self.v.iter_mut()).zip(&self.slots) {
            let p = params.get_mut(idx);
            if p.value.shape() != m.shape() {
                return Err(Error::shape(format!(
                    "optimizer moment {:?} does not match parameter {:?}",
                    m.shape(),
                    p.value.shape()
                )));
            }
            let grads = p.grad.data();
            for (((w, &g), mi), vi) in
                p.value.data_mut().iter_mut().zip(grads).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = b1 * *mi + one_b1 * g;
                *vi = b2 * *vi + one_b2 * g * g;
                let m_hat = *mi / correct1;
                let v_hat = *vi / correct2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub(crate) fn from_parts(step: u64, config: AdamConfig, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, slots: Vec<usize>) -> Self {
        AdamState { step, config, m, v, slots }
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut AdamState<T>) -> Result<()> {
    state.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: f64, kind: ParamKind) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(&[1], vec![w]).unwrap(), kind).unwrap();
        s
    }

    #[test]
    fn glorot_bound_closed_form() {
        assert_eq!(glorot_bound(3, 3), 1.0);
    }

    #[test]
    fn glorot_samples_stay_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = glorot_init(&[100, 100], 40, 60, &mut rng);
        let a = glorot_bound(40, 60) as f32;
        assert!(t.data().iter().all(|v| v.abs() <= a));
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.02 * a as f64);
    }

    #[test]
    fn l2_single_weight() {
        let mut s = single(3.0, ParamKind::Weight);
        let pen = add_l2_grad(&mut s, &RegConfig::with_lambda(1e-4)).unwrap();
        assert!((pen - 0.0009).abs() < 1e-15);
        assert!((s.get(0).grad.data()[0] - 0.0006).abs() < 1e-15);
    }

    #[test]
    fn l2_zero_lambda_and_excluded_kinds() {
        let mut s = single(3.0, ParamKind::Weight);
        assert_eq!(add_l2_grad(&mut s, &RegConfig::with_lambda(0.0)).unwrap(), 0.0);
        assert_eq!(s.get(0).grad.data(), &[0.0]);
        let mut g = single(3.0, ParamKind::BnGamma);
        assert_eq!(add_l2_grad(&mut g, &RegConfig::default()).unwrap(), 0.0);
        assert_eq!(g.get(0).grad.data(), &[0.0]);
        assert!(add_l2_grad(&mut g, &RegConfig::with_lambda(-1.0)).is_err());
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.5, -3.0, 1e-3] {
            let mut s = single(1.0, ParamKind::Weight);
            s.get_mut(0).grad.data_mut()[0] = g;
            let mut adam = AdamState::new(&s, AdamConfig::default());
            adam.step(&mut s).unwrap();
            let expected = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
            assert!((s.get(0).value.data()[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut s = single(2.5, ParamKind::Weight);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step(&mut s).unwrap();
        assert_eq!(s.get(0).value.data(), &[2.5]);
    }

    #[test]
    fn running_stats_have_no_moments() {
        let mut s = single(1.0, ParamKind::Weight);
        s.insert("rm", Tensor::zeros(&[4]), ParamKind::RunningMean).unwrap();
        let adam = AdamState::new(&s, AdamConfig::default());
        assert_eq!(adam.slots(), &[0]);
    }
}
