//! Spatial batch normalization: statistics per channel over the batch and
//! every spatial position of `batch x ch x ...` maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    /// Weight of the old running value in the moving average.
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig { momentum: 0.9, epsilon: 1e-5 }
    }
}

/// Full state of one normalization layer.
#[derive(Clone, Debug)]
pub struct BatchNormState<T: Real = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub config: BatchNormConfig,
    pub mode: Mode,
    /// Running statistics hold real values (set explicitly or by a training
    /// update); inference refuses to run otherwise.
    pub stats_ready: bool,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize, config: BatchNormConfig) -> Self {
        BatchNormState {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            config,
            mode: Mode::Train,
            stats_ready: false,
        }
    }

    pub fn set_running_stats(&mut self, mean: Tensor<T>, var: Tensor<T>) -> Result<()> {
        if mean.shape() != self.running_mean.shape() || var.shape() != self.running_var.shape() {
            return Err(Error::shape("running statistics shape does not match channels"));
        }
        if var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::Data("running variance must be non-negative".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        self.stats_ready = true;
        Ok(())
    }

    /// Runs the layer; in train mode the returned state carries the updated
    /// running statistics, `self` is left untouched.
    pub fn forward(&self, x: &Tensor<T>) -> Result<BatchNormOutput<T>> {
        let running = self.stats_ready.then_some((&self.running_mean, &self.running_var));
        batchnorm_forward(x, &self.gamma, &self.beta, running, self.config, self.mode)
    }
}

#[derive(Clone, Debug)]
pub struct RunningStats<T: Real> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Normalized output, backward cache, and in train mode the updated running
/// statistics.
pub type BatchNormOutput<T> = (Tensor<T>, BatchNormCache<T>, Option<RunningStats<T>>);

#[derive(Clone, Debug)]
pub struct BatchNormCache<T: Real> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T: Real> {
    pub x: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

fn layout<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.rank() < 2 {
        return Err(Error::Rank { expected: 3, found: x.rank() });
    }
    let (n, c) = (x.shape()[0], x.shape()[1]);
    if gamma.shape() != [c] {
        return Err(Error::ChannelMismatch { expected: gamma.len(), found: c });
    }
    Ok((n, c, x.shape()[2..].iter().product()))
}

/// `running` is `None` when no statistics have been recorded yet: train mode
/// then starts the moving average from mean 0 / variance 1, infer mode fails.
pub fn batchnorm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: Option<(&Tensor<T>, &Tensor<T>)>,
    config: BatchNormConfig,
    mode: Mode,
) -> Result<BatchNormOutput<T>> {
    let (n, c, area) = layout(x, gamma)?;
    if beta.shape() != gamma.shape() {
        return Err(Error::shape("beta and gamma shapes differ"));
    }
    let eps = T::lit(config.epsilon);
    let xd = x.data();
    let count = n * area;
    let plane = |b: usize, ch: usize| &xd[(b * c + ch) * area..(b * c + ch + 1) * area];

    let (mean, var): (Vec<T>, Vec<T>) = match mode {
        Mode::Train => (0..c)
            .map(|ch| {
                let total: T = (0..n).map(|b| plane(b, ch).iter().copied().sum::<T>()).sum();
                let mean = total / T::lit(count as f64);
                let sq: T = (0..n)
                    .map(|b| plane(b, ch).iter().map(|&v| (v - mean) * (v - mean)).sum::<T>())
                    .sum();
                (mean, sq / T::lit(count as f64))
            })
            .unzip(),
        Mode::Infer => {
            let (rm, rv) = running.ok_or_else(|| {
                Error::UninitializedRunningStats(format!("batch norm over {} channels", c))
            })?;
            (rm.data().to_vec(), rv.data().to_vec())
        }
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut x_hat = Vec::with_capacity(xd.len());
    let mut out = Vec::with_capacity(xd.len());
    for b in 0..n {
        for ch in 0..c {
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for &v in plane(b, ch) {
                let h = (v - mean[ch]) * inv_std[ch];
                x_hat.push(h);
                out.push(g * h + bt);
            }
        }
    }

    let updated = match mode {
        Mode::Train => {
            let m = T::lit(config.momentum);
            let keep = T::one() - m;
            let unbias = if count > 1 { T::lit(count as f64 / (count - 1) as f64) } else { T::one() };
            let (old_mean, old_var) = match running {
                Some((rm, rv)) => (rm.data().to_vec(), rv.data().to_vec()),
                None => (vec![T::zero(); c], vec![T::one(); c]),
            };
            let new_mean = (0..c).map(|i| m * old_mean[i] + keep * mean[i]).collect();
            let new_var = (0..c).map(|i| m * old_var[i] + keep * var[i] * unbias).collect();
            Some(RunningStats { mean: Tensor::from_vec(&[c], new_mean)?, var: Tensor::from_vec(&[c], new_var)? })
        }
        Mode::Infer => None,
    };

    Ok((
        Tensor::from_vec(x.shape(), out)?,
        BatchNormCache { x_hat: Tensor::from_vec(x.shape(), x_hat)?, inv_std, mode },
        updated,
    ))
}

pub fn batchnorm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::shape(format!(
            "batch norm gradient {:?} does not match input {:?}",
            grad_out.shape(),
            cache.x_hat.shape()
        )));
    }
    let (n, c, area) = layout(grad_out, gamma)?;
    let count = T::lit((n * area) as f64);
    let go = grad_out.data();
    let xh = cache.x_hat.data();
    let idx = |b: usize, ch: usize| (b * c + ch) * area..(b * c + ch + 1) * area;

    let mut g_gamma = vec![T::zero(); c];
    let mut g_beta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            for i in idx(b, ch) {
                g_beta[ch] += go[i];
                g_gamma[ch] += go[i] * xh[i];
            }
        }
    }

    let mut gx = vec![T::zero(); go.len()];
    for b in 0..n {
        for ch in 0..c {
            let scale = gamma.data()[ch] * cache.inv_std[ch];
            for i in idx(b, ch) {
                gx[i] = match cache.mode {
                    // d/dx of gamma * (x - mu) / sigma with mu, sigma from the batch
                    Mode::Train => scale * (go[i] - (g_beta[ch] + xh[i] * g_gamma[ch]) / count),
                    Mode::Infer => scale * go[i],
                };
            }
        }
    }
    Ok(BatchNormGrads {
        x: Tensor::from_vec(grad_out.shape(), gx)?,
        gamma: Tensor::from_vec(&[c], g_gamma)?,
        beta: Tensor::from_vec(&[c], g_beta)?,
    })
}
