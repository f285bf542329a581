//! Finite-difference oracle shared by the gradient tests. It only evaluates
//! forward passes; nothing here calls a backward routine.
#![allow(dead_code)]

use inception_core::model::Model;
use inception_core::nn::{softmax_xent, Mode};
use inception_core::Tensor;
use rand::Rng;

pub const STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps vanishing gradients from
/// turning rounding noise into large ratios.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` with respect to `values[i]`.
pub fn central(values: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = values[i];
    values[i] = orig + STEP;
    let up = f(values);
    values[i] = orig - STEP;
    let down = f(values);
    values[i] = orig;
    (up - down) / (2.0 * STEP)
}

/// Full numeric gradient of a scalar function of a tensor.
pub fn numeric_grad(t: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = t.clone();
    (0..t.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + STEP;
            let up = f(&probe);
            probe.data_mut()[i] = orig - STEP;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Worst element-wise relative error; entries far below the tensor's
/// gradient scale are compared against that scale instead of themselves.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1e-3;
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(scale).max(1e-6))
        .fold(0.0, f64::max)
}

/// Zero biases on zero (post-ReLU) inputs put pre-activations exactly on the
/// ReLU kink; small random biases move the check to a differentiable point.
pub fn jitter_biases<R: Rng>(model: &mut Model<f64>, rng: &mut R) {
    for (name, p) in model.params_mut().iter_mut() {
        if name.ends_with(".bias") || name.ends_with(".beta") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
}

pub fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Inner product with fixed random weights: a scalar objective whose
/// gradient with respect to the op output is exactly `r`.
pub fn dot(a: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    a.data().iter().zip(r.data()).map(|(x, y)| x * y).sum()
}

/// Mean cross-entropy of a train-mode forward pass.
pub fn model_loss(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    let fwd = model.forward(x, Mode::Train).unwrap();
    let k = model.num_classes();
    let total: f64 = fwd
        .logits
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &y)| softmax_xent(row, y).unwrap().0)
        .sum();
    total / labels.len() as f64
}

/// Populates analytic gradients of [`model_loss`] via backprop.
pub fn backprop(model: &mut Model<f64>, x: &Tensor<f64>, labels: &[usize]) {
    let fwd = model.forward(x, Mode::Train).unwrap();
    let k = model.num_classes();
    let n = labels.len() as f64;
    let mut g = Vec::with_capacity(fwd.logits.len());
    for (row, &y) in fwd.logits.data().chunks(k).zip(labels) {
        g.extend(softmax_xent(row, y).unwrap().1.into_iter().map(|v| v / n));
    }
    let g = Tensor::from_vec(fwd.logits.shape(), g).unwrap();
    model.backward(&fwd.tape, &g).unwrap();
}

pub struct ParamCheck {
    pub worst: f64,
    pub at: String,
    /// Candidates rejected because a ReLU or max-pool switch point lay
    /// within the finite-difference interval.
    pub kinked: usize,
}

fn param_fd(model: &mut Model<f64>, x: &Tensor<f64>, labels: &[usize], idx: usize, elem: usize, h: f64) -> f64 {
    let orig = model.params().get(idx).value.data()[elem];
    model.params_mut().get_mut(idx).value.data_mut()[elem] = orig + h;
    let up = model_loss(model, x, labels);
    model.params_mut().get_mut(idx).value.data_mut()[elem] = orig - h;
    let down = model_loss(model, x, labels);
    model.params_mut().get_mut(idx).value.data_mut()[elem] = orig;
    (up - down) / (2.0 * h)
}

/// Checks `samples` trainable scalars, drawn uniformly over all of them,
/// against central differences at [`STEP`].
///
/// The loss is only piecewise smooth. A candidate whose difference quotient
/// at `STEP` disagrees with the one at `STEP / 10` straddles a switch point,
/// so it is replaced by a fresh draw and counted in `kinked`.
pub fn check_model_params<R: Rng>(
    model: &mut Model<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    samples: usize,
    rng: &mut R,
) -> ParamCheck {
    backprop(model, x, labels);
    let mut scalars = Vec::new();
    for i in 0..model.params().len() {
        if model.params().get(i).trainable() {
            scalars.extend((0..model.params().get(i).value.len()).map(|e| (i, e)));
        }
    }
    let mut out = ParamCheck { worst: 0.0, at: String::new(), kinked: 0 };
    let mut accepted = 0;
    while accepted < samples {
        let (idx, elem) = scalars[rng.gen_range(0..scalars.len())];
        let numeric = param_fd(model, x, labels, idx, elem, STEP);
        let fine = param_fd(model, x, labels, idx, elem, STEP / 10.0);
        if (numeric - fine).abs() > 1e-5 * numeric.abs().max(fine.abs()) + 1e-9 {
            out.kinked += 1;
            assert!(out.kinked <= samples, "too many non-smooth samples");
            continue;
        }
        accepted += 1;
        let analytic = model.params().get(idx).grad.data()[elem];
        let e = rel_err(analytic, numeric);
        if e >= out.worst {
            out.worst = e;
            out.at = format!("{}[{}]: analytic {analytic:e} numeric {numeric:e}", model.params().name(idx), elem);
        }
    }
    out
}

/// Worst relative error of every op against central differences for one
/// seed, covering each (kernel, stride, padding) the configurations use.
pub fn op_errors(seed: u64) -> Vec<(String, f64)> {
    use inception_core::nn::*;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let conv1d_cases = [(80, 4), (60, 4), (100, 4), (4, 4), (8, 4), (8, 1), (16, 4), (16, 1), (20, 4), (40, 4), (40, 1), (60, 1), (80, 1), (100, 1), (20, 1)];
    for &(k, s) in &conv1d_cases {
        let len = k + rng.gen_range(1..k + 8);
        let x = random_tensor(&[2, 2, len], &mut rng);
        let w = random_tensor(&[2, 2, k], &mut rng);
        let b = random_tensor(&[2], &mut rng);
        let p = Padding::Same;
        let r = random_tensor(conv1d_forward(&x, &w, &b, s, p).unwrap().shape(), &mut rng);
        let g = conv1d_backward(&x, &w, s, p, &r).unwrap();
        let e = max_rel_err(g.x.data(), &numeric_grad(&x, |x| dot(&conv1d_forward(x, &w, &b, s, p).unwrap(), &r)))
            .max(max_rel_err(g.w.data(), &numeric_grad(&w, |w| dot(&conv1d_forward(&x, w, &b, s, p).unwrap(), &r))))
            .max(max_rel_err(g.b.data(), &numeric_grad(&b, |b| dot(&conv1d_forward(&x, &w, b, s, p).unwrap(), &r))));
        out.push((format!("conv1d k={k} s={s} same"), e));
    }

    for k in [3, 1] {
        let x = random_tensor(&[2, 2, 5, 7], &mut rng);
        let w = random_tensor(&[3, 2, k, k], &mut rng);
        let b = random_tensor(&[3], &mut rng);
        let p = Padding::Same;
        let r = random_tensor(conv2d_forward(&x, &w, &b, 1, p).unwrap().shape(), &mut rng);
        let g = conv2d_backward(&x, &w, 1, p, &r).unwrap();
        let e = max_rel_err(g.x.data(), &numeric_grad(&x, |x| dot(&conv2d_forward(x, &w, &b, 1, p).unwrap(), &r)))
            .max(max_rel_err(g.w.data(), &numeric_grad(&w, |w| dot(&conv2d_forward(&x, w, &b, 1, p).unwrap(), &r))))
            .max(max_rel_err(g.b.data(), &numeric_grad(&b, |b| dot(&conv2d_forward(&x, &w, b, 1, p).unwrap(), &r))));
        out.push((format!("conv2d {k}x{k} s=1 same"), e));
    }

    let mut x = random_tensor(&[2, 3, 9], &mut rng);
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    let r = random_tensor(x.shape(), &mut rng);
    let g = relu_backward(&x, &r).unwrap();
    out.push(("relu".into(), max_rel_err(g.data(), &numeric_grad(&x, |x| dot(&relu_forward(x), &r)))));

    let x = random_tensor(&[2, 3, 25], &mut rng);
    let p = maxpool1d_forward(&x, 10, 1).unwrap();
    let r = random_tensor(p.out.shape(), &mut rng);
    let g = maxpool_backward(x.shape(), &p.argmax, &r).unwrap();
    let n = numeric_grad(&x, |x| dot(&maxpool1d_forward(x, 10, 1).unwrap().out, &r));
    out.push(("maxpool1d k=10 s=1".into(), max_rel_err(g.data(), &n)));

    let x = random_tensor(&[2, 2, 6, 9], &mut rng);
    let p = maxpool2d_forward(&x, 2, 2).unwrap();
    let r = random_tensor(p.out.shape(), &mut rng);
    let g = maxpool_backward(x.shape(), &p.argmax, &r).unwrap();
    let n = numeric_grad(&x, |x| dot(&maxpool2d_forward(x, 2, 2).unwrap().out, &r));
    out.push(("maxpool2d 2x2 s=2".into(), max_rel_err(g.data(), &n)));

    let x = random_tensor(&[2, 3, 4, 5], &mut rng);
    let r = random_tensor(&[2, 3], &mut rng);
    let g = gap_backward(x.shape(), &r).unwrap();
    out.push(("gap".into(), max_rel_err(g.data(), &numeric_grad(&x, |x| dot(&gap_forward(x).unwrap(), &r)))));

    let cfg = BatchNormConfig::default();
    let x = random_tensor(&[4, 3, 5], &mut rng);
    let gamma = random_tensor(&[3], &mut rng);
    let beta = random_tensor(&[3], &mut rng);
    let f = |x: &Tensor<f64>, gm: &Tensor<f64>, bt: &Tensor<f64>| {
        inception_core::nn::norm::batchnorm_forward(x, gm, bt, None, cfg, Mode::Train).unwrap().0
    };
    let r = random_tensor(x.shape(), &mut rng);
    let (_, cache, _) = inception_core::nn::norm::batchnorm_forward(&x, &gamma, &beta, None, cfg, Mode::Train).unwrap();
    let g = batchnorm_backward(&cache, &gamma, &r).unwrap();
    let e = max_rel_err(g.x.data(), &numeric_grad(&x, |x| dot(&f(x, &gamma, &beta), &r)))
        .max(max_rel_err(g.gamma.data(), &numeric_grad(&gamma, |gm| dot(&f(&x, gm, &beta), &r))))
        .max(max_rel_err(g.beta.data(), &numeric_grad(&beta, |bt| dot(&f(&x, &gamma, bt), &r))));
    out.push(("batchnorm (train)".into(), e));

    let logits = random_tensor(&[10], &mut rng);
    let label = rng.gen_range(0..10);
    let (_, grad) = softmax_xent(logits.data(), label).unwrap();
    let n = numeric_grad(&logits, |l| softmax_xent(l.data(), label).unwrap().0);
    out.push(("softmax cross-entropy".into(), max_rel_err(&grad, &n)));
    out
}
