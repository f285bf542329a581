use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::config::{LayerSpec, ModelConfig};
use crate::model::params::{ParamKind, ParamStore};
use crate::nn::norm::{BatchNormCache, RunningStats};
use crate::nn::{self, Mode, Padding};
use crate::optim::glorot_init;
use crate::real::Real;
use crate::tensor::{batch_to_image, concat_channels, split_channels, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Debug)]
enum Node {
    Conv1d { w: usize, b: usize, stride: usize, padding: Padding },
    Conv2d { w: usize, b: usize, stride: usize, padding: Padding },
    BatchNorm { gamma: usize, beta: usize, mean: usize, var: usize, slot: usize },
    Relu,
    MaxPool1d { kernel: usize, stride: usize },
    MaxPool2d { kernel: usize, stride: usize },
    Nucleus { branches: Vec<Vec<Node>>, widths: Vec<usize> },
    Reshape,
    Gap,
    Softmax,
}

/// A built network: configuration, parameters and the compiled layer chain.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    nodes: Vec<Node>,
    labels: Vec<String>,
    bn_names: Vec<String>,
    bn_ready: Vec<bool>,
    min_len: usize,
    id: u64,
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Debug)]
pub struct Tape<T: Real> {
    model_id: u64,
    mode: Mode,
    input: Tensor<T>,
    seq: SeqTape<T>,
}

#[derive(Debug)]
struct SeqTape<T: Real> {
    /// Input of node `i + 1`; node 0 reads the sequence input.
    inputs: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
}

#[derive(Debug)]
enum Aux<T: Real> {
    None,
    Pool(Vec<usize>),
    Bn { cache: BatchNormCache<T>, stats: Option<RunningStats<T>> },
    Nucleus(Vec<SeqTape<T>>),
}

#[derive(Debug)]
pub struct Forward<T: Real> {
    /// `batch x classes`, the GAP output.
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub tape: Tape<T>,
}

impl<T: Real> Tape<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }
}

#[derive(Clone, Copy, Debug)]
enum Act {
    Wave(usize),
    Image(usize),
    Vector(usize),
}

struct Builder {
    rng: ChaCha8Rng,
    params: ParamStore<f32>,
    bn_names: Vec<String>,
}

impl Builder {
    fn conv(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<(usize, usize)> {
        let w = self.params.insert(format!("{name}.weight"), glorot_init(shape, fan_in, fan_out, &mut self.rng), ParamKind::Weight)?;
        let b = self.params.insert(format!("{name}.bias"), Tensor::zeros(&[shape[0]]), ParamKind::Bias)?;
        Ok((w, b))
    }

    fn batch_norm(&mut self, name: &str, channels: usize) -> Result<Node> {
        let gamma = self.params.insert(format!("{name}.gamma"), Tensor::full(&[channels], 1.0), ParamKind::BnGamma)?;
        let beta = self.params.insert(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::BnBeta)?;
        let mean = self.params.insert(format!("{name}.running_mean"), Tensor::zeros(&[channels]), ParamKind::RunningMean)?;
        let var = self.params.insert(format!("{name}.running_var"), Tensor::full(&[channels], 1.0), ParamKind::RunningVar)?;
        self.bn_names.push(name.to_string());
        Ok(Node::BatchNorm { gamma, beta, mean, var, slot: self.bn_names.len() - 1 })
    }
}

fn config_err(layer: &str, reason: impl Into<String>) -> Error {
    Error::Config { layer: layer.to_string(), reason: reason.into() }
}

fn positive(layer: &str, what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(config_err(layer, format!("{what} must be >= 1")));
    }
    Ok(())
}

/// Builds a model with glorot-initialized weights drawn from `seed`.
pub fn build(config: ModelConfig, seed: u64) -> Result<Model<f32>> {
    Model::build(config, seed)
}

impl Model<f32> {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut b = Builder { rng: ChaCha8Rng::seed_from_u64(seed), params: ParamStore::new(), bn_names: Vec::new() };
        let mut nodes = Vec::with_capacity(config.layers.len());
        let mut labels = Vec::with_capacity(config.layers.len());
        let mut act = Act::Wave(1);
        let mut counters = [0usize; 4];
        let last = config.layers.len().saturating_sub(1);
        if config.num_classes == 0 {
            return Err(config_err("model", "num_classes must be >= 1"));
        }

        for (i, spec) in config.layers.iter().enumerate() {
            let label = format!("layer {i} ({})", kind_name(spec));
            let wrong = |act: Act| config_err(&label, format!("cannot follow a {:?} activation", act));
            let node = match (spec, act) {
                (LayerSpec::Conv1d { out_channels, kernel, stride, padding }, Act::Wave(cin)) => {
                    positive(&label, "out_channels", *out_channels)?;
                    positive(&label, "kernel", *kernel)?;
                    positive(&label, "stride", *stride)?;
                    counters[0] += 1;
                    let (w, bias) = b.conv(
                        &format!("conv1d{}", counters[0]),
                        &[*out_channels, cin, *kernel],
                        cin * kernel,
                        out_channels * kernel,
                    )?;
                    act = Act::Wave(*out_channels);
                    Node::Conv1d { w, b: bias, stride: *stride, padding: *padding }
                }
                (LayerSpec::Conv2d { out_channels, kernel, stride, padding }, Act::Image(cin)) => {
                    positive(&label, "out_channels", *out_channels)?;
                    positive(&label, "kernel", *kernel)?;
                    positive(&label, "stride", *stride)?;
                    counters[1] += 1;
                    let area = kernel * kernel;
                    let (w, bias) = b.conv(
                        &format!("conv2d{}", counters[1]),
                        &[*out_channels, cin, *kernel, *kernel],
                        cin * area,
                        out_channels * area,
                    )?;
                    act = Act::Image(*out_channels);
                    Node::Conv2d { w, b: bias, stride: *stride, padding: *padding }
                }
                (LayerSpec::BatchNorm, Act::Wave(c) | Act::Image(c)) => {
                    counters[2] += 1;
                    b.batch_norm(&format!("bn{}", counters[2]), c)?
                }
                (LayerSpec::Relu, Act::Wave(_) | Act::Image(_)) => Node::Relu,
                (LayerSpec::MaxPool1d { kernel, stride }, Act::Wave(_)) => {
                    positive(&label, "kernel", *kernel)?;
                    positive(&label, "stride", *stride)?;
                    Node::MaxPool1d { kernel: *kernel, stride: *stride }
                }
                (LayerSpec::MaxPool2d { kernel, stride }, Act::Image(_)) => {
                    positive(&label, "kernel", *kernel)?;
                    positive(&label, "stride", *stride)?;
                    Node::MaxPool2d { kernel: *kernel, stride: *stride }
                }
                (LayerSpec::InceptionNucleus { branches, batch_norm }, Act::Wave(cin)) => {
                    counters[3] += 1;
                    let name = format!("nucleus{}", counters[3]);
                    let node = build_nucleus(&mut b, &label, &name, branches, *batch_norm, cin)?;
                    if let Node::Nucleus { widths, .. } = &node {
                        act = Act::Wave(widths.iter().sum());
                    }
                    node
                }
                (LayerSpec::ReshapeToImage, Act::Wave(_)) => {
                    act = Act::Image(1);
                    Node::Reshape
                }
                (LayerSpec::Gap, Act::Wave(c) | Act::Image(c)) => {
                    act = Act::Vector(c);
                    Node::Gap
                }
                (LayerSpec::Softmax, Act::Vector(c)) => {
                    if i != last {
                        return Err(config_err(&label, "softmax must be the final layer"));
                    }
                    if c != config.num_classes {
                        return Err(config_err(
                            &label,
                            format!("classifier emits {c} channels but num_classes is {}", config.num_classes),
                        ));
                    }
                    Node::Softmax
                }
                (_, act) => return Err(wrong(act)),
            };
            nodes.push(node);
            labels.push(label);
        }
        if !matches!(nodes.last(), Some(Node::Softmax)) {
            return Err(config_err("model", "the layer chain must end with gap and softmax"));
        }

        let bn_ready = vec![false; b.bn_names.len()];
        let mut model = Model {
            config,
            params: b.params,
            nodes,
            labels,
            bn_names: b.bn_names,
            bn_ready,
            min_len: 0,
            id: next_id(),
        };
        model.min_len = model.search_min_len()?;
        if let Some(expected) = model.config.expected_param_count {
            let count = model.count_params(true);
            if (count + 500) / 1000 != (expected + 500) / 1000 {
                log::warn!(
                    "{}: {} parameters, expected about {} ({}K)",
                    model.config.name,
                    count,
                    expected,
                    expected / 1000
                );
            }
        }
        Ok(model)
    }
}

fn build_nucleus(
    b: &mut Builder,
    label: &str,
    name: &str,
    branches: &[Vec<crate::model::config::BranchConv>],
    batch_norm: bool,
    cin: usize,
) -> Result<Node> {
    if branches.len() < 2 {
        return Err(config_err(label, "an inception nucleus needs at least 2 branches"));
    }
    let mut compiled = Vec::with_capacity(branches.len());
    let mut widths = Vec::with_capacity(branches.len());
    let mut total_stride = None;
    for (j, branch) in branches.iter().enumerate() {
        if branch.is_empty() {
            return Err(config_err(label, format!("branch {j} is empty")));
        }
        let stride: usize = branch.iter().map(|c| c.stride).product();
        if *total_stride.get_or_insert(stride) != stride {
            return Err(config_err(
                label,
                format!("branch {j} downsamples by {stride}, other branches by {}", total_stride.unwrap()),
            ));
        }
        let mut nodes = Vec::new();
        let mut c = cin;
        for (i, conv) in branch.iter().enumerate() {
            positive(label, "out_channels", conv.out_channels)?;
            positive(label, "kernel", conv.kernel)?;
            positive(label, "stride", conv.stride)?;
            let (w, bias) = b.conv(
                &format!("{name}.branch{j}.conv{i}"),
                &[conv.out_channels, c, conv.kernel],
                c * conv.kernel,
                conv.out_channels * conv.kernel,
            )?;
            nodes.push(Node::Conv1d { w, b: bias, stride: conv.stride, padding: Padding::Same });
            if batch_norm {
                nodes.push(b.batch_norm(&format!("{name}.branch{j}.bn{i}"), conv.out_channels)?);
            }
            nodes.push(Node::Relu);
            c = conv.out_channels;
        }
        compiled.push(nodes);
        widths.push(c);
    }
    Ok(Node::Nucleus { branches: compiled, widths })
}

fn kind_name(spec: &LayerSpec) -> &'static str {
    match spec {
        LayerSpec::Conv1d { .. } => "conv1d",
        LayerSpec::Conv2d { .. } => "conv2d",
        LayerSpec::BatchNorm => "batch_norm",
        LayerSpec::Relu => "relu",
        LayerSpec::MaxPool1d { .. } => "max_pool1d",
        LayerSpec::MaxPool2d { .. } => "max_pool2d",
        LayerSpec::InceptionNucleus { .. } => "inception_nucleus",
        LayerSpec::ReshapeToImage => "reshape_to_image",
        LayerSpec::Gap => "gap",
        LayerSpec::Softmax => "softmax",
    }
}

/// Per-sample activation shape while tracing: channels plus spatial dims.
fn trace_node<T: Real>(params: &ParamStore<T>, node: &Node, shape: &[usize]) -> std::result::Result<Vec<usize>, String> {
    let conv_len = |len: usize, k: usize, s: usize, p: Padding| {
        p.out_len(len, k, s).ok_or_else(|| format!("length {len} shorter than kernel {k}"))
    };
    let pool_len = |len: usize, k: usize, s: usize| {
        nn::pool::pooled_len(len, k, s).ok_or_else(|| format!("length {len} shorter than pooling window {k}"))
    };
    Ok(match (node, shape) {
        (Node::Conv1d { w, stride, padding, .. }, [_, l]) => {
            let ws = params.get(*w).value.shape();
            vec![ws[0], conv_len(*l, ws[2], *stride, *padding)?]
        }
        (Node::Conv2d { w, stride, padding, .. }, [_, h, wd]) => {
            let ws = params.get(*w).value.shape();
            vec![ws[0], conv_len(*h, ws[2], *stride, *padding)?, conv_len(*wd, ws[3], *stride, *padding)?]
        }
        (Node::BatchNorm { .. } | Node::Relu, s) => s.to_vec(),
        (Node::MaxPool1d { kernel, stride }, [c, l]) => vec![*c, pool_len(*l, *kernel, *stride)?],
        (Node::MaxPool2d { kernel, stride }, [c, h, w]) => {
            vec![*c, pool_len(*h, *kernel, *stride)?, pool_len(*w, *kernel, *stride)?]
        }
        (Node::Nucleus { branches, widths }, s) => {
            let mut len = None;
            for branch in branches {
                let mut cur = s.to_vec();
                for n in branch {
                    cur = trace_node(params, n, &cur)?;
                }
                if *len.get_or_insert(cur[1]) != cur[1] {
                    return Err("nucleus branches produce different lengths".into());
                }
            }
            vec![widths.iter().sum(), len.expect("at least two branches")]
        }
        (Node::Reshape, [c, l]) => vec![1, *c, *l],
        (Node::Gap, [c, ..]) => vec![*c],
        (Node::Softmax, s) => s.to_vec(),
        (_, s) => return Err(format!("unexpected activation shape {:?}", s)),
    })
}

impl<T: Real> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn count_params(&self, include_non_trainable: bool) -> u64 {
        self.params.count(include_non_trainable)
    }

    /// Shortest input length the layer chain accepts.
    pub fn min_input_len(&self) -> usize {
        self.min_len
    }

    /// Per-layer output shapes (without the batch axis) for a single input of
    /// `len` samples.
    pub fn trace_shapes(&self, len: usize) -> Result<Vec<Vec<usize>>> {
        let mut shape = vec![1, len];
        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, label) in self.nodes.iter().zip(&self.labels) {
            shape = trace_node(&self.params, node, &shape)
                .map_err(|reason| Error::shape(format!("{label}: {reason}")))?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    fn search_min_len(&self) -> Result<usize> {
        let ok = |len: usize| self.trace_shapes(len).is_ok();
        let mut hi = 1usize;
        while !ok(hi) {
            hi *= 2;
            if hi > 1 << 32 {
                return Err(config_err("model", "no input length is admissible"));
            }
        }
        let mut lo = hi / 2; // inadmissible (or 0)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    pub fn batch_norm_layers(&self) -> &[String] {
        &self.bn_names
    }

    pub fn running_stats_ready(&self) -> &[bool] {
        &self.bn_ready
    }

    pub(crate) fn set_running_stats_ready(&mut self, ready: Vec<bool>) -> Result<()> {
        if ready.len() != self.bn_ready.len() {
            return Err(Error::Data("batch norm layer count mismatch".into()));
        }
        self.bn_ready = ready;
        Ok(())
    }

    /// Installs running statistics for the `slot`-th batch norm layer.
    pub fn set_running_stats(&mut self, slot: usize, mean: Tensor<T>, var: Tensor<T>) -> Result<()> {
        let (mi, vi) = find_bn(&self.nodes, slot)
            .ok_or_else(|| Error::Data(format!("no batch norm layer {slot}")))?;
        for (idx, t) in [(mi, &mean), (vi, &var)] {
            if self.params.get(idx).value.shape() != t.shape() {
                return Err(Error::shape("running statistics shape does not match channels"));
            }
        }
        if var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::Data("running variance must be non-negative".into()));
        }
        self.params.get_mut(mi).value = mean;
        self.params.get_mut(vi).value = var;
        self.bn_ready[slot] = true;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            nodes: self.nodes.clone(),
            labels: self.labels.clone(),
            bn_names: self.bn_names.clone(),
            bn_ready: self.bn_ready.clone(),
            min_len: self.min_len,
            id: next_id(),
        }
    }

    /// Runs the network on `batch x 1 x len` (or `1 x len`) waveforms.
    ///
    /// Pure: in train mode the batch statistics that batch norm would fold
    /// into its running averages are kept on the tape; apply them with
    /// [`Model::commit_running_stats`].
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Forward<T>> {
        let x = match x.rank() {
            2 if x.shape()[0] == 1 => x.clone().reshape(&[1, 1, x.shape()[1]])?,
            3 if x.shape()[1] == 1 => x.clone(),
            2 | 3 => return Err(Error::shape(format!("expected a single-channel waveform, got {:?}", x.shape()))),
            r => return Err(Error::Rank { expected: 3, found: r }),
        };
        let len = x.shape()[2];
        if len < self.min_len {
            return Err(Error::InputTooShort { len, min: self.min_len });
        }
        let (probs, seq) = self.run_seq(&self.nodes, &x, mode)?;
        let logits = seq.inputs.last().cloned().expect("chain ends with softmax after gap");
        Ok(Forward { logits, probs, tape: Tape { model_id: self.id, mode, input: x, seq } })
    }

    /// Class probabilities only.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x, Mode::Infer)?.probs)
    }

    /// The feature map fed to global average pooling (`batch x ch x h x w`).
    pub fn features_before_gap<'t>(&self, tape: &'t Tape<T>) -> Result<&'t Tensor<T>> {
        self.check_tape(tape)?;
        let k = self.nodes.iter().position(|n| matches!(n, Node::Gap)).expect("validated chain has gap");
        Ok(if k == 0 { &tape.input } else { &tape.seq.inputs[k - 1] })
    }

    fn check_tape(&self, tape: &Tape<T>) -> Result<()> {
        if tape.model_id != self.id || tape.seq.aux.len() != self.nodes.len() {
            return Err(Error::TapeMismatch("tape was recorded by a different model".into()));
        }
        Ok(())
    }

    fn run_seq(&self, nodes: &[Node], x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, SeqTape<T>)> {
        let mut inputs = Vec::with_capacity(nodes.len().saturating_sub(1));
        let mut aux = Vec::with_capacity(nodes.len());
        let mut cur: Option<Tensor<T>> = None;
        for node in nodes {
            let (out, a) = self.run_node(node, cur.as_ref().unwrap_or(x), mode)?;
            aux.push(a);
            if let Some(prev) = cur.take() {
                inputs.push(prev);
            }
            cur = Some(out);
        }
        Ok((cur.unwrap_or_else(|| x.clone()), SeqTape { inputs, aux }))
    }

    fn run_node(&self, node: &Node, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Aux<T>)> {
        let p = |i: usize| &self.params.get(i).value;
        Ok(match node {
            Node::Conv1d { w, b, stride, padding } => {
                (nn::conv1d_forward(x, p(*w), p(*b), *stride, *padding)?, Aux::None)
            }
            Node::Conv2d { w, b, stride, padding } => {
                (nn::conv2d_forward(x, p(*w), p(*b), *stride, *padding)?, Aux::None)
            }
            Node::BatchNorm { gamma, beta, mean, var, slot } => {
                let ready = self.bn_ready[*slot];
                if mode == Mode::Infer && !ready {
                    return Err(Error::UninitializedRunningStats(self.bn_names[*slot].clone()));
                }
                let running = ready.then(|| (p(*mean), p(*var)));
                let (out, cache, stats) =
                    nn::batchnorm_forward(x, p(*gamma), p(*beta), running, self.config.batch_norm, mode)?;
                (out, Aux::Bn { cache, stats })
            }
            Node::Relu => (nn::relu_forward(x), Aux::None),
            Node::MaxPool1d { kernel, stride } => {
                let r = nn::maxpool1d_forward(x, *kernel, *stride)?;
                (r.out, Aux::Pool(r.argmax))
            }
            Node::MaxPool2d { kernel, stride } => {
                let r = nn::maxpool2d_forward(x, *kernel, *stride)?;
                (r.out, Aux::Pool(r.argmax))
            }
            Node::Nucleus { branches, .. } => {
                let mut outs = Vec::with_capacity(branches.len());
                let mut tapes = Vec::with_capacity(branches.len());
                for branch in branches {
                    let (o, t) = self.run_seq(branch, x, mode)?;
                    outs.push(o);
                    tapes.push(t);
                }
                let len = outs[0].shape()[2];
                if let Some(j) = outs.iter().position(|o| o.shape()[2] != len) {
                    return Err(Error::shape(format!(
                        "nucleus branch {j} emits length {}, branch 0 emits {len}",
                        outs[j].shape()[2]
                    )));
                }
                let refs: Vec<&Tensor<T>> = outs.iter().collect();
                (concat_channels(&refs)?, Aux::Nucleus(tapes))
            }
            Node::Reshape => (batch_to_image(x.clone())?, Aux::None),
            Node::Gap => (nn::gap_forward(x)?, Aux::None),
            Node::Softmax => (nn::softmax(x), Aux::None),
        })
    }

    /// Writes `d loss / d param` for every trainable parameter, given the
    /// gradient of the loss with respect to the logits. Gradients are
    /// overwritten, not accumulated; running statistics are left untouched.
    /// Returns the gradient with respect to the input waveform.
    pub fn backward(&mut self, tape: &Tape<T>, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_tape(tape)?;
        let logits_shape = tape.seq.inputs.last().map(|t| t.shape().to_vec()).unwrap_or_default();
        if grad_logits.shape() != logits_shape.as_slice() {
            return Err(Error::shape(format!(
                "logit gradient {:?} does not match logits {:?}",
                grad_logits.shape(),
                logits_shape
            )));
        }
        backward_seq(&self.nodes, &mut self.params, &tape.input, &tape.seq, grad_logits.clone())
    }

    /// Folds the batch statistics recorded by a train-mode forward pass into
    /// the running averages.
    pub fn commit_running_stats(&mut self, tape: &Tape<T>) -> Result<()> {
        self.check_tape(tape)?;
        commit_seq(&self.nodes, &tape.seq, &mut self.params, &mut self.bn_ready);
        Ok(())
    }
}

fn find_bn(nodes: &[Node], slot: usize) -> Option<(usize, usize)> {
    nodes.iter().find_map(|n| match n {
        Node::BatchNorm { mean, var, slot: s, .. } if *s == slot => Some((*mean, *var)),
        Node::Nucleus { branches, .. } => branches.iter().find_map(|b| find_bn(b, slot)),
        _ => None,
    })
}

fn commit_seq<T: Real>(nodes: &[Node], tape: &SeqTape<T>, params: &mut ParamStore<T>, ready: &mut [bool]) {
    for (node, aux) in nodes.iter().zip(&tape.aux) {
        match (node, aux) {
            (Node::BatchNorm { mean, var, slot, .. }, Aux::Bn { stats: Some(s), .. }) => {
                params.get_mut(*mean).value = s.mean.clone();
                params.get_mut(*var).value = s.var.clone();
                ready[*slot] = true;
            }
            (Node::Nucleus { branches, .. }, Aux::Nucleus(tapes)) => {
                for (b, t) in branches.iter().zip(tapes) {
                    commit_seq(b, t, params, ready);
                }
            }
            _ => {}
        }
    }
}

fn backward_seq<T: Real>(
    nodes: &[Node],
    params: &mut ParamStore<T>,
    input: &Tensor<T>,
    tape: &SeqTape<T>,
    mut grad: Tensor<T>,
) -> Result<Tensor<T>> {
    for i in (0..nodes.len()).rev() {
        let x = if i == 0 { input } else { &tape.inputs[i - 1] };
        grad = backward_node(&nodes[i], params, x, &tape.aux[i], grad)?;
    }
    Ok(grad)
}

fn backward_node<T: Real>(
    node: &Node,
    params: &mut ParamStore<T>,
    x: &Tensor<T>,
    aux: &Aux<T>,
    grad: Tensor<T>,
) -> Result<Tensor<T>> {
    let mismatch = || Error::TapeMismatch("tape entry does not match layer".into());
    Ok(match (node, aux) {
        (Node::Conv1d { w, b, stride, padding }, _) => {
            let g = nn::conv1d_backward(x, &params.get(*w).value, *stride, *padding, &grad)?;
            params.set_grad(*w, g.w)?;
            params.set_grad(*b, g.b)?;
            g.x
        }
        (Node::Conv2d { w, b, stride, padding }, _) => {
            let g = nn::conv2d_backward(x, &params.get(*w).value, *stride, *padding, &grad)?;
            params.set_grad(*w, g.w)?;
            params.set_grad(*b, g.b)?;
            g.x
        }
        (Node::BatchNorm { gamma, beta, .. }, Aux::Bn { cache, .. }) => {
            let g = nn::batchnorm_backward(cache, &params.get(*gamma).value, &grad)?;
            params.set_grad(*gamma, g.gamma)?;
            params.set_grad(*beta, g.beta)?;
            g.x
        }
        (Node::Relu, _) => nn::relu_backward(x, &grad)?,
        (Node::MaxPool1d { .. } | Node::MaxPool2d { .. }, Aux::Pool(argmax)) => {
            nn::maxpool_backward(x.shape(), argmax, &grad)?
        }
        (Node::Nucleus { branches, widths }, Aux::Nucleus(tapes)) => {
            let parts = split_channels(&grad, widths)?;
            let mut total: Option<Tensor<T>> = None;
            for ((branch, tape), g) in branches.iter().zip(tapes).zip(parts) {
                let gx = backward_seq(branch, params, x, tape, g)?;
                match total.as_mut() {
                    Some(t) => t.add_assign(&gx)?,
                    None => total = Some(gx),
                }
            }
            total.expect("at least two branches")
        }
        (Node::Reshape, _) => grad.reshape(x.shape())?,
        (Node::Gap, _) => nn::gap_backward(x.shape(), &grad)?,
        (Node::Softmax, _) => grad,
        _ => return Err(mismatch()),
    })
}
