//! Declarative network descriptions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNormConfig, Padding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Inception,
    InceptionFa,
    InceptionFi,
    InceptionBn,
    /// Same layer kinds at toy width, for gradient checks and quick runs.
    InceptionMini,
}

impl Arch {
    pub const ALL: [Arch; 5] =
        [Arch::Inception, Arch::InceptionFa, Arch::InceptionFi, Arch::InceptionBn, Arch::InceptionMini];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Inception => "inception",
            Arch::InceptionFa => "inception_fa",
            Arch::InceptionFi => "inception_fi",
            Arch::InceptionBn => "inception_bn",
            Arch::InceptionMini => "inception_mini",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Arch::ALL.into_iter().find(|a| a.name() == norm).ok_or_else(|| Error::Config {
            layer: "arch".into(),
            reason: format!(
                "unknown architecture '{}'; valid names: {}",
                s,
                Arch::ALL.map(Arch::name).join(", ")
            ),
        })
    }
}

/// One convolution inside an inception nucleus branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchConv {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    BatchNorm,
    Relu,
    MaxPool1d {
        kernel: usize,
        stride: usize,
    },
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    /// Parallel branches of stacked 1D convolutions (each followed by optional
    /// batch norm and a ReLU), concatenated channel-wise.
    InceptionNucleus {
        branches: Vec<Vec<BranchConv>>,
        batch_norm: bool,
    },
    ReshapeToImage,
    Gap,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: Arch,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    /// Count the architecture is meant to have, compared at thousand
    /// granularity; a mismatch only warns.
    pub expected_param_count: Option<u64>,
    #[serde(default)]
    pub batch_norm: BatchNormConfig,
}

fn conv1d(out_channels: usize, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv1d { out_channels, kernel, stride, padding: Padding::Same }
}

fn conv2d(out_channels: usize, kernel: usize) -> LayerSpec {
    LayerSpec::Conv2d { out_channels, kernel, stride: 1, padding: Padding::Same }
}

/// A branch written `[c, k, s] x depth`: only the first convolution strides.
fn stacked(out_channels: usize, kernel: usize, stride: usize, depth: usize) -> Vec<BranchConv> {
    (0..depth)
        .map(|i| BranchConv { out_channels, kernel, stride: if i == 0 { stride } else { 1 } })
        .collect()
}

fn nucleus(channels: usize, kernels: [usize; 3], stride: usize, batch_norm: bool) -> LayerSpec {
    LayerSpec::InceptionNucleus {
        branches: vec![
            stacked(channels, kernels[0], stride, 1),
            stacked(channels, kernels[1], stride, 2),
            stacked(channels, kernels[2], stride, 2),
        ],
        batch_norm,
    }
}

/// Pushes a layer followed by optional batch norm and a ReLU.
fn block(layers: &mut Vec<LayerSpec>, layer: LayerSpec, bn: bool) {
    layers.push(layer);
    if bn {
        layers.push(LayerSpec::BatchNorm);
    }
    layers.push(LayerSpec::Relu);
}

/// The 2D stage shared by every configuration, from the reshape onward.
fn image_stage(layers: &mut Vec<LayerSpec>, widths: [usize; 4], num_classes: usize, bn: bool) {
    let [c1, c2, c3, c4] = widths;
    layers.push(LayerSpec::ReshapeToImage);
    block(layers, conv2d(c1, 3), bn);
    layers.push(LayerSpec::MaxPool2d { kernel: 2, stride: 2 });
    block(layers, conv2d(c2, 3), bn);
    block(layers, conv2d(c3, 3), bn);
    layers.push(LayerSpec::MaxPool2d { kernel: 2, stride: 2 });
    block(layers, conv2d(c4, 3), bn);
    layers.push(LayerSpec::MaxPool2d { kernel: 2, stride: 2 });
    layers.push(conv2d(num_classes, 1));
    if bn {
        layers.push(LayerSpec::BatchNorm);
    }
    layers.push(LayerSpec::Gap);
    layers.push(LayerSpec::Softmax);
}

impl ModelConfig {
    pub fn new(arch: Arch, num_classes: usize) -> Self {
        let mut layers = Vec::new();
        let bn = arch == Arch::InceptionBn;
        let expected = match arch {
            Arch::Inception => Some(289_000),
            Arch::InceptionFa => Some(789_000),
            Arch::InceptionFi => Some(479_000),
            Arch::InceptionBn => Some(292_000),
            Arch::InceptionMini => None,
        };
        match arch {
            Arch::Inception | Arch::InceptionBn => {
                block(&mut layers, conv1d(32, 80, 4), bn);
                layers.push(nucleus(64, [4, 8, 16], 4, bn));
            }
            Arch::InceptionFa => {
                block(&mut layers, conv1d(32, 80, 4), false);
                layers.push(nucleus(64, [20, 40, 60], 4, false));
            }
            Arch::InceptionFi => {
                layers.push(nucleus(32, [60, 80, 100], 4, false));
                layers.push(nucleus(64, [4, 8, 16], 4, false));
            }
            Arch::InceptionMini => {
                block(&mut layers, conv1d(4, 8, 2), false);
                layers.push(nucleus(4, [2, 4, 6], 2, false));
                layers.push(LayerSpec::MaxPool1d { kernel: 3, stride: 1 });
                image_stage(&mut layers, [3, 4, 4, 6], num_classes, false);
                return ModelConfig {
                    name: arch,
                    num_classes,
                    layers,
                    expected_param_count: None,
                    batch_norm: BatchNormConfig::default(),
                };
            }
        }
        layers.push(LayerSpec::MaxPool1d { kernel: 10, stride: 1 });
        image_stage(&mut layers, [32, 64, 64, 128], num_classes, bn);
        ModelConfig { name: arch, num_classes, layers, expected_param_count: expected, batch_norm: BatchNormConfig::default() }
    }

    pub fn with_batch_norm(mut self) -> Self {
        self.layers = with_bn(&self.layers);
        self
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| match l {
            LayerSpec::BatchNorm => true,
            LayerSpec::InceptionNucleus { batch_norm, .. } => *batch_norm,
            _ => false,
        })
    }
}

/// Inserts batch norm after every convolution (before its ReLU).
fn with_bn(layers: &[LayerSpec]) -> Vec<LayerSpec> {
    let mut out = Vec::new();
    for l in layers {
        match l {
            LayerSpec::InceptionNucleus { branches, .. } => {
                out.push(LayerSpec::InceptionNucleus { branches: branches.clone(), batch_norm: true })
            }
            LayerSpec::BatchNorm => {}
            other => out.push(other.clone()),
        }
        if matches!(l, LayerSpec::Conv1d { .. } | LayerSpec::Conv2d { .. }) {
            out.push(LayerSpec::BatchNorm);
        }
    }
    out
}
