use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{N_CHANNELS, WINDOW_LEN};

/// One stage of the sequential network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (unpadded) 1-D convolution.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    /// Mean over time, `(c, l) -> (c, 1)`.
    GlobalAvgPool,
    /// Inverted dropout on the flattened activations.
    Dropout {
        p: f64,
    },
    /// Fully connected on the flattened activations.
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Sigmoid,
}

/// Activation shape: channels by time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub len: usize,
}

impl Shape {
    pub fn size(&self) -> usize {
        self.channels * self.len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_channels: usize,
    pub input_len: usize,
    pub layers: Vec<LayerSpec>,
}

impl Default for ArchitectureSpec {
    /// Three strided convolutions, pooling, dropout and a two-layer head.
    fn default() -> Self {
        use LayerSpec::*;
        Self {
            input_channels: N_CHANNELS,
            input_len: WINDOW_LEN,
            layers: vec![
                Conv1d {
                    in_channels: 8,
                    out_channels: 16,
                    kernel: 5,
                    stride: 2,
                },
                Relu,
                Conv1d {
                    in_channels: 16,
                    out_channels: 32,
                    kernel: 5,
                    stride: 2,
                },
                Relu,
                Conv1d {
                    in_channels: 32,
                    out_channels: 64,
                    kernel: 3,
                    stride: 2,
                },
                Relu,
                GlobalAvgPool,
                Dropout { p: 0.5 },
                Dense {
                    inputs: 64,
                    outputs: 32,
                },
                Relu,
                Dense {
                    inputs: 32,
                    outputs: 1,
                },
                Sigmoid,
            ],
        }
    }
}

/// Where a layer's weights and biases live in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlot {
    pub layer: usize,
    pub weight_offset: usize,
    pub weight_len: usize,
    pub bias_offset: usize,
    pub bias_len: usize,
    /// Inputs feeding one output unit, used for fan-in initialization.
    pub fan_in: usize,
}

impl ArchitectureSpec {
    /// Input and output shape of every layer; checks the chain is consistent
    /// and ends in a single sigmoid unit.
    pub fn shapes(&self) -> Result<Vec<(Shape, Shape)>> {
        let mut cur = Shape {
            channels: self.input_channels,
            len: self.input_len,
        };
        if cur.size() == 0 {
            return Err(Error::Config("input shape must be non-empty".into()));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = match *layer {
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if in_channels != cur.channels {
                        return Err(Error::Config(format!(
                            "layer {i}: conv expects {in_channels} channels, gets {}",
                            cur.channels
                        )));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 || kernel > cur.len {
                        return Err(Error::Config(format!(
                            "layer {i}: conv kernel {kernel} stride {stride} does not fit length {}",
                            cur.len
                        )));
                    }
                    Shape {
                        channels: out_channels,
                        len: (cur.len - kernel) / stride + 1,
                    }
                }
                LayerSpec::Relu | LayerSpec::Sigmoid => cur,
                LayerSpec::GlobalAvgPool => Shape {
                    channels: cur.channels,
                    len: 1,
                },
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(Error::Config(format!(
                            "layer {i}: dropout p={p} outside [0, 1)"
                        )));
                    }
                    cur
                }
                LayerSpec::Dense { inputs, outputs } => {
                    if inputs != cur.size() || outputs == 0 {
                        return Err(Error::Config(format!(
                            "layer {i}: dense expects {inputs} inputs, gets {}",
                            cur.size()
                        )));
                    }
                    Shape {
                        channels: outputs,
                        len: 1,
                    }
                }
            };
            out.push((cur, next));
            cur = next;
        }
        if cur.size() != 1 || self.layers.last() != Some(&LayerSpec::Sigmoid) {
            return Err(Error::Config(
                "network must end in a sigmoid over a single unit".into(),
            ));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn output_shape_of(&self, layer: usize) -> Result<Shape> {
        Ok(self.shapes()?[layer].1)
    }

    /// Parameter slots for every layer that has weights, in layer order.
    pub fn param_slots(&self) -> Result<Vec<ParamSlot>> {
        self.validate()?;
        let mut offset = 0;
        let mut slots = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b, fan_in) = match *layer {
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (
                    out_channels * in_channels * kernel,
                    out_channels,
                    in_channels * kernel,
                ),
                LayerSpec::Dense { inputs, outputs } => (outputs * inputs, outputs, inputs),
                _ => continue,
            };
            slots.push(ParamSlot {
                layer: i,
                weight_offset: offset,
                weight_len: w,
                bias_offset: offset + w,
                bias_len: b,
                fan_in,
            });
            offset += w + b;
        }
        Ok(slots)
    }

    pub fn n_params(&self) -> Result<usize> {
        Ok(self
            .param_slots()?
            .last()
            .map(|s| s.bias_offset + s.bias_len)
            .unwrap_or(0))
    }

    pub fn input_size(&self) -> usize {
        self.input_channels * self.input_len
    }
}
