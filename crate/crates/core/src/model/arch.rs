use serde::{Deserialize, Serialize};

use crate::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerOp {
    Conv {
        kernel: usize,
        channels: usize,
        stride: usize,
    },
    ConvLstm {
        kernel: usize,
        channels: usize,
    },
    DepthToSpace {
        block: usize,
    },
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub op: LayerOp,
    /// Layer normalization on the layer output (LSTM: on `h` as passed to
    /// the next layer, not on the recurrent state).
    #[serde(default)]
    pub layer_norm: bool,
}

impl LayerSpec {
    fn new(name: &str, op: LayerOp, layer_norm: bool) -> Self {
        LayerSpec {
            name: name.to_string(),
            op,
            layer_norm,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self.op, LayerOp::Conv { .. } | LayerOp::ConvLstm { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self::scaled(88, 288, 1).expect("the full-size network is valid")
    }
}

impl ArchitectureConfig {
    /// The full-size layer stack with channel counts divided by
    /// `channel_divisor`, at a given input size.
    pub fn scaled(height: usize, width: usize, channel_divisor: usize) -> Result<Self> {
        if channel_divisor == 0 || 32 % channel_divisor != 0 {
            return invalid(format!("channel divisor {channel_divisor} must divide 32"));
        }
        let ch = |c: usize| c / channel_divisor;
        let conv = |kernel, channels, stride| LayerOp::Conv {
            kernel,
            channels: ch(channels),
            stride,
        };
        let lstm = |kernel, channels| LayerOp::ConvLstm {
            kernel,
            channels: ch(channels),
        };
        let ds = LayerOp::DepthToSpace { block: 2 };
        let layers = vec![
            LayerSpec::new("conv1", conv(5, 32, 2), true),
            LayerSpec::new("conv-lstm1", lstm(5, 32), true),
            LayerSpec::new("conv2", conv(3, 64, 2), true),
            LayerSpec::new("conv-lstm2", lstm(5, 64), true),
            LayerSpec::new("conv3", conv(3, 128, 2), true),
            LayerSpec::new("conv-lstm3", lstm(5, 128), true),
            LayerSpec::new("ds1", ds, false),
            LayerSpec::new("conv4", conv(3, 64, 1), true),
            LayerSpec::new("conv-lstm4", lstm(5, 64), true),
            LayerSpec::new("ds2", ds, false),
            LayerSpec::new("conv5", conv(3, 32, 1), true),
            LayerSpec::new("conv-lstm5", lstm(5, 32), true),
            LayerSpec::new("ds3", ds, false),
            // a single-channel map would be pinned to fixed statistics by a norm
            LayerSpec::new(
                "conv6",
                LayerOp::Conv {
                    kernel: 5,
                    channels: 1,
                    stride: 1,
                },
                false,
            ),
            LayerSpec::new("sigmoid", LayerOp::Sigmoid, false),
        ];
        let cfg = ArchitectureConfig {
            input_height: height,
            input_width: width,
            input_channels: 3,
            layers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Small training configuration: 24×72 input, a quarter of the channels.
    pub fn reduced() -> Self {
        Self::scaled(24, 72, 4).expect("the reduced network is valid")
    }

    /// Smallest configuration with the same layer stack, for gradient checks.
    pub fn tiny() -> Self {
        Self::scaled(8, 16, 8).expect("the tiny network is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.activation_shapes()?;
        let (_, last) = shapes.last().expect("input row always present");
        if *last != [self.input_height, self.input_width, 1] {
            return invalid(format!(
                "network output {last:?} is not a full-resolution single channel"
            ));
        }
        if !matches!(self.layers.last().map(|l| l.op), Some(LayerOp::Sigmoid)) {
            return invalid("the last layer must be a sigmoid");
        }
        let mut names: Vec<&str> = self.layers.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return invalid("layer names must be unique");
        }
        Ok(())
    }

    /// `(layer name, [h, w, c])` for the input and every layer output.
    /// Stride-2 stages must divide the spatial size exactly.
    pub fn activation_shapes(&self) -> Result<Vec<(String, [usize; 3])>> {
        if self.input_height == 0 || self.input_width == 0 || self.input_channels == 0 {
            return invalid("input dimensions must be positive");
        }
        let mut shape = [self.input_height, self.input_width, self.input_channels];
        let mut out = vec![("input".to_string(), shape)];
        for layer in &self.layers {
            let [h, w, c] = shape;
            shape = match layer.op {
                LayerOp::Conv {
                    kernel,
                    channels,
                    stride,
                } => {
                    if kernel == 0 || channels == 0 || stride == 0 {
                        return invalid(format!("{}: zero kernel, channels or stride", layer.name));
                    }
                    if h % stride != 0 || w % stride != 0 {
                        return invalid(format!(
                            "{}: {h}×{w} is not divisible by stride {stride}",
                            layer.name
                        ));
                    }
                    [h / stride, w / stride, channels]
                }
                LayerOp::ConvLstm { kernel, channels } => {
                    if kernel == 0 || channels == 0 {
                        return invalid(format!("{}: zero kernel or channels", layer.name));
                    }
                    [h, w, channels]
                }
                LayerOp::DepthToSpace { block } => {
                    if block == 0 || c % (block * block) != 0 {
                        return invalid(format!(
                            "{}: {c} channels not divisible by {}",
                            layer.name,
                            block * block
                        ));
                    }
                    [h * block, w * block, c / (block * block)]
                }
                LayerOp::Sigmoid => shape,
            };
            out.push((layer.name.clone(), shape));
        }
        Ok(out)
    }

    /// Input channel count of every layer, in layer order.
    pub(crate) fn input_channels_per_layer(&self) -> Result<Vec<usize>> {
        let shapes = self.activation_shapes()?;
        Ok(shapes[..shapes.len() - 1]
            .iter()
            .map(|(_, s)| s[2])
            .collect())
    }

    /// `[h, w, c]` of each conv-LSTM layer's state, in layer order.
    pub fn lstm_state_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let shapes = self.activation_shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes[1..])
            .filter(|(l, _)| matches!(l.op, LayerOp::ConvLstm { .. }))
            .map(|(_, (_, s))| *s)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_sizes_are_rejected() {
        // 22 halves to 11, which does not halve again
        assert!(ArchitectureConfig::scaled(22, 72, 4).is_err());
        assert!(ArchitectureConfig::scaled(24, 72, 3).is_err());
        assert!(ArchitectureConfig::scaled(24, 72, 4).is_ok());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ArchitectureConfig::reduced();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"op\":\"conv_lstm\""));
        let back: ArchitectureConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn five_recurrent_layers() {
        assert_eq!(
            ArchitectureConfig::default()
                .lstm_state_shapes()
                .unwrap()
                .len(),
            5
        );
    }
}
