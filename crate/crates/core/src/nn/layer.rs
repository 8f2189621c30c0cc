use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const KERNEL: usize = 5;

/// The four evaluated architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchId {
    Mlp7Linear,
    Mlp7Relu,
    Lenet5Linear,
    Lenet5Relu,
}

impl ArchId {
    pub const ALL: [ArchId; 4] = [
        ArchId::Mlp7Linear,
        ArchId::Mlp7Relu,
        ArchId::Lenet5Linear,
        ArchId::Lenet5Relu,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::Mlp7Linear => "MLP7_LINEAR",
            ArchId::Mlp7Relu => "MLP7_RELU",
            ArchId::Lenet5Linear => "LENET5_LINEAR",
            ArchId::Lenet5Relu => "LENET5_RELU",
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(self, ArchId::Mlp7Linear | ArchId::Lenet5Linear)
    }

    pub fn is_lenet(self) -> bool {
        matches!(self, ArchId::Lenet5Linear | ArchId::Lenet5Relu)
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        ArchId::ALL
            .into_iter()
            .find(|a| a.as_str() == norm)
            .ok_or_else(|| Error::UnknownArch(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    /// Valid 5x5 convolution, stride 1.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
    },
    Relu,
    AvgPool2x2,
    Flatten,
}

impl LayerSpec {
    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// Weight tensor shape: `[out, in]` or `[out, in, 5, 5]`.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some(vec![out_features, in_features]),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => Some(vec![out_channels, in_channels, KERNEL, KERNEL]),
            _ => None,
        }
    }

    pub fn out_units(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { out_features, .. } => Some(out_features),
            LayerSpec::Conv2d { out_channels, .. } => Some(out_channels),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |reason: &str| Error::InvalidShape {
            shape: input.to_vec(),
            reason: format!("{self:?}: {reason}"),
        };
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let n: usize = input.iter().product();
                if n != in_features {
                    return Err(bad(&format!("expected {in_features} input features")));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => match *input {
                [c, h, w] if c == in_channels && h >= KERNEL && w >= KERNEL => {
                    Ok(vec![out_channels, h - KERNEL + 1, w - KERNEL + 1])
                }
                _ => Err(bad("expected C x H x W input with matching channels")),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::AvgPool2x2 => match *input {
                [c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![c, h / 2, w / 2]),
                _ => Err(bad("expected C x H x W input with even H and W")),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}
