use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Unet,
    Deeplabv3,
}

impl Arch {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unet" => Ok(Arch::Unet),
            "deeplabv3" | "deeplab" => Ok(Arch::Deeplabv3),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Segment,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classify" => Ok(Task::Classify),
            "segment" => Ok(Task::Segment),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Number of segmentation classes: background, tumor, edema, healthy tissue.
pub const SEGMENT_CLASSES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    pub task: Task,
    pub in_channels: usize,
    pub base_channels: usize,
    /// Encoder levels (UNet only).
    pub depth: usize,
    pub num_classes: usize,
    /// Dilation rates of the pyramid pooling branches (DeepLabv3 only).
    pub atrous_rates: Vec<usize>,
    pub input_side: usize,
}

impl ModelSpec {
    pub fn new(arch: Arch, task: Task) -> Self {
        Self {
            arch,
            task,
            in_channels: 1,
            base_channels: 32,
            depth: 4,
            num_classes: match task {
                Task::Classify => 1,
                Task::Segment => SEGMENT_CLASSES,
            },
            atrous_rates: vec![6, 12, 18],
            input_side: 256,
        }
    }

    /// Small configuration used for fast CPU experiments.
    pub fn micro(arch: Arch, task: Task, depth: usize, base_channels: usize, input_side: usize) -> Self {
        Self {
            depth,
            base_channels,
            input_side,
            ..Self::new(arch, task)
        }
    }

    /// Total downsampling between input and the deepest feature map.
    pub fn output_stride(&self) -> usize {
        match self.arch {
            Arch::Unet => 1 << self.depth,
            Arch::Deeplabv3 => 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.in_channels == 0 || self.base_channels == 0 {
            return cfg("in_channels and base_channels must be positive".into());
        }
        if self.num_classes == 0 {
            return cfg("num_classes must be at least 1".into());
        }
        if self.input_side == 0 || self.input_side % self.output_stride() != 0 {
            return cfg(format!(
                "input_side {} is not divisible by the output stride {}",
                self.input_side,
                self.output_stride()
            ));
        }
        match self.arch {
            Arch::Unet => {
                if self.depth == 0 || self.depth > 8 {
                    return cfg(format!("UNet depth must be in 1..=8, got {}", self.depth));
                }
            }
            Arch::Deeplabv3 => {
                if self.atrous_rates.is_empty() {
                    return cfg("DeepLabv3 needs at least one atrous rate".into());
                }
                if self.atrous_rates.windows(2).any(|w| w[0] >= w[1]) || self.atrous_rates[0] == 0 {
                    return cfg(format!(
                        "atrous_rates must be positive and strictly increasing, got {:?}",
                        self.atrous_rates
                    ));
                }
            }
        }
        Ok(())
    }

    /// Checks that `other` describes the same network topology.
    pub fn ensure_compatible(&self, other: &ModelSpec) -> Result<()> {
        if self != other {
            return Err(Error::Checkpoint(crate::error::CheckpointError::SpecMismatch(format!(
                "expected {self:?}, found {other:?}"
            ))));
        }
        Ok(())
    }
}
