use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};
use crate::tensor::{Padding, Scalar, SeparableOrder};

/// Fixed network input: 150 x 150 RGB.
pub const INPUT_SIZE: usize = 150;
pub const INPUT_CHANNELS: usize = 3;
pub const NUM_CLASSES: usize = 4;

/// Class index order used everywhere (labels, confusion matrices, reports).
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["CNV", "DME", "DRUSEN", "NORMAL"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    VanillaCnn,
    Xception,
    Resnet50,
    Mobilenetv2,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::VanillaCnn, Arch::Xception, Arch::Resnet50, Arch::Mobilenetv2];

    pub fn name(self) -> &'static str {
        match self {
            Arch::VanillaCnn => "vanilla_cnn",
            Arch::Xception => "xception",
            Arch::Resnet50 => "resnet50",
            Arch::Mobilenetv2 => "mobilenetv2",
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
        Arch::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::Parameter(format!(
                "unknown architecture {s:?}; expected one of vanilla_cnn, xception, resnet50, mobilenetv2"
            ))
        })
    }
}

/// Build options shared by all architectures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Every channel count and hidden dense width is divided by this
    /// (rounding up). 1 builds the published widths.
    pub width_divisor: usize,
    /// Convolution padding of the vanilla CNN.
    pub padding: Padding,
    /// Factor order of Xception's separable convolutions.
    pub separable_order: SeparableOrder,
    /// Weight initialization seed.
    pub seed: u64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { width_divisor: 1, padding: Padding::Valid, separable_order: SeparableOrder::DepthwiseFirst, seed: 0 }
    }
}

impl ArchConfig {
    pub fn with_width_divisor(mut self, divisor: usize) -> Self {
        self.width_divisor = divisor;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub(crate) fn width(&self, channels: usize) -> usize {
        channels.div_ceil(self.width_divisor.max(1)).max(1)
    }
}

/// Builds `arch` with the given options.
pub fn build<T: Scalar>(arch: Arch, config: &ArchConfig) -> Result<Network<T>> {
    if config.width_divisor == 0 {
        return Err(Error::Parameter("width_divisor must be >= 1".into()));
    }
    match arch {
        Arch::VanillaCnn => super::vanilla::build(config),
        Arch::Xception => super::xception::build(config),
        Arch::Resnet50 => super::resnet::build(config),
        Arch::Mobilenetv2 => super::mobilenet::build(config),
    }
}
