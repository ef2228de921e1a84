//! ResNet50 backbone built from 1x1/3x3/1x1 bottleneck blocks.

use super::builder::{dense_head, GraphBuilder};
use super::{Arch, ArchConfig, BlockKind, Network, NodeId, INPUT_CHANNELS, INPUT_SIZE};
use crate::error::Result;
use crate::tensor::{ActivationKind, Padding, Scalar};

/// Bottleneck blocks per stage (stages 2 to 5).
pub const STAGE_BLOCKS: [usize; 4] = [3, 4, 6, 3];
const STAGE_FILTERS: [usize; 4] = [64, 128, 256, 512];

pub(crate) fn build<T: Scalar>(config: &ArchConfig) -> Result<Network<T>> {
    let mut b = GraphBuilder::for_arch(Arch::Resnet50, config, &[INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS]);

    let start = b.mark();
    let x = b.conv("conv1_conv", NodeId::INPUT, 7, config.width(64), 2, Padding::Same, true)?;
    let x = b.batch_norm("conv1_bn", x)?;
    let x = b.activation("conv1_relu", x, ActivationKind::Relu)?;
    let mut x = b.max_pool("pool1_pool", x, 3, 2, Padding::Same)?;
    b.close_block("conv1", BlockKind::Stem, start, 4, false, Some(1));

    for (s, (&blocks, &filters)) in STAGE_BLOCKS.iter().zip(&STAGE_FILTERS).enumerate() {
        let stage = s + 2;
        for i in 1..=blocks {
            let stride = if i == 1 && stage > 2 { 2 } else { 1 };
            let start = b.mark();
            x = bottleneck(&mut b, &format!("conv{stage}_block{i}"), x, config.width(filters), stride, i == 1)?;
            b.close_block(format!("conv{stage}_block{i}"), BlockKind::Bottleneck, start, stride, true, Some(stage));
        }
    }

    let out = dense_head(&mut b, config, x)?;
    b.finish(out)
}

/// One bottleneck block: 1x1 (`filters`, carries the stride), 3x3, 1x1
/// (`4 * filters`, linear), added to the shortcut, then ReLU. With
/// `projection` the shortcut is a strided 1x1 conv + batch norm, otherwise
/// the identity.
pub fn bottleneck<T: Scalar>(
    b: &mut GraphBuilder<T>,
    name: &str,
    x: NodeId,
    filters: usize,
    stride: usize,
    projection: bool,
) -> Result<NodeId> {
    let relu = ActivationKind::Relu;
    let shortcut = if projection {
        let s = b.conv(&format!("{name}_0_conv"), x, 1, 4 * filters, stride, Padding::Same, true)?;
        b.batch_norm(&format!("{name}_0_bn"), s)?
    } else {
        x
    };
    let y = b.conv(&format!("{name}_1_conv"), x, 1, filters, stride, Padding::Same, true)?;
    let y = b.batch_norm(&format!("{name}_1_bn"), y)?;
    let y = b.activation(&format!("{name}_1_relu"), y, relu)?;
    let y = b.conv(&format!("{name}_2_conv"), y, 3, filters, 1, Padding::Same, true)?;
    let y = b.batch_norm(&format!("{name}_2_bn"), y)?;
    let y = b.activation(&format!("{name}_2_relu"), y, relu)?;
    let y = b.conv(&format!("{name}_3_conv"), y, 1, 4 * filters, 1, Padding::Same, true)?;
    let y = b.batch_norm(&format!("{name}_3_bn"), y)?;
    let y = b.residual_add(&format!("{name}_add"), shortcut, y)?;
    b.activation(&format!("{name}_out"), y, relu)
}
