use super::builder::{dense_head, GraphBuilder};
use super::{Arch, ArchConfig, BlockKind, Network, NodeId, INPUT_CHANNELS, INPUT_SIZE};
use crate::error::Result;
use crate::tensor::{ActivationKind, Padding, Scalar};

const RELU: ActivationKind = ActivationKind::Relu;

/// Xception backbone: entry flow (blocks 1-4), eight middle-flow blocks,
/// exit flow (blocks 13-14), then the dense head. Convolutions carry no
/// bias; every one is followed by batch norm.
pub(crate) fn build<T: Scalar>(config: &ArchConfig) -> Result<Network<T>> {
    let mut b = GraphBuilder::for_arch(Arch::Xception, config, &[INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS]);
    let w = |c| config.width(c);

    let start = b.mark();
    let x = b.conv("block1_conv1", NodeId::INPUT, 3, w(32), 2, Padding::Valid, false)?;
    let x = b.batch_norm("block1_conv1_bn", x)?;
    let x = b.activation("block1_conv1_act", x, RELU)?;
    let x = b.conv("block1_conv2", x, 3, w(64), 1, Padding::Valid, false)?;
    let x = b.batch_norm("block1_conv2_bn", x)?;
    let mut x = b.activation("block1_conv2_act", x, RELU)?;
    b.close_block("block1", BlockKind::EntryFlow, start, 2, false, None);

    for (n, filters) in [(2, 128), (3, 256), (4, 728)] {
        x = downsampling_block(&mut b, config, x, n, w(filters), w(filters), n > 2)?;
    }

    for n in 5..=12 {
        let start = b.mark();
        let shortcut = x;
        let mut y = x;
        for s in 1..=3 {
            y = b.activation(&format!("block{n}_sepconv{s}_act"), y, RELU)?;
            y = sep_bn(&mut b, config, &format!("block{n}_sepconv{s}"), y, w(728))?;
        }
        x = b.residual_add(&format!("block{n}_add"), y, shortcut)?;
        b.close_block(format!("block{n}"), BlockKind::MiddleFlow, start, 1, true, None);
    }

    x = downsampling_block(&mut b, config, x, 13, w(728), w(1024), true)?;

    let start = b.mark();
    let y = sep_bn(&mut b, config, "block14_sepconv1", x, w(1536))?;
    let y = b.activation("block14_sepconv1_act", y, RELU)?;
    let y = sep_bn(&mut b, config, "block14_sepconv2", y, w(2048))?;
    let x = b.activation("block14_sepconv2_act", y, RELU)?;
    b.close_block("block14", BlockKind::ExitFlow, start, 1, false, None);

    let out = dense_head(&mut b, config, x)?;
    b.finish(out)
}

fn sep_bn<T: Scalar>(
    b: &mut GraphBuilder<T>,
    config: &ArchConfig,
    name: &str,
    x: NodeId,
    filters: usize,
) -> Result<NodeId> {
    let y = b.separable(name, x, 3, filters, 1, Padding::Same, config.separable_order, false)?;
    b.batch_norm(&format!("{name}_bn"), y)
}

/// Two separable convs and a stride-2 max pool, merged with a strided 1x1
/// projection of the block input.
fn downsampling_block<T: Scalar>(
    b: &mut GraphBuilder<T>,
    config: &ArchConfig,
    x: NodeId,
    n: usize,
    mid: usize,
    out: usize,
    leading_relu: bool,
) -> Result<NodeId> {
    let start = b.mark();
    let r = b.conv(&format!("block{n}_shortcut"), x, 1, out, 2, Padding::Same, false)?;
    let r = b.batch_norm(&format!("block{n}_shortcut_bn"), r)?;
    let mut y = x;
    if leading_relu {
        y = b.activation(&format!("block{n}_sepconv1_act"), y, RELU)?;
    }
    y = sep_bn(b, config, &format!("block{n}_sepconv1"), y, mid)?;
    y = b.activation(&format!("block{n}_sepconv2_act"), y, RELU)?;
    y = sep_bn(b, config, &format!("block{n}_sepconv2"), y, out)?;
    y = b.max_pool(&format!("block{n}_pool"), y, 3, 2, Padding::Same)?;
    let x = b.residual_add(&format!("block{n}_add"), y, r)?;
    let kind = if n == 13 { BlockKind::ExitFlow } else { BlockKind::EntryFlow };
    b.close_block(format!("block{n}"), kind, start, 2, true, None);
    Ok(x)
}
