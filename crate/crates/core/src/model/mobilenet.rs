use super::builder::{dense_head, GraphBuilder};
use super::{Arch, ArchConfig, BlockKind, Network, NodeId, INPUT_CHANNELS, INPUT_SIZE};
use crate::error::Result;
use crate::tensor::{ActivationKind, Padding, Scalar};

/// (expansion t, output channels c, repeats n, first stride s).
pub const BLOCK_SETTINGS: [(usize, usize, usize, usize); 7] =
    [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)];

const RELU6: ActivationKind = ActivationKind::Relu6;

pub(crate) fn build<T: Scalar>(config: &ArchConfig) -> Result<Network<T>> {
    let mut b = GraphBuilder::for_arch(Arch::Mobilenetv2, config, &[INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS]);

    let start = b.mark();
    let x = b.conv("Conv1", NodeId::INPUT, 3, config.width(32), 2, Padding::Same, false)?;
    let x = b.batch_norm("bn_Conv1", x)?;
    let mut x = b.activation("Conv1_relu", x, RELU6)?;
    b.close_block("Conv1", BlockKind::Stem, start, 2, false, None);

    let mut index = 0;
    for (t, c, n, s) in BLOCK_SETTINGS {
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            x = inverted_residual(&mut b, index, x, t, config.width(c), stride)?;
            index += 1;
        }
    }

    let start = b.mark();
    let x = b.conv("Conv_1", x, 1, config.width(1280), 1, Padding::Same, false)?;
    let x = b.batch_norm("Conv_1_bn", x)?;
    let x = b.activation("out_relu", x, RELU6)?;
    b.close_block("Conv_1", BlockKind::Stem, start, 1, false, None);

    let out = dense_head(&mut b, config, x)?;
    b.finish(out)
}

/// 1x1 expansion + ReLU6, 3x3 depthwise + ReLU6, linear 1x1 projection;
/// shortcut only when the stride is 1 and the channel count is unchanged.
fn inverted_residual<T: Scalar>(
    b: &mut GraphBuilder<T>,
    index: usize,
    x: NodeId,
    expansion: usize,
    out: usize,
    stride: usize,
) -> Result<NodeId> {
    let name = format!("block_{index}");
    let start = b.mark();
    let cin = b.channels(x);
    let y = b.conv(&format!("{name}_expand"), x, 1, cin * expansion, 1, Padding::Same, false)?;
    let y = b.batch_norm(&format!("{name}_expand_BN"), y)?;
    let y = b.activation(&format!("{name}_expand_relu"), y, RELU6)?;
    let y = b.depthwise(&format!("{name}_depthwise"), y, 3, stride, Padding::Same, false)?;
    let y = b.batch_norm(&format!("{name}_depthwise_BN"), y)?;
    let y = b.activation(&format!("{name}_depthwise_relu"), y, RELU6)?;
    let y = b.conv(&format!("{name}_project"), y, 1, out, 1, Padding::Same, false)?;
    let mut y = b.batch_norm(&format!("{name}_project_BN"), y)?;
    let residual = stride == 1 && cin == out;
    if residual {
        y = b.residual_add(&format!("{name}_add"), x, y)?;
    }
    b.close_block(name, BlockKind::InvertedResidual, start, stride, residual, None);
    Ok(y)
}
