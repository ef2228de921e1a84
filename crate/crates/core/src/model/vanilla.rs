use super::builder::GraphBuilder;
use super::{Arch, ArchConfig, BlockKind, Network, NodeId, INPUT_CHANNELS, INPUT_SIZE, NUM_CLASSES};
use crate::error::Result;
use crate::tensor::{ActivationKind, Padding, Scalar};

/// Four conv/pool stages, then flatten, dropout 0.5, dense 512, dense 4.
pub(crate) fn build<T: Scalar>(config: &ArchConfig) -> Result<Network<T>> {
    let mut b = GraphBuilder::for_arch(Arch::VanillaCnn, config, &[INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS]);
    let mut x = NodeId::INPUT;
    for (i, filters) in [64, 64, 128, 128].into_iter().enumerate() {
        let start = b.mark();
        let n = i + 1;
        x = b.conv(&format!("conv{n}"), x, 3, config.width(filters), 1, config.padding, true)?;
        x = b.activation(&format!("conv{n}_relu"), x, ActivationKind::Relu)?;
        x = b.max_pool(&format!("pool{n}"), x, 2, 2, Padding::Valid)?;
        b.close_block(format!("stage{n}"), BlockKind::Stem, start, 2, false, Some(n));
    }
    let start = b.mark();
    x = b.flatten("flatten", x)?;
    x = b.dropout("dropout", x, 0.5)?;
    x = b.dense("fc1", x, config.width(512))?;
    x = b.activation("fc1_relu", x, ActivationKind::Relu)?;
    x = b.dense("fc2", x, NUM_CLASSES)?;
    x = b.activation("softmax", x, ActivationKind::Softmax)?;
    b.close_block("head", BlockKind::Head, start, 1, false, None);
    b.finish(x)
}
