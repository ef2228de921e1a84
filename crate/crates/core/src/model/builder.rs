use rand_chacha::ChaCha8Rng;

use super::{Arch, ArchConfig, Block, BlockKind, Network, Node, NodeId};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv, Dense, DepthwiseConv, Dropout, Layer, MaxPool, SeparableConv};
use crate::seed;
use crate::tensor::{ActivationKind, ConvSpec, Padding, Scalar, SeparableOrder};

/// Appends layers to a graph, checking every shape as it goes.
pub struct GraphBuilder<T: Scalar> {
    name: String,
    arch: Option<Arch>,
    config: ArchConfig,
    input_shape: Vec<usize>,
    nodes: Vec<Node<T>>,
    blocks: Vec<Block>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> GraphBuilder<T> {
    pub fn new(name: impl Into<String>, input_shape: &[usize], seed: u64) -> Self {
        Self {
            name: name.into(),
            arch: None,
            config: ArchConfig::default().with_seed(seed),
            input_shape: input_shape.to_vec(),
            nodes: Vec::new(),
            blocks: Vec::new(),
            rng: seed::rng(seed),
        }
    }

    pub(crate) fn for_arch(arch: Arch, config: &ArchConfig, input_shape: &[usize]) -> Self {
        let mut b = Self::new(arch.name(), input_shape, config.seed);
        b.arch = Some(arch);
        b.config = config.clone();
        b
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        match id.node_index() {
            None => &self.input_shape,
            Some(i) => &self.nodes[i].output_shape,
        }
    }

    pub fn channels(&self, id: NodeId) -> usize {
        *self.shape(id).last().expect("non-empty shape")
    }

    /// Index the next node will get; used to delimit blocks.
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    pub fn add(&mut self, name: &str, layer: Layer<T>, inputs: &[NodeId]) -> Result<NodeId> {
        let index = self.nodes.len();
        let wrap = |e: Error| e.in_layer(index, format!("{} {name:?}", layer.kind()));
        if let Some(bad) = inputs.iter().find(|id| id.0 > index) {
            return Err(wrap(Error::Contract(format!("input value {} does not exist yet", bad.0))));
        }
        let shapes: Vec<&[usize]> = inputs.iter().map(|&id| self.shape(id)).collect();
        let output_shape = layer.output_shape(&shapes).map_err(wrap)?;
        self.nodes.push(Node { name: name.to_string(), layer, inputs: inputs.to_vec(), output_shape });
        Ok(NodeId(index + 1))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        kernel: usize,
        filters: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> Result<NodeId> {
        let spec = ConvSpec::new(kernel, self.channels(x), filters, stride, padding);
        let layer = Conv::new(spec, bias, &mut self.rng).map_err(|e| e.in_layer(self.nodes.len(), name))?;
        self.add(name, Layer::Conv(layer), &[x])
    }

    pub fn depthwise(
        &mut self,
        name: &str,
        x: NodeId,
        kernel: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> Result<NodeId> {
        let spec = ConvSpec::depthwise(kernel, self.channels(x), stride, padding);
        let layer = DepthwiseConv::new(spec, bias, &mut self.rng).map_err(|e| e.in_layer(self.nodes.len(), name))?;
        self.add(name, Layer::DepthwiseConv(layer), &[x])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn separable(
        &mut self,
        name: &str,
        x: NodeId,
        kernel: usize,
        filters: usize,
        stride: usize,
        padding: Padding,
        order: SeparableOrder,
        bias: bool,
    ) -> Result<NodeId> {
        let spec = ConvSpec::new(kernel, self.channels(x), filters, stride, padding);
        let layer =
            SeparableConv::new(spec, order, bias, &mut self.rng).map_err(|e| e.in_layer(self.nodes.len(), name))?;
        self.add(name, Layer::SeparableConv(layer), &[x])
    }

    pub fn batch_norm(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let c = self.channels(x);
        self.add(name, Layer::BatchNorm(BatchNorm::new(c)), &[x])
    }

    pub fn activation(&mut self, name: &str, x: NodeId, kind: ActivationKind) -> Result<NodeId> {
        self.add(name, Layer::Activation(kind), &[x])
    }

    pub fn max_pool(&mut self, name: &str, x: NodeId, size: usize, stride: usize, padding: Padding) -> Result<NodeId> {
        self.add(name, Layer::MaxPool(MaxPool::new(size, stride, padding)), &[x])
    }

    pub fn flatten(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.add(name, Layer::Flatten, &[x])
    }

    pub fn dense(&mut self, name: &str, x: NodeId, units: usize) -> Result<NodeId> {
        let d = match self.shape(x) {
            [d] => *d,
            other => {
                let other = other.to_vec();
                return Err(Error::shape("dense expects a flat input", &[other.iter().product()], &other)
                    .in_layer(self.nodes.len(), format!("dense {name:?}")));
            }
        };
        let layer = Dense::new(d, units, &mut self.rng);
        self.add(name, Layer::Dense(layer), &[x])
    }

    pub fn dropout(&mut self, name: &str, x: NodeId, p: f64) -> Result<NodeId> {
        let layer = Dropout::new(p).map_err(|e| e.in_layer(self.nodes.len(), name))?;
        self.add(name, Layer::Dropout(layer), &[x])
    }

    pub fn residual_add(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.add(name, Layer::ResidualAdd, &[a, b])
    }

    /// Records nodes `start..` (up to now) as a block.
    pub fn close_block(
        &mut self,
        name: impl Into<String>,
        kind: BlockKind,
        start: usize,
        stride: usize,
        residual: bool,
        stage: Option<usize>,
    ) {
        self.blocks.push(Block { name: name.into(), kind, nodes: start..self.nodes.len(), stride, residual, stage });
    }

    pub fn finish(self, output: NodeId) -> Result<Network<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("network has no layers".into()));
        }
        if output.0 > self.nodes.len() {
            return Err(Error::Contract(format!("output value {} does not exist", output.0)));
        }
        Ok(Network {
            name: self.name,
            arch: self.arch,
            config: self.config,
            input_shape: self.input_shape,
            nodes: self.nodes,
            blocks: self.blocks,
            output,
        })
    }
}

pub(crate) fn cast_layer<T: Scalar, U: Scalar>(layer: &Layer<T>) -> Layer<U> {
    let opt = |t: &Option<crate::tensor::Tensor<T>>| t.as_ref().map(|t| t.cast());
    match layer {
        Layer::Conv(l) => Layer::Conv(Conv { spec: l.spec, kernel: l.kernel.cast(), bias: opt(&l.bias) }),
        Layer::DepthwiseConv(l) => {
            Layer::DepthwiseConv(DepthwiseConv { spec: l.spec, kernel: l.kernel.cast(), bias: opt(&l.bias) })
        }
        Layer::SeparableConv(l) => Layer::SeparableConv(SeparableConv {
            spec: l.spec,
            order: l.order,
            depthwise: l.depthwise.cast(),
            pointwise: l.pointwise.cast(),
            bias: opt(&l.bias),
        }),
        Layer::MaxPool(l) => Layer::MaxPool(*l),
        Layer::Dense(l) => Layer::Dense(Dense { weights: l.weights.cast(), bias: l.bias.cast() }),
        Layer::Flatten => Layer::Flatten,
        Layer::Dropout(l) => Layer::Dropout(*l),
        Layer::BatchNorm(l) => Layer::BatchNorm(BatchNorm {
            gamma: l.gamma.cast(),
            beta: l.beta.cast(),
            running_mean: l.running_mean.cast(),
            running_var: l.running_var.cast(),
            eps: l.eps,
            momentum: l.momentum,
        }),
        Layer::Activation(k) => Layer::Activation(*k),
        Layer::ResidualAdd => Layer::ResidualAdd,
    }
}

/// Flatten, Dense 1024 + ReLU, Dropout 0.2, Dense 4 + softmax; shared by
/// the three transfer-learning backbones.
pub(crate) fn dense_head<T: Scalar>(b: &mut GraphBuilder<T>, config: &ArchConfig, x: NodeId) -> Result<NodeId> {
    let start = b.mark();
    let x = b.flatten("flatten", x)?;
    let x = b.dense("fc1", x, config.width(1024))?;
    let x = b.activation("fc1_relu", x, ActivationKind::Relu)?;
    let x = b.dropout("dropout", x, 0.2)?;
    let x = b.dense("fc2", x, super::NUM_CLASSES)?;
    let x = b.activation("softmax", x, ActivationKind::Softmax)?;
    b.close_block("head", BlockKind::Head, start, 1, false, None);
    Ok(x)
}
