//! Networks as directed acyclic graphs of layers, and the architecture
//! builders.
//!
//! Value `0` of a graph is the network input; value `i + 1` is the output
//! of node `i`. Nodes are stored in topological order, so forward walks
//! them front to back and backward walks them back to front. Residual
//! connections are ordinary `residual_add` nodes with two inputs.

mod arch;
mod builder;
mod mobilenet;
mod report;
pub mod resnet;
mod vanilla;
mod xception;

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ForwardCache, ForwardCtx, Layer, LayerKind, Mode};
use crate::seed;
use crate::tensor::{ActivationKind, Scalar, Tensor};

pub use arch::{build, Arch, ArchConfig, CLASS_NAMES, INPUT_CHANNELS, INPUT_SIZE, NUM_CLASSES};
pub use builder::GraphBuilder;
pub use report::{ArchReport, LayerRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const INPUT: NodeId = NodeId(0);

    /// Index into [`Network::nodes`], or `None` for the network input.
    pub fn node_index(self) -> Option<usize> {
        self.0.checked_sub(1)
    }
}

#[derive(Clone, Debug)]
pub struct Node<T: Scalar> {
    pub name: String,
    pub layer: Layer<T>,
    pub inputs: Vec<NodeId>,
    /// Per-sample output shape, validated at build time.
    pub output_shape: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Stem,
    EntryFlow,
    MiddleFlow,
    ExitFlow,
    Bottleneck,
    InvertedResidual,
    Head,
}

/// A named group of consecutive nodes, recorded for structural checks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    /// Node indices (not value ids) belonging to the block.
    pub nodes: Range<usize>,
    pub stride: usize,
    pub residual: bool,
    /// Resolution stage, for architectures organised in stages.
    pub stage: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Network<T: Scalar = f32> {
    name: String,
    arch: Option<Arch>,
    config: ArchConfig,
    input_shape: Vec<usize>,
    nodes: Vec<Node<T>>,
    blocks: Vec<Block>,
    output: NodeId,
}

/// Values and caches of a train-mode forward pass.
pub struct Trace<T: Scalar> {
    values: Vec<Option<Arc<Tensor<T>>>>,
    caches: Vec<Option<ForwardCache<T>>>,
    output: NodeId,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.values[self.output.0].as_deref().expect("output retained")
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.values.get(id.0).and_then(|v| v.as_deref())
    }
}

/// Where backward starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradStart {
    /// The gradient is with respect to the network output.
    Output,
    /// The gradient is with respect to the logits feeding the final softmax
    /// (fused softmax + cross-entropy).
    Logits,
}

/// Parameter gradients per node, aligned with [`Layer::params`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub per_node: Vec<Vec<Tensor<T>>>,
    pub input: Option<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.per_node.iter().flatten()
    }
}

impl<T: Scalar> Network<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arch(&self) -> Option<Arch> {
        self.arch
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [Node<T>] {
        &mut self.nodes
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn output_id(&self) -> NodeId {
        self.output
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shape_of(self.output)
    }

    pub fn shape_of(&self, id: NodeId) -> &[usize] {
        match id.node_index() {
            None => &self.input_shape,
            Some(i) => &self.nodes[i].output_shape,
        }
    }

    pub fn node_by_name(&self, name: &str) -> Option<(usize, &Node<T>)> {
        self.nodes.iter().enumerate().find(|(_, n)| n.name == name)
    }

    /// Indices of nodes that read the output of node `index`.
    pub fn consumers(&self, index: usize) -> Vec<usize> {
        let id = NodeId(index + 1);
        self.nodes.iter().enumerate().filter(|(_, n)| n.inputs.contains(&id)).map(|(i, _)| i).collect()
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(|n| n.layer.param_count()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.nodes.iter().map(|n| n.layer.trainable_count()).sum()
    }

    pub fn report(&self) -> ArchReport {
        ArchReport::new(self)
    }

    /// Trainable parameters of every node, in declared order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.nodes.iter_mut().flat_map(|n| n.layer.params_mut()).collect()
    }

    /// Every stored tensor (parameters, then buffers, node by node) with a
    /// `node/name` label. This is the checkpoint order.
    pub fn state(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for node in &self.nodes {
            for p in node.layer.params().into_iter().chain(node.layer.buffers()) {
                out.push((format!("{}/{}", node.name, p.name), p.tensor));
            }
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.nodes.iter_mut().flat_map(|n| n.layer.state_mut()).collect()
    }

    /// Same graph with every tensor converted to another element type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node {
                name: n.name.clone(),
                layer: builder::cast_layer(&n.layer),
                inputs: n.inputs.clone(),
                output_shape: n.output_shape.clone(),
            })
            .collect();
        Network {
            name: self.name.clone(),
            arch: self.arch,
            config: self.config.clone(),
            input_shape: self.input_shape.clone(),
            nodes,
            blocks: self.blocks.clone(),
            output: self.output,
        }
    }

    /// The first `count` nodes as a standalone network for `input_shape`.
    /// Fails if a kept node reads a value outside the prefix.
    pub fn truncated(&self, count: usize, input_shape: &[usize]) -> Result<Network<T>> {
        let count = count.min(self.nodes.len());
        if count == 0 {
            return Err(Error::Parameter("truncation keeps no nodes".into()));
        }
        let mut b = GraphBuilder::<T>::new(format!("{}[..{count}]", self.name), input_shape, 0);
        let mut last = NodeId::INPUT;
        for node in &self.nodes[..count] {
            last = b.add(&node.name, node.layer.clone(), &node.inputs)?;
        }
        let mut net = b.finish(last)?;
        net.arch = None;
        Ok(net)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.rank() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![input.shape()[0]];
            expected.extend(&self.input_shape);
            return Err(Error::shape(format!("{} input", self.name), &expected, input.shape()));
        }
        Ok(())
    }

    fn node_ctx(ctx: &ForwardCtx, index: usize) -> ForwardCtx {
        ForwardCtx { mode: ctx.mode, seed: seed::mix(ctx.seed, index as u64) }
    }

    /// Last node index reading each value, so inference can drop values early.
    fn last_uses(&self) -> Vec<usize> {
        let mut last = vec![0; self.nodes.len() + 1];
        for (i, node) in self.nodes.iter().enumerate() {
            for id in &node.inputs {
                last[id.0] = i;
            }
        }
        last
    }

    fn run_node(
        &self,
        index: usize,
        values: &[Option<Arc<Tensor<T>>>],
        ctx: &ForwardCtx,
    ) -> Result<(Arc<Tensor<T>>, ForwardCache<T>)> {
        let node = &self.nodes[index];
        let inputs: Vec<Arc<Tensor<T>>> =
            node.inputs.iter().map(|id| values[id.0].clone().expect("value computed before use")).collect();
        node.layer
            .forward(&inputs, &Self::node_ctx(ctx, index))
            .map_err(|e| e.in_layer(index, format!("{} {:?}", node.layer.kind(), node.name)))
    }

    /// Forward pass without keeping caches. Intermediate values are freed
    /// as soon as their last reader has run.
    pub fn forward(&self, input: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let last_use = self.last_uses();
        let mut values: Vec<Option<Arc<Tensor<T>>>> = vec![None; self.nodes.len() + 1];
        values[0] = Some(Arc::new(input.clone()));
        for i in 0..self.nodes.len() {
            let (y, _) = self.run_node(i, &values, ctx)?;
            values[i + 1] = Some(y);
            for id in &self.nodes[i].inputs {
                if last_use[id.0] == i && *id != self.output {
                    values[id.0] = None;
                }
            }
        }
        let out = values[self.output.0].take().expect("output computed");
        Ok(Arc::unwrap_or_clone(out))
    }

    /// Forward pass that records everything backward needs.
    pub fn forward_trace(&self, input: &Tensor<T>, ctx: &ForwardCtx) -> Result<Trace<T>> {
        self.check_input(input)?;
        let mut values: Vec<Option<Arc<Tensor<T>>>> = vec![None; self.nodes.len() + 1];
        let mut caches = Vec::with_capacity(self.nodes.len());
        values[0] = Some(Arc::new(input.clone()));
        for i in 0..self.nodes.len() {
            let (y, cache) = self.run_node(i, &values, ctx)?;
            values[i + 1] = Some(y);
            caches.push(Some(cache));
        }
        Ok(Trace { values, caches, output: self.output })
    }

    /// Backpropagates `grad` through a trace from [`Network::forward_trace`].
    pub fn backward(&self, trace: &Trace<T>, grad: &Tensor<T>, start: GradStart) -> Result<Gradients<T>> {
        if trace.caches.len() != self.nodes.len() {
            return Err(Error::Contract("trace was produced by a different network".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len() + 1];
        let mut skip = None;
        match start {
            GradStart::Output => grads[self.output.0] = Some(grad.clone()),
            GradStart::Logits => {
                let index = self.output.node_index().ok_or_else(|| Error::Contract("network has no layers".into()))?;
                let node = &self.nodes[index];
                if !matches!(node.layer, Layer::Activation(ActivationKind::Softmax)) {
                    return Err(Error::Contract("logit gradients need a final softmax node".into()));
                }
                grads[node.inputs[0].0] = Some(grad.clone());
                skip = Some(index);
            }
        }
        let mut per_node: Vec<Vec<Tensor<T>>> = self.nodes.iter().map(|_| Vec::new()).collect();
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            let Some(g) = grads[i + 1].take() else {
                per_node[i] = node.layer.params().iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
                continue;
            };
            if skip == Some(i) {
                continue;
            }
            let cache = trace.caches[i]
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("missing forward cache for node {i}")))?;
            let lg = node
                .layer
                .backward(&g, cache)
                .map_err(|e| e.in_layer(i, format!("{} {:?}", node.layer.kind(), node.name)))?;
            for (id, gi) in node.inputs.iter().zip(lg.inputs) {
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot @ None => *slot = Some(gi),
                }
            }
            per_node[i] = lg.params;
        }
        Ok(Gradients { per_node, input: grads[0].take() })
    }

    /// Folds train-mode batch statistics from a trace into running averages.
    pub fn update_running_stats(&mut self, trace: &Trace<T>) {
        for (node, cache) in self.nodes.iter_mut().zip(&trace.caches) {
            if let Some(cache) = cache {
                node.layer.update_running_stats(cache);
            }
        }
    }
}

/// Inference: class probabilities and argmax labels (ties go to the lowest
/// class index).
pub fn predict<T: Scalar>(net: &Network<T>, batch: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let probs = net.forward(batch, &ForwardCtx::infer())?;
    let labels = argmax_rows(&probs);
    Ok((probs, labels))
}

pub fn argmax_rows<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let k = *probs.shape().last().expect("rank >= 1");
    probs
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Activation applied to the output of conv-like node `index`, looking
/// through batch norm; `None` means the output is linear.
pub fn activation_after<T: Scalar>(net: &Network<T>, index: usize) -> Option<ActivationKind> {
    let mut at = index;
    loop {
        let consumers = net.consumers(at);
        let &[next] = consumers.as_slice() else { return None };
        match net.nodes[next].layer {
            Layer::BatchNorm(_) => at = next,
            Layer::Activation(kind) => return Some(kind),
            _ => return None,
        }
    }
}

/// Nodes of `kind` within a block, in order.
pub fn block_nodes_of_kind<T: Scalar>(net: &Network<T>, block: &Block, pred: impl Fn(LayerKind) -> bool) -> Vec<usize> {
    block.nodes.clone().filter(|&i| pred(net.nodes[i].layer.kind())).collect()
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}
