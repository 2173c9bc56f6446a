//! Reverse-mode differentiable operator set, parameter store, optimizer,
//! and finite-difference gradient verification.
//!
//! The graph is a static list of nodes in topological order. Parameters are
//! leaf nodes backed by a store of named tensors; running batch-norm
//! statistics live in the store as non-trainable entries. Execution state
//! (activations, gradients, caches) lives in an [`Execution`] so a graph can
//! be evaluated concurrently by read-only sharing.

mod adam;
mod exec;
mod gradcheck;
mod ops;
#[cfg(test)]
mod tests;

pub use adam::{adam_step, lr_interp, lr_schedule, AdamState};
pub use exec::{run_backward, run_forward, Execution, GraphObjective, Mode, Objective};
pub use gradcheck::{grad_check, grad_check_t, GradCheckReport};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub type NodeId = usize;

/// A named, shaped array of trainable (or auxiliary) values plus its
/// gradient buffer of the same shape.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub grad: Vec<f32>,
    pub trainable: bool,
}

impl Parameter {
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Operator vocabulary of the graph.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// The network input tensor.
    Input,
    /// Leaf backed by parameter store entry.
    Param(usize),
    /// inputs: [x, w] or [x, w, b]; weight is (cout, cin, kh, kw).
    Conv2d { stride: usize, padding: usize },
    /// inputs: [x, w] or [x, w, b]; weight is (cin, cout, kh, kw).
    ConvTranspose2d { stride: usize },
    /// inputs: [x, w] or [x, w, b] on (batch, features, 1, 1) tensors.
    Linear,
    Relu,
    Sigmoid,
    /// inputs: [x, gamma, beta]; running statistics are store entries.
    BatchNorm2d {
        eps: f64,
        momentum: f64,
        running_mean: usize,
        running_var: usize,
    },
    MaxPool2d { size: usize, stride: usize },
    /// inputs: [a, b]; b broadcasts over any dims of size 1.
    ElementwiseMulBroadcast,
    /// inputs: [a, b]; ties route the gradient to the first operand.
    ElementwiseMax,
    /// (b, c, h, w) -> (b, c, 1, 1) via sum of absolute values.
    L1ReducePerChannel,
    Add,
    /// Concatenate along the channel dimension.
    Concat,
    /// Channel slice [start, start+len) of the single input.
    SliceChannels { start: usize, len: usize },
    /// inputs: [prediction, target]; mean of squared differences, scalar.
    MseLoss,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Param(_) => "param",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::ConvTranspose2d { .. } => "conv2d_transpose",
            OpKind::Linear => "linear",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::BatchNorm2d { .. } => "batchnorm2d",
            OpKind::MaxPool2d { .. } => "maxpool2d",
            OpKind::ElementwiseMulBroadcast => "elementwise_mul_broadcast",
            OpKind::ElementwiseMax => "elementwise_max",
            OpKind::L1ReducePerChannel => "l1_reduce_per_channel",
            OpKind::Add => "add",
            OpKind::Concat => "concat",
            OpKind::SliceChannels { .. } => "slice_channels",
            OpKind::MseLoss => "mse_loss",
        }
    }
}

#[derive(Clone, Debug)]
pub struct OpNode {
    pub kind: OpKind,
    pub inputs: Vec<NodeId>,
    pub name: String,
}

/// Per-batch-item channel/height/width, or a batch-collapsing scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeDims {
    PerBatch([usize; 3]),
    Scalar,
}

impl NodeDims {
    pub fn chw(&self) -> Option<[usize; 3]> {
        match self {
            NodeDims::PerBatch(d) => Some(*d),
            NodeDims::Scalar => None,
        }
    }
}

/// Parameterized differentiable computation: nodes in topological order plus
/// the parameter store.
#[derive(Clone, Debug)]
pub struct NetworkGraph {
    nodes: Vec<OpNode>,
    dims: Vec<NodeDims>,
    params: Vec<Parameter>,
    input_node: NodeId,
    input_chw: [usize; 3],
    output_node: Option<NodeId>,
    /// Sigmoid nodes holding frequency-attention maps, in network order.
    pub attention_map_nodes: Vec<NodeId>,
}

impl NetworkGraph {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        let input = OpNode {
            kind: OpKind::Input,
            inputs: vec![],
            name: "input".into(),
        };
        NetworkGraph {
            nodes: vec![input],
            dims: vec![NodeDims::PerBatch([channels, height, width])],
            params: Vec::new(),
            input_node: 0,
            input_chw: [channels, height, width],
            output_node: None,
            attention_map_nodes: Vec::new(),
        }
    }

    #[inline]
    pub fn input_node(&self) -> NodeId {
        self.input_node
    }
    #[inline]
    pub fn input_chw(&self) -> [usize; 3] {
        self.input_chw
    }
    #[inline]
    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }
    #[inline]
    pub fn node_dims(&self, id: NodeId) -> NodeDims {
        self.dims[id]
    }
    #[inline]
    pub fn params(&self) -> &[Parameter] {
        &self.params
    }
    #[inline]
    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }
    #[inline]
    pub fn output_node(&self) -> Option<NodeId> {
        self.output_node
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.output_node = Some(id);
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Sum of element counts over trainable parameters.
    pub fn count_params(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Parameter values converted to the requested scalar type, in store
    /// order. This is what the executors consume.
    pub fn param_values<T: Scalar>(&self) -> Vec<Vec<T>> {
        self.params
            .iter()
            .map(|p| p.values.iter().map(|v| T::from_f32(*v)).collect())
            .collect()
    }

    pub fn add_param(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<f32>,
        trainable: bool,
    ) -> usize {
        let len: usize = shape.iter().product();
        assert_eq!(values.len(), len, "parameter value length mismatch");
        self.params.push(Parameter {
            name: name.into(),
            shape,
            values,
            grad: vec![0.0; len],
            trainable,
        });
        self.params.len() - 1
    }

    /// Add a parameter and expose it as a leaf node (for custom graphs and
    /// tests).
    pub fn param_leaf(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<f32>,
        trainable: bool,
    ) -> NodeId {
        let idx = self.add_param(name, shape, values, trainable);
        self.param_node(idx)
    }

    fn param_node(&mut self, index: usize) -> NodeId {
        let dims = padded_dims(&self.params[index].shape);
        self.push_node(
            OpNode {
                kind: OpKind::Param(index),
                inputs: vec![],
                name: self.params[index].name.clone(),
            },
            NodeDims::PerBatch(dims),
        )
    }

    fn push_node(&mut self, node: OpNode, dims: NodeDims) -> NodeId {
        self.nodes.push(node);
        self.dims.push(dims);
        self.nodes.len() - 1
    }

    fn chw(&self, id: NodeId, context: &str) -> Result<[usize; 3]> {
        self.dims[id].chw().ok_or_else(|| {
            Error::GraphExec {
                node: id,
                op: self.nodes[id].kind.name().into(),
                message: format!("{context}: scalar node used as tensor input"),
            }
        })
    }

    /// Kaiming-uniform init over fan_in with ReLU gain.
    fn kaiming(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<f32> {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
        name: &str,
    ) -> Result<NodeId> {
        let [cin, h, w] = self.chw(x, name)?;
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(Error::InvalidConfig(format!(
                "{name}: kernel {kernel} larger than padded input {h}x{w}"
            )));
        }
        let oh = (h + 2 * padding - kernel) / stride + 1;
        let ow = (w + 2 * padding - kernel) / stride + 1;
        let fan_in = cin * kernel * kernel;
        let w_vals = Self::kaiming(rng, fan_in, cout * fan_in);
        let w_idx = self.add_param(
            format!("{name}.weight"),
            vec![cout, cin, kernel, kernel],
            w_vals,
            true,
        );
        let w_node = self.param_node(w_idx);
        let mut inputs = vec![x, w_node];
        if bias {
            let b_idx = self.add_param(format!("{name}.bias"), vec![cout], vec![0.0; cout], true);
            inputs.push(self.param_node(b_idx));
        }
        Ok(self.push_node(
            OpNode {
                kind: OpKind::Conv2d { stride, padding },
                inputs,
                name: name.into(),
            },
            NodeDims::PerBatch([cout, oh, ow]),
        ))
    }

    pub fn conv2d_transpose(
        &mut self,
        x: NodeId,
        cout: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
        name: &str,
    ) -> Result<NodeId> {
        let [cin, h, w] = self.chw(x, name)?;
        let oh = (h - 1) * stride + kernel;
        let ow = (w - 1) * stride + kernel;
        let fan_in = cin * kernel * kernel;
        let w_vals = Self::kaiming(rng, fan_in, cin * cout * kernel * kernel);
        let w_idx = self.add_param(
            format!("{name}.weight"),
            vec![cin, cout, kernel, kernel],
            w_vals,
            true,
        );
        let w_node = self.param_node(w_idx);
        let mut inputs = vec![x, w_node];
        if bias {
            let b_idx = self.add_param(format!("{name}.bias"), vec![cout], vec![0.0; cout], true);
            inputs.push(self.param_node(b_idx));
        }
        Ok(self.push_node(
            OpNode {
                kind: OpKind::ConvTranspose2d { stride },
                inputs,
                name: name.into(),
            },
            NodeDims::PerBatch([cout, oh, ow]),
        ))
    }

    pub fn linear(
        &mut self,
        x: NodeId,
        out_features: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
        name: &str,
    ) -> Result<NodeId> {
        let [cin, h, w] = self.chw(x, name)?;
        if h != 1 || w != 1 {
            return Err(Error::InvalidConfig(format!(
                "{name}: linear expects 1x1 spatial dims, got {h}x{w}"
            )));
        }
        let w_vals = Self::kaiming(rng, cin, out_features * cin);
        let w_idx = self.add_param(
            format!("{name}.weight"),
            vec![out_features, cin],
            w_vals,
            true,
        );
        let w_node = self.param_node(w_idx);
        let mut inputs = vec![x, w_node];
        if bias {
            let b_idx = self.add_param(
                format!("{name}.bias"),
                vec![out_features],
                vec![0.0; out_features],
                true,
            );
            inputs.push(self.param_node(b_idx));
        }
        Ok(self.push_node(
            OpNode {
                kind: OpKind::Linear,
                inputs,
                name: name.into(),
            },
            NodeDims::PerBatch([out_features, 1, 1]),
        ))
    }

    pub fn relu(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let d = self.chw(x, name)?;
        Ok(self.push_node(
            OpNode {
                kind: OpKind::Relu,
                inputs: vec![x],
                name: name.into(),
            },
            NodeDims::PerBatch(d),
        ))
    }

    pub fn sigmoid(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let d = self.chw(x, name)?;
        Ok(self.push_node(
            OpNode {
                kind: OpKind::Sigmoid,
                inputs: vec![x],
                name: name.into(),
            },
            NodeDims::PerBatch(d),
        ))
    }

    pub fn batch_norm2d(&mut self, x: NodeId, rng: &mut ChaCha8Rng, name: &str) -> Result<NodeId> {
        let _ = rng; // scale/shift start at 1/0 regardless of seed
        let [c, h, w] = self.chw(x, name)?;
        let g_idx = self.add_param(format!("{name}.gamma"), vec![c], vec![1.0; c], true);
        let b_idx = self.add_param(format!("{name}.beta"), vec![c], vec![0.0; c], true);
        let rm = self.add_param(format!("{name}.running_mean"), vec![c], vec![0.0; c], false);
        let rv = self.add_param(format!("{name}.running_var"), vec![c], vec![1.0; c], false);
        let g_node = self.param_node(g_idx);
        let b_node = self.param_node(b_idx);
        Ok(self.push_node(
            OpNode {
                kind: OpKind::BatchNorm2d {
                    eps: 1e-5,
                    momentum: 0.1,
                    running_mean: rm,
                    running_var: rv,
                },
                inputs: vec![x, g_node, b_node],
                name: name.into(),
            },
            NodeDims::PerBatch([c, h, w]),
        ))
    }

    pub fn max_pool2d(&mut self, x: NodeId, size: usize, stride: usize, name: &str) -> Result<NodeId> {
        let [c, h, w] = self.chw(x, name)?;
        if h < size || w < size {
            return Err(Error::InvalidConfig(format!(
                "{name}: pool window {size} larger than input {h}x{w}"
            )));
        }
        let oh = (h - size) / stride + 1;
        let ow = (w - size) / stride + 1;
        Ok(self.push_node(
            OpNode {
                kind: OpKind::MaxPool2d { size, stride },
                inputs: vec![x],
                name: name.into(),
            },
            NodeDims::PerBatch([c, oh, ow]),
        ))
    }

    pub fn mul_broadcast(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<NodeId> {
        let da = self.chw(a, name)?;
        let db = self.chw(b, name)?;
        for i in 0..3 {
            if db[i] != da[i] && db[i] != 1 {
                return Err(Error::InvalidConfig(format!(
                    "{name}: broadcast dims {db:?} incompatible with {da:?}"
                )));
            }
        }
        Ok(self.push_node(
            OpNode {
                kind: OpKind::ElementwiseMulBroadcast,
                inputs: vec![a, b],
                name: name.into(),
            },
            NodeDims::PerBatch(da),
        ))
    }

    pub fn elementwise_max(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<NodeId> {
        let da = self.chw(a, name)?;
        let db = self.chw(b, name)?;
        if da != db {
            return Err(Error::InvalidConfig(format!(
                "{name}: elementwise_max dims {da:?} vs {db:?}"
            )));
        }
        Ok(self.push_node(
            OpNode {
                kind: OpKind::ElementwiseMax,
                inputs: vec![a, b],
                name: name.into(),
            },
            NodeDims::PerBatch(da),
        ))
    }

    pub fn l1_reduce_per_channel(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let [c, _, _] = self.chw(x, name)?;
        Ok(self.push_node(
            OpNode {
                kind: OpKind::L1ReducePerChannel,
                inputs: vec![x],
                name: name.into(),
            },
            NodeDims::PerBatch([c, 1, 1]),
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<NodeId> {
        let da = self.chw(a, name)?;
        let db = self.chw(b, name)?;
        if da != db {
            return Err(Error::InvalidConfig(format!(
                "{name}: add dims {da:?} vs {db:?}"
            )));
        }
        Ok(self.push_node(
            OpNode {
                kind: OpKind::Add,
                inputs: vec![a, b],
                name: name.into(),
            },
            NodeDims::PerBatch(da),
        ))
    }

    pub fn concat(&mut self, inputs: &[NodeId], name: &str) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::InvalidConfig(format!("{name}: empty concat")));
        }
        let first = self.chw(inputs[0], name)?;
        let mut channels = 0;
        for &id in inputs {
            let d = self.chw(id, name)?;
            if d[1] != first[1] || d[2] != first[2] {
                return Err(Error::InvalidConfig(format!(
                    "{name}: concat spatial dims differ"
                )));
            }
            channels += d[0];
        }
        Ok(self.push_node(
            OpNode {
                kind: OpKind::Concat,
                inputs: inputs.to_vec(),
                name: name.into(),
            },
            NodeDims::PerBatch([channels, first[1], first[2]]),
        ))
    }

    pub fn slice_channels(
        &mut self,
        x: NodeId,
        start: usize,
        len: usize,
        name: &str,
    ) -> Result<NodeId> {
        let [c, h, w] = self.chw(x, name)?;
        if start + len > c {
            return Err(Error::InvalidConfig(format!(
                "{name}: slice [{start}, {}) exceeds {c} channels",
                start + len
            )));
        }
        Ok(self.push_node(
            OpNode {
                kind: OpKind::SliceChannels { start, len },
                inputs: vec![x],
                name: name.into(),
            },
            NodeDims::PerBatch([len, h, w]),
        ))
    }

    pub fn mse_loss(&mut self, prediction: NodeId, target: NodeId, name: &str) -> Result<NodeId> {
        let da = self.chw(prediction, name)?;
        let db = self.chw(target, name)?;
        if da != db {
            return Err(Error::ShapeMismatch(format!(
                "{name}: mse_loss dims {da:?} vs {db:?}"
            )));
        }
        Ok(self.push_node(
            OpNode {
                kind: OpKind::MseLoss,
                inputs: vec![prediction, target],
                name: name.into(),
            },
            NodeDims::Scalar,
        ))
    }

    /// Expose an extra leaf that is fed alongside the input (e.g. a loss
    /// target). Returns the node id; values are supplied per execution.
    pub fn aux_input(&mut self, channels: usize, height: usize, width: usize, name: &str) -> NodeId {
        self.push_node(
            OpNode {
                kind: OpKind::Input,
                inputs: vec![],
                name: name.into(),
            },
            NodeDims::PerBatch([channels, height, width]),
        )
    }

    /// Forward pass in single precision using the stored parameters.
    pub fn forward(&self, input: &Tensor<f32>, mode: Mode) -> Result<Execution<f32>> {
        let params = self.param_values::<f32>();
        run_forward(self, &params, input, &[], mode)
    }

    /// Forward with auxiliary inputs bound to extra Input nodes, in the
    /// order those nodes were created.
    pub fn forward_with_aux(
        &self,
        input: &Tensor<f32>,
        aux: &[(NodeId, Tensor<f32>)],
        mode: Mode,
    ) -> Result<Execution<f32>> {
        let params = self.param_values::<f32>();
        run_forward(self, &params, input, aux, mode)
    }

    /// Backward from a scalar loss node; gradients are written into every
    /// trainable parameter's `grad` buffer and to the input tensor slot.
    pub fn backward(&mut self, exec: &mut Execution<f32>, loss_node: NodeId) -> Result<()> {
        let params = self.param_values::<f32>();
        let seed = Tensor::scalar(1.0f32);
        run_backward(self, &params, exec, loss_node, seed)?;
        self.store_grads(exec);
        Ok(())
    }

    /// Backward seeded with dL/d(node) at an arbitrary node.
    pub fn backward_with_seed(
        &mut self,
        exec: &mut Execution<f32>,
        node: NodeId,
        seed: Tensor<f32>,
    ) -> Result<()> {
        let params = self.param_values::<f32>();
        run_backward(self, &params, exec, node, seed)?;
        self.store_grads(exec);
        Ok(())
    }

    fn store_grads(&mut self, exec: &Execution<f32>) {
        for (id, node) in self.nodes.iter().enumerate() {
            if let OpKind::Param(p) = node.kind {
                if let Some(g) = exec.grad(id) {
                    self.params[p].grad.copy_from_slice(g.data());
                }
            }
        }
    }

    /// Apply the running-statistic updates recorded by a train-mode forward.
    pub fn apply_bn_updates(&mut self, exec: &Execution<f32>) {
        for (idx, values) in exec.bn_updates() {
            self.params[*idx].values.copy_from_slice(values);
        }
    }
}

fn padded_dims(shape: &[usize]) -> [usize; 3] {
    let s = param_tensor_shape(shape);
    [s[1], s[2], s[3]]
}

/// Tensor shape a parameter materializes as during execution.
pub(crate) fn param_tensor_shape(shape: &[usize]) -> [usize; 4] {
    match shape.len() {
        1 => [shape[0], 1, 1, 1],
        2 => [shape[0], shape[1], 1, 1],
        3 => [1, shape[0], shape[1], shape[2]],
        4 => [shape[0], shape[1], shape[2], shape[3]],
        _ => panic!("unsupported parameter rank {}", shape.len()),
    }
}
