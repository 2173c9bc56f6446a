//! Graph execution: forward activation caching and reverse-mode gradient
//! accumulation, generic over scalar precision.

use super::ops::{self, BnCache};
use super::{param_tensor_shape, NetworkGraph, NodeId, OpKind};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics are used and running statistics updates recorded.
    Train,
    /// Running statistics are used; forward is a pure function.
    Eval,
}

/// Activations, gradients, and per-op caches for one pass over a graph.
pub struct Execution<T> {
    values: Vec<Option<Tensor<T>>>,
    grads: Vec<Option<Tensor<T>>>,
    pool_cache: Vec<Option<Vec<u32>>>,
    bn_cache: Vec<Option<BnCache<T>>>,
    bn_updates: Vec<(usize, Vec<T>)>,
    mode: Mode,
}

impl<T: Scalar> Execution<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.values.get(id).and_then(|v| v.as_ref())
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id).and_then(|v| v.as_ref())
    }

    /// Recorded (param index, new values) running-statistic updates.
    pub fn bn_updates(&self) -> &[(usize, Vec<T>)] {
        &self.bn_updates
    }

    fn accumulate(&mut self, id: NodeId, t: Tensor<T>) {
        match &mut self.grads[id] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(t.data().iter()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(t),
        }
    }
}

fn exec_err(graph: &NetworkGraph, id: NodeId, message: String) -> Error {
    Error::GraphExec {
        node: id,
        op: format!("{} '{}'", graph.nodes()[id].kind.name(), graph.nodes()[id].name),
        message,
    }
}

/// Run the graph forward. `aux` binds values to extra Input nodes.
pub fn run_forward<T: Scalar>(
    graph: &NetworkGraph,
    params: &[Vec<T>],
    input: &Tensor<T>,
    aux: &[(NodeId, Tensor<T>)],
    mode: Mode,
) -> Result<Execution<T>> {
    let n = graph.nodes().len();
    let mut exec = Execution {
        values: (0..n).map(|_| None).collect(),
        grads: (0..n).map(|_| None).collect(),
        pool_cache: (0..n).map(|_| None).collect(),
        bn_cache: (0..n).map(|_| None).collect(),
        bn_updates: Vec::new(),
        mode,
    };

    let [c, h, w] = graph.input_chw();
    if input.channels() != c || input.height() != h || input.width() != w {
        return Err(exec_err(
            graph,
            graph.input_node(),
            format!(
                "input shape {:?} does not match declared ({c}, {h}, {w})",
                input.shape()
            ),
        ));
    }
    exec.values[graph.input_node()] = Some(input.clone());
    for (id, t) in aux {
        exec.values[*id] = Some(t.clone());
    }

    for id in 0..n {
        if exec.values[id].is_some() {
            continue;
        }
        let node = &graph.nodes()[id];
        let value = match &node.kind {
            OpKind::Input => {
                return Err(exec_err(graph, id, "unbound input node".into()));
            }
            OpKind::Param(p) => {
                let shape = param_tensor_shape(&graph.params()[*p].shape);
                Tensor::from_vec(shape[0], shape[1], shape[2], shape[3], params[*p].clone())
                    .map_err(|e| exec_err(graph, id, e.to_string()))?
            }
            OpKind::Conv2d { stride, padding } => {
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let wt = exec.values[node.inputs[1]].as_ref().unwrap();
                if wt.channels() != x.channels() {
                    return Err(exec_err(
                        graph,
                        id,
                        format!(
                            "weight expects {} input channels, got {}",
                            wt.channels(),
                            x.channels()
                        ),
                    ));
                }
                let b = node.inputs.get(2).map(|&i| exec.values[i].as_ref().unwrap());
                ops::conv2d_forward(x, wt, b, *stride, *padding)
            }
            OpKind::ConvTranspose2d { stride } => {
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let wt = exec.values[node.inputs[1]].as_ref().unwrap();
                if wt.batch() != x.channels() {
                    return Err(exec_err(
                        graph,
                        id,
                        format!(
                            "weight expects {} input channels, got {}",
                            wt.batch(),
                            x.channels()
                        ),
                    ));
                }
                let b = node.inputs.get(2).map(|&i| exec.values[i].as_ref().unwrap());
                ops::conv_transpose2d_forward(x, wt, b, *stride)
            }
            OpKind::Linear => {
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let wt = exec.values[node.inputs[1]].as_ref().unwrap();
                if wt.channels() != x.channels() || x.height() != 1 || x.width() != 1 {
                    return Err(exec_err(
                        graph,
                        id,
                        format!("linear weight {:?} vs input {:?}", wt.shape(), x.shape()),
                    ));
                }
                let b = node.inputs.get(2).map(|&i| exec.values[i].as_ref().unwrap());
                ops::linear_forward(x, wt, b)
            }
            OpKind::Relu => ops::relu_forward(exec.values[node.inputs[0]].as_ref().unwrap()),
            OpKind::Sigmoid => ops::sigmoid_forward(exec.values[node.inputs[0]].as_ref().unwrap()),
            OpKind::BatchNorm2d {
                eps,
                momentum,
                running_mean,
                running_var,
            } => {
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let gamma = exec.values[node.inputs[1]].as_ref().unwrap();
                let beta = exec.values[node.inputs[2]].as_ref().unwrap();
                let (out, cache, updates) = ops::batchnorm_forward(
                    x,
                    gamma,
                    beta,
                    &params[*running_mean],
                    &params[*running_var],
                    *eps,
                    *momentum,
                    mode == Mode::Train,
                );
                exec.bn_cache[id] = Some(cache);
                if let Some((rm, rv)) = updates {
                    exec.bn_updates.push((*running_mean, rm));
                    exec.bn_updates.push((*running_var, rv));
                }
                out
            }
            OpKind::MaxPool2d { size, stride } => {
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let (out, argmax) = ops::maxpool_forward(x, *size, *stride);
                exec.pool_cache[id] = Some(argmax);
                out
            }
            OpKind::ElementwiseMulBroadcast => {
                let a = exec.values[node.inputs[0]].as_ref().unwrap();
                let b = exec.values[node.inputs[1]].as_ref().unwrap();
                ops::mul_broadcast_forward(a, b)
            }
            OpKind::ElementwiseMax => {
                let a = exec.values[node.inputs[0]].as_ref().unwrap();
                let b = exec.values[node.inputs[1]].as_ref().unwrap();
                if a.shape() != b.shape() {
                    return Err(exec_err(
                        graph,
                        id,
                        format!("shape {:?} vs {:?}", a.shape(), b.shape()),
                    ));
                }
                ops::emax_forward(a, b)
            }
            OpKind::L1ReducePerChannel => {
                ops::l1_reduce_forward(exec.values[node.inputs[0]].as_ref().unwrap())
            }
            OpKind::Add => {
                let a = exec.values[node.inputs[0]].as_ref().unwrap();
                let b = exec.values[node.inputs[1]].as_ref().unwrap();
                if a.shape() != b.shape() {
                    return Err(exec_err(
                        graph,
                        id,
                        format!("shape {:?} vs {:?}", a.shape(), b.shape()),
                    ));
                }
                ops::add_forward(a, b)
            }
            OpKind::Concat => {
                let tensors: Vec<&Tensor<T>> = node
                    .inputs
                    .iter()
                    .map(|&i| exec.values[i].as_ref().unwrap())
                    .collect();
                ops::concat_forward(&tensors)
            }
            OpKind::SliceChannels { start, len } => ops::slice_channels_forward(
                exec.values[node.inputs[0]].as_ref().unwrap(),
                *start,
                *len,
            ),
            OpKind::MseLoss => {
                let a = exec.values[node.inputs[0]].as_ref().unwrap();
                let b = exec.values[node.inputs[1]].as_ref().unwrap();
                if a.shape() != b.shape() {
                    return Err(exec_err(
                        graph,
                        id,
                        format!("shape {:?} vs {:?}", a.shape(), b.shape()),
                    ));
                }
                ops::mse_forward(a, b)
            }
        };
        exec.values[id] = Some(value);
    }
    Ok(exec)
}

/// Reverse pass from `seed_node`, accumulating gradients at every upstream
/// node including parameter leaves and the input.
pub fn run_backward<T: Scalar>(
    graph: &NetworkGraph,
    _params: &[Vec<T>],
    exec: &mut Execution<T>,
    seed_node: NodeId,
    seed: Tensor<T>,
) -> Result<()> {
    let seed_value = exec
        .values
        .get(seed_node)
        .and_then(|v| v.as_ref())
        .ok_or(Error::BackwardBeforeForward)?;
    if seed_value.shape() != seed.shape() {
        return Err(exec_err(
            graph,
            seed_node,
            format!(
                "gradient seed shape {:?} does not match value shape {:?}",
                seed.shape(),
                seed_value.shape()
            ),
        ));
    }
    for g in exec.grads.iter_mut() {
        *g = None;
    }
    exec.grads[seed_node] = Some(seed);

    for id in (0..=seed_node).rev() {
        if exec.grads[id].is_none() {
            continue;
        }
        let node = &graph.nodes()[id];
        match &node.kind {
            OpKind::Input | OpKind::Param(_) => continue,
            OpKind::Conv2d { stride, padding } => {
                let gy = exec.grads[id].take().unwrap();
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let wt = exec.values[node.inputs[1]].as_ref().unwrap();
                let (gx, gw, gb) = ops::conv2d_backward(x, wt, &gy, *stride, *padding, true);
                exec.grads[id] = Some(gy);
                exec.accumulate(node.inputs[0], gx.unwrap());
                exec.accumulate(node.inputs[1], gw);
                if let Some(&b) = node.inputs.get(2) {
                    exec.accumulate(b, gb);
                }
            }
            OpKind::ConvTranspose2d { stride } => {
                let gy = exec.grads[id].take().unwrap();
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let wt = exec.values[node.inputs[1]].as_ref().unwrap();
                let (gx, gw, gb) = ops::conv_transpose2d_backward(x, wt, &gy, *stride, true);
                exec.grads[id] = Some(gy);
                exec.accumulate(node.inputs[0], gx.unwrap());
                exec.accumulate(node.inputs[1], gw);
                if let Some(&b) = node.inputs.get(2) {
                    exec.accumulate(b, gb);
                }
            }
            OpKind::Linear => {
                let gy = exec.grads[id].take().unwrap();
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let wt = exec.values[node.inputs[1]].as_ref().unwrap();
                let (gx, gw, gb) = ops::linear_backward(x, wt, &gy, true);
                exec.grads[id] = Some(gy);
                exec.accumulate(node.inputs[0], gx.unwrap());
                exec.accumulate(node.inputs[1], gw);
                if let Some(&b) = node.inputs.get(2) {
                    exec.accumulate(b, gb);
                }
            }
            OpKind::Relu => {
                let gy = exec.grads[id].take().unwrap();
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let gx = ops::relu_backward(x, &gy);
                exec.grads[id] = Some(gy);
                exec.accumulate(node.inputs[0], gx);
            }
            OpKind::Sigmoid => {
                let gy = exec.grads[id].take().unwrap();
                let y = exec.values[id].as_ref().unwrap();
                let gx = ops::sigmoid_backward(y, &gy);
                exec.grads[id] = Some(gy);
                exec.accumulate(node.inputs[0], gx);
            }
            OpKind::BatchNorm2d { .. } => {
                let gy = exec.grads[id].take().unwrap();
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let gamma = exec.values[node.inputs[1]].as_ref().unwrap();
                let cache = exec.bn_cache[id]
                    .as_ref()
                    .ok_or(Error::BackwardBeforeForward)?;
                let (gx, ggamma, gbeta) = ops::batchnorm_backward(x, gamma, &gy, cache);
                exec.grads[id] = Some(gy);
                exec.accumulate(node.inputs[0], gx);
                exec.accumulate(node.inputs[1], ggamma);
                exec.accumulate(node.inputs[2], gbeta);
            }
            OpKind::MaxPool2d { .. } => {
                let gy = exec.grads[id].take().unwrap();
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let argmax = exec.pool_cache[id]
                    .as_ref()
                    .ok_or(Error::BackwardBeforeForward)?;
                let gx = ops::maxpool_backward(x, &gy, argmax);
                exec.grads[id] = Some(gy);
                exec.accumulate(node.inputs[0], gx);
            }
            OpKind::ElementwiseMulBroadcast => {
                let gy = exec.grads[id].take().unwrap();
                let a = exec.values[node.inputs[0]].as_ref().unwrap();
                let b = exec.values[node.inputs[1]].as_ref().unwrap();
                let (ga, gb) = ops::mul_broadcast_backward(a, b, &gy);
                exec.grads[id] = Some(gy);
                exec.accumulate(node.inputs[0], ga);
                exec.accumulate(node.inputs[1], gb);
            }
            OpKind::ElementwiseMax => {
                let gy = exec.grads[id].take().unwrap();
                let a = exec.values[node.inputs[0]].as_ref().unwrap();
                let b = exec.values[node.inputs[1]].as_ref().unwrap();
                let (ga, gb) = ops::emax_backward(a, b, &gy);
                exec.grads[id] = Some(gy);
                exec.accumulate(node.inputs[0], ga);
                exec.accumulate(node.inputs[1], gb);
            }
            OpKind::L1ReducePerChannel => {
                let gy = exec.grads[id].take().unwrap();
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let gx = ops::l1_reduce_backward(x, &gy);
                exec.grads[id] = Some(gy);
                exec.accumulate(node.inputs[0], gx);
            }
            OpKind::Add => {
                let gy = exec.grads[id].take().unwrap();
                exec.accumulate(node.inputs[0], gy.clone());
                exec.accumulate(node.inputs[1], gy.clone());
                exec.grads[id] = Some(gy);
            }
            OpKind::Concat => {
                let gy = exec.grads[id].take().unwrap();
                let counts: Vec<usize> = node
                    .inputs
                    .iter()
                    .map(|&i| exec.values[i].as_ref().unwrap().channels())
                    .collect();
                let parts = ops::concat_backward(&gy, &counts);
                exec.grads[id] = Some(gy);
                for (&inp, part) in node.inputs.iter().zip(parts.into_iter()) {
                    exec.accumulate(inp, part);
                }
            }
            OpKind::SliceChannels { start, .. } => {
                let gy = exec.grads[id].take().unwrap();
                let x = exec.values[node.inputs[0]].as_ref().unwrap();
                let gx = ops::slice_channels_backward(x, &gy, *start);
                exec.grads[id] = Some(gy);
                exec.accumulate(node.inputs[0], gx);
            }
            OpKind::MseLoss => {
                let gy = exec.grads[id].take().unwrap();
                let a = exec.values[node.inputs[0]].as_ref().unwrap();
                let b = exec.values[node.inputs[1]].as_ref().unwrap();
                let (ga, gb) = ops::mse_backward(a, b, gy.scalar_value());
                exec.grads[id] = Some(gy);
                exec.accumulate(node.inputs[0], ga);
                exec.accumulate(node.inputs[1], gb);
            }
        }
    }
    Ok(())
}

/// A scalar objective over a finished execution, used by training and by
/// the gradient checker. Implementations provide the forward value and the
/// backward seed at some node.
pub trait Objective<T: Scalar> {
    fn value(&self, graph: &NetworkGraph, exec: &Execution<T>) -> Result<f64>;
    fn seed(&self, graph: &NetworkGraph, exec: &Execution<T>) -> Result<(NodeId, Tensor<T>)>;
}

/// Objective that reads a scalar loss node inside the graph.
pub struct GraphObjective {
    pub loss_node: NodeId,
}

impl<T: Scalar> Objective<T> for GraphObjective {
    fn value(&self, _graph: &NetworkGraph, exec: &Execution<T>) -> Result<f64> {
        let v = exec
            .value(self.loss_node)
            .ok_or(Error::BackwardBeforeForward)?;
        Ok(v.scalar_value().to_f64())
    }

    fn seed(&self, _graph: &NetworkGraph, _exec: &Execution<T>) -> Result<(NodeId, Tensor<T>)> {
        Ok((self.loss_node, Tensor::scalar(T::ONE)))
    }
}
