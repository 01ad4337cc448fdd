use super::layers::{self, LstmCache, LstmParams, LstmState};
use super::{NnError, ParamId, ParameterSet, Tensor};

/// Index of a recorded value on a [`Tape`].
pub type NodeId = usize;

/// Parameter ids of one LSTM layer.
#[derive(Debug, Clone, Copy)]
pub struct LstmIds {
    pub input_weights: ParamId,
    pub hidden_weights: ParamId,
    pub bias: ParamId,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
        stride: usize,
    },
    Relu {
        input: NodeId,
    },
    Flatten {
        input: NodeId,
    },
    Linear {
        input: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
    },
    /// Value is `[2, S]`: row 0 hidden, row 1 cell.
    Lstm {
        input: NodeId,
        hidden: NodeId,
        cell: NodeId,
        ids: LstmIds,
        cache: LstmCache,
    },
    Row {
        input: NodeId,
        row: usize,
    },
    /// `sum_m a_m T_m + b`
    Merge {
        terms: Vec<(NodeId, ParamId)>,
        bias: Option<ParamId>,
    },
    Add {
        lhs: NodeId,
        rhs: NodeId,
    },
    Softmax {
        input: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Record of a forward computation, replayed in reverse by [`Tape::backward`].
///
/// Operations reference parameters by id; the parameter values must not change
/// between recording and the backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by a backward pass.
#[derive(Debug)]
pub struct NodeGrads {
    grads: Vec<Option<Tensor>>,
}

impl NodeGrads {
    /// Gradient reaching `id`, or `None` if nothing flowed there.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    /// Constant input; gradients reaching it are reported but go nowhere else.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn conv2d(
        &mut self,
        params: &ParameterSet,
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
        stride: usize,
    ) -> Result<NodeId, NnError> {
        let y = layers::conv2d_forward(self.value(input), params.value(weight), params.value(bias), stride)?;
        Ok(self.push(Op::Conv2d { input, weight, bias, stride }, y))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let y = layers::relu(self.value(input));
        self.push(Op::Relu { input }, y)
    }

    pub fn flatten(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let y = Tensor::vector(x.data().to_vec());
        self.push(Op::Flatten { input }, y)
    }

    pub fn linear(
        &mut self,
        params: &ParameterSet,
        input: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
    ) -> Result<NodeId, NnError> {
        let y = match bias {
            Some(b) => layers::linear_forward(self.value(input), params.value(weight), params.value(b))?,
            None => layers::matvec(self.value(input), params.value(weight))?,
        };
        Ok(self.push(Op::Linear { input, weight, bias }, y))
    }

    /// One LSTM step; returns the `(hidden, cell)` nodes of the new state.
    pub fn lstm(
        &mut self,
        params: &ParameterSet,
        input: NodeId,
        hidden: NodeId,
        cell: NodeId,
        ids: LstmIds,
    ) -> Result<(NodeId, NodeId), NnError> {
        let state = LstmState {
            hidden: self.value(hidden).clone(),
            cell: self.value(cell).clone(),
        };
        let lp = LstmParams {
            input_weights: params.value(ids.input_weights),
            hidden_weights: params.value(ids.hidden_weights),
            bias: params.value(ids.bias),
        };
        let (next, cache) = layers::lstm_forward(self.value(input), &state, lp)?;
        let s = next.size();
        let mut packed = next.hidden.into_data();
        packed.extend_from_slice(next.cell.data());
        let packed = Tensor::new(vec![2, s], packed)?;
        let node = self.push(Op::Lstm { input, hidden, cell, ids, cache }, packed);
        let h = self.row(node, 0)?;
        let c = self.row(node, 1)?;
        Ok((h, c))
    }

    fn row(&mut self, input: NodeId, row: usize) -> Result<NodeId, NnError> {
        let x = self.value(input);
        let &[rows, cols] = x.shape() else {
            return Err(NnError::Shape("row selection needs a matrix".into()));
        };
        if row >= rows {
            return Err(NnError::Shape(format!("row {row} out of {rows}")));
        }
        let y = Tensor::vector(x.data()[row * cols..(row + 1) * cols].to_vec());
        Ok(self.push(Op::Row { input, row }, y))
    }

    /// Sum of `value(node) * param` over `terms`, plus an optional bias.
    pub fn merge(
        &mut self,
        params: &ParameterSet,
        terms: &[(NodeId, ParamId)],
        bias: Option<ParamId>,
    ) -> Result<NodeId, NnError> {
        let Some(&(first_node, first_param)) = terms.first() else {
            return Err(NnError::Usage("merge needs at least one term".into()));
        };
        let mut y = layers::matvec(self.value(first_node), params.value(first_param))?;
        for &(node, param) in &terms[1..] {
            let part = layers::matvec(self.value(node), params.value(param))?;
            if part.shape() != y.shape() {
                return Err(NnError::Shape("merge terms disagree on output width".into()));
            }
            y.add_assign(&part);
        }
        if let Some(b) = bias {
            if params.value(b).shape() != y.shape() {
                return Err(NnError::Shape("merge bias width mismatch".into()));
            }
            y.add_assign(params.value(b));
        }
        Ok(self.push(Op::Merge { terms: terms.to_vec(), bias }, y))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId, NnError> {
        if self.value(lhs).shape() != self.value(rhs).shape() {
            return Err(NnError::Shape(format!(
                "add of {:?} and {:?}",
                self.value(lhs).shape(),
                self.value(rhs).shape()
            )));
        }
        let mut y = self.value(lhs).clone();
        y.add_assign(self.value(rhs));
        Ok(self.push(Op::Add { lhs, rhs }, y))
    }

    pub fn softmax(&mut self, input: NodeId) -> NodeId {
        let y = layers::softmax(self.value(input));
        self.push(Op::Softmax { input }, y)
    }

    /// Reverse pass. `seeds` are upstream gradients of the scalar loss with respect
    /// to recorded nodes; parameter gradients are added (`+=`) into `params`' slots.
    pub fn backward(&self, params: &mut ParameterSet, seeds: &[(NodeId, Tensor)]) -> Result<NodeGrads, NnError> {
        if self.nodes.is_empty() {
            return Err(NnError::Usage("backward called before any forward was recorded".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            let Some(node) = self.nodes.get(*id) else {
                return Err(NnError::Usage(format!("seed node {id} is not on this tape")));
            };
            if node.value.shape() != g.shape() {
                return Err(NnError::Shape(format!(
                    "seed for node {id} has shape {:?}, value has {:?}",
                    g.shape(),
                    node.value.shape()
                )));
            }
            accumulate(&mut grads, *id, g.clone());
        }

        for id in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { input, weight, bias, stride } => {
                    let mut gb = Tensor::zeros(params.value(*bias).shape());
                    let (w, gw) = params.value_and_grad_mut(*weight);
                    let gx = layers::conv2d_backward(self.value(*input), w, *stride, &grad, gw, &mut gb)?;
                    params.grad_mut(*bias).add_assign(&gb);
                    accumulate(&mut grads, *input, gx);
                }
                Op::Relu { input } => {
                    let mut gx = grad.clone();
                    for (g, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads, *input, gx);
                }
                Op::Flatten { input } => {
                    let shape = self.value(*input).shape().to_vec();
                    accumulate(&mut grads, *input, grad.clone().reshape(shape)?);
                }
                Op::Linear { input, weight, bias } => {
                    if let Some(b) = bias {
                        params.grad_mut(*b).add_assign(&grad);
                    }
                    let (w, gw) = params.value_and_grad_mut(*weight);
                    let gx = layers::matvec_backward(self.value(*input), w, grad.data(), gw);
                    accumulate(&mut grads, *input, gx);
                }
                Op::Lstm { input, hidden, cell, ids, cache } => {
                    let s = node.value.shape()[1];
                    let prev = LstmState {
                        hidden: self.value(*hidden).clone(),
                        cell: self.value(*cell).clone(),
                    };
                    let mut gwx = Tensor::zeros(params.value(ids.input_weights).shape());
                    let mut gwh = Tensor::zeros(params.value(ids.hidden_weights).shape());
                    let mut gb = Tensor::zeros(params.value(ids.bias).shape());
                    let lp = LstmParams {
                        input_weights: params.value(ids.input_weights),
                        hidden_weights: params.value(ids.hidden_weights),
                        bias: params.value(ids.bias),
                    };
                    let out = layers::lstm_backward(
                        self.value(*input),
                        &prev,
                        lp,
                        cache,
                        &grad.data()[..s],
                        &grad.data()[s..],
                        &mut gwx,
                        &mut gwh,
                        &mut gb,
                    );
                    params.grad_mut(ids.input_weights).add_assign(&gwx);
                    params.grad_mut(ids.hidden_weights).add_assign(&gwh);
                    params.grad_mut(ids.bias).add_assign(&gb);
                    accumulate(&mut grads, *input, out.input);
                    accumulate(&mut grads, *hidden, out.hidden);
                    accumulate(&mut grads, *cell, out.cell);
                }
                Op::Row { input, row } => {
                    let src = self.value(*input);
                    let cols = src.shape()[1];
                    let mut g = Tensor::zeros(src.shape());
                    g.data_mut()[row * cols..(row + 1) * cols].copy_from_slice(grad.data());
                    accumulate(&mut grads, *input, g);
                }
                Op::Merge { terms, bias } => {
                    if let Some(b) = bias {
                        params.grad_mut(*b).add_assign(&grad);
                    }
                    for &(a, t) in terms {
                        let (w, gw) = params.value_and_grad_mut(t);
                        let ga = layers::matvec_backward(self.value(a), w, grad.data(), gw);
                        accumulate(&mut grads, a, ga);
                    }
                }
                Op::Add { lhs, rhs } => {
                    accumulate(&mut grads, *lhs, grad.clone());
                    accumulate(&mut grads, *rhs, grad.clone());
                }
                Op::Softmax { input } => {
                    let y = node.value.data();
                    let dot: f64 = y.iter().zip(grad.data()).map(|(a, b)| a * b).sum();
                    let gx: Vec<f64> = y.iter().zip(grad.data()).map(|(yi, gi)| yi * (gi - dot)).collect();
                    accumulate(&mut grads, *input, Tensor::vector(gx));
                }
            }
            grads[id] = Some(grad);
        }
        Ok(NodeGrads { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
