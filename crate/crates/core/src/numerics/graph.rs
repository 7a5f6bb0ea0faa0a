//! Define-by-run reverse-mode autodiff.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value, its input handles and the [`Op`] that knows the local backward
//! rule. Nodes are appended in evaluation order, so the tape is already a
//! topological order and [`Graph::backward`] just walks it in reverse.
//!
//! Trainable parameters live in a [`ParamStore`] outside the tape. Within one
//! graph each parameter maps to exactly one leaf node, so two forward passes
//! recorded on the same graph share weights by reference and their gradients
//! meet in the same leaf.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// A differentiable operation.
///
/// `backward` receives the gradient of the loss with respect to the op's
/// output and returns one gradient per input. Entries where `needs[i]` is
/// false may be `None`.
pub trait Op {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn Op>>,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that does not take part in differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Leaf whose gradient is collected by [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls with the same id
    /// return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push_leaf(store.value(id).clone(), true);
        self.param_leaves.insert(id, v);
        v
    }

    /// Number of distinct parameter leaves recorded on this graph.
    pub fn param_leaf_count(&self) -> usize {
        self.param_leaves.len()
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Evaluates `op` on the given inputs and records it.
    pub fn apply(&mut self, op: impl Op + 'static, inputs: &[Var]) -> Result<Var> {
        self.apply_boxed(Box::new(op), inputs)
    }

    pub fn apply_boxed(&mut self, op: Box<dyn Op>, inputs: &[Var]) -> Result<Var> {
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            op.forward(&vals)?
        };
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            op: Some(op),
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Back-propagates from a scalar `loss`. Gradients accumulate into every
    /// `requires_grad` leaf; intermediate gradients are dropped as soon as
    /// they have been consumed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "loss must be scalar, got shape {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            ));
        }
        if self.backward_done {
            return Err(Error::invalid("backward already ran on this graph"));
        }
        self.backward_done = true;
        let seed_shape = self.nodes[loss.0].value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::ones(&seed_shape));

        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].op.is_none() {
                continue;
            }
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = {
                let vals: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                node.op
                    .as_ref()
                    .expect("checked above")
                    .backward(&vals, &node.value, &grad, &needs)
            };
            let op_name = node.op.as_ref().expect("checked above").name();
            let inputs = node.inputs.clone();
            for ((input, g), need) in inputs.into_iter().zip(input_grads).zip(needs) {
                if !need {
                    continue;
                }
                let g = g.unwrap_or_else(|| panic!("{op_name}: backward omitted a required gradient"));
                if !g.is_finite() {
                    return Err(Error::NonFinite { op: op_name });
                }
                let slot = &mut self.nodes[input.0];
                debug_assert_eq!(g.shape(), slot.value.shape(), "{op_name} backward shape");
                match &mut slot.grad {
                    Some(acc) => acc.add_assign(&g),
                    None => slot.grad = Some(g),
                }
            }
            // Intermediate values are no longer needed once their grads moved on;
            // keep the output of the loss node for inspection.
            if idx != loss.0 {
                self.nodes[idx].value = Tensor::zeros(&[0]);
            }
        }
        Ok(())
    }

    /// Adds each parameter leaf's gradient into the store's gradient buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        let mut ids: Vec<(&ParamId, &Var)> = self.param_leaves.iter().collect();
        ids.sort_by_key(|(id, _)| id.0);
        for (id, var) in ids {
            if let Some(g) = &self.nodes[var.0].grad {
                store.grad_mut(*id).add_assign(g);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of named trainable tensors with gradient buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}
