//! Computation tape and the backward pass.
//!
//! A [`Tape`] records every operation in execution order. Nodes are addressed
//! by [`Var`] handles; `backward` walks the records in exact reverse order,
//! propagating gradients to every input that requires them. Leaf gradients
//! persist and accumulate across backward calls until taken or cleared.

use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Param,
    Conv2d {
        input: Var,
        weight: Var,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Upsample2(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    Mul(Var, Var),
    Max(Var, Var),
    MatMul(Var, Var),
    AddBias {
        input: Var,
        bias: Var,
    },
    ChannelScale {
        input: Var,
        scale: Var,
    },
    SpatialScale {
        input: Var,
        scale: Var,
    },
    Sum(Var),
    Bce {
        pred: Var,
        target: Vec<f64>,
    },
    Focal {
        pred: Var,
        target: Vec<f64>,
        alpha: f64,
        gamma: f64,
    },
    Dice {
        pred: Var,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
pub(crate) struct Node {
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    pub op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn add_into(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
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

    pub(crate) fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that gradients flow into.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Binds a stored parameter. Repeated binds of one id return the same
    /// node, so a parameter shared between two branches accumulates both
    /// branches' gradients.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let entry = store.get(id);
        let v = self.push(entry.value.clone(), entry.trainable, Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf or parameter node.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Moves accumulated parameter gradients into the store.
    pub fn flush_param_grads(&mut self, store: &mut ParamStore) {
        let mut bound: Vec<(ParamId, Var)> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        bound.sort();
        for (id, v) in bound {
            if let Some(g) = self.nodes[v.0].grad.take() {
                store.accumulate_grad(id, &g);
            }
        }
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse-mode sweep from `output`, seeded with ones.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if output.0 >= self.nodes.len() {
            return Err(Error::shape("backward", "output is not on this tape"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0; self.nodes[output.0].value.len()]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match self.nodes[i].op {
                Op::Leaf | Op::Param => add_into(&mut self.nodes[i].grad, g),
                _ => {
                    for (input, gi) in self.input_grads(i, &g) {
                        if self.nodes[input.0].requires_grad {
                            add_into(&mut grads[input.0], gi);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
