//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation whose inputs include a tracked value.
//! Values live in the [`Var`] handles themselves; the tape only keeps the
//! backward closures (and whatever they captured), so untracked inference
//! drops intermediates as soon as their handles go out of scope.
//!
//! Nodes are appended in execution order, which makes the record
//! topologically sorted by construction. [`Tape::backward`] walks it in
//! reverse once; gradients reaching the same node from several consumers
//! are summed.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{ensure, Result};
use crate::tensor::{Element, Tensor};

pub type NodeId = usize;

/// Backward rule: receives the output gradient and a per-input flag telling
/// which input gradients are needed; returns one optional gradient per input.
pub type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    kind: &'static str,
    inputs: Vec<Option<NodeId>>,
    backward: Option<BackwardFn<T>>,
}

/// The computation record.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    spent: Cell<bool>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A value produced on a tape. Cloning is cheap (reference counted).
pub struct Var<'t, T: Element> {
    tape: &'t Tape<T>,
    value: Rc<Tensor<T>>,
    node: Option<NodeId>,
}

impl<T: Element> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        Self {
            tape: self.tape,
            value: Rc::clone(&self.value),
            node: self.node,
        }
    }
}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.value.shape())
            .field("node", &self.node)
            .finish()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            spent: Cell::new(false),
        }
    }

    /// A trainable leaf: gradients are collected for it.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            kind: "leaf",
            inputs: Vec::new(),
            backward: None,
        });
        Var {
            tape: self,
            value: Rc::new(value),
            node: Some(nodes.len() - 1),
        }
    }

    /// An untracked value.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var {
            tape: self,
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record an operation. When none of `inputs` is tracked the result is an
    /// untracked value and `backward` is dropped unused.
    pub fn record<'t>(
        &'t self,
        kind: &'static str,
        value: Tensor<T>,
        inputs: &[&Var<'t, T>],
        backward: impl FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'t, T> {
        let ids: Vec<Option<NodeId>> = inputs.iter().map(|v| v.node).collect();
        if ids.iter().all(Option::is_none) {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            kind,
            inputs: ids,
            backward: Some(Box::new(backward)),
        });
        Var {
            tape: self,
            value: Rc::new(value),
            node: Some(nodes.len() - 1),
        }
    }

    /// Reverse sweep from a one-element `loss`. Consumes the recorded
    /// backward rules, so it can run once per tape.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        ensure!(
            loss.value.len() == 1,
            "backward needs a scalar loss, got shape {:?}",
            loss.value.shape()
        );
        ensure!(!self.spent.get(), "backward already ran on this tape");
        self.spent.set(true);
        let mut out = Gradients {
            grads: HashMap::new(),
        };
        let Some(root) = loss.node else {
            return Ok(out);
        };
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::ones(loss.value.shape()));
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let (inputs, backward) = {
                let mut nodes = self.nodes.borrow_mut();
                let node = &mut nodes[id];
                (node.inputs.clone(), node.backward.take())
            };
            let Some(backward) = backward else {
                out.grads.insert(id, g);
                continue;
            };
            let needs: Vec<bool> = inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &needs);
            debug_assert_eq!(input_grads.len(), inputs.len());
            for (input, ig) in inputs.into_iter().zip(input_grads) {
                if let (Some(pid), Some(ig)) = (input, ig) {
                    match &mut grads[pid] {
                        Some(acc) => acc.add_assign(&ig),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
        }
        Ok(out)
    }

    /// Kinds of recorded nodes, in order. Used in diagnostics.
    pub fn kinds(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.kind).collect()
    }
}

/// Gradients of tracked leaves after a backward sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: HashMap<NodeId, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of `leaf`, or `None` when the loss does not depend on it.
    pub fn get(&self, leaf: &Var<'_, T>) -> Option<&Tensor<T>> {
        leaf.node.and_then(|id| self.grads.get(&id))
    }

    pub fn take(&mut self, leaf: &Var<'_, T>) -> Option<Tensor<T>> {
        leaf.node.and_then(|id| self.grads.remove(&id))
    }

    /// Gradient of `leaf`, or zeros of its shape when it was unreachable.
    pub fn get_or_zeros(&self, leaf: &Var<'_, T>) -> Tensor<T> {
        self.get(leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape()))
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node
    }

    /// Same value, cut from the record.
    pub fn detach(&self) -> Self {
        Self {
            tape: self.tape,
            value: Rc::clone(&self.value),
            node: None,
        }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value).clone()
    }
}
