//! Dynamic gradient tape.
//!
//! Operations are recorded in execution order; `backward` walks the nodes in
//! exact reverse order, so the tape is always topologically sorted.

use std::sync::{Arc, Mutex, MutexGuard};

use super::{Tensor, TensorError};

pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

pub(crate) struct Node {
    pub(crate) op: &'static str,
    pub(crate) parents: Vec<usize>,
    pub(crate) backward: Option<BackwardFn>,
}

#[derive(Default)]
pub(crate) struct TapeInner {
    pub(crate) nodes: Vec<Node>,
    pub(crate) grads: Vec<Option<Vec<f64>>>,
}

/// Records operations on tensors that were bound to it with [`Tape::leaf`].
#[derive(Clone, Default)]
pub struct Tape {
    pub(crate) inner: Arc<Mutex<TapeInner>>,
}

/// Handle linking a tensor to the node that produced it.
#[derive(Clone)]
pub struct NodeRef {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for NodeRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "NodeRef({})", self.id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, TapeInner> {
        self.inner.lock().expect("tape mutex poisoned")
    }

    pub fn same(&self, other: &Tape) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.lock().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Operation names in recording order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.lock().nodes.iter().map(|n| n.op).collect()
    }

    /// Registers `t` as a differentiable leaf. The returned tensor shares
    /// values with `t` and records every downstream operation.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        let id = self.push(Node { op: "leaf", parents: Vec::new(), backward: None });
        Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            node: Some(NodeRef { tape: self.clone(), id }),
        }
    }

    pub(crate) fn push(&self, node: Node) -> usize {
        let mut inner = self.lock();
        inner.nodes.push(node);
        inner.grads.push(None);
        inner.nodes.len() - 1
    }

    /// Reverse-mode sweep from a scalar loss. Gradients of every recorded
    /// ancestor are kept on the tape and read back with [`Tensor::grad`].
    pub fn backward(&self, loss: &Tensor) -> Result<(), TensorError> {
        if loss.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let node = loss.node.as_ref().ok_or_else(|| {
            TensorError::Contract("backward called on a tensor that is not recorded".into())
        })?;
        if !node.tape.same(self) {
            return Err(TensorError::Contract("loss was recorded on a different tape".into()));
        }
        let mut inner = self.lock();
        let TapeInner { nodes, grads } = &mut *inner;
        grads.iter_mut().for_each(|g| *g = None);
        grads[node.id] = Some(vec![1.0]);
        for id in (0..=node.id).rev() {
            let Some(out_grad) = grads[id].take() else { continue };
            let n = &nodes[id];
            if let Some(bw) = &n.backward {
                let needs = vec![true; n.parents.len()];
                for (&pid, contrib) in n.parents.iter().zip(bw(&out_grad, &needs)) {
                    let Some(c) = contrib else { continue };
                    match &mut grads[pid] {
                        Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            grads[id] = Some(out_grad);
        }
        Ok(())
    }

    pub(crate) fn grad_of(&self, id: usize) -> Option<Vec<f64>> {
        self.lock().grads.get(id).cloned().flatten()
    }
}

/// Records an op on the shared tape of its recorded inputs, if any.
pub(crate) fn record(
    op: &'static str,
    shape: Vec<usize>,
    data: Vec<f64>,
    inputs: &[&Tensor],
    backward: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
) -> Tensor {
    let mut tape: Option<Tape> = None;
    let mut parents = Vec::new();
    let mut slots = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        if let Some(n) = &t.node {
            match &tape {
                Some(tp) => assert!(tp.same(&n.tape), "{op}: inputs recorded on different tapes"),
                None => tape = Some(n.tape.clone()),
            }
            parents.push(n.id);
            slots.push(i);
        }
    }
    let mut out = Tensor { shape, data: Arc::from(data), node: None };
    if let Some(tape) = tape {
        let arity = inputs.len();
        let bw: BackwardFn = Box::new(move |g: &[f64], _needs: &[bool]| {
            let mut needs = vec![false; arity];
            for &s in &slots {
                needs[s] = true;
            }
            let mut all = backward(g, &needs);
            slots.iter().map(|&s| all[s].take()).collect()
        });
        let id = tape.push(Node { op, parents, backward: Some(bw) });
        out.node = Some(NodeRef { tape, id });
    }
    out
}
