//! Reverse-mode differentiation over a linear record of operations.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::error::{bail, Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maps the output gradient to one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
    op: &'static str,
    label: Option<String>,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Recording of a forward computation.
///
/// A tape supports exactly one [`Tape::backward`]; record a fresh tape for
/// every step.
pub struct Tape<T> {
    inner: RefCell<Inner<T>>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
            }),
        }
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Vec::new(), requires_grad, None, "leaf")
    }

    /// Records a constant leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
        op: &'static str,
    ) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            parents,
            requires_grad,
            backward: if requires_grad { backward } else { None },
            op,
            label: None,
        });
        Var { tape: self, id }
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    pub(crate) fn value(&self, id: usize) -> Tensor<T> {
        self.inner.borrow().nodes[id].value.clone()
    }

    /// All labelled values, in recording order.
    pub fn labelled(&self) -> Vec<(String, Tensor<T>)> {
        self.inner
            .borrow()
            .nodes
            .iter()
            .filter_map(|n| n.label.clone().map(|l| (l, n.value.clone())))
            .collect()
    }

    /// Looks up the most recent node carrying `label`.
    pub fn find(&self, label: &str) -> Option<Var<'_, T>> {
        let inner = self.inner.borrow();
        inner
            .nodes
            .iter()
            .rposition(|n| n.label.as_deref() == Some(label))
            .map(|id| Var { tape: self, id })
    }

    /// Ids of every node `var` transitively depends on (excluding itself).
    pub fn ancestors(&self, var: Var<'_, T>) -> BTreeSet<usize> {
        let inner = self.inner.borrow();
        let mut seen = BTreeSet::new();
        let mut stack = inner.nodes[var.id].parents.clone();
        while let Some(id) = stack.pop() {
            if seen.insert(id) {
                stack.extend(inner.nodes[id].parents.iter().copied());
            }
        }
        seen
    }

    /// Name of the operation that produced `var`.
    pub fn op_name(&self, var: Var<'_, T>) -> &'static str {
        self.inner.borrow().nodes[var.id].op
    }

    /// Back-propagates from the scalar `output` and consumes the tape.
    pub fn backward(&self, output: Var<'_, T>) -> Result<Gradients<T>> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            bail!(Tape, "backward already ran on this tape");
        }
        let root_shape = inner.nodes[output.id].value.shape();
        if crate::tensor::numel(&root_shape) != 1 {
            bail!(
                Contract,
                "backward needs a scalar output, got shape {:?}",
                root_shape
            );
        }
        inner.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.id + 1];
        grads[output.id] = Some(Tensor::full(root_shape, T::one()));
        let mut leaves = HashMap::new();
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &mut inner.nodes[id];
            if node.parents.is_empty() {
                if node.requires_grad {
                    leaves.insert(id, g);
                }
                continue;
            }
            let Some(back) = node.backward.take() else {
                continue;
            };
            let parents = node.parents.clone();
            let parent_grads = back(&g)?;
            if parent_grads.len() != parents.len() {
                return Err(TensorError::Tape(format!(
                    "{} returned {} gradients for {} parents",
                    node.op,
                    parent_grads.len(),
                    parents.len()
                )));
            }
            for (pid, pg) in parents.into_iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !inner.nodes[pid].requires_grad {
                    continue;
                }
                if pg.shape() != inner.nodes[pid].value.shape() {
                    return Err(TensorError::Tape(format!(
                        "gradient shape {:?} for {} node of shape {:?}",
                        pg.shape(),
                        inner.nodes[pid].op,
                        inner.nodes[pid].value.shape()
                    )));
                }
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.tape.inner.borrow().nodes[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Attaches a name used by feature dumps and graph introspection.
    pub fn label(self, name: impl Into<String>) -> Self {
        self.tape.inner.borrow_mut().nodes[self.id].label = Some(name.into());
        self
    }
}

/// Gradients of the leaves reached by a backward pass.
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(&var.id)
    }

    /// Gradient of `var`, or zeros when the output did not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.leaves.remove(&var.id)
    }
}
