//! Dense row-major `f64` tensors with a reverse-mode gradient tape.
//!
//! Every op that consumes at least one gradient-tracking tensor records a
//! node holding its parents and a backward closure. Tensors built only from
//! constants carry no node, so inference runs without a tape at all.

mod conv;
mod gemm;
mod ops;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use conv::{conv2d, conv3d};
pub(crate) use gemm::gemm;

/// Everything a backward closure may look at.
pub(crate) struct BackwardCtx<'a> {
    pub parents: &'a [Tensor],
    pub grad: &'a [f64],
    pub output: &'a [f64],
}

/// Returns one gradient per parent, `None` where the parent needs none.
pub(crate) type GradFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    op: &'static str,
    parents: Vec<Tensor>,
    // `None` marks a view of the single parent: the gradient passes through.
    grad_fn: Option<GradFn>,
}

struct Inner {
    shape: Vec<usize>,
    // Shared so that reshapes are views.
    data: Rc<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// Cheaply clonable handle; clones share data and gradient storage.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl Tensor {
    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    /// Leaf tensor; with `requires_grad` the backward pass accumulates into it.
    pub fn leaf(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} holds {numel} elements but {} were given", data.len()),
            ));
        }
        Ok(Self::raw(shape.to_vec(), data, requires_grad, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::raw(shape.to_vec(), vec![value; numel], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::raw(Vec::new(), vec![value], false, None)
    }

    fn raw(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        Self::raw_shared(shape, Rc::new(data), requires_grad, node)
    }

    fn raw_shared(shape: Vec<usize>, data: Rc<Vec<f64>>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node,
        }))
    }

    /// Result of an op. A node is recorded only if some parent tracks gradients.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        grad_fn: GradFn,
    ) -> Self {
        Self::record(op, shape, Rc::new(data), parents, Some(grad_fn))
    }

    /// Same data under a new shape.
    pub(crate) fn view(op: &'static str, shape: Vec<usize>, parent: &Tensor) -> Self {
        Self::record(op, shape, parent.shared_data(), vec![parent.clone()], None)
    }

    fn record(
        op: &'static str,
        shape: Vec<usize>,
        data: Rc<Vec<f64>>,
        parents: Vec<Tensor>,
        grad_fn: Option<GradFn>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{op}");
        let tracked = parents.iter().any(Tensor::requires_grad);
        let node = tracked.then(|| Node {
            op,
            parents,
            grad_fn,
        });
        Self::raw_shared(shape, data, tracked, node)
    }

    fn shared_data(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.0.data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.to_vec()
    }

    /// True for leaves created with `requires_grad` and for every op result
    /// that depends on one.
    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Name of the op that produced this tensor, if it is on the tape.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    /// Accumulated gradient of a leaf (op results do not retain gradients).
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on a tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    fn key(&self) -> *const Inner {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode pass from a scalar. Gradients are summed into every
    /// reachable gradient-tracking leaf; call [`Tensor::zero_grad`] to reset.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "backward() on a tensor that is not on the tape".into(),
            ));
        }

        let order = self.topo_order();
        let index: HashMap<*const Inner, usize> =
            order.iter().enumerate().map(|(i, t)| (t.key(), i)).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; order.len()];
        grads[order.len() - 1] = Some(vec![1.0]);

        for i in (0..order.len()).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let t = &order[i];
            match &t.0.node {
                Some(node) => {
                    let parent_grads = match &node.grad_fn {
                        Some(f) => f(&BackwardCtx {
                            parents: &node.parents,
                            grad: &grad,
                            output: &t.0.data,
                        }),
                        None => vec![Some(grad)],
                    };
                    debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
                    for (parent, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel(), "{}", node.op);
                        let slot = &mut grads[index[&parent.key()]];
                        match slot {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += g),
                            None => *slot = Some(pg),
                        }
                    }
                }
                None => {
                    let mut stored = t.0.grad.borrow_mut();
                    match stored.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                        None => *stored = Some(grad),
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient-tracking tensors reachable from `self`, parents before children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for p in node.parents.iter().rev() {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn constants_build_no_tape() {
        let a = Tensor::full(&[3], 2.0);
        let b = a.mul(&a).unwrap();
        assert!(b.is_leaf());
        assert!(!b.requires_grad());
        assert!(b.sum().backward().is_err());
    }

    #[test]
    fn square_sum_gradient() {
        let x = Tensor::leaf(&[3], vec![1.0, 2.0, 3.0], true).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::leaf(&[3], vec![1.0, 2.0, 3.0], true).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0, 12.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let x = Tensor::leaf(&[2], vec![1.0, 2.0], true).unwrap();
        let y = x.scale(2.0);
        assert!(matches!(y.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn diamond_graph_visits_shared_node_once() {
        // y = (2x) * (2x) reached through two edges of the same node.
        let x = Tensor::leaf(&[1], vec![3.0], true).unwrap();
        let d = x.scale(2.0);
        let y = d.mul(&d).unwrap().add(&d).unwrap().sum();
        y.backward().unwrap();
        // dy/dx = 8x + 2
        assert_eq!(x.grad().unwrap(), vec![26.0]);
    }

    #[test]
    fn strides_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[]), Vec::<usize>::new());
    }
}
