//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Every differentiable operation produces a new [`Tensor`] that remembers its
//! inputs and a closure mapping the output gradient back onto them. Node ids
//! increase monotonically with creation, so sorting the reachable nodes by
//! descending id yields a valid reverse topological order for [`Tensor::backward`].

mod gradcheck;
mod linalg;
mod ops;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{shape_str, Error, Result};

pub use gradcheck::{grad_check, grad_check_sampled, GradCheckInput};
pub use linalg::{conv2d_output_extent, Conv2dSpec};

/// Maps the output gradient (and output values) to one optional gradient per input.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Reference-counted handle to a node of the compute graph.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::Dimension(format!(
            "zero extent in shape {}",
            shape_str(shape)
        )));
    }
    if numel(shape) != len {
        return Err(Error::Dimension(format!(
            "shape {} needs {} elements, got {}",
            shape_str(shape),
            numel(shape),
            len
        )));
    }
    Ok(())
}

impl Tensor {
    /// Constant tensor (never receives a gradient).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::raw(shape.to_vec(), data, false))
    }

    /// Leaf tensor that accumulates a gradient during [`Tensor::backward`].
    pub fn leaf(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::raw(shape.to_vec(), data, true))
    }

    pub fn scalar(value: f64) -> Self {
        Self::raw(vec![1], vec![value], false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::raw(shape.to_vec(), vec![0.0; numel(shape)], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::raw(shape.to_vec(), vec![value; numel(shape)], false)
    }

    fn raw(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Records a new node. The backward closure is dropped when no input needs a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            parents,
            backward,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn grad(&self) -> Option<Ref<'_, Vec<f64>>> {
        let g = self.0.grad.borrow();
        if g.is_some() {
            Some(Ref::map(g, |g| g.as_ref().unwrap()))
        } else {
            None
        }
    }

    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow_mut().take()
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {}",
                shape_str(self.shape())
            )));
        }
        Ok(self.0.data[0])
    }

    /// Copy of the values detached from the graph.
    pub fn detach(&self) -> Tensor {
        Self::raw(self.0.shape.clone(), self.0.data.clone(), false)
    }

    fn accumulate(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g),
        }
    }

    /// Reverse pass from a scalar. Leaves keep their gradients; intermediate
    /// gradients are released once propagated.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {}",
                shape_str(self.shape())
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.0.id) {
                continue;
            }
            for p in &t.0.parents {
                if p.requires_grad() && !seen.contains(&p.0.id) {
                    stack.push(p.clone());
                }
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        self.accumulate(vec![1.0]);
        for node in &order {
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            let Some(grad_out) = node.0.grad.borrow_mut().take() else {
                continue;
            };
            let grads = backward(&node.0.data, &grad_out);
            debug_assert_eq!(grads.len(), node.0.parents.len());
            for (parent, g) in node.0.parents.iter().zip(grads) {
                if let Some(g) = g {
                    if parent.requires_grad() {
                        debug_assert_eq!(g.len(), parent.numel());
                        parent.accumulate(g);
                    }
                }
            }
        }
        Ok(())
    }
}
