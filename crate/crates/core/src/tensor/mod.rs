//! Dense row-major `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle to an immutable node. Operations on tensors
//! that require gradients record a backward closure and keep their inputs
//! alive, so the graph is implicit in the parent links. Calling
//! [`Tensor::backward`] on a scalar walks the graph in reverse topological
//! order and accumulates `∂loss/∂leaf` into every leaf that requires a
//! gradient. Intermediate gradients live only for the duration of the call.

mod broadcast;
mod complex;
mod ops;

use std::cell::{Cell, RefCell, Ref};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use complex::ComplexPair;
pub use ops::normal_cdf;

/// Context handed to a backward closure.
pub(crate) struct GradCtx<'a> {
    pub grad: &'a [f64],
    pub out: &'a [f64],
    pub parents: &'a [Tensor],
}

/// Returns one optional gradient per parent, each shaped like that parent.
pub(crate) type BackwardFn = Box<dyn Fn(&GradCtx<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

thread_local! {
    static NEXT_ID: Cell<usize> = const { Cell::new(0) };
}

fn next_id() -> usize {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Leaf tensor that does not track gradients.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    /// Leaf tensor that accumulates a gradient on `backward`.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape, data, true)
    }

    pub fn leaf(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::raw(shape.to_vec(), data, requires_grad, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::raw(shape.to_vec(), vec![0.0; numel(shape)], false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::raw(shape.to_vec(), vec![value; numel(shape)], false, Vec::new(), None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::raw(vec![1], vec![value], false, Vec::new(), None)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("from_rows", "ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(&[rows.len(), cols], data)
    }

    fn raw(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Self {
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

    /// Builds the result of an operation. The backward closure is only kept
    /// when some parent participates in the graph.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        debug_assert!(
            !parents.iter().all(|p| p.all_finite()) || data.iter().all(|v| v.is_finite()),
            "non-finite output from finite inputs"
        );
        if parents.iter().any(|p| p.requires_grad()) {
            Self::raw(shape, data, true, parents, Some(backward))
        } else {
            Self::raw(shape, data, false, Vec::new(), None)
        }
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

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank());
        let mut off = 0;
        for (i, (&ix, &n)) in index.iter().zip(&self.0.shape).enumerate() {
            assert!(ix < n, "index {ix} out of range for axis {i} of extent {n}");
            off = off * n + ix;
        }
        self.0.data[off]
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
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

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::raw(self.0.shape.clone(), self.0.data.clone(), false, Vec::new(), None)
    }

    /// Accumulates `∂self/∂leaf` into every reachable leaf with `requires_grad`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let pos: std::collections::HashMap<usize, usize> =
            order.iter().enumerate().map(|(i, t)| (t.0.id, i)).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; order.len()];
        grads[order.len() - 1] = Some(vec![1.0]);

        for i in (0..order.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &order[i].0;
            match &node.backward {
                None => {
                    let mut slot = node.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(f) => {
                    let ctx = GradCtx {
                        grad: &g,
                        out: &node.data,
                        parents: &node.parents,
                    };
                    let parent_grads = f(&ctx);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        let j = pos[&p.0.id];
                        match grads[j].as_mut() {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => grads[j] = Some(pg),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable through gradient-tracking edges, parents before children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.0.id) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.requires_grad() && !seen.contains(&p.0.id) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}
