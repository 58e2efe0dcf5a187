//! Reverse-mode automatic differentiation over dense N-d arrays.
//!
//! [`Tensor`] is a flat floating-point buffer plus a shape, laid out
//! batch × channels × height × width for image data. Every operation that
//! consumes tracked tensors records a backward closure; [`Tensor::backward`]
//! replays the graph in reverse topological order and accumulates gradients
//! into every reachable tensor with `requires_grad` set.
//!
//! Element type is generic over [`Element`] (`f32` or `f64`): training and
//! inference run at 32-bit, gradient checking at 64-bit.

mod gradcheck;
pub(crate) mod ops;

pub use gradcheck::{grad_check, GradCheckReport, ParamError};
pub use ops::{conv2d, conv_output_size};

use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};

/// Scalar element of a [`Tensor`]: `f32` or `f64`.
pub trait Element:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// C ← alpha·A·B + beta·C. A is m×k with strides (rsa, csa), B is k×n
    /// with strides (rsb, csb); C is row-major m×n. Strided access lets
    /// callers multiply by a transpose without materializing it.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize, k: usize, n: usize,
        alpha: Self,
        a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_element {
    ($ty:ty, $gemm:path) => {
        impl Element for $ty {
            fn of_f64(v: f64) -> Self {
                v as $ty
            }
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                m: usize, k: usize, n: usize,
                alpha: Self,
                a: &[Self], rsa: isize, csa: isize,
                b: &[Self], rsb: isize, csb: isize,
                beta: Self,
                c: &mut [Self],
            ) {
                if m == 0 || k == 0 || n == 0 {
                    return;
                }
                // Strides describe views over the full slices; the farthest
                // element read must stay in bounds.
                debug_assert!(
                    (m as isize - 1) * rsa + (k as isize - 1) * csa < a.len() as isize
                );
                debug_assert!(
                    (k as isize - 1) * rsb + (n as isize - 1) * csb < b.len() as isize
                );
                debug_assert!(c.len() >= m * n);
                unsafe {
                    $gemm(
                        m, k, n, alpha,
                        a.as_ptr(), rsa, csa,
                        b.as_ptr(), rsb, csb,
                        beta,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
        }
    };
}

impl_element!(f32, matrixmultiply::sgemm);
impl_element!(f64, matrixmultiply::dgemm);

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Run `f` without recording any backward graph. Used for inference, where
/// graph bookkeeping would only cost memory.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = NO_GRAD.with(|c| c.replace(true));
    let out = f();
    NO_GRAD.with(|c| c.set(prev));
    out
}

fn grad_enabled() -> bool {
    !NO_GRAD.with(|c| c.get())
}

/// Backward closure: receives the node's output gradient and returns one
/// optional gradient buffer per parent (None for parents that do not need
/// gradient).
type BackwardFn<E> = Box<dyn Fn(&[E]) -> Vec<Option<Vec<E>>> + Send + Sync>;

struct Node<E: Element> {
    parents: Vec<Tensor<E>>,
    backward: BackwardFn<E>,
}

struct Inner<E: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<E>>,
    grad: RwLock<Option<Vec<E>>>,
    requires_grad: bool,
    node: Option<Node<E>>,
}

/// Dense N-dimensional array with optional gradient tracking.
///
/// Cloning is cheap (shared buffer). Mutating the data of a tensor that is
/// simultaneously read from another thread is forbidden; the optimizer is the
/// only in-crate writer and runs with exclusive access.
pub struct Tensor<E: Element = f32> {
    inner: Arc<Inner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor { inner: Arc::clone(&self.inner) }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.inner.shape, self.inner.requires_grad
        )
    }
}

impl<E: Element> Tensor<E> {
    fn from_parts(shape: Vec<usize>, data: Vec<E>, requires_grad: bool, node: Option<Node<E>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: RwLock::new(None),
                requires_grad,
                node,
            }),
        }
    }

    /// Result of a tracked operation. Grad tracking is dropped when no parent
    /// needs it or when inside [`no_grad`].
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<E>, parents: Vec<Tensor<E>>, backward: BackwardFn<E>) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.inner.requires_grad);
        if track {
            Self::from_parts(shape, data, true, Some(Node { parents, backward }))
        } else {
            Self::from_parts(shape, data, false, None)
        }
    }

    /// A leaf tensor. `requires_grad` marks it as a gradient sink.
    pub fn new(shape: &[usize], data: Vec<E>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), data, requires_grad, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![E::zero(); numel], false, None)
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; numel], false, None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, E::one())
    }

    pub fn scalar(value: E) -> Self {
        Self::from_parts(vec![], vec![value], false, None)
    }

    /// Convert the element type (leaf; gradient history is not carried over).
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        let data = self.data_ref().iter().map(|v| F::of_f64(v.as_f64())).collect();
        Tensor::from_parts(self.inner.shape.clone(), data, false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Mark a leaf tensor as a gradient sink (consumes and rebuilds the handle).
    pub fn with_requires_grad(self) -> Self {
        let data = self.to_vec();
        Self::from_parts(self.inner.shape.clone(), data, true, None)
    }

    /// Copy of the data buffer.
    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.read().unwrap().clone()
    }

    /// Zero-copy read access.
    pub(crate) fn data_ref(&self) -> std::sync::RwLockReadGuard<'_, Vec<E>> {
        self.inner.data.read().unwrap()
    }

    /// Mutate the data of a leaf tensor in place (optimizer updates,
    /// finite-difference nudges). Panics on non-leaf tensors: graph nodes are
    /// immutable once created.
    pub fn with_data_mut(&self, f: impl FnOnce(&mut [E])) {
        assert!(self.inner.node.is_none(), "cannot mutate a non-leaf tensor");
        f(&mut self.inner.data.write().unwrap());
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> E {
        let d = self.data_ref();
        assert_eq!(d.len(), 1, "item() on tensor with {} elements", d.len());
        d[0]
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.read().unwrap().clone()
    }

    /// Clear the accumulated gradient.
    pub fn zero_grad(&self) {
        *self.inner.grad.write().unwrap() = None;
    }

    /// True when all elements are finite.
    pub fn all_finite(&self) -> bool {
        self.data_ref().iter().all(|v| v.is_finite())
    }

    /// Cut the tensor out of the graph: same values, no history, no grad.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.inner.shape.clone(), self.to_vec(), false, None)
    }

    fn accumulate_grad(&self, contribution: &[E]) {
        let mut slot = self.inner.grad.write().unwrap();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi = *gi + *ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Reverse-mode gradient accumulation from a scalar loss.
    ///
    /// Gradients add into any existing `grad` buffers; call [`Tensor::zero_grad`]
    /// on the parameters between steps. Rejects non-scalar tensors.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::InvalidArg(format!(
                "backward() requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }

        // Topological order over the subgraph that requires grad.
        let mut order: Vec<Tensor<E>> = Vec::new();
        let mut visited: std::collections::HashSet<u64> = std::collections::HashSet::new();
        // Iterative DFS; second element tracks whether children were expanded.
        let mut stack: Vec<(Tensor<E>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.inner.id) {
                continue;
            }
            let parents: Vec<Tensor<E>> = t
                .inner
                .node
                .as_ref()
                .map(|n| n.parents.iter().filter(|p| p.inner.requires_grad).cloned().collect())
                .unwrap_or_default();
            stack.push((t, true));
            for p in parents {
                if !visited.contains(&p.inner.id) {
                    stack.push((p, false));
                }
            }
        }

        self.accumulate_grad(&[E::one()]);
        for t in order.iter().rev() {
            let Some(node) = t.inner.node.as_ref() else { continue };
            let grad_out = match t.inner.grad.read().unwrap().clone() {
                Some(g) => g,
                None => continue,
            };
            let parent_grads = (node.backward)(&grad_out);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, pg) in node.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    if parent.inner.requires_grad {
                        debug_assert_eq!(pg.len(), parent.numel());
                        parent.accumulate_grad(&pg);
                    }
                }
            }
            // Interior gradients are scratch space; drop them eagerly.
            if t.inner.node.is_some() && t.inner.id != self.inner.id {
                *t.inner.grad.write().unwrap() = None;
            }
        }
        Ok(())
    }
}

/// A named trainable tensor. Names are unique within a network and double as
/// checkpoint record keys.
#[derive(Clone)]
pub struct Parameter<E: Element = f32> {
    pub name: String,
    pub tensor: Tensor<E>,
}

impl<E: Element> Parameter<E> {
    pub fn new(name: impl Into<String>, tensor: Tensor<E>) -> Self {
        Parameter { name: name.into(), tensor }
    }
}

impl<E: Element> fmt::Debug for Parameter<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Parameter({}, shape={:?})", self.name, self.tensor.shape())
    }
}

/// Check the parameter-name uniqueness invariant.
pub fn check_unique_names<E: Element>(params: &[Parameter<E>]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for p in params {
        if !seen.insert(p.name.as_str()) {
            return Err(Error::Config(format!("duplicate parameter name `{}`", p.name)));
        }
    }
    Ok(())
}

/// Zero the gradients of every parameter in the list.
pub fn zero_grads<E: Element>(params: &[Parameter<E>]) {
    for p in params {
        p.tensor.zero_grad();
    }
}
