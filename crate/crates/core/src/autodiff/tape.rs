use super::{AdError, Primitive};
use crate::linalg::{Matrix, Tensor};
use std::cell::RefCell;
use std::fmt;

pub type NodeId = usize;

struct Node {
    value: Matrix,
    op: Option<Primitive>,
    parents: Vec<NodeId>,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
    error: Option<AdError>,
}

/// Records primitives in execution order.
///
/// One tape per forward/backward pass; tapes are not `Sync` and are never
/// shared between workers.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn leaf(&self, value: Matrix, trainable: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { value, op: None, parents: Vec::new() });
        if trainable {
            inner.params.push(id);
        }
        Var { tape: self, id }
    }

    /// A trainable leaf.
    pub fn param(&self, value: Matrix) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        self.inner.borrow().params.clone()
    }

    /// First domain or finiteness violation recorded by an infallible
    /// operator, if any.
    pub fn error(&self) -> Option<AdError> {
        self.inner.borrow().error.clone()
    }

    /// Records `op` applied to `inputs`, rejecting shape errors, domain
    /// violations and non-finite results without touching the tape.
    pub fn apply<'t>(&'t self, op: Primitive, inputs: &[Var<'t>]) -> Result<Var<'t>, AdError> {
        self.push(op, inputs, true)
    }

    fn push<'t>(&'t self, op: Primitive, inputs: &[Var<'t>], strict: bool) -> Result<Var<'t>, AdError> {
        let parents: Vec<NodeId> = inputs.iter().map(|v| v.id).collect();
        let (value, violation) = {
            let inner = self.inner.borrow();
            let xs: Vec<&Matrix> = parents.iter().map(|&p| &inner.nodes[p].value).collect();
            let value = op.forward(&xs)?;
            let id = inner.nodes.len();
            let violation = match op.domain_violation(&xs) {
                Some(detail) => Some(AdError::Domain { op: op.name(), node: id, detail }),
                None if !value.is_finite() => Some(AdError::NonFinite { op: op.name(), node: id }),
                None => None,
            };
            (value, violation)
        };
        let mut inner = self.inner.borrow_mut();
        if let Some(e) = violation {
            if strict {
                return Err(e);
            }
            inner.error.get_or_insert(e);
        }
        let id = inner.nodes.len();
        inner.nodes.push(Node { value, op: Some(op), parents });
        Ok(Var { tape: self, id })
    }

    fn record<'t>(&'t self, op: Primitive, inputs: &[Var<'t>]) -> Var<'t> {
        match self.push(op, inputs, false) {
            Ok(v) => v,
            Err(e) => panic!("{e}"),
        }
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// Gradients accumulate in a fixed order, so repeated calls on the same
    /// tape are bit-identical.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AdError> {
        let inner = self.inner.borrow();
        if let Some(e) = &inner.error {
            return Err(e.clone());
        }
        let (r, c) = inner.nodes[loss.id].value.shape();
        if (r, c) != (1, 1) {
            return Err(AdError::NotScalar { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Matrix::scalar(1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &inner.nodes[id];
            if let Some(op) = &node.op {
                let xs: Vec<&Matrix> = node.parents.iter().map(|&p| &inner.nodes[p].value).collect();
                for (&p, gp) in node.parents.iter().zip(op.backward(&xs, &node.value, &g)) {
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&gp),
                        slot => *slot = Some(gp),
                    }
                }
            }
            grads[id] = Some(g);
        }
        let shapes = inner.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes, params: inner.params.clone() })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
    params: Vec<NodeId>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero when `v` does not influence the loss.
    pub fn wrt(&self, v: &Var<'_>) -> Matrix {
        self.by_id(v.id)
    }

    pub fn by_id(&self, id: NodeId) -> Matrix {
        match self.grads.get(id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id];
                Matrix::zeros(r, c)
            }
        }
    }

    /// `(parameter id, gradient)` for every trainable leaf, in creation order.
    pub fn params(&self) -> Vec<(NodeId, Matrix)> {
        self.params.iter().map(|&id| (id, self.by_id(id))).collect()
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// The single entry of a `1 x 1` node.
    pub fn item(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let v = &inner.nodes[self.id].value;
        assert_eq!(v.shape(), (1, 1), "item() on a non-scalar");
        v[(0, 0)]
    }

    fn unary(&self, op: Primitive) -> Self {
        self.tape.record(op, &[*self])
    }

    fn binary(&self, op: Primitive, o: &Self) -> Self {
        assert!(std::ptr::eq(self.tape, o.tape), "operands live on different tapes");
        self.tape.record(op, &[*self, *o])
    }
}

impl<'t> Tensor for Var<'t> {
    fn shape(&self) -> (usize, usize) {
        self.tape.inner.borrow().nodes[self.id].value.shape()
    }
    fn value(&self) -> Matrix {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }
    fn lift(&self, m: Matrix) -> Self {
        self.tape.constant(m)
    }
    fn add(&self, o: &Self) -> Self {
        self.binary(Primitive::Add, o)
    }
    fn sub(&self, o: &Self) -> Self {
        self.binary(Primitive::Sub, o)
    }
    fn mul(&self, o: &Self) -> Self {
        self.binary(Primitive::Mul, o)
    }
    fn div(&self, o: &Self) -> Self {
        self.binary(Primitive::Div, o)
    }
    fn matmul(&self, o: &Self) -> Self {
        self.binary(Primitive::MatMul, o)
    }
    fn transpose(&self) -> Self {
        self.unary(Primitive::Transpose)
    }
    fn neg(&self) -> Self {
        self.unary(Primitive::Neg)
    }
    fn scale(&self, s: f64) -> Self {
        self.unary(Primitive::Scale(s))
    }
    fn add_scalar(&self, s: f64) -> Self {
        self.unary(Primitive::AddScalar(s))
    }
    fn exp(&self) -> Self {
        self.unary(Primitive::Exp)
    }
    fn log(&self) -> Self {
        self.unary(Primitive::Log)
    }
    fn tanh(&self) -> Self {
        self.unary(Primitive::Tanh)
    }
    fn elu(&self) -> Self {
        self.unary(Primitive::Elu)
    }
    fn relu(&self) -> Self {
        self.unary(Primitive::Relu)
    }
    fn sigmoid(&self) -> Self {
        self.unary(Primitive::Sigmoid)
    }
    fn softmax(&self) -> Self {
        self.unary(Primitive::Softmax)
    }
    fn square(&self) -> Self {
        self.unary(Primitive::Square)
    }
    fn sqrt(&self) -> Self {
        self.unary(Primitive::Sqrt)
    }
    fn reciprocal(&self) -> Self {
        self.unary(Primitive::Reciprocal)
    }
    fn clamp_min(&self, lo: f64) -> Self {
        self.unary(Primitive::ClampMin(lo))
    }
    fn expm1_div(&self, dt: f64) -> Self {
        self.unary(Primitive::Expm1Div(dt))
    }
    fn sum(&self) -> Self {
        self.unary(Primitive::Sum)
    }
    fn mean(&self) -> Self {
        self.unary(Primitive::Mean)
    }
    fn concat_rows(parts: &[Self]) -> Self {
        parts[0].tape.record(Primitive::ConcatRows, parts)
    }
    fn concat_cols(parts: &[Self]) -> Self {
        parts[0].tape.record(Primitive::ConcatCols, parts)
    }
    fn slice(&self, r0: usize, nr: usize, c0: usize, nc: usize) -> Self {
        self.unary(Primitive::Slice { r0, nr, c0, nc })
    }
    fn reshape(&self, rows: usize, cols: usize) -> Self {
        self.unary(Primitive::Reshape { rows, cols })
    }
    fn diag(&self) -> Self {
        self.unary(Primitive::Diag)
    }
    fn diag_part(&self) -> Self {
        self.unary(Primitive::DiagPart)
    }
    fn scatter(&self, rows: usize, cols: usize, positions: &[(usize, usize)]) -> Self {
        self.unary(Primitive::Scatter { rows, cols, positions: positions.to_vec() })
    }
}
