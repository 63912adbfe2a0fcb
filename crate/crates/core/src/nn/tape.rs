//! Reverse-mode gradients over a recorded operation list.
//!
//! Forward calls push nodes onto a [`Tape`]; [`Tape::backward`] walks them in
//! reverse exactly once. The op set covers what the diffusion networks and
//! their losses need, plus an escape hatch ([`Tape::custom`]) for fused loss
//! terms whose vector-Jacobian products are written by hand.

use std::borrow::Cow;
use std::collections::BTreeMap;

use super::tensor::{gemm, MatRef, Tensor2};
use crate::{Error, Result};

/// Identifies a trainable parameter tensor within its owning network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type Vjp<'a> = Box<dyn Fn(&Tensor2) -> Vec<Tensor2> + 'a>;

enum Op<'a> {
    Constant,
    Param(ParamId),
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Relu(usize),
    Add(usize, usize),
    BroadcastRows(usize),
    Concat(usize, usize),
    RowAffine {
        x: usize,
        scale: Vec<f64>,
    },
    Scale {
        x: usize,
        s: f64,
    },
    Sum(usize),
    MeanRowSqDist {
        pred: usize,
        target: Cow<'a, Tensor2>,
    },
    Custom {
        inputs: Vec<usize>,
        vjp: Vjp<'a>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor2>,
    op: Op<'a>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor2>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor2> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor2)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    fn accumulate(&mut self, id: ParamId, g: Tensor2) {
        match self.by_param.get_mut(&id) {
            Some(acc) => acc.add_assign(&g),
            None => {
                self.by_param.insert(id, g);
            }
        }
    }
}

/// Recorded computation graph. Parameters and constants may be borrowed for `'a`.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    consumed: bool,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.shape(), (1, 1));
        t.data()[0]
    }

    fn push(&mut self, value: Cow<'a, Tensor2>, op: Op<'a>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(Cow::Owned(value), Op::Constant, false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor2) -> Var {
        self.push(Cow::Borrowed(value), Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId, value: &'a Tensor2) -> Var {
        self.push(Cow::Borrowed(value), Op::Param(id), true)
    }

    /// `x · wᵀ + b` with `w` stored as `out × in` and `b` as `1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.cols() {
            return Err(Error::shape("linear input", wv.cols(), xv.cols()));
        }
        if bv.shape() != (1, wv.rows()) {
            return Err(Error::shape("linear bias", wv.rows(), bv.cols()));
        }
        let (m, k, n) = (xv.rows(), xv.cols(), wv.rows());
        let mut out = Tensor2::zeros(m, n);
        for r in 0..m {
            out.row_mut(r).copy_from_slice(bv.data());
        }
        gemm(
            m,
            k,
            n,
            MatRef::normal(xv),
            MatRef::transposed(wv),
            &mut out,
            true,
        );
        let ng = self.needs(x.0) || self.needs(w.0) || self.needs(b.0);
        Ok(self.push(
            Cow::Owned(out),
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            ng,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let ng = self.needs(x.0);
        self.push(Cow::Owned(out), Op::Relu(x.0), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?}", av.shape()),
                format!("{:?}", bv.shape()),
            ));
        }
        let out = av.zip_map(bv, |p, q| p + q);
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Cow::Owned(out), Op::Add(a.0, b.0), ng))
    }

    /// Repeats a single-row node `rows` times.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != 1 {
            return Err(Error::shape("broadcast_rows", 1, xv.rows()));
        }
        let cols = xv.cols();
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend_from_slice(xv.data());
        }
        let out = Tensor2::from_vec_unchecked(rows, cols, data);
        let ng = self.needs(x.0);
        Ok(self.push(Cow::Owned(out), Op::BroadcastRows(x.0), ng))
    }

    /// Column concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hcat(self.value(b))?;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Cow::Owned(out), Op::Concat(a.0, b.0), ng))
    }

    /// Row-wise affine map `y_r = scale_r · x_r + offset_r`; `offset` is constant.
    pub fn row_affine(&mut self, x: Var, scale: Vec<f64>, offset: &Tensor2) -> Result<Var> {
        let xv = self.value(x);
        if scale.len() != xv.rows() || offset.shape() != xv.shape() {
            return Err(Error::shape(
                "row_affine",
                format!("{:?}", xv.shape()),
                format!("{} scales, offset {:?}", scale.len(), offset.shape()),
            ));
        }
        let mut out = offset.clone();
        for (r, &s) in scale.iter().enumerate() {
            for (o, v) in out.row_mut(r).iter_mut().zip(xv.row(r)) {
                *o += s * v;
            }
        }
        let ng = self.needs(x.0);
        Ok(self.push(Cow::Owned(out), Op::RowAffine { x: x.0, scale }, ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        let ng = self.needs(x.0);
        self.push(Cow::Owned(out), Op::Scale { x: x.0, s }, ng)
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor2::from_vec_unchecked(1, 1, vec![self.value(x).sum()]);
        let ng = self.needs(x.0);
        self.push(Cow::Owned(out), Op::Sum(x.0), ng)
    }

    /// Batch mean of the squared row distance `‖target_r − pred_r‖²`.
    pub fn mean_row_sq_dist(&mut self, pred: Var, target: Cow<'a, Tensor2>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Error::shape(
                "mean_row_sq_dist",
                format!("{:?}", target.shape()),
                format!("{:?}", pv.shape()),
            ));
        }
        let rows = pv.rows().max(1) as f64;
        let total: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (t - p) * (t - p))
            .sum();
        let out = Tensor2::from_vec_unchecked(1, 1, vec![total / rows]);
        let ng = self.needs(pred.0);
        Ok(self.push(
            Cow::Owned(out),
            Op::MeanRowSqDist {
                pred: pred.0,
                target,
            },
            ng,
        ))
    }

    /// Records a node computed outside the tape. `vjp` maps the upstream
    /// gradient (shaped like `value`) to one gradient per input, in order.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor2,
        vjp: impl Fn(&Tensor2) -> Vec<Tensor2> + 'a,
    ) -> Var {
        let ng = inputs.iter().any(|v| self.needs(v.0));
        self.push(
            Cow::Owned(value),
            Op::Custom {
                inputs: inputs.iter().map(|v| v.0).collect(),
                vjp: Box::new(vjp),
            },
            ng,
        )
    }

    /// Back-propagates from a `1 × 1` node. Every parameter recorded on the
    /// tape receives an entry; parameters the loss does not reach get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        self.consumed = true;
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                "scalar loss",
                format!("{:?}", self.value(loss).shape()),
            ));
        }

        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2::filled(1, 1, 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let xv = &self.nodes[x].value;
                    let wv = &self.nodes[w].value;
                    let (m, k, n) = (xv.rows(), xv.cols(), wv.rows());
                    if self.needs(x) {
                        let mut dx = Tensor2::zeros(m, k);
                        gemm(
                            m,
                            n,
                            k,
                            MatRef::normal(&g),
                            MatRef::normal(wv),
                            &mut dx,
                            false,
                        );
                        accumulate(&mut grads, x, dx);
                    }
                    if self.needs(w) {
                        let mut dw = Tensor2::zeros(n, k);
                        gemm(
                            n,
                            m,
                            k,
                            MatRef::transposed(&g),
                            MatRef::normal(xv),
                            &mut dw,
                            false,
                        );
                        accumulate(&mut grads, w, dw);
                    }
                    if self.needs(b) {
                        let db = Tensor2::from_vec_unchecked(1, n, g.column_sums());
                        accumulate(&mut grads, b, db);
                    }
                }
                Op::Relu(x) => {
                    let x = *x;
                    let dx =
                        g.zip_map(&self.nodes[i].value, |gv, y| if y > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, x, dx);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, g);
                    }
                }
                Op::BroadcastRows(x) => {
                    let x = *x;
                    let dx = Tensor2::from_vec_unchecked(1, g.cols(), g.column_sums());
                    accumulate(&mut grads, x, dx);
                }
                Op::Concat(a, b) => {
                    let (a, b) = (*a, *b);
                    let wa = self.nodes[a].value.cols();
                    let wb = self.nodes[b].value.cols();
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.columns(0, wa));
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, g.columns(wa, wb));
                    }
                }
                Op::RowAffine { x, scale } => {
                    let x = *x;
                    let mut dx = g;
                    for (r, s) in scale.iter().enumerate() {
                        for v in dx.row_mut(r) {
                            *v *= s;
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Scale { x, s } => {
                    let (x, s) = (*x, *s);
                    accumulate(&mut grads, x, g.scale(s));
                }
                Op::Sum(x) => {
                    let x = *x;
                    let (r, c) = self.nodes[x].value.shape();
                    accumulate(&mut grads, x, Tensor2::filled(r, c, g.data()[0]));
                }
                Op::MeanRowSqDist { pred, target } => {
                    let pred = *pred;
                    let pv = &self.nodes[pred].value;
                    let coef = 2.0 * g.data()[0] / pv.rows().max(1) as f64;
                    let dx = pv.zip_map(target, |p, t| coef * (p - t));
                    accumulate(&mut grads, pred, dx);
                }
                Op::Custom { inputs, vjp } => {
                    let parts = vjp(&g);
                    assert_eq!(parts.len(), inputs.len(), "custom vjp arity");
                    for (&inp, part) in inputs.iter().zip(parts) {
                        if self.needs(inp) {
                            accumulate(&mut grads, inp, part);
                        }
                    }
                }
            }
        }

        for node in &self.nodes {
            if let Op::Param(id) = node.op {
                if out.get(id).is_none() {
                    let (r, c) = node.value.shape();
                    out.by_param.insert(id, Tensor2::zeros(r, c));
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], i: usize, g: Tensor2) {
    match &mut grads[i] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
