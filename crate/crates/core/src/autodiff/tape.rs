use std::borrow::Cow;

use super::{gemm_into, Real, Tensor2};
use crate::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction applied by [`Tape::group_pool`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupPoolKind {
    #[default]
    Max,
    Mean,
}

/// Sentinel for "no winner" in a max-pool argmax table.
const NO_WINNER: usize = usize::MAX;

#[derive(Debug)]
pub enum Op<T> {
    Input,
    Param(usize),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor2<T>,
        inv_std: Vec<T>,
    },
    ColumnAffine {
        x: Var,
        scale: Vec<T>,
    },
    GroupMax {
        x: Var,
        argmax: Vec<usize>,
    },
    GroupMean {
        x: Var,
        groups: Vec<Option<usize>>,
        counts: Vec<usize>,
    },
    Gather {
        x: Var,
        rows: Vec<usize>,
    },
    ConcatCols {
        a: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MulConst {
        x: Var,
        c: Tensor2<T>,
    },
    Scale {
        x: Var,
        s: T,
    },
    Exp {
        x: Var,
    },
    /// Scalar with precomputed local gradients for each input.
    Fused {
        inputs: Vec<(Var, Tensor2<T>)>,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor2<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation. Nodes are
/// appended in evaluation order, so the node list is always topologically
/// sorted and the backward pass is a single reverse sweep.
pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor2<T>>>,
    params: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a recorded node, if any flowed to it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor2<T>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient accumulated for parameter `id` over every leaf bound to it.
    pub fn param(&self, id: usize) -> Option<Tensor2<T>> {
        let mut out: Option<Tensor2<T>> = None;
        for &(pid, node) in &self.params {
            if pid != id {
                continue;
            }
            if let Some(g) = &self.nodes[node] {
                match &mut out {
                    Some(acc) => acc.add_assign(g),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Cow<'a, Tensor2<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant leaf; no gradient is propagated past it unless it is
    /// recorded with [`Tape::input_with_grad`].
    pub fn input(&mut self, t: Tensor2<T>) -> Var {
        self.push(Cow::Owned(t), Op::Input, false)
    }

    pub fn input_ref(&mut self, t: &'a Tensor2<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Input, false)
    }

    /// Leaf whose gradient is tracked (used for input gradients).
    pub fn input_with_grad(&mut self, t: Tensor2<T>) -> Var {
        self.push(Cow::Owned(t), Op::Input, true)
    }

    /// Trainable leaf bound to parameter slot `id`.
    pub fn param(&mut self, id: usize, t: &'a Tensor2<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Param(id), true)
    }

    /// `x · w + b`, with `w` stored as in×out.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.rows() {
            return Err(Error::Shape(format!(
                "linear input has {} columns, weight expects {}",
                xv.cols(),
                wv.rows()
            )));
        }
        let mut out = Tensor2::zeros(xv.rows(), wv.cols());
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != wv.cols() {
                return Err(Error::Shape(format!(
                    "bias length {} for {} outputs",
                    bv.len(),
                    wv.cols()
                )));
            }
            for r in 0..out.rows() {
                out.row_mut(r).copy_from_slice(bv.data());
            }
        }
        gemm_into(xv, false, wv, false, T::one(), &mut out);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Cow::Owned(out), Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(Cow::Owned(out), Op::Relu { x }, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.rg(x);
        self.push(Cow::Owned(out), Op::LeakyRelu { x, slope }, rg)
    }

    /// Training-mode batch normalization over rows. Returns the output and
    /// the per-column batch mean and biased variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        if n == 0 {
            return Err(Error::Empty("batch norm over zero rows".into()));
        }
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.len() != c || bv.len() != c {
            return Err(Error::Shape(format!(
                "batch norm over {c} columns with {} scales",
                gv.len()
            )));
        }
        let nf = T::from_f64(n as f64);
        let mut mean = vec![T::zero(); c];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![T::zero(); c];
        for r in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= nf);
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();
        let mut xhat = Tensor2::zeros(n, c);
        let mut out = Tensor2::zeros(n, c);
        for r in 0..n {
            let src = xv.row(r);
            let hrow = xhat.row_mut(r);
            for j in 0..c {
                hrow[j] = (src[j] - mean[j]) * inv_std[j];
            }
            for (((o, &h), &gm), &b) in out.row_mut(r).iter_mut().zip(xhat.row(r)).zip(gv.data()).zip(bv.data()) {
                *o = h * gm + b;
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            Cow::Owned(out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        Ok((v, mean, var))
    }

    /// `y[i][j] = x[i][j] * scale[j] + shift[j]` with constant coefficients
    /// (inference-mode batch normalization).
    pub fn column_affine(&mut self, x: Var, scale: Vec<T>, shift: &[T]) -> Result<Var> {
        let xv = self.value(x);
        if scale.len() != xv.cols() || shift.len() != xv.cols() {
            return Err(Error::Shape("column affine width".into()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for ((v, &s), &b) in out.row_mut(r).iter_mut().zip(&scale).zip(shift) {
                *v = *v * s + b;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), Op::ColumnAffine { x, scale }, rg))
    }

    /// Pools the rows of `x` into `n_groups` rows. Row `i` contributes to
    /// group `groups[i]`; `None` rows contribute nowhere. Empty groups
    /// produce a zero row and are reported absent.
    pub fn group_pool(
        &mut self,
        x: Var,
        groups: &[Option<usize>],
        n_groups: usize,
        kind: GroupPoolKind,
    ) -> Result<(Var, Vec<bool>)> {
        let xv = self.value(x);
        let (out, aux, present) = group_pool_forward(xv, groups, n_groups, kind)?;
        let rg = self.rg(x);
        let op = match kind {
            GroupPoolKind::Max => Op::GroupMax { x, argmax: aux },
            GroupPoolKind::Mean => Op::GroupMean {
                x,
                groups: groups.to_vec(),
                counts: aux,
            },
        };
        Ok((self.push(Cow::Owned(out), op, rg), present))
    }

    /// Output row `i` is input row `rows[i]`.
    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        let mut out = Tensor2::zeros(rows.len(), xv.cols());
        for (i, &r) in rows.iter().enumerate() {
            if r >= xv.rows() {
                return Err(Error::Shape(format!(
                    "gather row {r} of {}",
                    xv.rows()
                )));
            }
            out.row_mut(i).copy_from_slice(xv.row(r));
        }
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), Op::Gather { x, rows }, rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::Shape(format!(
                "concat of {} and {} rows",
                av.rows(),
                bv.rows()
            )));
        }
        let (ca, cb) = (av.cols(), bv.cols());
        let mut out = Tensor2::zeros(av.rows(), ca + cb);
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..ca].copy_from_slice(av.row(r));
            row[ca..].copy_from_slice(bv.row(r));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), Op::ConcatCols { a, b }, rg))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).clone().reshaped(rows, cols)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), Op::Reshape { x }, rg))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), Op::Mul { a, b }, rg))
    }

    pub fn mul_const(&mut self, x: Var, c: Tensor2<T>) -> Result<Var> {
        if self.value(x).shape() != c.shape() {
            return Err(Error::Shape("mul_const shape".into()));
        }
        let mut out = self.value(x).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(c.data()) {
            *o *= v;
        }
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), Op::MulConst { x, c }, rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(Cow::Owned(out), Op::Scale { x, s }, rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::exp);
        let rg = self.rg(x);
        self.push(Cow::Owned(out), Op::Exp { x }, rg)
    }

    /// Records a scalar computed outside the tape together with its local
    /// gradient with respect to each input.
    pub fn fused(&mut self, value: T, inputs: Vec<(Var, Tensor2<T>)>) -> Result<Var> {
        for (v, g) in &inputs {
            if self.value(*v).shape() != g.shape() {
                return Err(Error::Shape("fused gradient shape".into()));
            }
        }
        let rg = inputs.iter().any(|(v, _)| self.rg(*v));
        Ok(self.push(
            Cow::Owned(Tensor2::filled(1, 1, value)),
            Op::Fused { inputs },
            rg,
        ))
    }

    /// `Σ w_i · s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, T)>) -> Result<Var> {
        let mut total = T::zero();
        for &(v, w) in &terms {
            let val = self.value(v);
            if val.len() != 1 {
                return Err(Error::Shape("weighted_sum expects scalars".into()));
            }
            total += val.data()[0] * w;
        }
        let rg = terms.iter().any(|(v, _)| self.rg(*v));
        Ok(self.push(
            Cow::Owned(Tensor2::filled(1, 1, total)),
            Op::WeightedSum { terms },
            rg,
        ))
    }

    /// Reverse sweep from the scalar node `loss`, seeded with `seed`.
    pub fn backward(&self, loss: Var, seed: T) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::TapeState(
                "backward called before any forward computation".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::TapeState(format!(
                "backward from a non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2::filled(1, 1, seed));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn backward_node(&self, node: &Node<'a, T>, g: &Tensor2<T>, grads: &mut [Option<Tensor2<T>>]) {
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.rg(*x) {
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    gemm_into(g, false, wv, true, T::zero(), &mut dx);
                    accumulate(grads, *x, dx);
                }
                if self.rg(*w) {
                    let mut dw = Tensor2::zeros(wv.rows(), wv.cols());
                    gemm_into(xv, true, g, false, T::zero(), &mut dw);
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let bv = self.value(*b);
                        let mut db = vec![T::zero(); g.cols()];
                        for r in 0..g.rows() {
                            for (d, &v) in db.iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                        accumulate(grads, *b, Tensor2::from_vec(bv.rows(), bv.cols(), db).unwrap());
                    }
                }
            }
            Op::Relu { x } => {
                if self.rg(*x) {
                    let xv = self.value(*x);
                    let mut dx = g.clone();
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::LeakyRelu { x, slope } => {
                if self.rg(*x) {
                    let xv = self.value(*x);
                    let mut dx = g.clone();
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= T::zero() {
                            *d *= *slope;
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, c) = xhat.shape();
                let gv = self.value(*gamma);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for r in 0..n {
                    for ((dg, db), (&d, &h)) in dgamma
                        .iter_mut()
                        .zip(dbeta.iter_mut())
                        .zip(g.row(r).iter().zip(xhat.row(r)))
                    {
                        *dg += d * h;
                        *db += d;
                    }
                }
                if self.rg(*x) {
                    // dxhat = g * gamma; dx = inv_std/n * (n dxhat - Σdxhat - xhat Σ(dxhat xhat))
                    let nf = T::from_f64(n as f64);
                    let coef: Vec<(T, T, T)> = (0..c)
                        .map(|j| {
                            (inv_std[j] * gv.data()[j], dbeta[j] / nf, dgamma[j] / nf)
                        })
                        .collect();
                    let mut dx = Tensor2::zeros(n, c);
                    for r in 0..n {
                        let out = dx.row_mut(r);
                        for (((o, &d), &h), &(a, mb, mh)) in
                            out.iter_mut().zip(g.row(r)).zip(xhat.row(r)).zip(&coef)
                        {
                            *o = a * (d - mb - h * mh);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.rg(*gamma) {
                    let s = gv.shape();
                    accumulate(grads, *gamma, Tensor2::from_vec(s.0, s.1, dgamma).unwrap());
                }
                if self.rg(*beta) {
                    let s = self.value(*beta).shape();
                    accumulate(grads, *beta, Tensor2::from_vec(s.0, s.1, dbeta).unwrap());
                }
            }
            Op::ColumnAffine { x, scale } => {
                if self.rg(*x) {
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        for (d, &s) in dx.row_mut(r).iter_mut().zip(scale) {
                            *d *= s;
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::GroupMax { x, argmax } => {
                if self.rg(*x) {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut dx = Tensor2::zeros(xv.rows(), c);
                    for (slot, &winner) in argmax.iter().enumerate() {
                        if winner != NO_WINNER {
                            let (grp, j) = (slot / c, slot % c);
                            let cur = dx.get(winner, j);
                            dx.set(winner, j, cur + g.get(grp, j));
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::GroupMean { x, groups, counts } => {
                if self.rg(*x) {
                    let xv = self.value(*x);
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    for (r, grp) in groups.iter().enumerate() {
                        if let Some(grp) = *grp {
                            let inv = T::one() / T::from_f64(counts[grp] as f64);
                            for (d, &v) in dx.row_mut(r).iter_mut().zip(g.row(grp)) {
                                *d = v * inv;
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Gather { x, rows } => {
                if self.rg(*x) {
                    let xv = self.value(*x);
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    for (i, &r) in rows.iter().enumerate() {
                        for (d, &v) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::ConcatCols { a, b } => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                if self.rg(*a) {
                    let mut da = Tensor2::zeros(g.rows(), ca);
                    for r in 0..g.rows() {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    }
                    accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = Tensor2::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Reshape { x } => {
                if self.rg(*x) {
                    let (r, c) = self.value(*x).shape();
                    accumulate(grads, *x, g.clone().reshaped(r, c).unwrap());
                }
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    let mut da = g.clone();
                    for (d, &v) in da.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *d *= v;
                    }
                    accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = g.clone();
                    for (d, &v) in db.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *d *= v;
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::MulConst { x, c } => {
                if self.rg(*x) {
                    let mut dx = g.clone();
                    for (d, &v) in dx.data_mut().iter_mut().zip(c.data()) {
                        *d *= v;
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Scale { x, s } => {
                if self.rg(*x) {
                    accumulate(grads, *x, g.map(|v| v * *s));
                }
            }
            Op::Exp { x } => {
                if self.rg(*x) {
                    let mut dx = g.clone();
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y;
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Fused { inputs } => {
                let s = g.data()[0];
                for (v, local) in inputs {
                    if self.rg(*v) {
                        accumulate(grads, *v, local.map(|l| l * s));
                    }
                }
            }
            Op::WeightedSum { terms } => {
                let s = g.data()[0];
                for &(v, w) in terms {
                    if self.rg(v) {
                        accumulate(grads, v, Tensor2::filled(1, 1, s * w));
                    }
                }
            }
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor2<T>>], v: Var, g: Tensor2<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Grouped pooling without a tape. Returns the pooled rows, the auxiliary
/// routing table (argmax per output slot for max, member counts for mean)
/// and the per-group presence mask. Max-pool ties go to the lowest row.
pub fn group_pool_forward<T: Real>(
    x: &Tensor2<T>,
    groups: &[Option<usize>],
    n_groups: usize,
    kind: GroupPoolKind,
) -> Result<(Tensor2<T>, Vec<usize>, Vec<bool>)> {
    if groups.len() != x.rows() {
        return Err(Error::Shape(format!(
            "{} group ids for {} rows",
            groups.len(),
            x.rows()
        )));
    }
    let c = x.cols();
    let mut counts = vec![0usize; n_groups];
    for grp in groups.iter().flatten() {
        if *grp >= n_groups {
            return Err(Error::Shape(format!("group {grp} of {n_groups}")));
        }
        counts[*grp] += 1;
    }
    let present: Vec<bool> = counts.iter().map(|&n| n > 0).collect();
    let mut out = Tensor2::zeros(n_groups, c);
    match kind {
        GroupPoolKind::Max => {
            let mut argmax = vec![NO_WINNER; n_groups * c];
            for (r, grp) in groups.iter().enumerate() {
                let Some(grp) = *grp else { continue };
                let src = x.row(r);
                let base = grp * c;
                let dst = out.row_mut(grp);
                for j in 0..c {
                    if argmax[base + j] == NO_WINNER || src[j] > dst[j] {
                        dst[j] = src[j];
                        argmax[base + j] = r;
                    }
                }
            }
            Ok((out, argmax, present))
        }
        GroupPoolKind::Mean => {
            for (r, grp) in groups.iter().enumerate() {
                let Some(grp) = *grp else { continue };
                let src = x.row(r);
                for (d, &v) in out.row_mut(grp).iter_mut().zip(src) {
                    *d += v;
                }
            }
            for (grp, &n) in counts.iter().enumerate() {
                if n > 0 {
                    let inv = T::one() / T::from_f64(n as f64);
                    out.row_mut(grp).iter_mut().for_each(|v| *v *= inv);
                }
            }
            Ok((out, counts, present))
        }
    }
}
