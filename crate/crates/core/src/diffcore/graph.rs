//! Expression graph over a fixed primitive catalog with reverse-mode
//! differentiation.
//!
//! A [`Graph`] is built eagerly: every primitive call computes its forward
//! value immediately and records the node. [`Graph::backward`] then walks the
//! nodes in reverse creation order, which is a valid topological order since
//! a node can only reference earlier nodes.

use super::{DiffError, ParamId, ParameterSet, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Softmax(Var),
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    Dot {
        a: Var,
        b: Var,
    },
    Distance {
        a: Var,
        b: Var,
    },
    Mse {
        a: Var,
        b: Var,
    },
    CrossEntropy {
        probs: Var,
        targets: Vec<usize>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        indices: Vec<Vec<usize>>,
    },
    MaskedMean {
        x: Var,
        weights: Var,
        totals: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one scalar root with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

/// Weight totals below this are treated as empty groups by
/// [`Graph::masked_mean`].
pub const MIN_GROUP_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, detail: String) -> DiffError {
    DiffError::ShapeMismatch { op, detail }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; receives no parameter gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.input(Tensor::scalar(value))
    }

    /// Leaf bound to a parameter's current value.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Var {
        self.push(params.get(id).value.clone(), Op::Param(id))
    }

    /// `x · w (+ b)` with `x: [n, d]`, `w: [d, h]`, `b: [1, h]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, DiffError> {
        let (n, d) = self.value(x).dims();
        let (dw, h) = self.value(w).dims();
        if d != dw {
            return Err(mismatch("affine", format!("x is {n}x{d}, w is {dw}x{h}")));
        }
        if let Some(b) = b {
            if self.value(b).dims() != (1, h) {
                return Err(mismatch(
                    "affine",
                    format!("bias is {:?}, expected 1x{h}", self.value(b).dims()),
                ));
            }
        }
        let xv = self.value(x).values();
        let wv = self.value(w).values();
        let mut out = vec![0.0; n * h];
        for i in 0..n {
            let orow = &mut out[i * h..(i + 1) * h];
            if let Some(b) = b {
                orow.copy_from_slice(self.nodes[b.0].value.values());
            }
            for k in 0..d {
                let xik = xv[i * d + k];
                if xik == 0.0 {
                    continue;
                }
                let wrow = &wv[k * h..(k + 1) * h];
                for (o, wkj) in orow.iter_mut().zip(wrow) {
                    *o += xik * wkj;
                }
            }
        }
        let value = Tensor::matrix(n, h, out)?;
        Ok(self.push(value, Op::Affine { x, w, b }))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.values_mut().iter_mut().for_each(|v| *v = v.tanh());
        self.push(value, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.values_mut().iter_mut().for_each(|v| *v = v.exp());
        self.push(value, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var, DiffError> {
        let mut value = self.value(x).clone();
        for v in value.values_mut() {
            if *v <= 0.0 || v.is_nan() {
                return Err(DiffError::NonPositiveLog {
                    op: "ln",
                    value: *v,
                });
            }
            *v = v.ln();
        }
        Ok(self.push(value, Op::Ln(x)))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let value = softmax_rows(self.value(x));
        self.push(value, Op::Softmax(x))
    }

    /// Row-wise L2 normalization; a zero row is an error.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var, DiffError> {
        let mut value = self.value(x).clone();
        let rows = value.rows();
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = value.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(DiffError::ZeroNorm {
                    op: "l2_normalize",
                    row: r,
                });
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        Ok(self.push(value, Op::L2Normalize { x, norms }))
    }

    /// Pairwise row dot products `a · bᵀ`: `[n, d] x [m, d] -> [n, m]`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (n, d) = self.value(a).dims();
        let (m, db) = self.value(b).dims();
        if d != db {
            return Err(mismatch("dot", format!("a is {n}x{d}, b is {m}x{db}")));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let ar = av.row(i);
            for j in 0..m {
                out.push(dot_slices(ar, bv.row(j)));
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.push(value, Op::Dot { a, b }))
    }

    /// Pairwise Euclidean distances between rows: `[n, d] x [m, d] -> [n, m]`.
    pub fn distance(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (n, d) = self.value(a).dims();
        let (m, db) = self.value(b).dims();
        if d != db {
            return Err(mismatch("distance", format!("a is {n}x{d}, b is {m}x{db}")));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                out.push(euclidean(av.row(i), bv.row(j)));
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.push(value, Op::Distance { a, b }))
    }

    /// Mean over rows of the squared Euclidean row difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dims() != vb.dims() {
            return Err(mismatch(
                "mse",
                format!("{:?} vs {:?}", va.dims(), vb.dims()),
            ));
        }
        let n = va.rows() as f64;
        let sum: f64 = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(sum / n), Op::Mse { a, b }))
    }

    /// `-(1/n) Σ_i ln probs[i, targets[i]]`.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var, DiffError> {
        let p = self.value(probs);
        let (n, k) = p.dims();
        if targets.len() != n {
            return Err(mismatch(
                "cross_entropy",
                format!("{n} rows but {} targets", targets.len()),
            ));
        }
        let mut sum = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(DiffError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    bound: k,
                });
            }
            let v = p.get(i, t);
            if v <= 0.0 || v.is_nan() {
                return Err(DiffError::NonPositiveLog {
                    op: "cross_entropy",
                    value: v,
                });
            }
            sum -= v.ln();
        }
        let value = Tensor::scalar(sum / n as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let mut value = self.binary_operands("add", a, b)?;
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let mut value = self.binary_operands("mul", a, b)?;
        for (x, y) in value
            .values_mut()
            .iter_mut()
            .zip(self.nodes[b.0].value.values())
        {
            *x *= y;
        }
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut value = self.value(x).clone();
        value.values_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(value, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Var {
        let mut value = self.value(x).clone();
        value.values_mut().iter_mut().for_each(|v| *v += offset);
        self.push(value, Op::AddScalar(x))
    }

    /// Stacks row blocks with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let Some(first) = parts.first() else {
            return Err(mismatch("concat_rows", "no parts".into()));
        };
        let cols = self.value(*first).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(mismatch(
                    "concat_rows",
                    format!("column counts {cols} and {}", v.cols()),
                ));
            }
            rows += v.rows();
            out.extend_from_slice(v.values());
        }
        let value = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Output row `r` is the concatenation of `table` rows `indices[r]`.
    /// All index lists must have the same length.
    pub fn gather(&mut self, table: Var, indices: &[Vec<usize>]) -> Result<Var, DiffError> {
        let (rows, d) = self.value(table).dims();
        let Some(width) = indices.first().map(Vec::len) else {
            return Err(mismatch("gather", "no index rows".into()));
        };
        if width == 0 || indices.iter().any(|r| r.len() != width) {
            return Err(mismatch(
                "gather",
                "index rows must share a positive width".into(),
            ));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * width * d);
        for row in indices {
            for &idx in row {
                if idx >= rows {
                    return Err(DiffError::IndexOutOfRange {
                        op: "gather",
                        index: idx,
                        bound: rows,
                    });
                }
                out.extend_from_slice(tv.row(idx));
            }
        }
        let value = Tensor::matrix(indices.len(), width * d, out)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Weighted group means: `x: [n, d]`, `weights: [n, k]` gives `[k, d]`
    /// with row `j = Σ_i w_ij x_i / Σ_i w_ij`. Groups whose total weight is
    /// below [`MIN_GROUP_WEIGHT`] produce a zero row; see
    /// [`Graph::group_totals`].
    pub fn masked_mean(&mut self, x: Var, weights: Var) -> Result<Var, DiffError> {
        let (n, d) = self.value(x).dims();
        let (nw, k) = self.value(weights).dims();
        if n != nw {
            return Err(mismatch(
                "masked_mean",
                format!("x has {n} rows, weights have {nw}"),
            ));
        }
        let xv = self.value(x);
        let wv = self.value(weights);
        let mut totals = vec![0.0; k];
        let mut out = vec![0.0; k * d];
        for i in 0..n {
            let xr = xv.row(i);
            for j in 0..k {
                let w = wv.get(i, j);
                if w == 0.0 {
                    continue;
                }
                totals[j] += w;
                for (o, xi) in out[j * d..(j + 1) * d].iter_mut().zip(xr) {
                    *o += w * xi;
                }
            }
        }
        for j in 0..k {
            let row = &mut out[j * d..(j + 1) * d];
            if totals[j] < MIN_GROUP_WEIGHT {
                row.iter_mut().for_each(|v| *v = 0.0);
            } else {
                row.iter_mut().for_each(|v| *v /= totals[j]);
            }
        }
        let value = Tensor::matrix(k, d, out)?;
        Ok(self.push(value, Op::MaskedMean { x, weights, totals }))
    }

    /// Per-group weight totals recorded by a [`Graph::masked_mean`] node.
    pub fn group_totals(&self, var: Var) -> Option<&[f64]> {
        match &self.nodes[var.0].op {
            Op::MaskedMean { totals, .. } => Some(totals),
            _ => None,
        }
    }

    /// Row sums `[n, m] -> [n, 1]`, built as an affine map against ones.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var, DiffError> {
        let m = self.value(x).cols();
        let ones = self.input(Tensor::filled(&[m, 1], 1.0));
        self.affine(x, ones, None)
    }

    /// Sum of every element, as a `1 x 1` scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var, DiffError> {
        let rows = self.sum_rows(x)?;
        let n = self.value(rows).rows();
        let ones = self.input(Tensor::filled(&[1, n], 1.0));
        self.affine(ones, rows, None)
    }

    fn binary_operands(&self, op: &'static str, a: Var, b: Var) -> Result<Tensor, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dims() != vb.dims() {
            return Err(mismatch(op, format!("{:?} vs {:?}", va.dims(), vb.dims())));
        }
        Ok(va.clone())
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, DiffError> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(DiffError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(root_value.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, d) = xv.dims();
                let h = wv.cols();
                let gv = g.values();
                let mut dx = vec![0.0; n * d];
                let mut dw = vec![0.0; d * h];
                for i in 0..n {
                    let grow = &gv[i * h..(i + 1) * h];
                    for k in 0..d {
                        let wrow = &wv.values()[k * h..(k + 1) * h];
                        dx[i * d + k] = dot_slices(grow, wrow);
                        let xik = xv.values()[i * d + k];
                        if xik != 0.0 {
                            for (dwk, gij) in dw[k * h..(k + 1) * h].iter_mut().zip(grow) {
                                *dwk += xik * gij;
                            }
                        }
                    }
                }
                accumulate(grads, *x, Tensor::matrix(n, d, dx).unwrap());
                accumulate(grads, *w, Tensor::matrix(d, h, dw).unwrap());
                if let Some(b) = b {
                    let mut db = vec![0.0; h];
                    for i in 0..n {
                        for (dbj, gij) in db.iter_mut().zip(&gv[i * h..(i + 1) * h]) {
                            *dbj += gij;
                        }
                    }
                    accumulate(grads, *b, Tensor::matrix(1, h, db).unwrap());
                }
            }
            Op::Tanh(x) => {
                let dx = zip_map(g, y, |gi, yi| gi * (1.0 - yi * yi));
                accumulate(grads, *x, dx);
            }
            Op::Exp(x) => {
                let dx = zip_map(g, y, |gi, yi| gi * yi);
                accumulate(grads, *x, dx);
            }
            Op::Ln(x) => {
                let dx = zip_map(g, self.value(*x), |gi, xi| gi / xi);
                accumulate(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let mut dx = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner = dot_slices(yr, gr);
                    for ((d, yi), gi) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = yi * (gi - inner);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::L2Normalize { x, norms } => {
                let mut dx = Tensor::zeros(y.shape());
                for (r, norm) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner = dot_slices(yr, gr);
                    for ((d, yi), gi) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = (gi - yi * inner) / norm;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Dot { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, d) = av.dims();
                let m = bv.rows();
                let mut da = Tensor::zeros(&[n, d]);
                let mut db = Tensor::zeros(&[m, d]);
                for i in 0..n {
                    for j in 0..m {
                        let gij = g.get(i, j);
                        if gij == 0.0 {
                            continue;
                        }
                        axpy(da.row_mut(i), gij, bv.row(j));
                        axpy(db.row_mut(j), gij, av.row(i));
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Distance { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, d) = av.dims();
                let m = bv.rows();
                let mut da = Tensor::zeros(&[n, d]);
                let mut db = Tensor::zeros(&[m, d]);
                for i in 0..n {
                    for j in 0..m {
                        let dist = y.get(i, j);
                        let gij = g.get(i, j);
                        // The norm is not differentiable at coincident points; use 0.
                        if dist == 0.0 || gij == 0.0 {
                            continue;
                        }
                        let coef = gij / dist;
                        for k in 0..d {
                            let diff = av.get(i, k) - bv.get(j, k);
                            da.row_mut(i)[k] += coef * diff;
                            db.row_mut(j)[k] -= coef * diff;
                        }
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Mse { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let coef = 2.0 * g.values()[0] / av.rows() as f64;
                let da = zip_map(av, bv, |x, y| coef * (x - y));
                let db = zip_map(av, bv, |x, y| -coef * (x - y));
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::CrossEntropy { probs, targets } => {
                let p = self.value(*probs);
                let coef = -g.values()[0] / targets.len() as f64;
                let mut dp = Tensor::zeros(p.shape());
                for (i, &t) in targets.iter().enumerate() {
                    dp.row_mut(i)[t] = coef / p.get(i, t);
                }
                accumulate(grads, *probs, dp);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, zip_map(g, bv, |gi, bi| gi * bi));
                accumulate(grads, *b, zip_map(g, av, |gi, ai| gi * ai));
            }
            Op::Scale(x, factor) => {
                let mut dx = g.clone();
                dx.values_mut().iter_mut().for_each(|v| *v *= factor);
                accumulate(grads, *x, dx);
            }
            Op::AddScalar(x) => accumulate(grads, *x, g.clone()),
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let (rows, _) = self.value(p).dims();
                    let slice = g.values()[offset * cols..(offset + rows) * cols].to_vec();
                    accumulate(grads, p, Tensor::matrix(rows, cols, slice).unwrap());
                    offset += rows;
                }
            }
            Op::Gather { table, indices } => {
                let tv = self.value(*table);
                let d = tv.cols();
                let mut dt = Tensor::zeros(tv.shape());
                for (r, row) in indices.iter().enumerate() {
                    let grow = g.row(r);
                    for (slot, &idx) in row.iter().enumerate() {
                        axpy(dt.row_mut(idx), 1.0, &grow[slot * d..(slot + 1) * d]);
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::MaskedMean { x, weights, totals } => {
                let (xv, wv) = (self.value(*x), self.value(*weights));
                let (n, d) = xv.dims();
                let k = wv.cols();
                let mut dx = Tensor::zeros(&[n, d]);
                let mut dw = Tensor::zeros(&[n, k]);
                for j in 0..k {
                    if totals[j] < MIN_GROUP_WEIGHT {
                        continue;
                    }
                    let gj = g.row(j);
                    let mean = y.row(j);
                    for i in 0..n {
                        let w = wv.get(i, j);
                        let xi = xv.row(i);
                        if w != 0.0 {
                            axpy(dx.row_mut(i), w / totals[j], gj);
                        }
                        let mut acc = 0.0;
                        for c in 0..d {
                            acc += gj[c] * (xi[c] - mean[c]);
                        }
                        dw.row_mut(i)[j] = acc / totals[j];
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *weights, dw);
            }
        }
    }

    /// Writes `∂root/∂param` into every parameter's gradient slot. Parameters
    /// not reached from `root` get exact zeros.
    pub fn gradient(&self, root: Var, params: &mut ParameterSet) -> Result<(), DiffError> {
        let grads = self.backward(root)?;
        params.zero_grads();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) =
                (&node.op, grads.grads.get(idx).and_then(Option::as_ref))
            {
                params.get_mut(*id).grad.add_assign(g);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = a.clone();
    for (o, bv) in out.values_mut().iter_mut().zip(b.values()) {
        *o = f(*o, *bv);
    }
    out
}

fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Row-wise softmax with max subtraction, outside any graph.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut value = x.clone();
    for r in 0..value.rows() {
        softmax_in_place(value.row_mut(r));
    }
    value
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}
