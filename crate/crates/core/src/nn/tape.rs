//! Define-by-run reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse, so inputs always precede their consumers.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    ScaleHeads(Var, Var),
    HeadDot(Var, Var),
    Concat(Vec<Var>, usize),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    Gather(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>, usize),
    AttentionAggregate(Box<AggregateArgs>),
    Reduce(Var, Vec<f64>),
}

#[derive(Debug)]
struct AggregateArgs {
    xw: Var,
    ew: Var,
    alpha: Var,
    src: Vec<usize>,
    edge_rows: Vec<usize>,
    dst: Vec<usize>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// `c = a · b + beta · c` for row-major operands with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the strided views touch,
    // and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // constants need no backward rule
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect());
        self.push(name, out, op, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2();
        let (k2, n) = bv.dims2();
        if k != k2 || av.shape().len() != 2 || bv.shape().len() != 2 {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), (k as isize, 1), bv.data(), (n as isize, 1), 0.0, &mut out);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    /// Elementwise sum of equal shapes, or `[m, n] + [n]` row broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
            let out = Tensor::from_parts(av.shape().to_vec(), data);
            return self.push("add", out, Op::Add(a, b), &[a, b]);
        }
        let (m, n) = av.dims2();
        let row_like = bv.len() == n && av.shape().len() == 2 && bv.dims2().0 == 1;
        if !row_like {
            return Err(shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (x, y) in row.iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        let out = Tensor::from_parts(vec![m, n], data);
        self.push("add", out, Op::AddRow(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", format!("{:?} * {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Scales each `D`-wide head block of `x: [E, H·D]` by `w: [E, H]`.
    pub fn scale_heads(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (e, hd) = xv.dims2();
        let (e2, h) = wv.dims2();
        if e != e2 || h == 0 || hd % h != 0 {
            return Err(shape_err(
                "scale_heads",
                format!("{:?} by {:?}", xv.shape(), wv.shape()),
            ));
        }
        let d = hd / h;
        let mut data = xv.data().to_vec();
        for (row, ws) in data.chunks_exact_mut(hd).zip(wv.data().chunks_exact(h)) {
            for (block, &s) in row.chunks_exact_mut(d).zip(ws) {
                block.iter_mut().for_each(|v| *v *= s);
            }
        }
        let out = Tensor::from_parts(vec![e, hd], data);
        self.push("scale_heads", out, Op::ScaleHeads(x, w), &[x, w])
    }

    /// Per-head dot product of `x: [N, H·D]` with `a: [H, D]`, giving `[N, H]`.
    pub fn head_dot(&mut self, x: Var, a: Var) -> Result<Var> {
        let (xv, av) = (self.value(x), self.value(a));
        let (n, hd) = xv.dims2();
        let (h, d) = av.dims2();
        if h * d != hd || av.shape().len() != 2 {
            return Err(shape_err(
                "head_dot",
                format!("{:?} with {:?}", xv.shape(), av.shape()),
            ));
        }
        let mut out = Vec::with_capacity(n * h);
        for row in xv.data().chunks_exact(hd) {
            for (block, att) in row.chunks_exact(d).zip(av.data().chunks_exact(d)) {
                out.push(block.iter().zip(att).map(|(p, q)| p * q).sum());
            }
        }
        let out = Tensor::from_parts(vec![n, h], out);
        self.push("head_dot", out, Op::HeadDot(x, a), &[x, a])
    }

    /// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() || axis > 1 {
            return Err(shape_err("concat", format!("{} inputs, axis {axis}", inputs.len())));
        }
        let shapes: Vec<(usize, usize)> = inputs.iter().map(|v| self.value(*v).dims2()).collect();
        let out = if axis == 0 {
            let cols = shapes[0].1;
            if shapes.iter().any(|s| s.1 != cols) {
                return Err(shape_err("concat", format!("column mismatch {shapes:?}")));
            }
            let rows = shapes.iter().map(|s| s.0).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for v in inputs {
                data.extend_from_slice(self.value(*v).data());
            }
            Tensor::from_parts(vec![rows, cols], data)
        } else {
            let rows = shapes[0].0;
            if shapes.iter().any(|s| s.0 != rows) {
                return Err(shape_err("concat", format!("row mismatch {shapes:?}")));
            }
            let cols: usize = shapes.iter().map(|s| s.1).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for (v, (_, c)) in inputs.iter().zip(&shapes) {
                    data.extend_from_slice(&self.value(*v).data()[r * c..(r + 1) * c]);
                }
            }
            Tensor::from_parts(vec![rows, cols], data)
        };
        self.push("concat", out, Op::Concat(inputs.to_vec(), axis), inputs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(
            "leaky_relu",
            x,
            move |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    fn gather(&mut self, name: &'static str, what: &'static str, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        if idx.is_empty() {
            return Err(Error::Empty("gather index"));
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::OutOfRange {
                    what,
                    index: i,
                    size: rows,
                });
            }
            data.extend_from_slice(&xv.data()[i * cols..(i + 1) * cols]);
        }
        let out = Tensor::from_parts(vec![idx.len(), cols], data);
        self.push(name, out, Op::Gather(x, idx.to_vec()), &[x])
    }

    /// Rows of an embedding `table` selected by categorical `codes`.
    pub fn embedding_lookup(&mut self, table: Var, codes: &[usize]) -> Result<Var> {
        self.gather("embedding_lookup", "embedding table", table, codes)
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        self.gather("gather_rows", "gather source", x, idx)
    }

    /// Sums rows of `x` into `num_segments` output rows by `segment_ids`.
    pub fn segment_sum(&mut self, x: Var, segment_ids: &[usize], num_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        if segment_ids.len() != rows || num_segments == 0 {
            return Err(shape_err(
                "segment_sum",
                format!("{rows} rows, {} ids, {num_segments} segments", segment_ids.len()),
            ));
        }
        let mut out = vec![0.0; num_segments * cols];
        for (row, &s) in xv.data().chunks_exact(cols).zip(segment_ids) {
            if s >= num_segments {
                return Err(Error::OutOfRange {
                    what: "segment",
                    index: s,
                    size: num_segments,
                });
            }
            for (o, v) in out[s * cols..(s + 1) * cols].iter_mut().zip(row) {
                *o += v;
            }
        }
        let out = Tensor::from_parts(vec![num_segments, cols], out);
        self.push("segment_sum", out, Op::SegmentSum(x, segment_ids.to_vec()), &[x])
    }

    /// Column-wise softmax of `scores: [E, H]` within each segment.
    pub fn segment_softmax(&mut self, scores: Var, segment_ids: &[usize], num_segments: usize) -> Result<Var> {
        let sv = self.value(scores);
        let (rows, h) = sv.dims2();
        if segment_ids.len() != rows {
            return Err(shape_err(
                "segment_softmax",
                format!("{rows} scores, {} ids", segment_ids.len()),
            ));
        }
        let mut counts = vec![0usize; num_segments];
        for &s in segment_ids {
            if s >= num_segments {
                return Err(Error::OutOfRange {
                    what: "segment",
                    index: s,
                    size: num_segments,
                });
            }
            counts[s] += 1;
        }
        if let Some(empty) = counts.iter().position(|c| *c == 0) {
            return Err(Error::EmptySegment {
                op: "segment_softmax",
                segment: empty,
            });
        }
        let mut max = vec![f64::NEG_INFINITY; num_segments * h];
        for (row, &s) in sv.data().chunks_exact(h).zip(segment_ids) {
            for (m, v) in max[s * h..(s + 1) * h].iter_mut().zip(row) {
                *m = m.max(*v);
            }
        }
        let mut out: Vec<f64> = Vec::with_capacity(rows * h);
        let mut denom = vec![0.0; num_segments * h];
        for (row, &s) in sv.data().chunks_exact(h).zip(segment_ids) {
            for (j, v) in row.iter().enumerate() {
                let e = (v - max[s * h + j]).exp();
                denom[s * h + j] += e;
                out.push(e);
            }
        }
        for (row, &s) in out.chunks_exact_mut(h).zip(segment_ids) {
            for (j, v) in row.iter_mut().enumerate() {
                *v /= denom[s * h + j];
            }
        }
        let out = Tensor::from_parts(vec![rows, h], out);
        self.push(
            "segment_softmax",
            out,
            Op::SegmentSoftmax(scores, segment_ids.to_vec(), num_segments),
            &[scores],
        )
    }

    /// Attention-weighted message sum of a multi-head graph layer:
    /// `out[dst[k]] += alpha[k, h] · (xw[src[k]] + ew[edge_rows[k]])` within
    /// every `D`-wide head block `h`. Equivalent to gathering, adding, scaling
    /// and segment-summing per edge, without materializing per-edge rows.
    #[allow(clippy::too_many_arguments)]
    pub fn attention_aggregate(
        &mut self,
        xw: Var,
        ew: Var,
        alpha: Var,
        src: &[usize],
        edge_rows: &[usize],
        dst: &[usize],
        num_nodes: usize,
    ) -> Result<Var> {
        let (xv, ev, av) = (self.value(xw), self.value(ew), self.value(alpha));
        let (n_src, hd) = xv.dims2();
        let (n_rows, hd2) = ev.dims2();
        let (m, h) = av.dims2();
        if hd != hd2 || h == 0 || hd % h != 0 || src.len() != m || edge_rows.len() != m || dst.len() != m {
            return Err(shape_err(
                "attention_aggregate",
                format!(
                    "xw {:?}, ew {:?}, alpha {:?}, {} edges",
                    xv.shape(),
                    ev.shape(),
                    av.shape(),
                    src.len()
                ),
            ));
        }
        for (ids, size, what) in [(src, n_src, "source node"), (edge_rows, n_rows, "edge row"), (dst, num_nodes, "destination node")] {
            if let Some(&bad) = ids.iter().find(|&&i| i >= size) {
                return Err(Error::OutOfRange { what, index: bad, size });
            }
        }
        let d = hd / h;
        let (x, e, a) = (xv.data(), ev.data(), av.data());
        let mut out = vec![0.0; num_nodes * hd];
        for k in 0..m {
            let xr = &x[src[k] * hd..(src[k] + 1) * hd];
            let er = &e[edge_rows[k] * hd..(edge_rows[k] + 1) * hd];
            let o = &mut out[dst[k] * hd..(dst[k] + 1) * hd];
            for head in 0..h {
                let w = a[k * h + head];
                for j in head * d..(head + 1) * d {
                    o[j] += w * (xr[j] + er[j]);
                }
            }
        }
        let out = Tensor::from_parts(vec![num_nodes, hd], out);
        let args = AggregateArgs {
            xw,
            ew,
            alpha,
            src: src.to_vec(),
            edge_rows: edge_rows.to_vec(),
            dst: dst.to_vec(),
        };
        self.push("attention_aggregate", out, Op::AttentionAggregate(Box::new(args)), &[xw, ew, alpha])
    }

    /// Records a scalar whose value and gradient with respect to `x` were
    /// computed by the caller, e.g. a fused loss over logits.
    pub fn reduce_with_grad(&mut self, x: Var, value: f64, local_grad: Vec<f64>) -> Result<Var> {
        if local_grad.len() != self.value(x).len() {
            return Err(shape_err(
                "reduce_with_grad",
                format!("{} grads for {} values", local_grad.len(), self.value(x).len()),
            ));
        }
        if local_grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: "reduce_with_grad" });
        }
        self.push("reduce_with_grad", Tensor::scalar(value), Op::Reduce(x, local_grad), &[x])
    }

    /// Back-propagates from the scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                let target = &nodes[v.0];
                if !target.requires_grad {
                    return;
                }
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; target.value.len()]);
                f(buf);
            };
            let val = |v: Var| nodes[v.0].value.data();
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = nodes[a.0].value.dims2();
                    let n = nodes[b.0].value.dims2().1;
                    // dA = G · Bᵀ, dB = Aᵀ · G
                    acc(*a, &mut |da| {
                        gemm(m, n, k, &g, (n as isize, 1), val(*b), (1, n as isize), 1.0, da)
                    });
                    acc(*b, &mut |db| {
                        gemm(k, m, n, val(*a), (1, k as isize), &g, (n as isize, 1), 1.0, db)
                    });
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        acc(*v, &mut |d| d.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                    }
                }
                Op::AddRow(a, b) => {
                    acc(*a, &mut |d| d.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                    let n = nodes[b.0].value.len();
                    acc(*b, &mut |d| {
                        for row in g.chunks_exact(n) {
                            d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                        }
                    });
                }
                Op::Mul(a, b) => {
                    acc(*a, &mut |d| {
                        for ((x, gi), bi) in d.iter_mut().zip(&g).zip(val(*b)) {
                            *x += gi * bi;
                        }
                    });
                    acc(*b, &mut |d| {
                        for ((x, gi), ai) in d.iter_mut().zip(&g).zip(val(*a)) {
                            *x += gi * ai;
                        }
                    });
                }
                Op::ScaleHeads(x, w) => {
                    let (_, hd) = nodes[x.0].value.dims2();
                    let h = nodes[w.0].value.dims2().1;
                    let d = hd / h;
                    acc(*x, &mut |dx| {
                        for ((dxr, gr), wr) in dx
                            .chunks_exact_mut(hd)
                            .zip(g.chunks_exact(hd))
                            .zip(val(*w).chunks_exact(h))
                        {
                            for ((db, gb), s) in dxr.chunks_exact_mut(d).zip(gr.chunks_exact(d)).zip(wr) {
                                db.iter_mut().zip(gb).for_each(|(p, q)| *p += q * s);
                            }
                        }
                    });
                    acc(*w, &mut |dw| {
                        for ((dwr, gr), xr) in dw
                            .chunks_exact_mut(h)
                            .zip(g.chunks_exact(hd))
                            .zip(val(*x).chunks_exact(hd))
                        {
                            for ((dws, gb), xb) in dwr.iter_mut().zip(gr.chunks_exact(d)).zip(xr.chunks_exact(d)) {
                                *dws += gb.iter().zip(xb).map(|(p, q)| p * q).sum::<f64>();
                            }
                        }
                    });
                }
                Op::HeadDot(x, a) => {
                    let (h, d) = nodes[a.0].value.dims2();
                    let hd = h * d;
                    acc(*x, &mut |dx| {
                        for (dxr, gr) in dx.chunks_exact_mut(hd).zip(g.chunks_exact(h)) {
                            for ((db, gs), ab) in dxr.chunks_exact_mut(d).zip(gr).zip(val(*a).chunks_exact(d)) {
                                db.iter_mut().zip(ab).for_each(|(p, q)| *p += gs * q);
                            }
                        }
                    });
                    acc(*a, &mut |da| {
                        for (gr, xr) in g.chunks_exact(h).zip(val(*x).chunks_exact(hd)) {
                            for ((dab, gs), xb) in da.chunks_exact_mut(d).zip(gr).zip(xr.chunks_exact(d)) {
                                dab.iter_mut().zip(xb).for_each(|(p, q)| *p += gs * q);
                            }
                        }
                    });
                }
                Op::Concat(inputs, axis) => {
                    if *axis == 0 {
                        let mut offset = 0;
                        for v in inputs {
                            let len = nodes[v.0].value.len();
                            acc(*v, &mut |d| {
                                d.iter_mut().zip(&g[offset..offset + len]).for_each(|(x, y)| *x += y)
                            });
                            offset += len;
                        }
                    } else {
                        let (rows, total) = node.value.dims2();
                        let mut offset = 0;
                        for v in inputs {
                            let c = nodes[v.0].value.dims2().1;
                            acc(*v, &mut |d| {
                                for r in 0..rows {
                                    let src = &g[r * total + offset..r * total + offset + c];
                                    d[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                                }
                            });
                            offset += c;
                        }
                    }
                }
                Op::Relu(x) => acc(*x, &mut |d| {
                    for ((dx, gi), xi) in d.iter_mut().zip(&g).zip(val(*x)) {
                        if *xi > 0.0 {
                            *dx += gi;
                        }
                    }
                }),
                Op::LeakyRelu(x, slope) => acc(*x, &mut |d| {
                    for ((dx, gi), xi) in d.iter_mut().zip(&g).zip(val(*x)) {
                        *dx += if *xi > 0.0 { *gi } else { slope * gi };
                    }
                }),
                Op::Sigmoid(x) => acc(*x, &mut |d| {
                    for ((dx, gi), y) in d.iter_mut().zip(&g).zip(node.value.data()) {
                        *dx += gi * y * (1.0 - y);
                    }
                }),
                Op::Log(x) => acc(*x, &mut |d| {
                    for ((dx, gi), xi) in d.iter_mut().zip(&g).zip(val(*x)) {
                        *dx += gi / xi;
                    }
                }),
                Op::Exp(x) => acc(*x, &mut |d| {
                    for ((dx, gi), y) in d.iter_mut().zip(&g).zip(node.value.data()) {
                        *dx += gi * y;
                    }
                }),
                Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
                Op::Mean(x) => {
                    let n = nodes[x.0].value.len() as f64;
                    acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0] / n))
                }
                Op::Gather(x, idx) => {
                    let cols = nodes[x.0].value.dims2().1;
                    acc(*x, &mut |d| {
                        for (r, &i) in idx.iter().enumerate() {
                            let src = &g[r * cols..(r + 1) * cols];
                            d[i * cols..(i + 1) * cols].iter_mut().zip(src).for_each(|(p, q)| *p += q);
                        }
                    })
                }
                Op::SegmentSum(x, seg) => {
                    let cols = nodes[x.0].value.dims2().1;
                    acc(*x, &mut |d| {
                        for (r, &s) in seg.iter().enumerate() {
                            let src = &g[s * cols..(s + 1) * cols];
                            d[r * cols..(r + 1) * cols].iter_mut().zip(src).for_each(|(p, q)| *p += q);
                        }
                    })
                }
                Op::SegmentSoftmax(x, seg, num) => {
                    let h = node.value.dims2().1;
                    let y = node.value.data();
                    let mut dot = vec![0.0; num * h];
                    for (r, &s) in seg.iter().enumerate() {
                        for j in 0..h {
                            dot[s * h + j] += y[r * h + j] * g[r * h + j];
                        }
                    }
                    acc(*x, &mut |d| {
                        for (r, &s) in seg.iter().enumerate() {
                            for j in 0..h {
                                let k = r * h + j;
                                d[k] += y[k] * (g[k] - dot[s * h + j]);
                            }
                        }
                    })
                }
                Op::AttentionAggregate(args) => {
                    let AggregateArgs {
                        xw,
                        ew,
                        alpha,
                        src,
                        edge_rows,
                        dst,
                    } = args.as_ref();
                    let hd = nodes[xw.0].value.dims2().1;
                    let h = nodes[alpha.0].value.dims2().1;
                    let d = hd / h;
                    let a = val(*alpha);
                    let blocks = |k: usize| (src[k], edge_rows[k], &g[dst[k] * hd..(dst[k] + 1) * hd]);
                    acc(*xw, &mut |dx| {
                        for k in 0..src.len() {
                            let (s, _, gr) = blocks(k);
                            let row = &mut dx[s * hd..(s + 1) * hd];
                            for head in 0..h {
                                let w = a[k * h + head];
                                for j in head * d..(head + 1) * d {
                                    row[j] += w * gr[j];
                                }
                            }
                        }
                    });
                    acc(*ew, &mut |de| {
                        for k in 0..src.len() {
                            let (_, r, gr) = blocks(k);
                            let row = &mut de[r * hd..(r + 1) * hd];
                            for head in 0..h {
                                let w = a[k * h + head];
                                for j in head * d..(head + 1) * d {
                                    row[j] += w * gr[j];
                                }
                            }
                        }
                    });
                    let (x, e) = (val(*xw), val(*ew));
                    acc(*alpha, &mut |da| {
                        for k in 0..src.len() {
                            let (s, r, gr) = blocks(k);
                            let (xr, er) = (&x[s * hd..(s + 1) * hd], &e[r * hd..(r + 1) * hd]);
                            for head in 0..h {
                                let mut dot = 0.0;
                                for j in head * d..(head + 1) * d {
                                    dot += gr[j] * (xr[j] + er[j]);
                                }
                                da[k * h + head] += dot;
                            }
                        }
                    });
                }
                Op::Reduce(x, local) => acc(*x, &mut |d| {
                    d.iter_mut().zip(local).for_each(|(p, q)| *p += g[0] * q)
                }),
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of the loss with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
