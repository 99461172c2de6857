//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! Forward calls append nodes to an arena; `backward` replays them in reverse
//! creation order, which is a valid reverse topological order because every
//! operation only references earlier nodes. Gradients accumulate, so shared
//! subexpressions sum their contributions.

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use rand::rngs::StdRng;
use rand::Rng;

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    /// [m,n] plus a [1,n] bias broadcast over the rows.
    AddRow { a: usize, bias: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    Neg { a: usize },
    Tanh { a: usize },
    Sigmoid { a: usize },
    Elu { a: usize },
    Softplus { a: usize },
    /// Softmax over consecutive groups of `group` columns.
    Softmax { a: usize, group: usize },
    LogSoftmax { a: usize, group: usize },
    /// One-hot sample per group; backward follows the softmax path.
    StraightThrough { logits: usize, group: usize },
    SumRows { a: usize },
    SumAll { a: usize },
    MeanAll { a: usize },
    /// max(x, c); no gradient where the floor is active.
    ClampMin { a: usize, c: f64 },
    Detach,
    ConcatCols { a: usize, b: usize },
    SliceCols { a: usize, start: usize },
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    /// Whether backward should allocate a gradient for this leaf.
    tracked: bool,
    /// Saved values some backward rules need (softmax probs for sampling).
    aux: Option<Vec<f64>>,
}

pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn finite_check(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// out = A[m,k] . B[k,n], accumulated into `out`.
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// out += A[m,n] . B[k,n]^T  (dot products of rows), out is [m,k].
fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o += acc;
        }
    }
}

/// out += A[m,k]^T . B[m,n], out is [k,n].
fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &b_ij) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_ij;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, data: Vec<f64>, aux: Option<Vec<f64>>) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node { op, rows, cols, data, grad: None, tracked: false, aux });
        Var(self.nodes.len() - 1)
    }

    fn shape_of(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn value_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.shape_of(v);
        Tensor::from_vec(r, c, self.nodes[v.0].data.clone()).expect("node shape is consistent")
    }

    /// Gradient of the last backward pass, if any flowed to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        let (r, c) = self.shape_of(v);
        self.nodes[v.0]
            .grad
            .as_ref()
            .map(|g| Tensor::from_vec(r, c, g.clone()).expect("grad shape matches node"))
    }

    /// Register an input value. `tracked` leaves are guaranteed a gradient
    /// buffer after backward; untracked leaves may report `None`.
    pub fn leaf(&mut self, t: &Tensor, tracked: bool) -> Var {
        let v = self.push(Op::Leaf, t.rows(), t.cols(), t.data().to_vec(), None);
        self.nodes[v.0].tracked = tracked;
        v
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Var {
        self.leaf(&Tensor::scalar(value), false)
    }

    // ── Forward operations ───────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape_of(a);
        let (k2, n) = self.shape_of(b);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{m}x{k} . {k2}x{n}"),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(&self.nodes[a.0].data, &self.nodes[b.0].data, &mut out, m, k, n);
        finite_check("matmul", &out)?;
        Ok(self.push(Op::MatMul { a: a.0, b: b.0 }, m, n, out, None))
    }

    fn binary_same_shape(&mut self, op_name: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let sa = self.shape_of(a);
        let sb = self.shape_of(b);
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: op_name,
                detail: format!("{}x{} vs {}x{}", sa.0, sa.1, sb.0, sb.1),
            });
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.binary_same_shape("add", a, b)?;
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        finite_check("add", &out)?;
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, r, c, out, None))
    }

    /// Add a 1xN bias row to every row of a MxN matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.shape_of(a);
        let (br, bc) = self.shape_of(bias);
        if br != 1 || bc != n {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                detail: format!("{m}x{n} + {br}x{bc}"),
            });
        }
        let bias_data = &self.nodes[bias.0].data;
        let mut out = Vec::with_capacity(m * n);
        for row in self.nodes[a.0].data.chunks_exact(n) {
            out.extend(row.iter().zip(bias_data).map(|(x, y)| x + y));
        }
        finite_check("add_row", &out)?;
        Ok(self.push(Op::AddRow { a: a.0, bias: bias.0 }, m, n, out, None))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.binary_same_shape("sub", a, b)?;
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        finite_check("sub", &out)?;
        Ok(self.push(Op::Sub { a: a.0, b: b.0 }, r, c, out, None))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.binary_same_shape("mul", a, b)?;
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        finite_check("mul", &out)?;
        Ok(self.push(Op::Mul { a: a.0, b: b.0 }, r, c, out, None))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let (r, cl) = self.shape_of(a);
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        finite_check("scale", &out)?;
        Ok(self.push(Op::Scale { a: a.0, c }, r, cl, out, None))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape_of(a);
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|x| -x).collect();
        Ok(self.push(Op::Neg { a: a.0 }, r, c, out, None))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape_of(a);
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x.tanh()).collect();
        finite_check("tanh", &out)?;
        Ok(self.push(Op::Tanh { a: a.0 }, r, c, out, None))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape_of(a);
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|x| sigmoid(*x)).collect();
        finite_check("sigmoid", &out)?;
        Ok(self.push(Op::Sigmoid { a: a.0 }, r, c, out, None))
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape_of(a);
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| if x > 0.0 { x } else { x.exp() - 1.0 })
            .collect();
        finite_check("elu", &out)?;
        Ok(self.push(Op::Elu { a: a.0 }, r, c, out, None))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape_of(a);
        // ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|), stable for large |x|.
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| x.max(0.0) + (-x.abs()).exp().ln_1p())
            .collect();
        finite_check("softplus", &out)?;
        Ok(self.push(Op::Softplus { a: a.0 }, r, c, out, None))
    }

    fn group_check(&self, op: &'static str, a: Var, group: usize) -> Result<(usize, usize)> {
        let (r, c) = self.shape_of(a);
        if group == 0 || c % group != 0 {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{c} cols not divisible into groups of {group}"),
            });
        }
        Ok((r, c))
    }

    /// Softmax over consecutive groups of `group` columns (the class axis).
    pub fn softmax(&mut self, a: Var, group: usize) -> Result<Var> {
        let (r, c) = self.group_check("softmax", a, group)?;
        let mut out = Vec::with_capacity(r * c);
        for chunk in self.nodes[a.0].data.chunks_exact(group) {
            softmax_into(chunk, &mut out);
        }
        finite_check("softmax", &out)?;
        Ok(self.push(Op::Softmax { a: a.0, group }, r, c, out, None))
    }

    pub fn log_softmax(&mut self, a: Var, group: usize) -> Result<Var> {
        let (r, c) = self.group_check("log_softmax", a, group)?;
        let mut out = Vec::with_capacity(r * c);
        for chunk in self.nodes[a.0].data.chunks_exact(group) {
            log_softmax_into(chunk, &mut out);
        }
        finite_check("log_softmax", &out)?;
        Ok(self.push(Op::LogSoftmax { a: a.0, group }, r, c, out, None))
    }

    /// Sample a one-hot vector per group from the softmax of the logits.
    /// The forward output is exactly one-hot; the backward pass routes the
    /// incoming gradient through the softmax probabilities instead.
    pub fn straight_through_sample(&mut self, logits: Var, group: usize, rng: &mut StdRng) -> Result<Var> {
        let (r, c) = self.group_check("straight_through_sample", logits, group)?;
        let mut probs = Vec::with_capacity(r * c);
        for chunk in self.nodes[logits.0].data.chunks_exact(group) {
            softmax_into(chunk, &mut probs);
        }
        finite_check("straight_through_sample", &probs)?;
        let mut out = vec![0.0; r * c];
        for (g, chunk) in probs.chunks_exact(group).enumerate() {
            let pick = sample_categorical(chunk, rng);
            out[g * group + pick] = 1.0;
        }
        Ok(self.push(Op::StraightThrough { logits: logits.0, group }, r, c, out, Some(probs)))
    }

    /// Row sums: [m,n] -> [m,1].
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.shape_of(a);
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .chunks_exact(n)
            .map(|row| row.iter().sum())
            .collect();
        finite_check("sum_rows", &out)?;
        Ok(self.push(Op::SumRows { a: a.0 }, m, 1, out, None))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let total: f64 = self.nodes[a.0].data.iter().sum();
        finite_check("sum_all", &[total])?;
        Ok(self.push(Op::SumAll { a: a.0 }, 1, 1, vec![total], None))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].data.len();
        let total: f64 = self.nodes[a.0].data.iter().sum::<f64>() / n as f64;
        finite_check("mean_all", &[total])?;
        Ok(self.push(Op::MeanAll { a: a.0 }, 1, 1, vec![total], None))
    }

    /// Elementwise max(x, floor). Gradient is blocked where the floor wins.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let (r, c) = self.shape_of(a);
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x.max(floor)).collect();
        Ok(self.push(Op::ClampMin { a: a.0, c: floor }, r, c, out, None))
    }

    /// Forward identity that stops gradients from flowing upstream.
    pub fn detach(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape_of(a);
        let out = self.nodes[a.0].data.clone();
        Ok(self.push(Op::Detach, r, c, out, None))
    }

    /// Concatenate along the column axis: [m,p] ++ [m,q] -> [m,p+q].
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.shape_of(a);
        let (m2, q) = self.shape_of(b);
        if m != m2 {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                detail: format!("{m} rows vs {m2} rows"),
            });
        }
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&self.nodes[a.0].data[i * p..(i + 1) * p]);
            out.extend_from_slice(&self.nodes[b.0].data[i * q..(i + 1) * q]);
        }
        Ok(self.push(Op::ConcatCols { a: a.0, b: b.0 }, m, p + q, out, None))
    }

    /// Column slice: [m,n] -> [m,len] starting at `start`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape_of(a);
        if start + len > n {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                detail: format!("slice {start}..{} of {n} cols", start + len),
            });
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&self.nodes[a.0].data[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Op::SliceCols { a: a.0, start }, m, len, out, None))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Propagate gradients from a scalar loss back to every tracked leaf.
    /// The tape is consumed: a second call without rebuilding is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let (r, c) = self.shape_of(loss);
        if r != 1 || c != 1 {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        self.consumed = true;
        for node in &mut self.nodes {
            if node.tracked && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.data.len()]);
            }
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &mut tail[0];
            let Some(gout) = node.grad.as_ref() else { continue };
            let rows = node.rows;
            let cols = node.cols;
            let acc = |target: &mut Node, f: &mut dyn FnMut(&mut Vec<f64>)| {
                let g = target.grad.get_or_insert_with(|| vec![0.0; target.data.len()]);
                f(g);
            };
            match node.op {
                Op::Leaf | Op::Detach => {}
                Op::MatMul { a, b } => {
                    let k = head[a].cols;
                    // dA += dOut . B^T ; dB += A^T . dOut
                    let (left, right) = if a < b {
                        let (l, r) = head.split_at_mut(b);
                        (&mut l[a], &mut r[0])
                    } else {
                        let (l, r) = head.split_at_mut(a);
                        (&mut r[0], &mut l[b])
                    };
                    let ga = left.grad.get_or_insert_with(|| vec![0.0; left.data.len()]);
                    matmul_nt_acc(gout, &right.data, ga, rows, cols, k);
                    let gb = right.grad.get_or_insert_with(|| vec![0.0; right.data.len()]);
                    matmul_tn_acc(&left.data, gout, gb, rows, k, cols);
                }
                Op::Add { a, b } => {
                    if a == b {
                        acc(&mut head[a], &mut |g| {
                            for (gi, go) in g.iter_mut().zip(gout) {
                                *gi += 2.0 * go;
                            }
                        });
                    } else {
                        acc(&mut head[a], &mut |g| {
                            for (gi, go) in g.iter_mut().zip(gout) {
                                *gi += go;
                            }
                        });
                        acc(&mut head[b], &mut |g| {
                            for (gi, go) in g.iter_mut().zip(gout) {
                                *gi += go;
                            }
                        });
                    }
                }
                Op::AddRow { a, bias } => {
                    acc(&mut head[a], &mut |g| {
                        for (gi, go) in g.iter_mut().zip(gout) {
                            *gi += go;
                        }
                    });
                    acc(&mut head[bias], &mut |g| {
                        for row in gout.chunks_exact(cols) {
                            for (gi, go) in g.iter_mut().zip(row) {
                                *gi += go;
                            }
                        }
                    });
                }
                Op::Sub { a, b } => {
                    acc(&mut head[a], &mut |g| {
                        for (gi, go) in g.iter_mut().zip(gout) {
                            *gi += go;
                        }
                    });
                    acc(&mut head[b], &mut |g| {
                        for (gi, go) in g.iter_mut().zip(gout) {
                            *gi -= go;
                        }
                    });
                }
                Op::Mul { a, b } => {
                    if a == b {
                        let vals = head[a].data.clone();
                        acc(&mut head[a], &mut |g| {
                            for ((gi, go), v) in g.iter_mut().zip(gout).zip(&vals) {
                                *gi += 2.0 * go * v;
                            }
                        });
                    } else {
                        let (left, right) = if a < b {
                            let (l, r) = head.split_at_mut(b);
                            (&mut l[a], &mut r[0])
                        } else {
                            let (l, r) = head.split_at_mut(a);
                            (&mut r[0], &mut l[b])
                        };
                        let ga = left.grad.get_or_insert_with(|| vec![0.0; left.data.len()]);
                        for ((gi, go), v) in ga.iter_mut().zip(gout).zip(&right.data) {
                            *gi += go * v;
                        }
                        let gb = right.grad.get_or_insert_with(|| vec![0.0; right.data.len()]);
                        for ((gi, go), v) in gb.iter_mut().zip(gout).zip(&left.data) {
                            *gi += go * v;
                        }
                    }
                }
                Op::Scale { a, c } => {
                    acc(&mut head[a], &mut |g| {
                        for (gi, go) in g.iter_mut().zip(gout) {
                            *gi += c * go;
                        }
                    });
                }
                Op::Neg { a } => {
                    acc(&mut head[a], &mut |g| {
                        for (gi, go) in g.iter_mut().zip(gout) {
                            *gi -= go;
                        }
                    });
                }
                Op::Tanh { a } => {
                    let y = &node.data;
                    acc(&mut head[a], &mut |g| {
                        for ((gi, go), v) in g.iter_mut().zip(gout).zip(y) {
                            *gi += go * (1.0 - v * v);
                        }
                    });
                }
                Op::Sigmoid { a } => {
                    let y = &node.data;
                    acc(&mut head[a], &mut |g| {
                        for ((gi, go), v) in g.iter_mut().zip(gout).zip(y) {
                            *gi += go * v * (1.0 - v);
                        }
                    });
                }
                Op::Elu { a } => {
                    let y = &node.data;
                    acc(&mut head[a], &mut |g| {
                        for ((gi, go), v) in g.iter_mut().zip(gout).zip(y) {
                            let d = if *v > 0.0 { 1.0 } else { v + 1.0 };
                            *gi += go * d;
                        }
                    });
                }
                Op::Softplus { a } => {
                    let x = head[a].data.clone();
                    acc(&mut head[a], &mut |g| {
                        for ((gi, go), v) in g.iter_mut().zip(gout).zip(&x) {
                            *gi += go * sigmoid(*v);
                        }
                    });
                }
                Op::Softmax { a, group } => {
                    let y = &node.data;
                    acc(&mut head[a], &mut |g| {
                        softmax_backward(y, gout, g, group);
                    });
                }
                Op::LogSoftmax { a, group } => {
                    // dx = dy - softmax(x) * rowsum(dy); softmax = exp(y).
                    let y = &node.data;
                    acc(&mut head[a], &mut |g| {
                        for ((yc, gc), gic) in y
                            .chunks_exact(group)
                            .zip(gout.chunks_exact(group))
                            .zip(g.chunks_exact_mut(group))
                        {
                            let s: f64 = gc.iter().sum();
                            for ((gi, go), v) in gic.iter_mut().zip(gc).zip(yc) {
                                *gi += go - v.exp() * s;
                            }
                        }
                    });
                }
                Op::StraightThrough { logits, group } => {
                    let probs = node.aux.as_ref().expect("sample op saves probs");
                    acc(&mut head[logits], &mut |g| {
                        softmax_backward(probs, gout, g, group);
                    });
                }
                Op::SumRows { a } => {
                    let n = head[a].cols;
                    acc(&mut head[a], &mut |g| {
                        for (row, go) in g.chunks_exact_mut(n).zip(gout) {
                            for gi in row {
                                *gi += go;
                            }
                        }
                    });
                }
                Op::SumAll { a } => {
                    let go = gout[0];
                    acc(&mut head[a], &mut |g| {
                        for gi in g.iter_mut() {
                            *gi += go;
                        }
                    });
                }
                Op::MeanAll { a } => {
                    let go = gout[0] / head[a].data.len() as f64;
                    acc(&mut head[a], &mut |g| {
                        for gi in g.iter_mut() {
                            *gi += go;
                        }
                    });
                }
                Op::ClampMin { a, c } => {
                    let x = head[a].data.clone();
                    acc(&mut head[a], &mut |g| {
                        for ((gi, go), v) in g.iter_mut().zip(gout).zip(&x) {
                            if *v > c {
                                *gi += go;
                            }
                        }
                    });
                }
                Op::ConcatCols { a, b } => {
                    let p = head[a].cols;
                    let q = head[b].cols;
                    acc(&mut head[a], &mut |g| {
                        for (i, row) in g.chunks_exact_mut(p).enumerate() {
                            let src = &gout[i * (p + q)..i * (p + q) + p];
                            for (gi, go) in row.iter_mut().zip(src) {
                                *gi += go;
                            }
                        }
                    });
                    acc(&mut head[b], &mut |g| {
                        for (i, row) in g.chunks_exact_mut(q).enumerate() {
                            let src = &gout[i * (p + q) + p..(i + 1) * (p + q)];
                            for (gi, go) in row.iter_mut().zip(src) {
                                *gi += go;
                            }
                        }
                    });
                }
                Op::SliceCols { a, start } => {
                    let n = head[a].cols;
                    acc(&mut head[a], &mut |g| {
                        for (i, row) in gout.chunks_exact(cols).enumerate() {
                            let dst = &mut g[i * n + start..i * n + start + cols];
                            for (gi, go) in dst.iter_mut().zip(row) {
                                *gi += go;
                            }
                        }
                    });
                }
            }
        }
        Ok(())
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

fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut sum = 0.0;
    for &x in logits {
        let e = (x - max).exp();
        sum += e;
        out.push(e);
    }
    for v in &mut out[start..] {
        *v /= sum;
    }
}

fn log_softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    out.extend(logits.iter().map(|&x| x - log_sum));
}

/// dx += p * (dy - dot(p, dy)) per group.
fn softmax_backward(probs: &[f64], gout: &[f64], g: &mut [f64], group: usize) {
    for ((pc, gc), gic) in probs
        .chunks_exact(group)
        .zip(gout.chunks_exact(group))
        .zip(g.chunks_exact_mut(group))
    {
        let dot: f64 = pc.iter().zip(gc).map(|(p, d)| p * d).sum();
        for ((gi, p), d) in gic.iter_mut().zip(pc).zip(gc) {
            *gi += p * (d - dot);
        }
    }
}

fn sample_categorical(probs: &[f64], rng: &mut StdRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
