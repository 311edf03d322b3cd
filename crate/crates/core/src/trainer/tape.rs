//! Dense reverse-mode autodiff over row-major 2-D `f32` tensors.

use std::f32::consts::PI;

const LN_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param {
        offset: usize,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Add(usize, usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Gelu(usize),
    Attention {
        qkv: usize,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<f32>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f32>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f32>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    /// Leaf whose gradient lands at `offset` of the flat gradient buffer.
    pub fn param(&mut self, data: &[f32], rows: usize, cols: usize, offset: usize) -> Var {
        assert_eq!(data.len(), rows * cols, "parameter shape");
        self.push(rows, cols, data.to_vec(), Op::Param { offset })
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = &self.nodes[table.0];
        let d = t.cols;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            assert!(i < t.rows, "embedding id {i} out of range {}", t.rows);
            out.extend_from_slice(&t.value[i * d..(i + 1) * d]);
        }
        self.push(
            ids.len(),
            d,
            out,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(r, c, out, Op::Add(a.0, b.0))
    }

    /// `a + row` with `row` of shape `1 x cols` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "bias shape");
        let bias = &self.nodes[row.0].value;
        let mut out = self.nodes[a.0].value.clone();
        for chunk in out.chunks_exact_mut(c) {
            for (o, b) in chunk.iter_mut().zip(bias) {
                *o += b;
            }
        }
        self.push(r, c, out, Op::AddRow(a.0, row.0))
    }

    /// `a @ b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = vec![0.0; m * n];
        matmul_acc(
            &self.nodes[a.0].value,
            &self.nodes[b.0].value,
            &mut out,
            m,
            k,
            n,
        );
        self.push(m, n, out, Op::MatMul(a.0, b.0))
    }

    /// `a @ b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_t inner dims");
        let mut out = vec![0.0; m * n];
        matmul_nt_acc(
            &self.nodes[a.0].value,
            &self.nodes[b.0].value,
            &mut out,
            m,
            k,
            n,
        );
        self.push(m, n, out, Op::MatMulT(a.0, b.0))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, c));
        assert_eq!(self.shape(beta), (1, c));
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gamma.0].value;
        let b = &self.nodes[beta.0].value;
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS as f64).sqrt();
            rstd[i] = s as f32;
            for j in 0..c {
                let h = ((row[j] as f64 - mean) * s) as f32;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                rstd,
            },
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = self.nodes[x.0].value.iter().map(|&v| gelu(v)).collect();
        self.push(r, c, out, Op::Gelu(x.0))
    }

    /// Causal multi-head self-attention. `qkv` is `(batch * seq) x 3d` with
    /// queries, keys and values side by side; the result is `(batch * seq) x d`.
    pub fn causal_attention(&mut self, qkv: Var, batch: usize, seq: usize, heads: usize) -> Var {
        let (rows, c3) = self.shape(qkv);
        assert_eq!(rows, batch * seq, "attention rows");
        assert_eq!(c3 % (3 * heads), 0, "attention width");
        let d = c3 / 3;
        let hd = d / heads;
        let scale = 1.0 / (hd as f32).sqrt();
        let x = &self.nodes[qkv.0].value;
        let mut probs = vec![0.0f32; batch * heads * seq * seq];
        let mut out = vec![0.0f32; rows * d];
        let mut scores = vec![0.0f32; seq];
        for b in 0..batch {
            for h in 0..heads {
                let pbase = (b * heads + h) * seq * seq;
                for i in 0..seq {
                    let q = &x[(b * seq + i) * c3 + h * hd..][..hd];
                    let mut max = f32::NEG_INFINITY;
                    for j in 0..=i {
                        let k = &x[(b * seq + j) * c3 + d + h * hd..][..hd];
                        let s = dot(q, k) * scale;
                        scores[j] = s;
                        max = max.max(s);
                    }
                    let mut z = 0.0f32;
                    for s in &mut scores[..=i] {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    let prow = &mut probs[pbase + i * seq..][..seq];
                    let orow = &mut out[(b * seq + i) * d + h * hd..][..hd];
                    for j in 0..=i {
                        let p = scores[j] / z;
                        prow[j] = p;
                        let v = &x[(b * seq + j) * c3 + 2 * d + h * hd..][..hd];
                        for (o, vv) in orow.iter_mut().zip(v) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        self.push(
            rows,
            d,
            out,
            Op::Attention {
                qkv: qkv.0,
                batch,
                seq,
                heads,
                probs,
            },
        )
    }

    /// Mean cross-entropy of `logits` rows against `targets`. Returns the
    /// scalar node and the loss evaluated in `f64`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> (Var, f64) {
        let (n, v) = self.shape(logits);
        assert_eq!(n, targets.len(), "one target per row");
        let l = &self.nodes[logits.0].value;
        let mut probs = vec![0.0f32; n * v];
        let mut total = 0.0f64;
        for i in 0..n {
            let row = &l[i * v..(i + 1) * v];
            assert!(targets[i] < v, "target {} out of range {v}", targets[i]);
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64;
            let z: f64 = row.iter().map(|&x| (x as f64 - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[targets[i]] as f64;
            for (p, &x) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = ((x as f64 - max).exp() / z) as f32;
            }
        }
        let loss = total / n as f64;
        let var = self.push(
            1,
            1,
            vec![loss as f32],
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
            },
        );
        (var, loss)
    }

    /// Back-propagates from the scalar `root`, adding parameter gradients
    /// into `grads` at each parameter's offset.
    pub fn backward(&self, root: Var, grads: &mut [f32]) {
        assert_eq!(self.shape(root), (1, 1), "backward from a scalar");
        let mut g: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let Some(gout) = g[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Param { offset } => {
                    for (d, s) in grads[*offset..*offset + gout.len()].iter_mut().zip(&gout) {
                        *d += s;
                    }
                }
                Op::Embedding { table, ids } => {
                    let t = &self.nodes[*table];
                    let d = t.cols;
                    let gt = slot(&mut g, *table, t.value.len());
                    for (row, &i) in ids.iter().enumerate() {
                        for (a, b) in gt[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&gout[row * d..(row + 1) * d])
                        {
                            *a += b;
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut g, *a, gout.len()), &gout);
                    add_into(slot(&mut g, *b, gout.len()), &gout);
                }
                Op::AddRow(a, b) => {
                    add_into(slot(&mut g, *a, gout.len()), &gout);
                    let gb = slot(&mut g, *b, node.cols);
                    for chunk in gout.chunks_exact(node.cols) {
                        add_into(gb, chunk);
                    }
                }
                Op::MatMul(a, b) => {
                    let (an, bn) = (&self.nodes[*a], &self.nodes[*b]);
                    let (m, k, n) = (an.rows, an.cols, bn.cols);
                    matmul_nt_acc(&gout, &bn.value, slot(&mut g, *a, m * k), m, n, k);
                    matmul_tn_acc(&an.value, &gout, slot(&mut g, *b, k * n), m, k, n);
                }
                Op::MatMulT(a, b) => {
                    let (an, bn) = (&self.nodes[*a], &self.nodes[*b]);
                    let (m, k, n) = (an.rows, an.cols, bn.rows);
                    matmul_acc(&gout, &bn.value, slot(&mut g, *a, m * k), m, n, k);
                    matmul_tn_acc(&gout, &an.value, slot(&mut g, *b, n * k), m, n, k);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let (r, c) = (node.rows, node.cols);
                    let gam = &self.nodes[*gamma].value;
                    {
                        let gg = slot(&mut g, *gamma, c);
                        for i in 0..r {
                            for j in 0..c {
                                gg[j] += gout[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    {
                        let gb = slot(&mut g, *beta, c);
                        for chunk in gout.chunks_exact(c) {
                            add_into(gb, chunk);
                        }
                    }
                    let gx = slot(&mut g, *x, r * c);
                    let mut dxhat = vec![0.0f32; c];
                    for i in 0..r {
                        let mut m1 = 0.0f32;
                        let mut m2 = 0.0f32;
                        for j in 0..c {
                            let dh = gout[i * c + j] * gam[j];
                            dxhat[j] = dh;
                            m1 += dh;
                            m2 += dh * xhat[i * c + j];
                        }
                        m1 /= c as f32;
                        m2 /= c as f32;
                        for j in 0..c {
                            gx[i * c + j] += rstd[i] * (dxhat[j] - m1 - xhat[i * c + j] * m2);
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xv = &self.nodes[*x].value;
                    let gx = slot(&mut g, *x, xv.len());
                    for ((d, &v), &go) in gx.iter_mut().zip(xv).zip(&gout) {
                        *d += go * gelu_grad(v);
                    }
                }
                Op::Attention {
                    qkv,
                    batch,
                    seq,
                    heads,
                    probs,
                } => {
                    let (batch, seq, heads) = (*batch, *seq, *heads);
                    let xn = &self.nodes[*qkv];
                    let c3 = xn.cols;
                    let d = c3 / 3;
                    let hd = d / heads;
                    let scale = 1.0 / (hd as f32).sqrt();
                    let x = &xn.value;
                    let gx = slot(&mut g, *qkv, x.len());
                    let mut dp = vec![0.0f32; seq];
                    for b in 0..batch {
                        for h in 0..heads {
                            let pbase = (b * heads + h) * seq * seq;
                            for i in 0..seq {
                                let go = &gout[(b * seq + i) * d + h * hd..][..hd];
                                let prow = &probs[pbase + i * seq..][..seq];
                                let mut sum = 0.0f32;
                                for j in 0..=i {
                                    let v = &x[(b * seq + j) * c3 + 2 * d + h * hd..][..hd];
                                    dp[j] = dot(go, v);
                                    sum += prow[j] * dp[j];
                                    let gv = &mut gx[(b * seq + j) * c3 + 2 * d + h * hd..][..hd];
                                    for (a, o) in gv.iter_mut().zip(go) {
                                        *a += prow[j] * o;
                                    }
                                }
                                for j in 0..=i {
                                    let ds = prow[j] * (dp[j] - sum) * scale;
                                    let qo = (b * seq + i) * c3 + h * hd;
                                    let ko = (b * seq + j) * c3 + d + h * hd;
                                    for t in 0..hd {
                                        gx[qo + t] += ds * x[ko + t];
                                        gx[ko + t] += ds * x[qo + t];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let ln = &self.nodes[*logits];
                    let (n, v) = (ln.rows, ln.cols);
                    let scale = gout[0] / n as f32;
                    let gl = slot(&mut g, *logits, n * v);
                    for i in 0..n {
                        for j in 0..v {
                            let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                            gl[i * v + j] += (probs[i * v + j] - onehot) * scale;
                        }
                    }
                }
            }
        }
    }
}

fn slot(g: &mut [Option<Vec<f32>>], id: usize, len: usize) -> &mut Vec<f32> {
    g[id].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

const GELU_C: f32 = 0.044_715;

fn gelu(x: f32) -> f32 {
    let k = (2.0 / PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let k = (2.0 / PI).sqrt();
    let t = (k * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}

/// Eight-lane dot product; fixed association order.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut s = lanes.iter().sum::<f32>();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `out[m x n] += a[m x k] @ b[k x n]`.
fn matmul_acc(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m x n] += a[m x k] @ b[n x k]^T`.
fn matmul_nt_acc(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k x n] += a[m x k]^T @ b[m x n]`.
fn matmul_tn_acc(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
