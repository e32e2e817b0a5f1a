//! Define-by-run reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Graph`] is a Wengert list rebuilt for every optimization step; nodes
//! are appended in execution order, so walking ids in reverse is already a
//! topological order for the backward pass. [`Tensor`] is a cheap handle
//! (graph pointer + node id). All arithmetic is f64 and single-threaded, so
//! identical inputs produce bit-identical outputs.

use std::cell::RefCell;

use crate::error::{Error, Result};

use super::kernels;

#[derive(Clone, Debug)]
enum Op {
    Leaf {
        trainable: bool,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    Transpose {
        a: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    /// out[i, j] = a[i, j] + row[j]
    AddRow {
        a: usize,
        row: usize,
    },
    /// out[i, j] = a[i, j] * row[j]
    MulRow {
        a: usize,
        row: usize,
    },
    Scale {
        a: usize,
        factor: f64,
    },
    Shift {
        a: usize,
    },
    Sin {
        a: usize,
        /// Sibling node holding cos of the same input, when built via
        /// [`Graph::sin_cos`]; lets the backward pass skip the trig call.
        cos_sibling: Option<usize>,
    },
    Cos {
        a: usize,
        sin_sibling: Option<usize>,
    },
    Abs {
        a: usize,
    },
    Sigmoid {
        a: usize,
    },
    Mean {
        a: usize,
    },
    SliceRows {
        a: usize,
        start: usize,
        rows: usize,
    },
    ConcatCols {
        a: usize,
        b: usize,
    },
    /// Differentiable bilinear lookup of `raster` ([h*w, c], normalized
    /// coordinate convention of [`crate::wavesim::bilinear_sample`]) at
    /// `coords` ([n, 2]). Gradients flow to both the raster values and the
    /// sample coordinates.
    SampleBilinear {
        raster: usize,
        coords: usize,
        height: usize,
        width: usize,
    },
}

struct Inner {
    ops: Vec<Op>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
    /// True when the node depends on a trainable leaf.
    needs: Vec<bool>,
    /// Persistent leaf gradients; accumulated across backward calls until
    /// [`Graph::reset_grads`].
    grads: Vec<Option<Vec<f64>>>,
}

/// A dynamic computation graph (tape).
pub struct Graph {
    inner: RefCell<Inner>,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Tensor<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn dims2(shape: &[usize], what: &'static str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::Contract(format!(
            "{what} requires a 2-d tensor, got shape {shape:?}"
        ))),
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            inner: RefCell::new(Inner {
                ops: Vec::new(),
                shapes: Vec::new(),
                values: Vec::new(),
                needs: Vec::new(),
                grads: Vec::new(),
            }),
        }
    }

    fn push(&self, op: Op, shape: Vec<usize>, values: Vec<f64>, needs: bool) -> Tensor<'_> {
        debug_assert_eq!(numel(&shape), values.len());
        let mut inner = self.inner.borrow_mut();
        let id = inner.ops.len();
        inner.ops.push(op);
        inner.shapes.push(shape);
        inner.values.push(values);
        inner.needs.push(needs);
        inner.grads.push(None);
        Tensor { graph: self, id }
    }

    /// Trainable leaf; receives gradients on backward.
    pub fn param(&self, values: Vec<f64>, shape: Vec<usize>) -> Result<Tensor<'_>> {
        if numel(&shape) != values.len() {
            return Err(Error::Contract(format!(
                "leaf values length {} does not match shape {:?}",
                values.len(),
                shape
            )));
        }
        Ok(self.push(Op::Leaf { trainable: true }, shape, values, true))
    }

    /// Non-trainable leaf (observed data, coordinates, constants).
    pub fn constant(&self, values: Vec<f64>, shape: Vec<usize>) -> Result<Tensor<'_>> {
        if numel(&shape) != values.len() {
            return Err(Error::Contract(format!(
                "leaf values length {} does not match shape {:?}",
                values.len(),
                shape
            )));
        }
        Ok(self.push(Op::Leaf { trainable: false }, shape, values, false))
    }

    pub fn scalar(&self, v: f64) -> Tensor<'_> {
        self.push(Op::Leaf { trainable: false }, vec![1], vec![v], false)
    }

    fn same_graph(&self, t: Tensor<'_>) -> Result<()> {
        if std::ptr::eq(self, t.graph) {
            Ok(())
        } else {
            Err(Error::Contract("tensors belong to different graphs".into()))
        }
    }

    pub fn matmul<'g>(&'g self, a: Tensor<'g>, b: Tensor<'g>) -> Result<Tensor<'g>> {
        self.same_graph(a)?;
        self.same_graph(b)?;
        let (m, k, n, out, needs) = {
            let inner = self.inner.borrow();
            let (m, k) = dims2(&inner.shapes[a.id], "matmul")?;
            let (k2, n) = dims2(&inner.shapes[b.id], "matmul")?;
            if k != k2 {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: inner.shapes[a.id].clone(),
                    rhs: inner.shapes[b.id].clone(),
                });
            }
            let mut out = vec![0.0; m * n];
            kernels::matmul(&mut out, &inner.values[a.id], &inner.values[b.id], m, k, n);
            (m, k, n, out, inner.needs[a.id] || inner.needs[b.id])
        };
        let _ = k;
        Ok(self.push(Op::MatMul { a: a.id, b: b.id }, vec![m, n], out, needs))
    }

    pub fn transpose<'g>(&'g self, a: Tensor<'g>) -> Result<Tensor<'g>> {
        self.same_graph(a)?;
        let (r, c, out, needs) = {
            let inner = self.inner.borrow();
            let (r, c) = dims2(&inner.shapes[a.id], "transpose")?;
            let mut out = vec![0.0; r * c];
            kernels::transpose(&mut out, &inner.values[a.id], r, c);
            (r, c, out, inner.needs[a.id])
        };
        Ok(self.push(Op::Transpose { a: a.id }, vec![c, r], out, needs))
    }

    /// Shared shape logic for add/sub/mul: equal shapes, or one operand is a
    /// scalar (single element) broadcast across the other.
    fn binary_shape(
        &self,
        op: &'static str,
        a: Tensor<'_>,
        b: Tensor<'_>,
    ) -> Result<(Vec<usize>, bool)> {
        let inner = self.inner.borrow();
        let (sa, sb) = (&inner.shapes[a.id], &inner.shapes[b.id]);
        let (la, lb) = (numel(sa), numel(sb));
        if sa == sb {
            Ok((sa.clone(), inner.needs[a.id] || inner.needs[b.id]))
        } else if la == 1 {
            Ok((sb.clone(), inner.needs[a.id] || inner.needs[b.id]))
        } else if lb == 1 {
            Ok((sa.clone(), inner.needs[a.id] || inner.needs[b.id]))
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: sa.clone(),
                rhs: sb.clone(),
            })
        }
    }

    fn elementwise<'g>(
        &'g self,
        tag: &'static str,
        a: Tensor<'g>,
        b: Tensor<'g>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor<'g>> {
        self.same_graph(a)?;
        self.same_graph(b)?;
        let (shape, needs) = self.binary_shape(tag, a, b)?;
        let out = {
            let inner = self.inner.borrow();
            let (va, vb) = (&inner.values[a.id], &inner.values[b.id]);
            if va.len() == vb.len() {
                va.iter().zip(vb.iter()).map(|(&x, &y)| f(x, y)).collect()
            } else if va.len() == 1 {
                vb.iter().map(|&y| f(va[0], y)).collect()
            } else {
                va.iter().map(|&x| f(x, vb[0])).collect()
            }
        };
        let op = match tag {
            "add" => Op::Add { a: a.id, b: b.id },
            "sub" => Op::Sub { a: a.id, b: b.id },
            "mul" => Op::Mul { a: a.id, b: b.id },
            _ => unreachable!(),
        };
        Ok(self.push(op, shape, out, needs))
    }

    pub fn add<'g>(&'g self, a: Tensor<'g>, b: Tensor<'g>) -> Result<Tensor<'g>> {
        self.elementwise("add", a, b, |x, y| x + y)
    }

    pub fn sub<'g>(&'g self, a: Tensor<'g>, b: Tensor<'g>) -> Result<Tensor<'g>> {
        self.elementwise("sub", a, b, |x, y| x - y)
    }

    pub fn mul<'g>(&'g self, a: Tensor<'g>, b: Tensor<'g>) -> Result<Tensor<'g>> {
        self.elementwise("mul", a, b, |x, y| x * y)
    }

    fn rowwise<'g>(
        &'g self,
        tag: &'static str,
        a: Tensor<'g>,
        row: Tensor<'g>,
    ) -> Result<Tensor<'g>> {
        self.same_graph(a)?;
        self.same_graph(row)?;
        let (shape, out, needs) = {
            let inner = self.inner.borrow();
            let (r, c) = dims2(&inner.shapes[a.id], tag)?;
            if numel(&inner.shapes[row.id]) != c {
                return Err(Error::ShapeMismatch {
                    op: tag,
                    lhs: inner.shapes[a.id].clone(),
                    rhs: inner.shapes[row.id].clone(),
                });
            }
            let va = &inner.values[a.id];
            let vr = &inner.values[row.id];
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                let arow = &va[i * c..(i + 1) * c];
                if tag == "add_row" {
                    out.extend(arow.iter().zip(vr.iter()).map(|(&x, &y)| x + y));
                } else {
                    out.extend(arow.iter().zip(vr.iter()).map(|(&x, &y)| x * y));
                }
            }
            (
                vec![r, c],
                out,
                inner.needs[a.id] || inner.needs[row.id],
            )
        };
        let op = if tag == "add_row" {
            Op::AddRow { a: a.id, row: row.id }
        } else {
            Op::MulRow { a: a.id, row: row.id }
        };
        Ok(self.push(op, shape, out, needs))
    }

    /// Broadcast-add a length-c row vector to every row of a [r, c] tensor.
    pub fn add_row<'g>(&'g self, a: Tensor<'g>, row: Tensor<'g>) -> Result<Tensor<'g>> {
        self.rowwise("add_row", a, row)
    }

    /// Broadcast-multiply every row of a [r, c] tensor by a length-c row vector.
    pub fn mul_row<'g>(&'g self, a: Tensor<'g>, row: Tensor<'g>) -> Result<Tensor<'g>> {
        self.rowwise("mul_row", a, row)
    }

    fn unary<'g>(
        &'g self,
        a: Tensor<'g>,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<Tensor<'g>> {
        self.same_graph(a)?;
        let (shape, out, needs) = {
            let inner = self.inner.borrow();
            let out = inner.values[a.id].iter().map(|&x| f(x)).collect();
            (inner.shapes[a.id].clone(), out, inner.needs[a.id])
        };
        Ok(self.push(op, shape, out, needs))
    }

    pub fn scale<'g>(&'g self, a: Tensor<'g>, factor: f64) -> Result<Tensor<'g>> {
        self.unary(a, Op::Scale { a: a.id, factor }, |x| x * factor)
    }

    pub fn shift<'g>(&'g self, a: Tensor<'g>, offset: f64) -> Result<Tensor<'g>> {
        self.unary(a, Op::Shift { a: a.id }, |x| x + offset)
    }

    pub fn sin<'g>(&'g self, a: Tensor<'g>) -> Result<Tensor<'g>> {
        self.unary(a, Op::Sin { a: a.id, cos_sibling: None }, f64::sin)
    }

    pub fn cos<'g>(&'g self, a: Tensor<'g>) -> Result<Tensor<'g>> {
        self.unary(a, Op::Cos { a: a.id, sin_sibling: None }, f64::cos)
    }

    pub fn abs<'g>(&'g self, a: Tensor<'g>) -> Result<Tensor<'g>> {
        self.unary(a, Op::Abs { a: a.id }, f64::abs)
    }

    pub fn sigmoid<'g>(&'g self, a: Tensor<'g>) -> Result<Tensor<'g>> {
        self.unary(a, Op::Sigmoid { a: a.id }, |x| 1.0 / (1.0 + (-x).exp()))
    }

    /// Sine and cosine of the same input with a single `sin_cos` evaluation
    /// per element; each node backpropagates through the sibling's values.
    pub fn sin_cos<'g>(&'g self, a: Tensor<'g>) -> Result<(Tensor<'g>, Tensor<'g>)> {
        self.same_graph(a)?;
        let (shape, sines, cosines, needs) = {
            let inner = self.inner.borrow();
            let va = &inner.values[a.id];
            let mut s = Vec::with_capacity(va.len());
            let mut c = Vec::with_capacity(va.len());
            for &x in va {
                let (sx, cx) = x.sin_cos();
                s.push(sx);
                c.push(cx);
            }
            (inner.shapes[a.id].clone(), s, c, inner.needs[a.id])
        };
        let sin_t = self.push(
            Op::Sin { a: a.id, cos_sibling: None },
            shape.clone(),
            sines,
            needs,
        );
        let cos_t = self.push(
            Op::Cos { a: a.id, sin_sibling: Some(sin_t.id) },
            shape,
            cosines,
            needs,
        );
        self.inner.borrow_mut().ops[sin_t.id] = Op::Sin {
            a: a.id,
            cos_sibling: Some(cos_t.id),
        };
        Ok((sin_t, cos_t))
    }

    /// Arithmetic mean of all entries, as a [1]-shaped tensor.
    pub fn mean<'g>(&'g self, a: Tensor<'g>) -> Result<Tensor<'g>> {
        self.same_graph(a)?;
        let (out, needs) = {
            let inner = self.inner.borrow();
            let va = &inner.values[a.id];
            if va.is_empty() {
                return Err(Error::EmptyDomain("mean of an empty tensor"));
            }
            let sum: f64 = va.iter().sum();
            (sum / va.len() as f64, inner.needs[a.id])
        };
        Ok(self.push(Op::Mean { a: a.id }, vec![1], vec![out], needs))
    }

    /// Rows [start, start+rows) of a 2-d tensor.
    pub fn slice_rows<'g>(
        &'g self,
        a: Tensor<'g>,
        start: usize,
        rows: usize,
    ) -> Result<Tensor<'g>> {
        self.same_graph(a)?;
        let (out, c, needs) = {
            let inner = self.inner.borrow();
            let (r, c) = dims2(&inner.shapes[a.id], "slice_rows")?;
            if start + rows > r {
                return Err(Error::Contract(format!(
                    "slice_rows [{start}, {}) out of range for {r} rows",
                    start + rows
                )));
            }
            let out = inner.values[a.id][start * c..(start + rows) * c].to_vec();
            (out, c, inner.needs[a.id])
        };
        Ok(self.push(
            Op::SliceRows { a: a.id, start, rows },
            vec![rows, c],
            out,
            needs,
        ))
    }

    /// Horizontal concatenation of two 2-d tensors with equal row counts.
    pub fn concat_cols<'g>(&'g self, a: Tensor<'g>, b: Tensor<'g>) -> Result<Tensor<'g>> {
        self.same_graph(a)?;
        self.same_graph(b)?;
        let (out, r, ca, cb, needs) = {
            let inner = self.inner.borrow();
            let (ra, ca) = dims2(&inner.shapes[a.id], "concat_cols")?;
            let (rb, cb) = dims2(&inner.shapes[b.id], "concat_cols")?;
            if ra != rb {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: inner.shapes[a.id].clone(),
                    rhs: inner.shapes[b.id].clone(),
                });
            }
            let (va, vb) = (&inner.values[a.id], &inner.values[b.id]);
            let mut out = Vec::with_capacity(ra * (ca + cb));
            for i in 0..ra {
                out.extend_from_slice(&va[i * ca..(i + 1) * ca]);
                out.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
            }
            (out, ra, ca, cb, inner.needs[a.id] || inner.needs[b.id])
        };
        let _ = cb;
        Ok(self.push(
            Op::ConcatCols { a: a.id, b: b.id },
            vec![r, ca + cb],
            out,
            needs,
        ))
    }

    /// Differentiable bilinear sampling of a [h*w, c] raster tensor at
    /// normalized coordinates [n, 2]; out-of-range coordinates clamp to the
    /// border (zero coordinate gradient there).
    pub fn sample_bilinear<'g>(
        &'g self,
        raster: Tensor<'g>,
        height: usize,
        width: usize,
        coords: Tensor<'g>,
    ) -> Result<Tensor<'g>> {
        self.same_graph(raster)?;
        self.same_graph(coords)?;
        let (out, n, ch, needs) = {
            let inner = self.inner.borrow();
            let (pix, ch) = dims2(&inner.shapes[raster.id], "sample_bilinear")?;
            if pix != height * width {
                return Err(Error::Contract(format!(
                    "raster shape [{pix}, {ch}] does not match {height}x{width}"
                )));
            }
            let (n, two) = dims2(&inner.shapes[coords.id], "sample_bilinear")?;
            if two != 2 {
                return Err(Error::ShapeMismatch {
                    op: "sample_bilinear",
                    lhs: inner.shapes[raster.id].clone(),
                    rhs: inner.shapes[coords.id].clone(),
                });
            }
            let vr = &inner.values[raster.id];
            let vc = &inner.values[coords.id];
            let mut out = vec![0.0; n * ch];
            for p in 0..n {
                let corners = BilinearCorners::locate(vc[2 * p], vc[2 * p + 1], height, width);
                for q in 0..ch {
                    out[p * ch + q] = corners.interpolate(vr, ch, q, width);
                }
            }
            (out, n, ch, inner.needs[raster.id] || inner.needs[coords.id])
        };
        Ok(self.push(
            Op::SampleBilinear {
                raster: raster.id,
                coords: coords.id,
                height,
                width,
            },
            vec![n, ch],
            out,
            needs,
        ))
    }

    /// Populate leaf gradients of every trainable leaf reachable from `loss`.
    ///
    /// Gradients accumulate across calls until [`Graph::reset_grads`].
    pub fn backward(&self, loss: Tensor<'_>) -> Result<()> {
        self.same_graph(loss)?;
        let inner = &mut *self.inner.borrow_mut();
        if numel(&inner.shapes[loss.id]) != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                inner.shapes[loss.id]
            )));
        }
        let ops = &inner.ops;
        let shapes = &inner.shapes;
        let values = &inner.values;
        let needs = &inner.needs;
        let grads = &mut inner.grads;

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; ops.len()];
        adjoints[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(adj) = adjoints[id].take() else {
                continue;
            };
            if !needs[id] {
                continue;
            }
            let feed = |target: usize, adjoints: &mut Vec<Option<Vec<f64>>>,
                        write: &mut dyn FnMut(&mut [f64])| {
                if !needs[target] {
                    return;
                }
                let slot = adjoints[target]
                    .get_or_insert_with(|| vec![0.0; values[target].len()]);
                write(slot);
            };
            match &ops[id] {
                Op::Leaf { trainable } => {
                    if *trainable {
                        let g = grads[id].get_or_insert_with(|| vec![0.0; adj.len()]);
                        for (gi, ai) in g.iter_mut().zip(adj.iter()) {
                            *gi += ai;
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (m, n) = dims2(&shapes[id], "matmul")?;
                    let k = shapes[*a][1];
                    feed(*a, &mut adjoints, &mut |d| {
                        kernels::matmul_nt_acc(d, &adj, &values[*b], m, n, k)
                    });
                    feed(*b, &mut adjoints, &mut |d| {
                        kernels::matmul_tn_acc(d, &values[*a], &adj, m, k, n)
                    });
                }
                Op::Transpose { a } => {
                    let (r, c) = dims2(&shapes[id], "transpose")?;
                    feed(*a, &mut adjoints, &mut |d| {
                        for i in 0..r {
                            for j in 0..c {
                                d[j * r + i] += adj[i * c + j];
                            }
                        }
                    });
                }
                Op::Add { a, b } => {
                    for input in [*a, *b] {
                        feed(input, &mut adjoints, &mut |d| {
                            accumulate_broadcast(d, &adj, 1.0)
                        });
                    }
                }
                Op::Sub { a, b } => {
                    feed(*a, &mut adjoints, &mut |d| {
                        accumulate_broadcast(d, &adj, 1.0)
                    });
                    feed(*b, &mut adjoints, &mut |d| {
                        accumulate_broadcast(d, &adj, -1.0)
                    });
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (&values[*a], &values[*b]);
                    feed(*a, &mut adjoints, &mut |d| {
                        accumulate_product(d, &adj, vb);
                    });
                    feed(*b, &mut adjoints, &mut |d| {
                        accumulate_product(d, &adj, va);
                    });
                }
                Op::AddRow { a, row } => {
                    let (r, c) = dims2(&shapes[id], "add_row")?;
                    feed(*a, &mut adjoints, &mut |d| {
                        for (di, ai) in d.iter_mut().zip(adj.iter()) {
                            *di += ai;
                        }
                    });
                    feed(*row, &mut adjoints, &mut |d| {
                        for i in 0..r {
                            for j in 0..c {
                                d[j] += adj[i * c + j];
                            }
                        }
                    });
                }
                Op::MulRow { a, row } => {
                    let (r, c) = dims2(&shapes[id], "mul_row")?;
                    let (va, vrow) = (&values[*a], &values[*row]);
                    feed(*a, &mut adjoints, &mut |d| {
                        for i in 0..r {
                            for j in 0..c {
                                d[i * c + j] += adj[i * c + j] * vrow[j];
                            }
                        }
                    });
                    feed(*row, &mut adjoints, &mut |d| {
                        for i in 0..r {
                            for j in 0..c {
                                d[j] += adj[i * c + j] * va[i * c + j];
                            }
                        }
                    });
                }
                Op::Scale { a, factor } => {
                    let f = *factor;
                    feed(*a, &mut adjoints, &mut |d| {
                        for (di, ai) in d.iter_mut().zip(adj.iter()) {
                            *di += f * ai;
                        }
                    });
                }
                Op::Shift { a } => {
                    feed(*a, &mut adjoints, &mut |d| {
                        for (di, ai) in d.iter_mut().zip(adj.iter()) {
                            *di += ai;
                        }
                    });
                }
                Op::Sin { a, cos_sibling } => {
                    let va = &values[*a];
                    let cos_vals = cos_sibling.map(|s| &values[s]);
                    feed(*a, &mut adjoints, &mut |d| match cos_vals {
                        Some(cv) => {
                            for ((di, ai), ci) in d.iter_mut().zip(adj.iter()).zip(cv.iter()) {
                                *di += ai * ci;
                            }
                        }
                        None => {
                            for ((di, ai), xi) in d.iter_mut().zip(adj.iter()).zip(va.iter()) {
                                *di += ai * xi.cos();
                            }
                        }
                    });
                }
                Op::Cos { a, sin_sibling } => {
                    let va = &values[*a];
                    let sin_vals = sin_sibling.map(|s| &values[s]);
                    feed(*a, &mut adjoints, &mut |d| match sin_vals {
                        Some(sv) => {
                            for ((di, ai), si) in d.iter_mut().zip(adj.iter()).zip(sv.iter()) {
                                *di -= ai * si;
                            }
                        }
                        None => {
                            for ((di, ai), xi) in d.iter_mut().zip(adj.iter()).zip(va.iter()) {
                                *di -= ai * xi.sin();
                            }
                        }
                    });
                }
                Op::Abs { a } => {
                    let va = &values[*a];
                    feed(*a, &mut adjoints, &mut |d| {
                        for ((di, ai), xi) in d.iter_mut().zip(adj.iter()).zip(va.iter()) {
                            *di += ai * if *xi > 0.0 {
                                1.0
                            } else if *xi < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                        }
                    });
                }
                Op::Sigmoid { a } => {
                    let vo = &values[id];
                    feed(*a, &mut adjoints, &mut |d| {
                        for ((di, ai), si) in d.iter_mut().zip(adj.iter()).zip(vo.iter()) {
                            *di += ai * si * (1.0 - si);
                        }
                    });
                }
                Op::Mean { a } => {
                    let count = values[*a].len() as f64;
                    let contribution = adj[0] / count;
                    feed(*a, &mut adjoints, &mut |d| {
                        for di in d.iter_mut() {
                            *di += contribution;
                        }
                    });
                }
                Op::SliceRows { a, start, rows } => {
                    let c = shapes[id][1];
                    let (start, rows) = (*start, *rows);
                    feed(*a, &mut adjoints, &mut |d| {
                        let dst = &mut d[start * c..(start + rows) * c];
                        for (di, ai) in dst.iter_mut().zip(adj.iter()) {
                            *di += ai;
                        }
                    });
                }
                Op::ConcatCols { a, b } => {
                    let r = shapes[id][0];
                    let ca = shapes[*a][1];
                    let cb = shapes[*b][1];
                    feed(*a, &mut adjoints, &mut |d| {
                        for i in 0..r {
                            for j in 0..ca {
                                d[i * ca + j] += adj[i * (ca + cb) + j];
                            }
                        }
                    });
                    feed(*b, &mut adjoints, &mut |d| {
                        for i in 0..r {
                            for j in 0..cb {
                                d[i * cb + j] += adj[i * (ca + cb) + ca + j];
                            }
                        }
                    });
                }
                Op::SampleBilinear {
                    raster,
                    coords,
                    height,
                    width,
                } => {
                    let vr = &values[*raster];
                    let vc = &values[*coords];
                    let ch = shapes[id][1];
                    let n = shapes[id][0];
                    let (h, w) = (*height, *width);
                    feed(*raster, &mut adjoints, &mut |d| {
                        for p in 0..n {
                            let corners = BilinearCorners::locate(vc[2 * p], vc[2 * p + 1], h, w);
                            for q in 0..ch {
                                corners.scatter(d, ch, q, w, adj[p * ch + q]);
                            }
                        }
                    });
                    feed(*coords, &mut adjoints, &mut |d| {
                        for p in 0..n {
                            let corners = BilinearCorners::locate(vc[2 * p], vc[2 * p + 1], h, w);
                            let (mut gx, mut gy) = (0.0, 0.0);
                            for q in 0..ch {
                                let (dx, dy) = corners.coord_gradient(vr, ch, q, h, w);
                                gx += adj[p * ch + q] * dx;
                                gy += adj[p * ch + q] * dy;
                            }
                            d[2 * p] += gx;
                            d[2 * p + 1] += gy;
                        }
                    });
                }
            }
        }
        Ok(())
    }

    /// Clear accumulated leaf gradients.
    pub fn reset_grads(&self) {
        for g in self.inner.borrow_mut().grads.iter_mut() {
            *g = None;
        }
    }
}

/// dst += scale * src, where src may be broadcast from a scalar or reduced
/// into a scalar destination.
fn accumulate_broadcast(dst: &mut [f64], src: &[f64], scale: f64) {
    if dst.len() == src.len() {
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            *d += scale * s;
        }
    } else if dst.len() == 1 {
        dst[0] += scale * src.iter().sum::<f64>();
    } else {
        debug_assert_eq!(src.len(), 1);
        for d in dst.iter_mut() {
            *d += scale * src[0];
        }
    }
}

/// dst += adj * other, handling the scalar-broadcast cases of Mul.
fn accumulate_product(dst: &mut [f64], adj: &[f64], other: &[f64]) {
    if dst.len() == adj.len() && other.len() == adj.len() {
        for ((d, a), o) in dst.iter_mut().zip(adj.iter()).zip(other.iter()) {
            *d += a * o;
        }
    } else if dst.len() == 1 {
        // d(scalar) = sum(adj * other)
        let mut acc = 0.0;
        if other.len() == adj.len() {
            for (a, o) in adj.iter().zip(other.iter()) {
                acc += a * o;
            }
        } else {
            acc = other[0] * adj.iter().sum::<f64>();
        }
        dst[0] += acc;
    } else {
        // dst full-size, other is scalar
        debug_assert_eq!(other.len(), 1);
        for (d, a) in dst.iter_mut().zip(adj.iter()) {
            *d += a * other[0];
        }
    }
}

/// Corner indices and weights for one bilinear lookup in normalized
/// coordinates (x, y in [-1, 1] map to pixel centers 0..w-1, 0..h-1).
struct BilinearCorners {
    row0: usize,
    row1: usize,
    col0: usize,
    col1: usize,
    fx: f64,
    fy: f64,
    /// False when the continuous position was clamped on that axis.
    x_interior: bool,
    y_interior: bool,
}

impl BilinearCorners {
    fn locate(x: f64, y: f64, h: usize, w: usize) -> Self {
        let col = kernels::to_pixel_position(x, w);
        let row = kernels::to_pixel_position(y, h);
        // interior test on the unclamped position: gradients flatten to zero
        // outside the raster
        let raw_col = if w > 1 { (x + 1.0) * (w as f64 - 1.0) / 2.0 } else { 0.0 };
        let raw_row = if h > 1 { (y + 1.0) * (h as f64 - 1.0) / 2.0 } else { 0.0 };
        let x_interior = raw_col > 0.0 && raw_col < (w - 1) as f64;
        let y_interior = raw_row > 0.0 && raw_row < (h - 1) as f64;
        let col0 = (col.floor() as usize).min(w - 1);
        let row0 = (row.floor() as usize).min(h - 1);
        let col1 = (col0 + 1).min(w - 1);
        let row1 = (row0 + 1).min(h - 1);
        BilinearCorners {
            row0,
            row1,
            col0,
            col1,
            fx: col - col0 as f64,
            fy: row - row0 as f64,
            x_interior,
            y_interior,
        }
    }

    fn weights(&self) -> [f64; 4] {
        [
            (1.0 - self.fx) * (1.0 - self.fy),
            self.fx * (1.0 - self.fy),
            (1.0 - self.fx) * self.fy,
            self.fx * self.fy,
        ]
    }

    fn corner_pixels(&self, width: usize) -> [usize; 4] {
        [
            self.row0 * width + self.col0,
            self.row0 * width + self.col1,
            self.row1 * width + self.col0,
            self.row1 * width + self.col1,
        ]
    }

    fn interpolate(&self, raster: &[f64], ch: usize, q: usize, width: usize) -> f64 {
        let wts = self.weights();
        let px = self.corner_pixels(width);
        wts[0] * raster[px[0] * ch + q]
            + wts[1] * raster[px[1] * ch + q]
            + wts[2] * raster[px[2] * ch + q]
            + wts[3] * raster[px[3] * ch + q]
    }

    fn scatter(&self, d: &mut [f64], ch: usize, q: usize, width: usize, upstream: f64) {
        let wts = self.weights();
        let px = self.corner_pixels(width);
        d[px[0] * ch + q] += upstream * wts[0];
        d[px[1] * ch + q] += upstream * wts[1];
        d[px[2] * ch + q] += upstream * wts[2];
        d[px[3] * ch + q] += upstream * wts[3];
    }

    fn coord_gradient(
        &self,
        raster: &[f64],
        ch: usize,
        q: usize,
        h: usize,
        w: usize,
    ) -> (f64, f64) {
        let px = self.corner_pixels(w);
        let v00 = raster[px[0] * ch + q];
        let v01 = raster[px[1] * ch + q];
        let v10 = raster[px[2] * ch + q];
        let v11 = raster[px[3] * ch + q];
        let dcol = (v01 - v00) * (1.0 - self.fy) + (v11 - v10) * self.fy;
        let drow = (v10 - v00) * (1.0 - self.fx) + (v11 - v01) * self.fx;
        let dx = if self.x_interior && w > 1 {
            dcol * (w as f64 - 1.0) / 2.0
        } else {
            0.0
        };
        let dy = if self.y_interior && h > 1 {
            drow * (h as f64 - 1.0) / 2.0
        } else {
            0.0
        };
        (dx, dy)
    }
}

impl<'g> Tensor<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph_ref(&self) -> &'g Graph {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().shapes[self.id].clone()
    }

    pub fn len(&self) -> usize {
        self.graph.inner.borrow().values[self.id].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of this node's values.
    pub fn values(&self) -> Vec<f64> {
        self.graph.inner.borrow().values[self.id].clone()
    }

    /// Value of a [1]-shaped tensor.
    pub fn scalar_value(&self) -> f64 {
        let inner = self.graph.inner.borrow();
        debug_assert_eq!(inner.values[self.id].len(), 1);
        inner.values[self.id][0]
    }

    /// Accumulated gradient; zeros when the loss did not reach this leaf.
    pub fn grad(&self) -> Vec<f64> {
        let inner = self.graph.inner.borrow();
        match &inner.grads[self.id] {
            Some(g) => g.clone(),
            None => vec![0.0; inner.values[self.id].len()],
        }
    }

    pub fn matmul(&self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        self.graph.matmul(*self, other)
    }

    pub fn transpose(&self) -> Result<Tensor<'g>> {
        self.graph.transpose(*self)
    }

    pub fn add(&self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        self.graph.add(*self, other)
    }

    pub fn sub(&self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        self.graph.sub(*self, other)
    }

    pub fn mul(&self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        self.graph.mul(*self, other)
    }

    pub fn add_row(&self, row: Tensor<'g>) -> Result<Tensor<'g>> {
        self.graph.add_row(*self, row)
    }

    pub fn mul_row(&self, row: Tensor<'g>) -> Result<Tensor<'g>> {
        self.graph.mul_row(*self, row)
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor<'g>> {
        self.graph.scale(*self, factor)
    }

    pub fn shift(&self, offset: f64) -> Result<Tensor<'g>> {
        self.graph.shift(*self, offset)
    }

    pub fn sin(&self) -> Result<Tensor<'g>> {
        self.graph.sin(*self)
    }

    pub fn cos(&self) -> Result<Tensor<'g>> {
        self.graph.cos(*self)
    }

    pub fn abs(&self) -> Result<Tensor<'g>> {
        self.graph.abs(*self)
    }

    pub fn sigmoid(&self) -> Result<Tensor<'g>> {
        self.graph.sigmoid(*self)
    }

    pub fn mean(&self) -> Result<Tensor<'g>> {
        self.graph.mean(*self)
    }

    pub fn slice_rows(&self, start: usize, rows: usize) -> Result<Tensor<'g>> {
        self.graph.slice_rows(*self, start, rows)
    }

    pub fn concat_cols(&self, other: Tensor<'g>) -> Result<Tensor<'g>> {
        self.graph.concat_cols(*self, other)
    }
}
