//! Reverse-mode tape over dense tensors.
//!
//! A [`Graph`] records one forward computation as a flat list of nodes;
//! [`Graph::backward`] walks the list in reverse and accumulates gradients
//! into every node that requires them. Constants skip closure creation, so
//! the same tracing code doubles as a plain (inference) evaluator.
//!
//! Gradient accumulation is a single-writer, associative sum in node order,
//! which keeps repeated runs bit-identical.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use super::real::Real;
use super::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

type BackFn<T> = Box<dyn Fn(&Tensor<T>, &mut [Option<Tensor<T>>])>;

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    needs_grad: bool,
    back: Option<BackFn<T>>,
}

/// Gradients keyed by `NodeId`, returned from [`Graph::backward`].
pub struct Gradients<T: Real> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.slots.get_mut(id.0).and_then(|s| s.take())
    }
}

pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

fn add_into<T: Real>(slot: &mut Option<Tensor<T>>, shape: &[usize], f: impl FnOnce(&mut [T])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(t.data_mut());
}

// ---- raw matmul kernels ------------------------------------------------

/// out += a (m,k) * b (k,n)
pub(crate) fn mm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

/// out += a (m,k) * b^T where b is (n,k)
fn mm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for kk in 0..k {
                acc = acc + arow[kk] * brow[kk];
            }
            orow[j] += acc;
        }
    }
}

/// out += a^T * b where a is (m,k) (treated as k x m) and b is (m,n)
fn mm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = arow[kk];
            let orow = &mut out[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()) }
    }

    fn push(&self, value: Tensor<T>, needs_grad: bool, back: Option<BackFn<T>>) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), needs_grad, back });
        NodeId(nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> NodeId {
        self.push(value, false, None)
    }

    /// Leaf that accumulates a gradient during backward.
    pub fn param(&self, value: Tensor<T>) -> NodeId {
        self.push(value, true, None)
    }

    pub fn value(&self, id: NodeId) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id.0].value.clone()
    }

    pub fn shape(&self, id: NodeId) -> Vec<usize> {
        self.nodes.borrow()[id.0].value.shape().to_vec()
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|id| nodes[id.0].needs_grad)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Reverse pass from a scalar node. Returns the gradient store; leaves
    /// keep their gradients, interior slots are dropped as soon as consumed.
    pub fn backward(&self, loss: NodeId) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.len(), 1, "backward needs a scalar loss");
        let mut slots: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        slots[loss.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            if slots[idx].is_none() {
                continue;
            }
            let node = &nodes[idx];
            if let Some(back) = &node.back {
                let g = slots[idx].take().expect("checked above");
                back(&g, &mut slots);
            }
            // Leaves keep their slot so callers can read it.
        }
        Gradients { slots }
    }

    // ---- elementwise ----------------------------------------------------

    fn unary(
        &self,
        x: NodeId,
        fwd: impl Fn(T) -> T,
        dydx: impl Fn(T, T) -> T + 'static,
    ) -> NodeId {
        let xv = self.value(x);
        let out = xv.map(&fwd);
        let needs = self.needs(&[x]);
        let back: Option<BackFn<T>> = if needs {
            let xv = xv.clone();
            let outc = out.clone();
            let shape = xv.shape().to_vec();
            Some(Box::new(move |g, slots| {
                add_into(&mut slots[x.0], &shape, |dst| {
                    for i in 0..dst.len() {
                        dst[i] += g.data()[i] * dydx(xv.data()[i], outc.data()[i]);
                    }
                });
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    pub fn relu(&self, x: NodeId) -> NodeId {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            |v, _| if v > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self, x: NodeId) -> NodeId {
        self.unary(x, sigmoid_scalar, |_, y| y * (T::one() - y))
    }

    /// softplus with sharpness beta: ln(1 + exp(beta x)) / beta.
    pub fn softplus(&self, x: NodeId, beta: T) -> NodeId {
        self.unary(
            x,
            move |v| softplus_scalar(v, beta),
            move |v, _| sigmoid_scalar(beta * v),
        )
    }

    pub fn exp(&self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    pub fn abs(&self, x: NodeId) -> NodeId {
        self.unary(
            x,
            |v| v.abs(),
            |v, _| {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Elementwise smooth-L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
    pub fn smooth_l1(&self, x: NodeId) -> NodeId {
        self.unary(
            x,
            super::smooth_l1,
            |v, _| {
                if v > T::one() {
                    T::one()
                } else if v < -T::one() {
                    -T::one()
                } else {
                    v
                }
            },
        )
    }

    /// k * x + b, elementwise with scalar constants.
    pub fn affine(&self, x: NodeId, k: T, b: T) -> NodeId {
        self.unary(x, move |v| k * v + b, move |_, _| k)
    }

    /// sqrt(x + eps); eps keeps the derivative finite at zero.
    pub fn sqrt_eps(&self, x: NodeId, eps: T) -> NodeId {
        self.unary(x, move |v| (v + eps).sqrt(), |_, y| {
            T::lit(0.5) / y
        })
    }

    fn binary_same_shape(
        &self,
        context: &'static str,
        a: NodeId,
        b: NodeId,
        fwd: impl Fn(T, T) -> T,
        da: impl Fn(T, T) -> T + 'static,
        db: impl Fn(T, T) -> T + 'static,
    ) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "{context}: shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| fwd(x, y))
            .collect();
        let out = Tensor::new(av.shape(), data).expect("same-shape op");
        let needs = self.needs(&[a, b]);
        let back: Option<BackFn<T>> = if needs {
            let shape = av.shape().to_vec();
            let needs_a = self.needs(&[a]);
            let needs_b = self.needs(&[b]);
            Some(Box::new(move |g, slots| {
                if needs_a {
                    add_into(&mut slots[a.0], &shape, |dst| {
                        for i in 0..dst.len() {
                            dst[i] += g.data()[i] * da(av.data()[i], bv.data()[i]);
                        }
                    });
                }
                if needs_b {
                    add_into(&mut slots[b.0], &shape, |dst| {
                        for i in 0..dst.len() {
                            dst[i] += g.data()[i] * db(av.data()[i], bv.data()[i]);
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    pub fn add(&self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape("add", a, b, |x, y| x + y, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape("sub", a, b, |x, y| x - y, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    // ---- reductions and shape ops ---------------------------------------

    pub fn sum(&self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut acc = T::zero();
        for &v in xv.data() {
            acc += v;
        }
        let needs = self.needs(&[x]);
        let back: Option<BackFn<T>> = if needs {
            let shape = xv.shape().to_vec();
            Some(Box::new(move |g, slots| {
                let gv = g.item();
                add_into(&mut slots[x.0], &shape, |dst| {
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                });
            }))
        } else {
            None
        };
        self.push(Tensor::scalar(acc), needs, back)
    }

    pub fn mean(&self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.affine(s, T::one() / T::lit(n as f64), T::zero())
    }

    /// Per-row sum of a (n, c) tensor -> (n, 1).
    pub fn sum_cols(&self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = xv.rows();
        let c = xv.cols();
        let mut data = Vec::with_capacity(n);
        for r in 0..n {
            let mut acc = T::zero();
            for &v in xv.row(r) {
                acc += v;
            }
            data.push(acc);
        }
        let out = Tensor::new(&[n, 1], data).expect("sum_cols");
        let needs = self.needs(&[x]);
        let back: Option<BackFn<T>> = if needs {
            let shape = xv.shape().to_vec();
            Some(Box::new(move |g, slots| {
                add_into(&mut slots[x.0], &shape, |dst| {
                    for r in 0..n {
                        let gv = g.data()[r];
                        for j in 0..c {
                            dst[r * c + j] += gv;
                        }
                    }
                });
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    pub fn reshape(&self, x: NodeId, shape: &[usize]) -> NodeId {
        let xv = self.value(x);
        let out = (*xv).clone().reshaped(shape).expect("reshape count");
        let needs = self.needs(&[x]);
        let back: Option<BackFn<T>> = if needs {
            let old = xv.shape().to_vec();
            Some(Box::new(move |g, slots| {
                add_into(&mut slots[x.0], &old, |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                });
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    // ---- linear algebra --------------------------------------------------

    /// (m,k) x (k,n) -> (m,n)
    pub fn matmul(&self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        let (m, k) = (av.rows(), av.cols());
        let (kb, n) = (bv.rows(), bv.cols());
        assert_eq!(k, kb, "matmul: inner dims {k} vs {kb}");
        let mut out = Tensor::zeros(&[m, n]);
        mm_nn(m, k, n, av.data(), bv.data(), out.data_mut());
        let needs = self.needs(&[a, b]);
        let back: Option<BackFn<T>> = if needs {
            let needs_a = self.needs(&[a]);
            let needs_b = self.needs(&[b]);
            Some(Box::new(move |g, slots| {
                if needs_a {
                    add_into(&mut slots[a.0], &[m, k], |dst| {
                        mm_nt(m, n, k, g.data(), bv.data(), dst);
                    });
                }
                if needs_b {
                    add_into(&mut slots[b.0], &[k, n], |dst| {
                        mm_tn(m, k, n, av.data(), g.data(), dst);
                    });
                }
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    /// (m,k) x (n,k)^T -> (m,n)
    pub fn matmul_transb(&self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        let (m, k) = (av.rows(), av.cols());
        let (n, kb) = (bv.rows(), bv.cols());
        assert_eq!(k, kb, "matmul_transb: inner dims {k} vs {kb}");
        let mut out = Tensor::zeros(&[m, n]);
        mm_nt(m, k, n, av.data(), bv.data(), out.data_mut());
        let needs = self.needs(&[a, b]);
        let back: Option<BackFn<T>> = if needs {
            let needs_a = self.needs(&[a]);
            let needs_b = self.needs(&[b]);
            Some(Box::new(move |g, slots| {
                if needs_a {
                    add_into(&mut slots[a.0], &[m, k], |dst| {
                        mm_nn(m, n, k, g.data(), bv.data(), dst);
                    });
                }
                if needs_b {
                    add_into(&mut slots[b.0], &[n, k], |dst| {
                        mm_tn(m, n, k, g.data(), av.data(), dst);
                    });
                }
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    /// Broadcast a (c,) bias over the rows of a (n, c) tensor.
    pub fn add_bias_row(&self, x: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let bv = self.value(bias);
        let n = xv.rows();
        let c = xv.cols();
        assert_eq!(bv.len(), c, "add_bias_row: bias len {} vs cols {c}", bv.len());
        let mut out = (*xv).clone();
        for r in 0..n {
            let row = &mut out.data_mut()[r * c..(r + 1) * c];
            for (j, v) in row.iter_mut().enumerate() {
                *v += bv.data()[j];
            }
        }
        let needs = self.needs(&[x, bias]);
        let back: Option<BackFn<T>> = if needs {
            let xshape = xv.shape().to_vec();
            let needs_x = self.needs(&[x]);
            let needs_b = self.needs(&[bias]);
            let bshape = bv.shape().to_vec();
            Some(Box::new(move |g, slots| {
                if needs_x {
                    add_into(&mut slots[x.0], &xshape, |dst| {
                        for (d, &gv) in dst.iter_mut().zip(g.data()) {
                            *d += gv;
                        }
                    });
                }
                if needs_b {
                    add_into(&mut slots[bias.0], &bshape, |dst| {
                        for r in 0..n {
                            for j in 0..c {
                                dst[j] += g.data()[r * c + j];
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    /// Scale each row of `mat` (n, c) by the matching entry of `col` (n, 1).
    pub fn mul_col(&self, col: NodeId, mat: NodeId) -> NodeId {
        let cv = self.value(col);
        let mv = self.value(mat);
        let n = mv.rows();
        let c = mv.cols();
        assert_eq!(cv.len(), n, "mul_col: column len {} vs rows {n}", cv.len());
        let mut out = (*mv).clone();
        for r in 0..n {
            let s = cv.data()[r];
            for v in &mut out.data_mut()[r * c..(r + 1) * c] {
                *v *= s;
            }
        }
        let needs = self.needs(&[col, mat]);
        let back: Option<BackFn<T>> = if needs {
            let needs_c = self.needs(&[col]);
            let needs_m = self.needs(&[mat]);
            let cshape = cv.shape().to_vec();
            let mshape = mv.shape().to_vec();
            Some(Box::new(move |g, slots| {
                if needs_c {
                    add_into(&mut slots[col.0], &cshape, |dst| {
                        for r in 0..n {
                            let mut acc = T::zero();
                            for j in 0..c {
                                acc += g.data()[r * c + j] * mv.data()[r * c + j];
                            }
                            dst[r] += acc;
                        }
                    });
                }
                if needs_m {
                    add_into(&mut slots[mat.0], &mshape, |dst| {
                        for r in 0..n {
                            let s = cv.data()[r];
                            for j in 0..c {
                                dst[r * c + j] += s * g.data()[r * c + j];
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    // ---- structural ops --------------------------------------------------

    /// Concatenate 2-D tensors along columns; all inputs share the row count.
    pub fn concat_cols(&self, parts: &[NodeId]) -> NodeId {
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|&p| self.value(p)).collect();
        let n = values[0].rows();
        let widths: Vec<usize> = values.iter().map(|v| v.cols()).collect();
        for v in &values {
            assert_eq!(v.rows(), n, "concat_cols: row mismatch");
        }
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(&[n, total]);
        {
            let dst = out.data_mut();
            for r in 0..n {
                let mut off = 0;
                for (v, &w) in values.iter().zip(&widths) {
                    dst[r * total + off..r * total + off + w].copy_from_slice(v.row(r));
                    off += w;
                }
            }
        }
        let needs = self.needs(parts);
        let back: Option<BackFn<T>> = if needs {
            let parts = parts.to_vec();
            let flags: Vec<bool> = parts.iter().map(|&p| self.needs(&[p])).collect();
            Some(Box::new(move |g, slots| {
                let mut off = 0;
                for ((&p, &w), &f) in parts.iter().zip(&widths).zip(&flags) {
                    if f {
                        add_into(&mut slots[p.0], &[n, w], |dst| {
                            for r in 0..n {
                                for j in 0..w {
                                    dst[r * w + j] += g.data()[r * g.cols() + off + j];
                                }
                            }
                        });
                    }
                    off += w;
                }
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    /// Concatenate 2-D tensors along rows; all inputs share the column count.
    pub fn concat_rows(&self, parts: &[NodeId]) -> NodeId {
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|&p| self.value(p)).collect();
        let c = values[0].cols();
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(values.len());
        for v in &values {
            assert_eq!(v.cols(), c, "concat_rows: col mismatch");
            row_counts.push(v.rows());
            data.extend_from_slice(v.data());
        }
        let n: usize = row_counts.iter().sum();
        let out = Tensor::new(&[n, c], data).expect("concat_rows");
        let needs = self.needs(parts);
        let back: Option<BackFn<T>> = if needs {
            let parts = parts.to_vec();
            let flags: Vec<bool> = parts.iter().map(|&p| self.needs(&[p])).collect();
            Some(Box::new(move |g, slots| {
                let mut row = 0;
                for ((&p, &nr), &f) in parts.iter().zip(&row_counts).zip(&flags) {
                    if f {
                        add_into(&mut slots[p.0], &[nr, c], |dst| {
                            for i in 0..nr * c {
                                dst[i] += g.data()[row * c + i];
                            }
                        });
                    }
                    row += nr;
                }
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    /// Columns [start, start+len) of a (n, c) tensor.
    pub fn slice_cols(&self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = self.value(x);
        let n = xv.rows();
        let c = xv.cols();
        assert!(start + len <= c, "slice_cols: {start}+{len} > {c}");
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let out = Tensor::new(&[n, len], data).expect("slice_cols");
        let needs = self.needs(&[x]);
        let back: Option<BackFn<T>> = if needs {
            Some(Box::new(move |g, slots| {
                add_into(&mut slots[x.0], &[n, c], |dst| {
                    for r in 0..n {
                        for j in 0..len {
                            dst[r * c + start + j] += g.data()[r * len + j];
                        }
                    }
                });
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    /// Select rows by index (duplicates allowed).
    pub fn gather_rows(&self, x: NodeId, rows: Rc<Vec<usize>>) -> NodeId {
        let xv = self.value(x);
        let c = xv.cols();
        let n_in = xv.rows();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows.iter() {
            data.extend_from_slice(xv.row(r));
        }
        let out = Tensor::new(&[rows.len(), c], data).expect("gather_rows");
        let needs = self.needs(&[x]);
        let back: Option<BackFn<T>> = if needs {
            let rows = rows.clone();
            Some(Box::new(move |g, slots| {
                add_into(&mut slots[x.0], &[n_in, c], |dst| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            dst[r * c + j] += g.data()[i * c + j];
                        }
                    }
                });
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    /// Scatter rows of `x` into a zero (n_out, c) tensor at `rows` (unique).
    pub fn scatter_rows(&self, x: NodeId, rows: Rc<Vec<usize>>, n_out: usize) -> NodeId {
        let xv = self.value(x);
        let c = xv.cols();
        assert_eq!(xv.rows(), rows.len(), "scatter_rows: row count");
        let mut out = Tensor::zeros(&[n_out, c]);
        for (i, &r) in rows.iter().enumerate() {
            let dst = &mut out.data_mut()[r * c..(r + 1) * c];
            for (j, d) in dst.iter_mut().enumerate() {
                *d += xv.data()[i * c + j];
            }
        }
        let needs = self.needs(&[x]);
        let back: Option<BackFn<T>> = if needs {
            let rows = rows.clone();
            let n_in = xv.rows();
            Some(Box::new(move |g, slots| {
                add_into(&mut slots[x.0], &[n_in, c], |dst| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            dst[i * c + j] += g.data()[r * c + j];
                        }
                    }
                });
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    /// im2col-style gather: `table` holds `k` source-row indices per output
    /// row (-1 for absent neighbors, which contribute zeros). Output is
    /// (table.len()/k, k*c).
    pub fn gather_neighbors(&self, x: NodeId, table: Rc<Vec<i64>>, k: usize) -> NodeId {
        let xv = self.value(x);
        let c = xv.cols();
        let n_in = xv.rows();
        assert_eq!(table.len() % k, 0, "gather_neighbors: table len");
        let n_out = table.len() / k;
        let mut out = Tensor::zeros(&[n_out, k * c]);
        {
            let dst = out.data_mut();
            for (slot, &src) in table.iter().enumerate() {
                if src >= 0 {
                    let s = src as usize;
                    dst[slot * c..(slot + 1) * c].copy_from_slice(xv.row(s));
                }
            }
        }
        let needs = self.needs(&[x]);
        let back: Option<BackFn<T>> = if needs {
            let table = table.clone();
            Some(Box::new(move |g, slots| {
                add_into(&mut slots[x.0], &[n_in, c], |dst| {
                    for (slot, &src) in table.iter().enumerate() {
                        if src >= 0 {
                            let s = src as usize;
                            for j in 0..c {
                                dst[s * c + j] += g.data()[slot * c + j];
                            }
                        }
                    }
                });
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    /// Per-group column-wise max over rows of `x`. Groups must be non-empty.
    pub fn group_max(&self, x: NodeId, groups: Rc<Vec<Vec<usize>>>) -> NodeId {
        let xv = self.value(x);
        let c = xv.cols();
        let n_in = xv.rows();
        let n_out = groups.len();
        let mut out = Tensor::zeros(&[n_out, c]);
        let mut argmax = vec![0usize; n_out * c];
        for (gi, rows) in groups.iter().enumerate() {
            assert!(!rows.is_empty(), "group_max: empty group");
            for j in 0..c {
                let mut best = xv.data()[rows[0] * c + j];
                let mut best_row = rows[0];
                for &r in &rows[1..] {
                    let v = xv.data()[r * c + j];
                    if v > best {
                        best = v;
                        best_row = r;
                    }
                }
                out.data_mut()[gi * c + j] = best;
                argmax[gi * c + j] = best_row;
            }
        }
        let needs = self.needs(&[x]);
        let back: Option<BackFn<T>> = if needs {
            Some(Box::new(move |g, slots| {
                add_into(&mut slots[x.0], &[n_in, c], |dst| {
                    for gi in 0..n_out {
                        for j in 0..c {
                            dst[argmax[gi * c + j] * c + j] += g.data()[gi * c + j];
                        }
                    }
                });
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    // ---- normalization / attention ---------------------------------------

    /// Row-wise layer normalization with learned gain and bias (each (c,)).
    pub fn layer_norm(&self, x: NodeId, gain: NodeId, bias: NodeId, eps: T) -> NodeId {
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let n = xv.rows();
        let c = xv.cols();
        assert_eq!(gv.len(), c, "layer_norm: gain len");
        assert_eq!(bv.len(), c, "layer_norm: bias len");
        let inv_c = T::one() / T::lit(c as f64);
        let mut out = Tensor::zeros(&[n, c]);
        let mut xhat = vec![T::zero(); n * c];
        let mut inv_sigma = vec![T::zero(); n];
        for r in 0..n {
            let row = xv.row(r);
            let mut mu = T::zero();
            for &v in row {
                mu += v;
            }
            mu *= inv_c;
            let mut var = T::zero();
            for &v in row {
                let d = v - mu;
                var += d * d;
            }
            var *= inv_c;
            let is = T::one() / (var + eps).sqrt();
            inv_sigma[r] = is;
            for j in 0..c {
                let h = (row[j] - mu) * is;
                xhat[r * c + j] = h;
                out.data_mut()[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let needs = self.needs(&[x, gain, bias]);
        let back: Option<BackFn<T>> = if needs {
            let needs_x = self.needs(&[x]);
            let needs_g = self.needs(&[gain]);
            let needs_b = self.needs(&[bias]);
            let gshape = gv.shape().to_vec();
            let bshape = bv.shape().to_vec();
            Some(Box::new(move |g, slots| {
                if needs_g {
                    add_into(&mut slots[gain.0], &gshape, |dst| {
                        for r in 0..n {
                            for j in 0..c {
                                dst[j] += g.data()[r * c + j] * xhat[r * c + j];
                            }
                        }
                    });
                }
                if needs_b {
                    add_into(&mut slots[bias.0], &bshape, |dst| {
                        for r in 0..n {
                            for j in 0..c {
                                dst[j] += g.data()[r * c + j];
                            }
                        }
                    });
                }
                if needs_x {
                    add_into(&mut slots[x.0], &[n, c], |dst| {
                        for r in 0..n {
                            // gy = g * gain; dx = (gy - mean(gy) - xhat*mean(gy*xhat)) * inv_sigma
                            let mut mean_gy = T::zero();
                            let mut mean_gy_xhat = T::zero();
                            for j in 0..c {
                                let gy = g.data()[r * c + j] * gv.data()[j];
                                mean_gy += gy;
                                mean_gy_xhat += gy * xhat[r * c + j];
                            }
                            mean_gy *= inv_c;
                            mean_gy_xhat *= inv_c;
                            for j in 0..c {
                                let gy = g.data()[r * c + j] * gv.data()[j];
                                dst[r * c + j] +=
                                    (gy - mean_gy - xhat[r * c + j] * mean_gy_xhat) * inv_sigma[r];
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    /// Row-wise softmax of a (n, c) tensor.
    pub fn softmax_rows(&self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = xv.rows();
        let c = xv.cols();
        let mut out = Tensor::zeros(&[n, c]);
        for r in 0..n {
            let row = xv.row(r);
            let mut maxv = row[0];
            for &v in row {
                if v > maxv {
                    maxv = v;
                }
            }
            let mut denom = T::zero();
            for j in 0..c {
                let e = (row[j] - maxv).exp();
                out.data_mut()[r * c + j] = e;
                denom += e;
            }
            let inv = T::one() / denom;
            for j in 0..c {
                out.data_mut()[r * c + j] *= inv;
            }
        }
        let needs = self.needs(&[x]);
        let back: Option<BackFn<T>> = if needs {
            let y = out.clone();
            Some(Box::new(move |g, slots| {
                add_into(&mut slots[x.0], &[n, c], |dst| {
                    for r in 0..n {
                        let mut dot = T::zero();
                        for j in 0..c {
                            dot += g.data()[r * c + j] * y.data()[r * c + j];
                        }
                        for j in 0..c {
                            dst[r * c + j] +=
                                y.data()[r * c + j] * (g.data()[r * c + j] - dot);
                        }
                    }
                });
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    // ---- domain-specific ops ----------------------------------------------

    /// Frequency encoding: concat(x, sin(2^k x), cos(2^k x)) for k < n_freq,
    /// applied per input column. (n, d) -> (n, d*(1+2*n_freq)).
    pub fn positional_encode(&self, x: NodeId, n_freq: usize) -> NodeId {
        let xv = self.value(x);
        let n = xv.rows();
        let d = xv.cols();
        let width = d * (1 + 2 * n_freq);
        let mut out = Tensor::zeros(&[n, width]);
        for r in 0..n {
            let row = xv.row(r);
            let dst = &mut out.data_mut()[r * width..(r + 1) * width];
            super::pos_encode_into(row, n_freq, dst);
        }
        let needs = self.needs(&[x]);
        let back: Option<BackFn<T>> = if needs {
            let xv = xv.clone();
            Some(Box::new(move |g, slots| {
                add_into(&mut slots[x.0], &[n, d], |dst| {
                    for r in 0..n {
                        let grow = &g.data()[r * width..(r + 1) * width];
                        for j in 0..d {
                            let mut acc = grow[j];
                            let xj = xv.data()[r * d + j];
                            for k in 0..n_freq {
                                let f = T::lit((1u64 << k) as f64);
                                let a = f * xj;
                                let g_sin = grow[d + 2 * k * d + j];
                                let g_cos = grow[d + (2 * k + 1) * d + j];
                                acc += f * (a.cos() * g_sin - a.sin() * g_cos);
                            }
                            dst[r * d + j] += acc;
                        }
                    }
                });
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    /// Logistic-CDF ray-integration weights (NeuS construction).
    ///
    /// Input `sdf` is (rays, samples) ordered front-to-back along each ray,
    /// `s_inv` a positive scalar node (the learned inverse standard
    /// deviation). Output weights have the same shape; per ray they are
    /// non-negative and sum to at most one.
    pub fn neus_weights(&self, sdf: NodeId, s_inv: NodeId) -> NodeId {
        let sv = self.value(sdf);
        let kv = self.value(s_inv);
        let rays = sv.rows();
        let samples = sv.cols();
        assert!(samples >= 2, "neus_weights: need at least 2 samples");
        let k = kv.item();
        let mut out = Tensor::zeros(&[rays, samples]);
        // Saved forward state for backward.
        let mut phis = vec![T::zero(); rays * samples];
        let mut alphas = vec![T::zero(); rays * samples];
        let mut trans = vec![T::zero(); rays * samples];
        for r in 0..rays {
            let srow = sv.row(r);
            let base = r * samples;
            for i in 0..samples {
                phis[base + i] = sigmoid_scalar(k * srow[i]);
            }
            let mut t = T::one();
            for i in 0..samples {
                let alpha = if i + 1 < samples {
                    let num = phis[base + i] - phis[base + i + 1];
                    let den = phis[base + i] + neus_eps::<T>();
                    (num / den).max(T::zero())
                } else {
                    T::zero()
                };
                alphas[base + i] = alpha;
                trans[base + i] = t;
                out.data_mut()[base + i] = alpha * t;
                t = t * cumprod_term(alpha);
            }
        }
        let needs = self.needs(&[sdf, s_inv]);
        let back: Option<BackFn<T>> = if needs {
            let sv = sv.clone();
            let needs_s = self.needs(&[sdf]);
            let needs_k = self.needs(&[s_inv]);
            Some(Box::new(move |g, slots| {
                let mut g_sdf = vec![T::zero(); rays * samples];
                let mut g_k = T::zero();
                for r in 0..rays {
                    let base = r * samples;
                    let mut g_alpha = vec![T::zero(); samples];
                    let mut g_trans = vec![T::zero(); samples];
                    for i in 0..samples {
                        g_alpha[i] = g.data()[base + i] * trans[base + i];
                        g_trans[i] = g.data()[base + i] * alphas[base + i];
                    }
                    // Exclusive cumprod backward: u_i = max(1 - alpha_i, floor),
                    // T_{i+1} = T_i * u_i. Suffix sums give dL/du.
                    let mut suffix = T::zero();
                    for i in (0..samples).rev() {
                        if i + 1 < samples {
                            suffix = suffix + g_trans[i + 1] * trans[base + i + 1];
                        } else {
                            suffix = T::zero();
                        }
                        let u = cumprod_term(alphas[base + i]);
                        let g_u = suffix / u;
                        if T::one() - alphas[base + i] > neus_u_floor::<T>() {
                            g_alpha[i] -= g_u;
                        }
                    }
                    // alpha -> phi
                    let mut g_phi = vec![T::zero(); samples];
                    for i in 0..samples - 1 {
                        if alphas[base + i] > T::zero() {
                            let den = phis[base + i] + neus_eps::<T>();
                            let num = phis[base + i] - phis[base + i + 1];
                            g_phi[i] += g_alpha[i] * (den - num) / (den * den);
                            g_phi[i + 1] -= g_alpha[i] / den;
                        }
                    }
                    // phi -> sdf, s_inv
                    for i in 0..samples {
                        let phi = phis[base + i];
                        let dphi = phi * (T::one() - phi);
                        let s = sv.data()[base + i];
                        g_sdf[base + i] += g_phi[i] * k * dphi;
                        g_k += g_phi[i] * s * dphi;
                    }
                }
                if needs_s {
                    add_into(&mut slots[sdf.0], &[rays, samples], |dst| {
                        for (d, &v) in dst.iter_mut().zip(&g_sdf) {
                            *d += v;
                        }
                    });
                }
                if needs_k {
                    add_into(&mut slots[s_inv.0], &[1], |dst| {
                        dst[0] += g_k;
                    });
                }
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }

    /// Weighted per-ray accumulation: weights (rays, samples) against values
    /// (rays*samples, c) -> (rays, c). Sample s of ray r lives at row
    /// r*samples + s.
    pub fn render_accumulate(&self, weights: NodeId, values: NodeId) -> NodeId {
        let wv = self.value(weights);
        let vv = self.value(values);
        let rays = wv.rows();
        let samples = wv.cols();
        let c = vv.cols();
        assert_eq!(vv.rows(), rays * samples, "render_accumulate: row count");
        let mut out = Tensor::zeros(&[rays, c]);
        for r in 0..rays {
            let orow = &mut out.data_mut()[r * c..(r + 1) * c];
            for s in 0..samples {
                let w = wv.data()[r * samples + s];
                let vrow = vv.row(r * samples + s);
                for j in 0..c {
                    orow[j] = orow[j] + w * vrow[j];
                }
            }
        }
        let needs = self.needs(&[weights, values]);
        let back: Option<BackFn<T>> = if needs {
            let needs_w = self.needs(&[weights]);
            let needs_v = self.needs(&[values]);
            Some(Box::new(move |g, slots| {
                if needs_w {
                    add_into(&mut slots[weights.0], &[rays, samples], |dst| {
                        for r in 0..rays {
                            for s in 0..samples {
                                let vrow = vv.row(r * samples + s);
                                let mut acc = T::zero();
                                for j in 0..c {
                                    acc += g.data()[r * c + j] * vrow[j];
                                }
                                dst[r * samples + s] += acc;
                            }
                        }
                    });
                }
                if needs_v {
                    add_into(&mut slots[values.0], &[rays * samples, c], |dst| {
                        for r in 0..rays {
                            for s in 0..samples {
                                let w = wv.data()[r * samples + s];
                                for j in 0..c {
                                    dst[(r * samples + s) * c + j] += w * g.data()[r * c + j];
                                }
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(out, needs, back)
    }
}

fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softplus_scalar<T: Real>(v: T, beta: T) -> T {
    let z = beta * v;
    if z > T::lit(30.0) {
        v
    } else {
        (T::one() + z.exp()).ln() / beta
    }
}

fn neus_eps<T: Real>() -> T {
    T::lit(1e-7)
}

fn neus_u_floor<T: Real>() -> T {
    T::lit(1e-7)
}

/// 1 - alpha, floored away from zero so transmittance stays invertible.
fn cumprod_term<T: Real>(alpha: T) -> T {
    (T::one() - alpha).max(neus_u_floor::<T>())
}

/// Plain (non-tape) logistic-CDF weights for one ray; the tape op and this
/// function share the arithmetic, so dense-quadrature oracles built on it
/// are directly comparable.
pub fn neus_weights_plain<T: Real>(sdf: &[T], s_inv: T) -> Vec<T> {
    let samples = sdf.len();
    let mut out = vec![T::zero(); samples];
    if samples < 2 {
        return out;
    }
    let mut phis = Vec::with_capacity(samples);
    for &s in sdf {
        phis.push(sigmoid_scalar(s_inv * s));
    }
    let mut t = T::one();
    for i in 0..samples {
        let alpha = if i + 1 < samples {
            ((phis[i] - phis[i + 1]) / (phis[i] + neus_eps::<T>())).max(T::zero())
        } else {
            T::zero()
        };
        out[i] = alpha * t;
        t = t * cumprod_term(alpha);
    }
    out
}
