use super::tensor::{gemm, numel, strides, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

type BackFn = Box<dyn Fn(&Tensor, &[Tensor], &mut GradSink<'_>)>;

/// Accumulates gradients for the parents of the node being differentiated.
pub struct GradSink<'a> {
    grads: &'a mut [Option<Tensor>],
    needs: &'a [bool],
    vals: &'a [Tensor],
}

impl GradSink<'_> {
    pub fn wants(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    /// Adds `g` (same shape as `v`) into `v`'s gradient.
    pub fn add(&mut self, v: Var, g: Tensor) {
        if !self.needs[v.0] {
            return;
        }
        match &mut self.grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g.reshape(self.vals[v.0].shape())),
        }
    }

    /// Gives `f` mutable access to `v`'s gradient buffer, zero-initialized on
    /// first use.
    pub fn with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs[v.0] {
            return;
        }
        let shape = self.vals[v.0].shape();
        let t = self.grads[v.0].get_or_insert_with(|| Tensor::zeros(shape));
        f(t.data_mut());
    }
}

/// Gradients of a scalar with respect to every recorded value that needed one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Define-by-run reverse-mode recorder.
#[derive(Default)]
pub struct Tape {
    vals: Vec<Tensor>,
    needs: Vec<bool>,
    backs: Vec<Option<BackFn>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// Records an input whose gradient is wanted.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.vals.push(t);
        self.needs.push(true);
        self.backs.push(None);
        Var(self.vals.len() - 1)
    }

    /// Records an input treated as constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.vals.push(t);
        self.needs.push(false);
        self.backs.push(None);
        Var(self.vals.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.vals[v.0].shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    /// Records a derived value. `back` receives the output gradient and all
    /// recorded values; it is dropped when no parent needs a gradient.
    pub fn push(
        &mut self,
        value: Tensor,
        parents: &[Var],
        back: impl Fn(&Tensor, &[Tensor], &mut GradSink<'_>) + 'static,
    ) -> Var {
        let needs = parents.iter().any(|p| self.needs[p.0]);
        self.vals.push(value);
        self.needs.push(needs);
        self.backs.push(if needs { Some(Box::new(back)) } else { None });
        Var(self.vals.len() - 1)
    }

    /// Fails with [`Error::NonFinite`] naming `what` if `v` holds NaN or Inf.
    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.vals[v.0].is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Reverse pass from a scalar.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.vals[loss.0].numel(), 1, "backward needs a scalar");
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::full(self.vals[loss.0].shape(), 1.0));
        for id in (0..n).rev() {
            let Some(back) = &self.backs[id] else { continue };
            let Some(g) = grads[id].take() else { continue };
            let (parents, _) = grads.split_at_mut(id);
            let mut sink = GradSink {
                grads: parents,
                needs: &self.needs,
                vals: &self.vals,
            };
            back(&g, &self.vals, &mut sink);
        }
        Gradients { grads }
    }
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

struct Bcast {
    out_shape: Vec<usize>,
    a_str: Vec<usize>,
    b_str: Vec<usize>,
}

fn broadcast(a: &[usize], b: &[usize]) -> Bcast {
    let d = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; d - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    let (sa, sb) = (strides(&pa), strides(&pb));
    let mut out_shape = vec![0; d];
    let mut a_str = vec![0; d];
    let mut b_str = vec![0; d];
    for k in 0..d {
        out_shape[k] = if pa[k] == pb[k] {
            pa[k]
        } else if pa[k] == 1 {
            pb[k]
        } else if pb[k] == 1 {
            pa[k]
        } else {
            panic!("cannot broadcast {a:?} with {b:?}");
        };
        a_str[k] = if pa[k] == 1 { 0 } else { sa[k] };
        b_str[k] = if pb[k] == 1 { 0 } else { sb[k] };
    }
    Bcast {
        out_shape,
        a_str,
        b_str,
    }
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_bcast(bc: &Bcast, mut f: impl FnMut(usize, usize, usize)) {
    let d = bc.out_shape.len();
    let total = numel(&bc.out_shape);
    if total == 0 {
        return;
    }
    if d == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = bc.out_shape[d - 1];
    let (ia, ib) = (bc.a_str[d - 1], bc.b_str[d - 1]);
    let mut idx = vec![0usize; d];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        for j in 0..inner {
            f(o + j, oa + j * ia, ob + j * ib);
        }
        o += inner;
        let mut k = d - 1;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            oa += bc.a_str[k];
            ob += bc.b_str[k];
            if idx[k] < bc.out_shape[k] {
                break;
            }
            oa -= bc.a_str[k] * idx[k];
            ob -= bc.b_str[k] * idx[k];
            idx[k] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl Tape {
    fn binary(&mut self, a: Var, b: Var, op: BinOp) -> Var {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        let bc = broadcast(ta.shape(), tb.shape());
        let (da, db) = (ta.data(), tb.data());
        let mut out = vec![0.0; numel(&bc.out_shape)];
        let same = ta.shape() == tb.shape();
        if same {
            for (k, o) in out.iter_mut().enumerate() {
                *o = apply(op, da[k], db[k]);
            }
        } else {
            for_each_bcast(&bc, |o, i, j| out[o] = apply(op, da[i], db[j]));
        }
        let value = Tensor::new(&bc.out_shape, out);
        self.push(value, &[a, b], move |g, vals, sink| {
            let (va, vb) = (vals[a.0].data(), vals[b.0].data());
            let g = g.data();
            if sink.wants(a) {
                sink.with(a, |ga| {
                    let mut acc = |o: usize, i: usize, j: usize| {
                        ga[i] += match op {
                            BinOp::Add | BinOp::Sub => g[o],
                            BinOp::Mul => g[o] * vb[j],
                            BinOp::Div => g[o] / vb[j],
                        }
                    };
                    if same {
                        (0..g.len()).for_each(|k| acc(k, k, k));
                    } else {
                        for_each_bcast(&bc, acc);
                    }
                });
            }
            if sink.wants(b) {
                sink.with(b, |gb| {
                    let mut acc = |o: usize, i: usize, j: usize| {
                        gb[j] += match op {
                            BinOp::Add => g[o],
                            BinOp::Sub => -g[o],
                            BinOp::Mul => g[o] * va[i],
                            BinOp::Div => -g[o] * va[i] / (vb[j] * vb[j]),
                        }
                    };
                    if same {
                        (0..g.len()).for_each(|k| acc(k, k, k));
                    } else {
                        for_each_bcast(&bc, acc);
                    }
                });
            }
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinOp::Div)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let ta = &self.vals[a.0];
        let out: Vec<f64> = ta.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(ta.shape(), out);
        let out_id = self.vals.len();
        self.push(value, &[a], move |g, vals, sink| {
            let (x, y) = (vals[a.0].data(), vals[out_id].data());
            let g = g.data();
            sink.with(a, |ga| {
                for k in 0..g.len() {
                    ga[k] += g[k] * df(x[k], y[k]);
                }
            });
        })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, |_, y| y)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, |x, _| sigmoid(x))
    }

    // -----------------------------------------------------------------------
    // Shape ops

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self.vals[a.0].clone().reshape(shape);
        self.push(value, &[a], move |g, _, sink| sink.add(a, g.clone()))
    }

    /// Axis permutation: output axis `k` is input axis `perm[k]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let ta = &self.vals[a.0];
        let d = ta.dims();
        assert_eq!(perm.len(), d);
        let in_str = strides(ta.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| ta.shape()[p]).collect();
        let src_str: Vec<usize> = perm.iter().map(|&p| in_str[p]).collect();
        let mut out = vec![0.0; ta.numel()];
        gather_strided(&out_shape, &src_str, |o, i| out[o] = ta.data()[i]);
        let value = Tensor::new(&out_shape, out);
        self.push(value, &[a], move |g, _, sink| {
            let g = g.data();
            sink.with(a, |ga| gather_strided(&out_shape, &src_str, |o, i| ga[i] += g[o]));
        })
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Var {
        let d = self.vals[a.0].dims();
        let mut perm: Vec<usize> = (0..d).collect();
        perm.swap(d - 1, d - 2);
        self.permute(a, &perm)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| self.vals[p.0].shape().to_vec()).collect();
        let mut out_shape = shapes[0].clone();
        out_shape[axis] = shapes.iter().map(|s| s[axis]).sum();
        for s in &shapes {
            assert_eq!(s.len(), out_shape.len());
            for k in 0..s.len() {
                assert!(k == axis || s[k] == out_shape[k], "concat shape mismatch");
            }
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let row = out_shape[axis] * inner;
        let mut out = vec![0.0; numel(&out_shape)];
        let mut offset = 0;
        let mut offsets = Vec::with_capacity(parts.len());
        for (p, s) in parts.iter().zip(&shapes) {
            let w = s[axis] * inner;
            let src = self.vals[p.0].data();
            for o in 0..outer {
                out[o * row + offset..o * row + offset + w].copy_from_slice(&src[o * w..(o + 1) * w]);
            }
            offsets.push((offset, w));
            offset += w;
        }
        let parts = parts.to_vec();
        self.push(Tensor::new(&out_shape, out), &parts.clone(), move |g, _, sink| {
            let g = g.data();
            for (p, &(off, w)) in parts.iter().zip(&offsets) {
                sink.with(*p, |gp| {
                    for o in 0..outer {
                        for j in 0..w {
                            gp[o * w + j] += g[o * row + off + j];
                        }
                    }
                });
            }
        })
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let ta = &self.vals[a.0];
        let shape = ta.shape().to_vec();
        assert!(start + len <= shape[axis]);
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let row = shape[axis] * inner;
        let w = len * inner;
        let off = start * inner;
        let mut out = Vec::with_capacity(outer * w);
        for o in 0..outer {
            out.extend_from_slice(&ta.data()[o * row + off..o * row + off + w]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push(Tensor::new(&out_shape, out), &[a], move |g, _, sink| {
            let g = g.data();
            sink.with(a, |ga| {
                for o in 0..outer {
                    for j in 0..w {
                        ga[o * row + off + j] += g[o * w + j];
                    }
                }
            });
        })
    }

    /// Selects rows of a 2-D table: `[V, D]` → `[idx.len(), D]`.
    pub fn index_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = &self.vals[table.0];
        assert_eq!(t.dims(), 2);
        let d = t.shape()[1];
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let idx = idx.to_vec();
        self.push(Tensor::new(&[idx.len(), d], out), &[table], move |g, _, sink| {
            let g = g.data();
            sink.with(table, |gt| {
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] += g[r * d + j];
                    }
                }
            });
        })
    }

    // -----------------------------------------------------------------------
    // Reductions

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.vals[a.0].sum();
        self.push(Tensor::scalar(s), &[a], move |g, _, sink| {
            let g = g.item();
            sink.with(a, |ga| ga.iter_mut().for_each(|x| *x += g));
        })
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.vals[a.0].numel() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sums out `axis` (the axis is removed).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let ta = &self.vals[a.0];
        let shape = ta.shape().to_vec();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut out = vec![0.0; outer * inner];
        let d = ta.data();
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for j in 0..inner {
                    out[o * inner + j] += d[base + j];
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.push(Tensor::new(&out_shape, out), &[a], move |g, _, sink| {
            let g = g.data();
            sink.with(a, |ga| {
                for o in 0..outer {
                    for k in 0..n {
                        let base = (o * n + k) * inner;
                        for j in 0..inner {
                            ga[base + j] += g[o * inner + j];
                        }
                    }
                }
            });
        })
    }

    // -----------------------------------------------------------------------
    // Linear algebra

    /// `[..., k] × [k, n]` → `[..., n]`.
    pub fn matmul(&mut self, a: Var, w: Var) -> Var {
        let (ta, tw) = (&self.vals[a.0], &self.vals[w.0]);
        assert_eq!(tw.dims(), 2, "matmul weight must be 2-D");
        let k = *ta.shape().last().expect("matmul input has an axis");
        assert_eq!(tw.shape()[0], k, "matmul inner dims {:?} x {:?}", ta.shape(), tw.shape());
        let n = tw.shape()[1];
        let m = ta.numel() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), k as isize, 1, tw.data(), n as isize, 1, 0.0, &mut out, n as isize, 1);
        let mut out_shape = ta.shape().to_vec();
        *out_shape.last_mut().unwrap() = n;
        self.push(Tensor::new(&out_shape, out), &[a, w], move |g, vals, sink| {
            let g = g.data();
            if sink.wants(a) {
                let wd = vals[w.0].data();
                sink.with(a, |ga| {
                    gemm(m, n, k, g, n as isize, 1, wd, 1, n as isize, 1.0, ga, k as isize, 1)
                });
            }
            if sink.wants(w) {
                let ad = vals[a.0].data();
                sink.with(w, |gw| {
                    gemm(k, m, n, ad, 1, k as isize, g, n as isize, 1, 1.0, gw, n as isize, 1)
                });
            }
        })
    }

    /// Affine map over the last axis: `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add(y, b),
            None => y,
        }
    }

    /// Batched product `op(A) op(B)` over a leading batch axis, where `op`
    /// optionally transposes the trailing two axes.
    pub fn bmm(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Var {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(ta.dims(), 3);
        assert_eq!(tb.dims(), 3);
        let batch = ta.shape()[0];
        assert_eq!(tb.shape()[0], batch);
        let (ar, ac) = (ta.shape()[1], ta.shape()[2]);
        let (br, bcol) = (tb.shape()[1], tb.shape()[2]);
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_b { (bcol, br) } else { (br, bcol) };
        assert_eq!(k, k2, "bmm inner dims {:?} x {:?}", ta.shape(), tb.shape());
        // Strides of op(A) (m×k) and op(B) (k×n) within one batch.
        let (rsa, csa) = if trans_a { (1, ac as isize) } else { (ac as isize, 1) };
        let (rsb, csb) = if trans_b { (1, bcol as isize) } else { (bcol as isize, 1) };
        let (sa, sb, sc) = (ar * ac, br * bcol, m * n);
        let mut out = vec![0.0; batch * sc];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &ta.data()[i * sa..(i + 1) * sa],
                rsa,
                csa,
                &tb.data()[i * sb..(i + 1) * sb],
                rsb,
                csb,
                0.0,
                &mut out[i * sc..(i + 1) * sc],
                n as isize,
                1,
            );
        }
        self.push(Tensor::new(&[batch, m, n], out), &[a, b], move |g, vals, sink| {
            let g = g.data();
            if sink.wants(a) {
                let bd = vals[b.0].data();
                // d op(A) = G op(B)^T, written into A's storage through op's strides.
                sink.with(a, |ga| {
                    for i in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * sc..(i + 1) * sc],
                            n as isize,
                            1,
                            &bd[i * sb..(i + 1) * sb],
                            csb,
                            rsb,
                            1.0,
                            &mut ga[i * sa..(i + 1) * sa],
                            rsa,
                            csa,
                        );
                    }
                });
            }
            if sink.wants(b) {
                let ad = vals[a.0].data();
                // d op(B) = op(A)^T G.
                sink.with(b, |gb| {
                    for i in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            &ad[i * sa..(i + 1) * sa],
                            csa,
                            rsa,
                            &g[i * sc..(i + 1) * sc],
                            n as isize,
                            1,
                            1.0,
                            &mut gb[i * sb..(i + 1) * sb],
                            rsb,
                            csb,
                        );
                    }
                });
            }
        })
    }

    // -----------------------------------------------------------------------
    // Normalization

    pub fn softmax_last(&mut self, a: Var) -> Var {
        let ta = &self.vals[a.0];
        let n = *ta.shape().last().unwrap();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        let out_id = self.vals.len();
        self.push(Tensor::new(ta.shape(), out), &[a], move |g, vals, sink| {
            let y = vals[out_id].data();
            let g = g.data();
            sink.with(a, |ga| {
                for ((gr, yr), gar) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        gar[j] += yr[j] * (gr[j] - dot);
                    }
                }
            });
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let tx = &self.vals[x.0];
        let n = *tx.shape().last().unwrap();
        let rows = tx.numel() / n;
        let mut xhat = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; rows];
        for (r, row) in tx.data().chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                xhat[r * n + j] = (row[j] - mean) * is;
            }
        }
        let (gd, bd) = (self.vals[gamma.0].data(), self.vals[beta.0].data());
        assert_eq!(gd.len(), n);
        assert_eq!(bd.len(), n);
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(k, v)| v * gd[k % n] + bd[k % n])
            .collect();
        let shape = tx.shape().to_vec();
        self.push(Tensor::new(&shape, out), &[x, gamma, beta], move |g, vals, sink| {
            let g = g.data();
            let gam = vals[gamma.0].data();
            if sink.wants(gamma) {
                sink.with(gamma, |gg| {
                    for k in 0..g.len() {
                        gg[k % n] += g[k] * xhat[k];
                    }
                });
            }
            if sink.wants(beta) {
                sink.with(beta, |gb| {
                    for k in 0..g.len() {
                        gb[k % n] += g[k];
                    }
                });
            }
            if sink.wants(x) {
                sink.with(x, |gx| {
                    let nf = n as f64;
                    for r in 0..rows {
                        let base = r * n;
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..n {
                            let dy = g[base + j] * gam[j];
                            s1 += dy;
                            s2 += dy * xhat[base + j];
                        }
                        for j in 0..n {
                            let dy = g[base + j] * gam[j];
                            gx[base + j] +=
                                inv_std[r] * (dy - s1 / nf - xhat[base + j] * s2 / nf);
                        }
                    }
                });
            }
        })
    }
}

/// Visits `(out_index, src_index)` for a strided view with contiguous output.
fn gather_strided(shape: &[usize], src_str: &[usize], mut f: impl FnMut(usize, usize)) {
    let total = numel(shape);
    if total == 0 {
        return;
    }
    let d = shape.len();
    if d == 0 {
        f(0, 0);
        return;
    }
    let mut idx = vec![0usize; d];
    let mut src = 0usize;
    for o in 0..total {
        f(o, src);
        let mut k = d;
        while k > 0 {
            k -= 1;
            idx[k] += 1;
            src += src_str[k];
            if idx[k] < shape[k] {
                break;
            }
            src -= src_str[k] * idx[k];
            idx[k] = 0;
        }
    }
}

fn apply(op: BinOp, x: f64, y: f64) -> f64 {
    match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `softplus⁻¹(y)` for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
