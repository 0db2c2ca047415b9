//! Geometric operations with hand-written derivatives.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Unnormalized-quaternion rotation entries `P(q)` (so that `R = P / |q|²`)
/// and their partial derivatives with respect to `(a, b, c, d)`.
fn quat_poly(q: [f64; 4]) -> ([f64; 9], [[f64; 9]; 4]) {
    let [a, b, c, d] = q;
    let p = [
        a * a + b * b - c * c - d * d,
        2.0 * (b * c - a * d),
        2.0 * (b * d + a * c),
        2.0 * (b * c + a * d),
        a * a - b * b + c * c - d * d,
        2.0 * (c * d - a * b),
        2.0 * (b * d - a * c),
        2.0 * (c * d + a * b),
        a * a - b * b - c * c + d * d,
    ];
    let da = [2.0 * a, -2.0 * d, 2.0 * c, 2.0 * d, 2.0 * a, -2.0 * b, -2.0 * c, 2.0 * b, 2.0 * a];
    let db = [2.0 * b, 2.0 * c, 2.0 * d, 2.0 * c, -2.0 * b, -2.0 * a, 2.0 * d, 2.0 * a, -2.0 * b];
    let dc = [-2.0 * c, 2.0 * b, 2.0 * a, 2.0 * b, 2.0 * c, 2.0 * d, -2.0 * a, 2.0 * d, -2.0 * c];
    let dd = [-2.0 * d, -2.0 * a, 2.0 * b, 2.0 * a, -2.0 * d, 2.0 * c, 2.0 * b, 2.0 * c, 2.0 * d];
    (p, [da, db, dc, dd])
}

impl Tape {
    /// `[B, 3]` vector parts `(b, c, d)` → `[B, 3, 3]` rotations of the
    /// quaternion `(1, b, c, d)` after normalization.
    pub fn quat_bcd_to_rot(&mut self, bcd: Var) -> Var {
        let t = self.value(bcd);
        assert_eq!(t.shape().last(), Some(&3));
        let batch = t.numel() / 3;
        let mut out = vec![0.0; batch * 9];
        for k in 0..batch {
            let v = &t.data()[3 * k..3 * k + 3];
            let q = [1.0, v[0], v[1], v[2]];
            let n2 = 1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            let (p, _) = quat_poly(q);
            for e in 0..9 {
                out[9 * k + e] = p[e] / n2;
            }
        }
        self.push(Tensor::new(&[batch, 3, 3], out), &[bcd], move |g, vals, sink| {
            let v = vals[bcd.0].data();
            let g = g.data();
            sink.with(bcd, |gv| {
                for k in 0..batch {
                    let q = [1.0, v[3 * k], v[3 * k + 1], v[3 * k + 2]];
                    let n2 = q.iter().map(|x| x * x).sum::<f64>();
                    let (p, dp) = quat_poly(q);
                    let gk = &g[9 * k..9 * k + 9];
                    let gp: f64 = (0..9).map(|e| gk[e] * p[e]).sum();
                    for j in 1..4 {
                        let direct: f64 = (0..9).map(|e| gk[e] * dp[j][e]).sum();
                        gv[3 * k + j - 1] += direct / n2 - gp * 2.0 * q[j] / (n2 * n2);
                    }
                }
            });
        })
    }

    /// `[B, M, 3]` points → `[B, M, M]` Euclidean distances. The derivative
    /// at coincident points is taken as zero.
    pub fn pairwise_distances(&mut self, pts: Var) -> Var {
        let t = self.value(pts);
        assert_eq!(t.dims(), 3);
        assert_eq!(t.shape()[2], 3);
        let (b, m) = (t.shape()[0], t.shape()[1]);
        let x = t.data();
        let mut out = vec![0.0; b * m * m];
        for k in 0..b {
            for i in 0..m {
                for j in 0..m {
                    let (pi, pj) = ((k * m + i) * 3, (k * m + j) * 3);
                    let d2: f64 = (0..3).map(|c| (x[pi + c] - x[pj + c]).powi(2)).sum();
                    out[(k * m + i) * m + j] = d2.sqrt();
                }
            }
        }
        let out_id = self.len();
        self.push(Tensor::new(&[b, m, m], out), &[pts], move |g, vals, sink| {
            let x = vals[pts.0].data();
            let d = vals[out_id].data();
            let g = g.data();
            sink.with(pts, |gx| {
                for k in 0..b {
                    for i in 0..m {
                        for j in 0..m {
                            let e = (k * m + i) * m + j;
                            if d[e] == 0.0 || g[e] == 0.0 {
                                continue;
                            }
                            let (pi, pj) = ((k * m + i) * 3, (k * m + j) * 3);
                            for c in 0..3 {
                                let u = g[e] * (x[pi + c] - x[pj + c]) / d[e];
                                gx[pi + c] += u;
                                gx[pj + c] -= u;
                            }
                        }
                    }
                }
            });
        })
    }

    /// Elementwise minimum of two same-shaped values; ties route the
    /// gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape());
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x.min(*y)).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(&shape, out), &[a, b], move |g, vals, sink| {
            let (xa, xb) = (vals[a.0].data(), vals[b.0].data());
            let g = g.data();
            sink.with(a, |ga| {
                for k in 0..g.len() {
                    if xa[k] <= xb[k] {
                        ga[k] += g[k];
                    }
                }
            });
            sink.with(b, |gb| {
                for k in 0..g.len() {
                    if xa[k] > xb[k] {
                        gb[k] += g[k];
                    }
                }
            });
        })
    }

    /// Applies rigid transforms to points: `rot [B,3,3]`, `trans [B,3]`,
    /// `pts [B,P,3]` → `R p + t`.
    pub fn frame_apply(&mut self, rot: Var, trans: Var, pts: Var) -> Var {
        let b = self.shape(rot)[0];
        let rotated = self.bmm(pts, rot, false, true);
        let t = self.reshape(trans, &[b, 1, 3]);
        self.add(rotated, t)
    }

    /// Inverse transform: `Rᵀ (p − t)`.
    pub fn frame_apply_inverse(&mut self, rot: Var, trans: Var, pts: Var) -> Var {
        let b = self.shape(rot)[0];
        let t = self.reshape(trans, &[b, 1, 3]);
        let d = self.sub(pts, t);
        self.bmm(d, rot, false, false)
    }

    /// Composition of rigid transforms given as `(rot [B,3,3], trans [B,3])`.
    pub fn frame_compose(&mut self, r1: Var, t1: Var, r2: Var, t2: Var) -> (Var, Var) {
        let b = self.shape(r1)[0];
        let rot = self.bmm(r1, r2, false, false);
        let t2p = self.reshape(t2, &[b, 1, 3]);
        let moved = self.frame_apply(r1, t1, t2p);
        let trans = self.reshape(moved, &[b, 3]);
        (rot, trans)
    }
}

/// Central finite-difference check of `f` at `inputs`. Returns the largest
/// relative error `|g − ĝ| / max(|g| + |ĝ|, floor)` over all coordinates.
pub fn gradient_check(
    inputs: &[Tensor],
    h: f64,
    floor: f64,
    f: impl Fn(&mut Tape, &[Var]) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out);
    let eval = |xs: &[Tensor]| {
        let mut tp = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|t| tp.constant(t.clone())).collect();
        let o = f(&mut tp, &vs);
        tp.value(o).item()
    };
    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[k].shape());
        let analytic = grads.get(*v).unwrap_or(&zero).clone();
        for e in 0..inputs[k].numel() {
            let x0 = xs[k].data()[e];
            xs[k].data_mut()[e] = x0 + h;
            let fp = eval(&xs);
            xs[k].data_mut()[e] = x0 - h;
            let fm = eval(&xs);
            xs[k].data_mut()[e] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[e];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}
