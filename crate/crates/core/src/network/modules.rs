use super::config::ModelConfig;
use super::params::{layer_norm, linear, Binder};
use crate::autodiff::{Tape, Var};

/// Rigid transforms on a tape: `rot [B,3,3]`, `trans [B,3]`.
#[derive(Clone, Copy, Debug)]
pub struct FrameVars {
    pub rot: Var,
    pub trans: Var,
}

/// Every stream of one IPA evaluation, before and after the output layer.
#[derive(Clone, Copy, Debug)]
pub struct IpaOutput {
    /// Attention weights `[B·H, N, N]`.
    pub attention: Var,
    /// Edge-attended features `[B, N, H·D_Z]`.
    pub o_bar: Var,
    /// Scalar values `[B, N, H·c_h]`.
    pub o: Var,
    /// Points mapped back into the local frame `[B, N, H·P_v·3]`.
    pub o_pts: Var,
    pub o_pts_norm: Var,
    /// Points left in global coordinates `[B, N, H·P_v·3]`.
    pub o_glob: Var,
    pub o_glob_norm: Var,
    /// Final linear output `[B, N, D_V]`.
    pub out: Var,
}

const NORM_EPS: f64 = 1e-8;
/// Guard for normalizing raw torsion pairs: `x / sqrt(|x|² + ε²)`.
const TORSION_EPS: f64 = 1e-8;

/// `[B, N, H·w]` → `[B·H, N, w]`.
fn split_heads(tape: &mut Tape, x: Var, heads: usize, w: usize) -> Var {
    let (b, n) = (tape.shape(x)[0], tape.shape(x)[1]);
    let x = tape.reshape(x, &[b, n, heads, w]);
    let x = tape.permute(x, &[0, 2, 1, 3]);
    tape.reshape(x, &[b * heads, n, w])
}

/// `[B·H, N, w]` → `[B, N, H·w]`.
fn merge_heads(tape: &mut Tape, x: Var, heads: usize) -> Var {
    let s = tape.shape(x).to_vec();
    let (b, n, w) = (s[0] / heads, s[1], s[2]);
    let x = tape.reshape(x, &[b, heads, n, w]);
    let x = tape.permute(x, &[0, 2, 1, 3]);
    tape.reshape(x, &[b, n, heads * w])
}

/// Vector norms over the last axis of `[B, P, 3]`, guarded at zero.
fn point_norms(tape: &mut Tape, x: Var) -> Var {
    let sq = tape.square(x);
    let s = tape.sum_axis(sq, 2);
    let s = tape.add_scalar(s, NORM_EPS);
    tape.sqrt(s)
}

/// Invariant point attention over a batch of `B` independent structures.
/// `v [B, N, D_V]`, `z [B, N, N, D_Z]`, frames with `B·N` entries.
pub fn ipa_on(
    tape: &mut Tape,
    b: &mut Binder<'_>,
    cfg: &ModelConfig,
    prefix: &str,
    v: Var,
    z: Var,
    frames: FrameVars,
) -> IpaOutput {
    let (bs, n) = (tape.shape(v)[0], tape.shape(v)[1]);
    let h = cfg.ipa.n_head;
    let ch = cfg.head_dim();
    let (pq, pv) = (cfg.ipa.n_query_points, cfg.ipa.n_point_values);
    let dz = cfg.d_z;
    let w_c = (2.0 / (9.0 * pq as f64)).sqrt();
    let w_l = (1.0f64 / 3.0).sqrt();
    let name = |s: &str| format!("{prefix}.{s}");

    let q = linear(tape, b, &name("q"), v);
    let k = linear(tape, b, &name("k"), v);
    let val = linear(tape, b, &name("v"), v);
    let qh = split_heads(tape, q, h, ch);
    let kh = split_heads(tape, k, h, ch);
    let vh = split_heads(tape, val, h, ch);

    let qk = tape.bmm(qh, kh, false, true);
    let qk = tape.scale(qk, 1.0 / (ch as f64).sqrt());
    let bias = linear(tape, b, &name("bias"), z);
    let bias = tape.permute(bias, &[0, 3, 1, 2]);
    let bias = tape.reshape(bias, &[bs * h, n, n]);
    let lin = tape.add(qk, bias);
    let lin = tape.scale(lin, w_l);

    // Points placed in the global frame, one group of P per head.
    let global_points = |tape: &mut Tape, b: &mut Binder<'_>, which: &str, p: usize| {
        let x = linear(tape, b, &name(which), v);
        let x = tape.reshape(x, &[bs * n, h * p, 3]);
        let g = tape.frame_apply(frames.rot, frames.trans, x);
        let g = tape.reshape(g, &[bs, n, h * p * 3]);
        split_heads(tape, g, h, p * 3)
    };
    let qg = global_points(tape, b, "q_pts", pq);
    let kg = global_points(tape, b, "k_pts", pq);
    let cross = tape.bmm(qg, kg, false, true);
    let qsq = tape.square(qg);
    let qn = tape.sum_axis(qsq, 2);
    let qn = tape.reshape(qn, &[bs * h, n, 1]);
    let ksq = tape.square(kg);
    let kn = tape.sum_axis(ksq, 2);
    let kn = tape.reshape(kn, &[bs * h, 1, n]);
    let d2 = tape.add(qn, kn);
    let cross2 = tape.scale(cross, 2.0);
    let d2 = tape.sub(d2, cross2);
    let gamma_raw = b.get(tape, &name("gamma_raw"));
    let gamma = tape.softplus(gamma_raw);
    let coef = tape.scale(gamma, w_c / 2.0);
    let coef = tape.reshape(coef, &[h, 1, 1]);
    let d2 = tape.reshape(d2, &[bs, h, n, n]);
    let pen = tape.mul(d2, coef);
    let pen = tape.reshape(pen, &[bs * h, n, n]);
    let logits = tape.sub(lin, pen);
    let a = tape.softmax_last(logits);

    // Edge features weighted by attention, per query residue.
    let a4 = tape.reshape(a, &[bs, h, n, n]);
    let a4 = tape.permute(a4, &[0, 2, 1, 3]);
    let a4 = tape.reshape(a4, &[bs * n, h, n]);
    let zr = tape.reshape(z, &[bs * n, n, dz]);
    let o_bar = tape.bmm(a4, zr, false, false);
    let o_bar = tape.reshape(o_bar, &[bs, n, h * dz]);

    let o = tape.bmm(a, vh, false, false);
    let o = merge_heads(tape, o, h);

    let vg = global_points(tape, b, "v_pts", pv);
    let og = tape.bmm(a, vg, false, false);
    let og = merge_heads(tape, og, h);
    let og = tape.reshape(og, &[bs * n, h * pv, 3]);
    let local = tape.frame_apply_inverse(frames.rot, frames.trans, og);
    let local_norm = point_norms(tape, local);
    let glob_norm = point_norms(tape, og);

    let o_pts = tape.reshape(local, &[bs, n, h * pv * 3]);
    let o_pts_norm = tape.reshape(local_norm, &[bs, n, h * pv]);
    let o_glob = tape.reshape(og, &[bs, n, h * pv * 3]);
    let o_glob_norm = tape.reshape(glob_norm, &[bs, n, h * pv]);
    let cat = tape.concat(&[o_bar, o, o_pts, o_pts_norm, o_glob, o_glob_norm], 2);
    let out = linear(tape, b, &name("out"), cat);
    IpaOutput {
        attention: a,
        o_bar,
        o,
        o_pts,
        o_pts_norm,
        o_glob,
        o_glob_norm,
        out,
    }
}

/// Multi-head self-attention over the middle axis of `x [B, T, D]`, without
/// an output projection.
fn self_attention(tape: &mut Tape, b: &mut Binder<'_>, prefix: &str, x: Var, heads: usize) -> Var {
    let d = tape.shape(x)[2];
    let dh = d / heads;
    let q = linear(tape, b, &format!("{prefix}.q"), x);
    let k = linear(tape, b, &format!("{prefix}.k"), x);
    let v = linear(tape, b, &format!("{prefix}.v"), x);
    let q = split_heads(tape, q, heads, dh);
    let k = split_heads(tape, k, heads, dh);
    let v = split_heads(tape, v, heads, dh);
    let logits = tape.bmm(q, k, false, true);
    let logits = tape.scale(logits, 1.0 / (dh as f64).sqrt());
    let a = tape.softmax_last(logits);
    let o = tape.bmm(a, v, false, false);
    merge_heads(tape, o, heads)
}

/// Reference-guided update of noisy-step features. `v_ref [N, D]`,
/// `v_s [S, N, D]` → `v̂_s = A_s W^r + v_s`.
pub fn spatial_module_on(
    tape: &mut Tape,
    b: &mut Binder<'_>,
    cfg: &ModelConfig,
    prefix: &str,
    v_ref: Var,
    v_s: Var,
) -> Var {
    let att = spatial_attention_on(tape, b, cfg, prefix, v_ref, v_s);
    spatial_residual(tape, b, prefix, att, v_s)
}

/// Attention over the two-token sequence `[v_ref, v_s]` for every `(s, i)`;
/// returns `[S·N, 2, D]` holding `A_ref` and `A_s`.
pub fn spatial_attention_on(
    tape: &mut Tape,
    b: &mut Binder<'_>,
    cfg: &ModelConfig,
    prefix: &str,
    v_ref: Var,
    v_s: Var,
) -> Var {
    let (s, n, d) = {
        let sh = tape.shape(v_s);
        (sh[0], sh[1], sh[2])
    };
    let vr = tape.reshape(v_ref, &[1, n, 1, d]);
    let zeros = tape.constant(crate::autodiff::Tensor::zeros(&[s, n, 1, d]));
    let vr = tape.add(vr, zeros);
    let vs = tape.reshape(v_s, &[s, n, 1, d]);
    let x = tape.concat(&[vr, vs], 2);
    let x = tape.reshape(x, &[s * n, 2, d]);
    self_attention(tape, b, prefix, x, cfg.spatial_heads)
}

fn spatial_residual(tape: &mut Tape, b: &mut Binder<'_>, prefix: &str, att: Var, v_s: Var) -> Var {
    let (s, n, d) = {
        let sh = tape.shape(v_s);
        (sh[0], sh[1], sh[2])
    };
    let a_s = tape.narrow(att, 1, 1, 1);
    let a_s = tape.reshape(a_s, &[s, n, d]);
    let upd = linear(tape, b, &format!("{prefix}.wr"), a_s);
    tape.add(upd, v_s)
}

/// Per-residue temporal attention across all steps. `v_seq [Ŝ, N, D]`,
/// `pos [Ŝ, D]`; returns updated features of the last `s` steps.
pub fn motion_alignment_on(
    tape: &mut Tape,
    b: &mut Binder<'_>,
    cfg: &ModelConfig,
    prefix: &str,
    v_seq: Var,
    pos: Var,
    s: usize,
) -> Var {
    let (steps, d) = (tape.shape(v_seq)[0], tape.shape(v_seq)[2]);
    let p = tape.reshape(pos, &[steps, 1, d]);
    let x = tape.add(v_seq, p);
    let x = tape.permute(x, &[1, 0, 2]);
    let att = self_attention(tape, b, prefix, x, cfg.temporal_heads);
    let att = tape.permute(att, &[1, 0, 2]);
    let noisy_att = tape.narrow(att, 0, steps - s, s);
    let upd = linear(tape, b, &format!("{prefix}.we"), noisy_att);
    let v_noisy = tape.narrow(v_seq, 0, steps - s, s);
    tape.add(upd, v_noisy)
}

/// Non-residual edge update from node features. `v [B, N, D_V]`,
/// `z [B, N, N, D_Z]`.
pub fn edge_update_on(
    tape: &mut Tape,
    b: &mut Binder<'_>,
    cfg: &ModelConfig,
    prefix: &str,
    v: Var,
    z: Var,
) -> Var {
    let (bs, n) = (tape.shape(v)[0], tape.shape(v)[1]);
    let dz = cfg.d_z;
    let name = |s: &str| format!("{prefix}.{s}");
    let down = linear(tape, b, &name("down"), v);
    let wi = b.get(tape, &name("l1_i.w"));
    let wj = b.get(tape, &name("l1_j.w"));
    let wz = b.get(tape, &name("l1_z.w"));
    let b1 = b.get(tape, &name("l1.b"));
    let ai = tape.matmul(down, wi);
    let ai = tape.reshape(ai, &[bs, n, 1, dz]);
    let aj = tape.matmul(down, wj);
    let aj = tape.reshape(aj, &[bs, 1, n, dz]);
    let az = tape.matmul(z, wz);
    let hdn = tape.add(az, ai);
    let hdn = tape.add(hdn, aj);
    let hdn = tape.add(hdn, b1);
    let hdn = tape.relu(hdn);
    let out = linear(tape, b, &name("l2"), hdn);
    layer_norm(tape, b, &format!("{prefix}_norm"), out)
}

/// `T ← T ∘ (quat(1, b, c, d), X)` from a linear map of `v [S, N, D_V]`.
pub fn backbone_update_on(
    tape: &mut Tape,
    b: &mut Binder<'_>,
    prefix: &str,
    v: Var,
    frames: FrameVars,
) -> FrameVars {
    let (s, n) = (tape.shape(v)[0], tape.shape(v)[1]);
    let u = linear(tape, b, prefix, v);
    let u = tape.reshape(u, &[s * n, 6]);
    let bcd = tape.narrow(u, 1, 0, 3);
    let x = tape.narrow(u, 1, 3, 3);
    let r_upd = tape.quat_bcd_to_rot(bcd);
    let (rot, trans) = tape.frame_compose(frames.rot, frames.trans, r_upd, x);
    FrameVars { rot, trans }
}

/// Scales each trailing `(sin, cos)` pair to unit length, guarded by ε.
pub fn normalize_pairs(tape: &mut Tape, raw: Var) -> Var {
    let mut shape = tape.shape(raw).to_vec();
    let last = shape.len() - 1;
    let sq = tape.square(raw);
    let n = tape.sum_axis(sq, last);
    let n = tape.add_scalar(n, TORSION_EPS * TORSION_EPS);
    let n = tape.sqrt(n);
    shape[last] = 1;
    let n = tape.reshape(n, &shape);
    tape.div(raw, n)
}

/// Torsion MLP over `v [S, N, D_V]` → unit `(sin, cos)` pairs `[S, N, 7, 2]`.
pub fn torsion_head_on(tape: &mut Tape, b: &mut Binder<'_>, v: Var) -> Var {
    let (s, n) = (tape.shape(v)[0], tape.shape(v)[1]);
    let h = linear(tape, b, "torsion.l1", v);
    let h = tape.relu(h);
    let h = linear(tape, b, "torsion.l2", h);
    let h = tape.relu(h);
    let raw = linear(tape, b, "torsion.out", h);
    let raw = tape.reshape(raw, &[s, n, 7, 2]);
    normalize_pairs(tape, raw)
}

/// Node update around IPA: residual, normalization and a transition MLP.
pub(crate) fn ipa_block(
    tape: &mut Tape,
    b: &mut Binder<'_>,
    cfg: &ModelConfig,
    layer: usize,
    v: Var,
    z: Var,
    frames: FrameVars,
) -> Var {
    let p = |s: &str| format!("layer{layer}.{s}");
    let ipa = ipa_on(tape, b, cfg, &p("ipa"), v, z, frames);
    let v = tape.add(v, ipa.out);
    let v = layer_norm(tape, b, &p("ipa_norm"), v);
    let t = linear(tape, b, &p("transition.l1"), v);
    let t = tape.relu(t);
    let t = linear(tape, b, &p("transition.l2"), t);
    let v = tape.add(v, t);
    layer_norm(tape, b, &p("transition_norm"), v)
}
