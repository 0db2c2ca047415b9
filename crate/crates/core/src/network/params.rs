use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::autodiff::{softplus_inverse, Gradients, Tape, Tensor, Var};
use crate::protein::NUM_RESIDUE_TYPES;

/// Which training stage may update a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Embedder,
    Trunk,
    MotionAlignment,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// All learnable arrays, addressed by dotted name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

enum Init {
    Lecun,
    Zeros,
    Ones,
    Const(f64),
}

struct Builder<'r, R: Rng> {
    rng: &'r mut R,
    entries: Vec<ParamEntry>,
}

impl<R: Rng> Builder<'_, R> {
    fn add(&mut self, name: String, group: ParamGroup, shape: &[usize], init: Init) {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(v) => vec![v; n],
            Init::Lecun => {
                let std = (1.0 / shape[0] as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| dist.sample(self.rng)).collect()
            }
        };
        self.entries.push(ParamEntry {
            name,
            group,
            tensor: Tensor::new(shape, data),
        });
    }

    fn linear(&mut self, name: &str, group: ParamGroup, d_in: usize, d_out: usize, bias: bool, w: Init) {
        self.add(format!("{name}.w"), group, &[d_in, d_out], w);
        if bias {
            self.add(format!("{name}.b"), group, &[d_out], Init::Zeros);
        }
    }

    fn layer_norm(&mut self, name: &str, group: ParamGroup, d: usize) {
        self.add(format!("{name}.gamma"), group, &[d], Init::Ones);
        self.add(format!("{name}.beta"), group, &[d], Init::Zeros);
    }
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        use ParamGroup::*;
        let mut b = Builder {
            rng,
            entries: Vec::new(),
        };
        let (dv, dz) = (cfg.d_v, cfg.d_z);
        b.add("embed.residue".into(), Embedder, &[NUM_RESIDUE_TYPES, dv], Init::Lecun);
        b.add("embed.relpos".into(), Embedder, &[2 * cfg.r_max + 2, dz], Init::Lecun);
        b.linear("embed.pair_i", Embedder, dv, dz, false, Init::Lecun);
        b.linear("embed.pair_j", Embedder, dv, dz, false, Init::Lecun);
        b.linear("embed.time_v", Embedder, cfg.time_dim, dv, true, Init::Lecun);
        b.linear("embed.time_z", Embedder, cfg.time_dim, dz, true, Init::Lecun);

        let h = cfg.ipa.n_head;
        let c = cfg.ipa.c;
        let (pq, pv) = (cfg.ipa.n_query_points, cfg.ipa.n_point_values);
        for l in 0..cfg.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            b.linear(&p("ipa.q"), Trunk, dv, c, false, Init::Lecun);
            b.linear(&p("ipa.k"), Trunk, dv, c, false, Init::Lecun);
            b.linear(&p("ipa.v"), Trunk, dv, c, false, Init::Lecun);
            b.linear(&p("ipa.q_pts"), Trunk, dv, h * pq * 3, false, Init::Lecun);
            b.linear(&p("ipa.k_pts"), Trunk, dv, h * pq * 3, false, Init::Lecun);
            b.linear(&p("ipa.v_pts"), Trunk, dv, h * pv * 3, false, Init::Lecun);
            b.linear(&p("ipa.bias"), Trunk, dz, h, false, Init::Lecun);
            b.add(p("ipa.gamma_raw"), Trunk, &[h], Init::Const(softplus_inverse(1.0)));
            b.linear(&p("ipa.out"), Trunk, cfg.ipa_concat_dim(), dv, true, Init::Lecun);
            b.layer_norm(&p("ipa_norm"), Trunk, dv);
            b.linear(&p("transition.l1"), Trunk, dv, dv, true, Init::Lecun);
            b.linear(&p("transition.l2"), Trunk, dv, dv, true, Init::Lecun);
            b.layer_norm(&p("transition_norm"), Trunk, dv);

            b.linear(&p("spatial.q"), Trunk, dv, dv, false, Init::Lecun);
            b.linear(&p("spatial.k"), Trunk, dv, dv, false, Init::Lecun);
            b.linear(&p("spatial.v"), Trunk, dv, dv, false, Init::Lecun);
            b.linear(&p("spatial.wr"), Trunk, dv, dv, false, Init::Zeros);

            b.linear(&p("temporal.q"), MotionAlignment, dv, dv, false, Init::Lecun);
            b.linear(&p("temporal.k"), MotionAlignment, dv, dv, false, Init::Lecun);
            b.linear(&p("temporal.v"), MotionAlignment, dv, dv, false, Init::Lecun);
            b.linear(&p("temporal.we"), MotionAlignment, dv, dv, false, Init::Zeros);

            b.linear(&p("edge.down"), Trunk, dv, dv / 2, true, Init::Lecun);
            // First MLP layer over concat(v_down_i, v_down_j, z), stored split.
            b.add(p("edge.l1_i.w"), Trunk, &[dv / 2, dz], Init::Lecun);
            b.add(p("edge.l1_j.w"), Trunk, &[dv / 2, dz], Init::Lecun);
            b.add(p("edge.l1_z.w"), Trunk, &[dz, dz], Init::Lecun);
            b.add(p("edge.l1.b"), Trunk, &[dz], Init::Zeros);
            b.linear(&p("edge.l2"), Trunk, dz, dz, true, Init::Lecun);
            b.layer_norm(&p("edge_norm"), Trunk, dz);

            b.linear(&p("backbone"), Trunk, dv, 6, true, Init::Zeros);
        }
        b.linear("torsion.l1", Trunk, dv, dv, true, Init::Lecun);
        b.linear("torsion.l2", Trunk, dv, dv, true, Init::Lecun);
        b.linear("torsion.out", Trunk, dv, 14, true, Init::Lecun);
        Self::from_entries(b.entries)
    }

    pub fn from_entries(entries: Vec<ParamEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(k, e)| (e.name.clone(), k))
            .collect();
        ModelParams { entries, index }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|k| &self.entries[k].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|k| &mut self.entries[k].tensor)
    }

    /// SHA-256 over the bit patterns of every parameter in the selected
    /// groups, in storage order.
    pub fn checksum(&self, include: impl Fn(ParamGroup) -> bool) -> String {
        let mut h = Sha256::new();
        for e in self.entries.iter().filter(|e| include(e.group)) {
            h.update(e.name.as_bytes());
            for x in e.tensor.data() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }
}

/// Lazily places parameters on a tape, as leaves when trainable and as
/// constants otherwise.
pub struct Binder<'p> {
    params: &'p ModelParams,
    vars: Vec<Option<Var>>,
    trainable: [bool; 3],
}

fn group_slot(g: ParamGroup) -> usize {
    match g {
        ParamGroup::Embedder => 0,
        ParamGroup::Trunk => 1,
        ParamGroup::MotionAlignment => 2,
    }
}

impl<'p> Binder<'p> {
    pub fn new(params: &'p ModelParams, trainable: impl Fn(ParamGroup) -> bool) -> Self {
        Binder {
            params,
            vars: vec![None; params.len()],
            trainable: [
                trainable(ParamGroup::Embedder),
                trainable(ParamGroup::Trunk),
                trainable(ParamGroup::MotionAlignment),
            ],
        }
    }

    /// Binds every parameter as a constant.
    pub fn frozen(params: &'p ModelParams) -> Self {
        Self::new(params, |_| false)
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    pub fn get(&mut self, tape: &mut Tape, name: &str) -> Var {
        let k = self
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        if let Some(v) = self.vars[k] {
            return v;
        }
        let e = &self.params.entries[k];
        let v = if self.trainable[group_slot(e.group)] {
            tape.leaf(e.tensor.clone())
        } else {
            tape.constant(e.tensor.clone())
        };
        self.vars[k] = Some(v);
        v
    }

    /// Gradients per parameter in storage order; `None` for parameters that
    /// were frozen or unused.
    pub fn gradients(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.vars
            .iter()
            .map(|v| v.and_then(|v| grads.take(v)))
            .collect()
    }
}

/// `x W (+ b)` using parameters `{prefix}.w` and, if present, `{prefix}.b`.
pub(crate) fn linear(tape: &mut Tape, b: &mut Binder<'_>, prefix: &str, x: Var) -> Var {
    let w = b.get(tape, &format!("{prefix}.w"));
    let bias_name = format!("{prefix}.b");
    let bias = b.params().index_of(&bias_name).map(|_| b.get(tape, &bias_name));
    tape.linear(x, w, bias)
}

pub(crate) fn layer_norm(tape: &mut Tape, b: &mut Binder<'_>, prefix: &str, x: Var) -> Var {
    let g = b.get(tape, &format!("{prefix}.gamma"));
    let beta = b.get(tape, &format!("{prefix}.beta"));
    tape.layer_norm(x, g, beta, 1e-5)
}
