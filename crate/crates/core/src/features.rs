//! Initial node and edge features, diffusion-time encoding and temporal
//! position encoding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::network::{linear, Binder, ModelConfig, ModelParams};
use crate::protein::ResidueType;

/// Node features `S×N×D_V` and edge features `S×N×N×D_Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensors {
    pub v: Tensor,
    pub z: Tensor,
}

/// Externally computed per-residue embeddings used in place of the
/// trainable embedder. They are treated as constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecomputedEmbedding {
    pub d_v: usize,
    pub d_z: usize,
    pub node: Vec<Vec<f64>>,
    pub edge: Vec<Vec<Vec<f64>>>,
}

impl PrecomputedEmbedding {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let emb: PrecomputedEmbedding = serde_json::from_str(&text)?;
        emb.validate()?;
        Ok(emb)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.node.len();
        if self.node.iter().any(|r| r.len() != self.d_v) {
            return Err(Error::Shape(format!("node rows must have width {}", self.d_v)));
        }
        if self.edge.len() != n
            || self
                .edge
                .iter()
                .any(|r| r.len() != n || r.iter().any(|e| e.len() != self.d_z))
        {
            return Err(Error::Shape(format!(
                "edge array must be {n}×{n}×{}",
                self.d_z
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.is_empty()
    }

    fn tensors(&self) -> (Tensor, Tensor) {
        let n = self.node.len();
        let v = Tensor::new(&[n, self.d_v], self.node.concat());
        let z = Tensor::new(
            &[n, n, self.d_z],
            self.edge.iter().flat_map(|r| r.concat()).collect(),
        );
        (v, z)
    }
}

/// Relative-position bucket of `j − i`, clipped to `±r_max`.
pub fn relpos_bucket(i: usize, j: usize, r_max: usize) -> usize {
    let d = (j as i64 - i as i64).clamp(-(r_max as i64), r_max as i64);
    (d + r_max as i64) as usize
}

/// Records `v0 [N, D_V]` and `z0 [N, N, D_Z]` on `tape`.
pub fn embed_sequence_on(
    tape: &mut Tape,
    b: &mut Binder<'_>,
    cfg: &ModelConfig,
    seq: &[ResidueType],
    precomputed: Option<&PrecomputedEmbedding>,
) -> Result<(Var, Var)> {
    let n = seq.len();
    if let Some(p) = precomputed {
        if p.len() != n || p.d_v != cfg.d_v || p.d_z != cfg.d_z {
            return Err(Error::Shape(format!(
                "precomputed embedding is {}×({}, {}), model expects {n}×({}, {})",
                p.len(),
                p.d_v,
                p.d_z,
                cfg.d_v,
                cfg.d_z
            )));
        }
        let (v, z) = p.tensors();
        return Ok((tape.constant(v), tape.constant(z)));
    }
    let table = b.get(tape, "embed.residue");
    let idx: Vec<usize> = seq.iter().map(|r| r.index()).collect();
    let v0 = tape.index_rows(table, &idx);

    let relpos = b.get(tape, "embed.relpos");
    let buckets: Vec<usize> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| relpos_bucket(i, j, cfg.r_max))
        .collect();
    let rp = tape.index_rows(relpos, &buckets);
    let rp = tape.reshape(rp, &[n, n, cfg.d_z]);
    let pi = linear(tape, b, "embed.pair_i", v0);
    let pi = tape.reshape(pi, &[n, 1, cfg.d_z]);
    let pj = linear(tape, b, "embed.pair_j", v0);
    let pj = tape.reshape(pj, &[1, n, cfg.d_z]);
    let pair = tape.add(pi, pj);
    let z0 = tape.add(rp, pair);
    Ok((v0, z0))
}

/// Evaluates the sequence embedding outside of training.
pub fn embed_sequence(
    seq: &[ResidueType],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let mut b = Binder::frozen(params);
    let (v, z) = embed_sequence_on(&mut tape, &mut b, cfg, seq, None)?;
    Ok((tape.value(v).clone(), tape.value(z).clone()))
}

/// Sinusoidal features of the diffusion time over log-spaced frequencies.
pub fn embed_diffusion_time(t: f64, dim: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("diffusion time {t} outside [0, 1]")));
    }
    let half = dim / 2;
    let x = 1000.0 * t;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (x * freq).sin();
        out[half + k] = (x * freq).cos();
    }
    Ok(out)
}

/// Standard interleaved sinusoidal position encoding, one row per index.
pub fn embed_temporal_positions(step_indices: &[usize], dim: usize) -> Tensor {
    let mut out = vec![0.0; step_indices.len() * dim];
    for (r, &p) in step_indices.iter().enumerate() {
        for k in 0..dim {
            let pair = (k / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            out[r * dim + k] = if k % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(&[step_indices.len(), dim], out)
}

/// Node/edge features for every step: sequence embedding plus the projected
/// time encoding. `times` holds one diffusion time per step (0 for clean
/// steps). Returns `V [Ŝ, N, D_V]`, `Z [Ŝ, N, N, D_Z]`.
pub fn step_features(
    tape: &mut Tape,
    b: &mut Binder<'_>,
    cfg: &ModelConfig,
    v0: Var,
    z0: Var,
    times: &[f64],
) -> Result<(Var, Var)> {
    let steps = times.len();
    let n = tape.shape(v0)[0];
    let mut enc = Vec::with_capacity(steps * cfg.time_dim);
    for &t in times {
        enc.extend(embed_diffusion_time(t, cfg.time_dim)?);
    }
    let enc = tape.constant(Tensor::new(&[steps, cfg.time_dim], enc));
    let tv = linear(tape, b, "embed.time_v", enc);
    let tv = tape.reshape(tv, &[steps, 1, cfg.d_v]);
    let tz = linear(tape, b, "embed.time_z", enc);
    let tz = tape.reshape(tz, &[steps, 1, 1, cfg.d_z]);
    let v0 = tape.reshape(v0, &[1, n, cfg.d_v]);
    let z0 = tape.reshape(z0, &[1, n, n, cfg.d_z]);
    let v = tape.add(v0, tv);
    let z = tape.add(z0, tz);
    Ok((v, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protein::parse_sequence;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_v: 128,
            d_z: 64,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn sequence_embedding_shapes_and_lookup() {
        let c = cfg();
        let p = ModelParams::init(&c, &mut ChaCha8Rng::seed_from_u64(0));
        let seq = parse_sequence("ACDAGHKA").unwrap();
        let (v, z) = embed_sequence(&seq, &p, &c).unwrap();
        assert_eq!(v.shape(), &[8, 128]);
        assert_eq!(z.shape(), &[8, 8, 64]);
        assert_eq!(&v.data()[0..128], &v.data()[3 * 128..4 * 128]);
    }

    #[test]
    fn relative_positions_clip() {
        assert_eq!(relpos_bucket(0, 40, 32), relpos_bucket(1, 50, 32));
        assert_eq!(relpos_bucket(50, 1, 32), relpos_bucket(40, 0, 32));
        assert_ne!(relpos_bucket(0, 31, 32), relpos_bucket(0, 32, 32));
        assert_eq!(relpos_bucket(5, 5, 32), 32);
    }

    #[test]
    fn relabeling_residues_permutes_embedding() {
        let c = ModelConfig::tiny();
        let p = ModelParams::init(&c, &mut ChaCha8Rng::seed_from_u64(1));
        let seq = parse_sequence("MKWV").unwrap();
        let perm = [2, 0, 3, 1];
        let seq_p: Vec<_> = perm.iter().map(|&k| seq[k]).collect();
        let (v, _) = embed_sequence(&seq, &p, &c).unwrap();
        let (vp, zp) = embed_sequence(&seq_p, &p, &c).unwrap();
        let d = c.d_v;
        for (r, &k) in perm.iter().enumerate() {
            assert_eq!(&vp.data()[r * d..(r + 1) * d], &v.data()[k * d..(k + 1) * d]);
        }
        // The pairwise part follows the permutation; the relative-position
        // part is recomputed from the new positions.
        let rel = p.get("embed.relpos").unwrap();
        let dz = c.d_z;
        for i in 0..4 {
            for j in 0..4 {
                let bucket = relpos_bucket(i, j, c.r_max);
                let pair: Vec<f64> = (0..dz)
                    .map(|q| zp.data()[(i * 4 + j) * dz + q] - rel.data()[bucket * dz + q])
                    .collect();
                let wi = p.get("embed.pair_i.w").unwrap();
                let wj = p.get("embed.pair_j.w").unwrap();
                for q in 0..dz {
                    let want: f64 = (0..d)
                        .map(|k| {
                            v.data()[perm[i] * d + k] * wi.data()[k * dz + q]
                                + v.data()[perm[j] * d + k] * wj.data()[k * dz + q]
                        })
                        .sum();
                    assert!((pair[q] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn time_encoding_contract() {
        let a = embed_diffusion_time(0.3, 32).unwrap();
        assert_eq!(a, embed_diffusion_time(0.3, 32).unwrap());
        assert_eq!(a.len(), 32);
        let e0 = embed_diffusion_time(0.0, 32).unwrap();
        let e1 = embed_diffusion_time(1.0, 32).unwrap();
        let diff: f64 = e0.iter().zip(&e1).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff > 0.1);
        assert!(embed_diffusion_time(1.5, 32).is_err());
    }

    #[test]
    fn temporal_positions_contract() {
        let pe = embed_temporal_positions(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10], 16);
        assert_eq!(pe.shape(), &[11, 16]);
        for k in 0..16 {
            assert_eq!(pe.data()[k], if k % 2 == 0 { 0.0 } else { 1.0 });
        }
        for a in 0..11 {
            for b in a + 1..11 {
                assert_ne!(&pe.data()[a * 16..(a + 1) * 16], &pe.data()[b * 16..(b + 1) * 16]);
            }
        }
    }

    #[test]
    fn precomputed_embedding_is_used_verbatim() {
        let c = ModelConfig::tiny();
        let p = ModelParams::init(&c, &mut ChaCha8Rng::seed_from_u64(2));
        let seq = parse_sequence("GA").unwrap();
        let emb = PrecomputedEmbedding {
            d_v: c.d_v,
            d_z: c.d_z,
            node: vec![vec![0.5; c.d_v]; 2],
            edge: vec![vec![vec![0.25; c.d_z]; 2]; 2],
        };
        emb.validate().unwrap();
        let mut tape = Tape::new();
        let mut b = Binder::new(&p, |_| true);
        let (v, z) = embed_sequence_on(&mut tape, &mut b, &c, &seq, Some(&emb)).unwrap();
        assert!(!tape.needs_grad(v) && !tape.needs_grad(z));
        assert!(tape.value(v).data().iter().all(|&x| x == 0.5));
        let bad = PrecomputedEmbedding {
            node: vec![vec![0.0; 3]],
            ..emb
        };
        assert!(bad.validate().is_err());
    }
}
