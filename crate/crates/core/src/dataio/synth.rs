use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protein::{build_state, ProteinState, ResidueType, RigidGroupTemplates, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Hinge,
    Breathe,
    TwoState,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinge" => Ok(SynthKind::Hinge),
            "breathe" => Ok(SynthKind::Breathe),
            "two_state" | "two-state" => Ok(SynthKind::TwoState),
            _ => Err(Error::InvalidArgument(format!("unknown synthetic kind '{s}'"))),
        }
    }
}

/// Generator settings. `amplitude` is the hinge angle (rad) for `Hinge`, the
/// peak blend toward an extended linker for `Breathe`, and the pivot offset
/// (rad) of the second conformation for `TwoState`. `noise` is the half-width
/// of uniform backbone torsion noise (rad) added to every state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub n: usize,
    pub l: usize,
    pub dt: f64,
    pub seed: u64,
    pub amplitude: f64,
    pub period: f64,
    pub noise: f64,
    pub switch_prob: f64,
}

impl SynthConfig {
    pub fn new(kind: SynthKind, n: usize, l: usize, dt: f64, seed: u64) -> Self {
        let (amplitude, noise) = match kind {
            SynthKind::Hinge => (0.5, 0.0),
            SynthKind::Breathe => (1.0, 0.0),
            SynthKind::TwoState => (1.2, 0.01),
        };
        SynthConfig {
            kind,
            n,
            l,
            dt,
            seed,
            amplitude,
            period: 16.0,
            noise,
            switch_prob: 0.15,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub trajectory: Trajectory,
    /// Noise-free conformations the states were drawn around: the base
    /// chain, plus the second conformation for `TwoState`.
    pub generators: Vec<ProteinState>,
    /// Index into `generators` for each state (`TwoState` only).
    pub labels: Vec<usize>,
}

const EXTENDED_PHI: f64 = -2.4;
const EXTENDED_PSI: f64 = 2.4;

#[derive(Clone)]
struct Backbone {
    phi: Vec<f64>,
    psi: Vec<f64>,
    omega: Vec<f64>,
    chi: Vec<[f64; 4]>,
}

impl Backbone {
    fn build(&self, seq: &[ResidueType]) -> Result<ProteinState> {
        build_state(
            seq,
            &self.phi,
            &self.psi,
            &self.omega,
            &self.chi,
            RigidGroupTemplates::standard(),
        )
    }

    fn jitter(&mut self, noise: f64, rng: &mut impl Rng) {
        if noise <= 0.0 {
            return;
        }
        for i in 0..self.phi.len() {
            if i > 0 {
                self.phi[i] += rng.random_range(-noise..=noise);
            }
            self.psi[i] += rng.random_range(-noise..=noise);
        }
    }
}

pub fn synth_trajectory(kind: SynthKind, n: usize, l: usize, dt: f64, seed: u64) -> Result<Trajectory> {
    Ok(synthesize(&SynthConfig::new(kind, n, l, dt, seed))?.trajectory)
}

/// Deterministic idealized peptide trajectory. A helix-like chain is drawn
/// from the seed and then moved by torsion changes only, so bond geometry
/// stays ideal. The pivot is residue `n / 2`.
pub fn synthesize(cfg: &SynthConfig) -> Result<Synthetic> {
    if cfg.n < 4 || cfg.l < 4 {
        return Err(Error::InvalidArgument(format!(
            "synthetic trajectories need n >= 4 and l >= 4, got n = {}, l = {}",
            cfg.n, cfg.l
        )));
    }
    if !(cfg.dt > 0.0) || !(cfg.period > 0.0) || !(0.0..=1.0).contains(&cfg.switch_prob) {
        return Err(Error::InvalidArgument("dt, period and switch_prob out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;
    let seq: Vec<ResidueType> = (0..n)
        .map(|_| ResidueType::ALL[rng.random_range(0..ResidueType::ALL.len())])
        .collect();
    let base = Backbone {
        phi: (0..n).map(|_| -1.05 + rng.random_range(-0.15..0.15)).collect(),
        psi: (0..n).map(|_| -0.75 + rng.random_range(-0.15..0.15)).collect(),
        omega: vec![PI; n],
        chi: (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-PI..PI))).collect(),
    };
    let phase = rng.random_range(0.0..2.0 * PI);
    let pivot = n / 2;
    let wave = |k: usize| 2.0 * PI * k as f64 / cfg.period + phase;

    let mut generators = vec![base.build(&seq)?];
    let mut labels = Vec::new();
    let mut second = base.clone();
    if cfg.kind == SynthKind::TwoState {
        second.psi[pivot] += cfg.amplitude;
        second.phi[pivot + 1] -= 0.6 * cfg.amplitude;
        generators.push(second.build(&seq)?);
    }
    let mut label = rng.random_range(0..2usize);
    let mut states = Vec::with_capacity(cfg.l);
    for k in 0..cfg.l {
        let mut bb = match cfg.kind {
            SynthKind::Hinge => {
                let mut bb = base.clone();
                bb.psi[pivot] += cfg.amplitude * wave(k).sin();
                bb
            }
            SynthKind::Breathe => {
                let mut bb = base.clone();
                let blend = cfg.amplitude * 0.5 * (1.0 - wave(k).cos());
                for i in pivot - 1..=pivot + 1 {
                    bb.phi[i] += blend * (EXTENDED_PHI - bb.phi[i]);
                    bb.psi[i] += blend * (EXTENDED_PSI - bb.psi[i]);
                }
                bb
            }
            SynthKind::TwoState => {
                if k > 0 && rng.random::<f64>() < cfg.switch_prob {
                    label = 1 - label;
                }
                labels.push(label);
                if label == 0 { base.clone() } else { second.clone() }
            }
        };
        bb.jitter(cfg.noise, &mut rng);
        let mut state = bb.build(&seq)?;
        state.step_time = Some(k as f64 * cfg.dt);
        states.push(state);
    }
    Ok(Synthetic {
        trajectory: Trajectory::new(states, cfg.dt)?,
        generators,
        labels,
    })
}
