//! Small fixtures shared by unit tests.

use rand::Rng;

use crate::geom::{exp_so3, random_unit_vector, Rigid};
use crate::protein::{build_state, parse_sequence, ProteinState, RigidGroupTemplates};

/// Idealized chain with torsions jittered around a helix.
pub fn peptide(seq: &str, rng: &mut impl Rng) -> ProteinState {
    let seq = parse_sequence(seq).unwrap();
    let n = seq.len();
    let mut jitter = |base: f64| base + (rng.random::<f64>() - 0.5) * 0.4;
    let phi: Vec<f64> = (0..n).map(|_| jitter(-1.1)).collect();
    let psi: Vec<f64> = (0..n).map(|_| jitter(-0.8)).collect();
    let omega: Vec<f64> = (0..n).map(|_| jitter(std::f64::consts::PI)).collect();
    let chi: Vec<[f64; 4]> = (0..n).map(|_| [jitter(-1.0), jitter(3.0), jitter(1.0), jitter(0.0)]).collect();
    build_state(&seq, &phi, &psi, &omega, &chi, RigidGroupTemplates::standard()).unwrap()
}

/// Rigidly jitters every frame of a state.
pub fn jittered(state: &ProteinState, angle: f64, shift: f64, rng: &mut impl Rng) -> ProteinState {
    let mut out = state.clone();
    for f in out.frames.iter_mut() {
        let dr = exp_so3(&(random_unit_vector(rng) * angle * rng.random::<f64>()));
        *f = Rigid::new(f.rot.compose(&dr), f.trans + random_unit_vector(rng) * shift);
    }
    out
}
