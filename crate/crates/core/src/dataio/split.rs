use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protein::Trajectory;

pub const S2L_TRAIN_FRACTION: f64 = 0.9;
const S2L_MIN_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    S2L,
    O2O,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_fraction: Option<f64>,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// First `⌊0.9·L⌋` states for training, the rest for evaluation.
pub fn split_s2l(traj: &Trajectory) -> Result<(Trajectory, Trajectory)> {
    let len = traj.len();
    if len < S2L_MIN_LEN {
        return Err(Error::InvalidArgument(format!(
            "trajectory of {len} states is shorter than {S2L_MIN_LEN}"
        )));
    }
    let cut = (S2L_TRAIN_FRACTION * len as f64 + 1e-9).floor() as usize;
    Ok((traj.slice(0, cut), traj.slice(cut, len)))
}

/// Seeded partition of protein identities into train, validation and test.
/// Each partition receives at least one protein.
pub fn split_o2o(ids: &[String], fractions: [f64; 3], seed: u64) -> Result<SplitSpec> {
    let n = ids.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "{n} proteins cannot fill three partitions"
        )));
    }
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    if ids.iter().collect::<HashSet<_>>().len() != n {
        return Err(Error::InvalidArgument("protein ids must be unique".into()));
    }
    let mut counts = [0usize; 3];
    for k in 0..2 {
        counts[k] = ((fractions[k] * n as f64 + 1e-9).floor() as usize).max(1);
    }
    counts[2] = n.saturating_sub(counts[0] + counts[1]);
    while counts[2] == 0 || counts[0] + counts[1] + counts[2] > n {
        let big = if counts[0] >= counts[1] { 0 } else { 1 };
        counts[big] -= 1;
        counts[2] = n.saturating_sub(counts[0] + counts[1]);
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(counts[0] + counts[1]);
    let validation = shuffled.split_off(counts[0]);
    Ok(SplitSpec {
        mode: SplitMode::O2O,
        train_fraction: None,
        train: shuffled,
        validation,
        test,
        seed,
    })
}
