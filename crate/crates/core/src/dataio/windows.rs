use crate::error::{Error, Result};
use crate::protein::{ProteinState, Trajectory};

/// Shape of a training window: `s_mot` motion states, `s_ref` reference
/// states and `s` targets, taken at offsets `0, stride, 2·stride, …`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub s_mot: usize,
    pub s_ref: usize,
    pub s: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(s: usize) -> Self {
        WindowSpec {
            s_mot: 2,
            s_ref: 1,
            s,
            stride: 1,
        }
    }

    pub fn span(&self) -> usize {
        self.s_mot + self.s_ref + self.s
    }

    fn validate(&self) -> Result<()> {
        if self.s_ref != 1 {
            return Err(Error::InvalidArgument(format!(
                "exactly one reference state is supported, got {}",
                self.s_ref
            )));
        }
        if self.s == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument("target count and stride must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct WindowSample {
    pub motion: Vec<ProteinState>,
    pub reference: ProteinState,
    pub targets: Vec<ProteinState>,
    pub protein_id: String,
    pub window_start: usize,
}

#[derive(Clone, Debug, Default)]
pub struct WindowSet {
    pub windows: Vec<WindowSample>,
    /// Set when the trajectory was shorter than one window.
    pub too_short: bool,
}

/// Start offsets of every window that fits in a trajectory of `len` states.
pub fn window_starts(len: usize, spec: &WindowSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    if len < spec.span() {
        return Ok(Vec::new());
    }
    Ok((0..=len - spec.span()).step_by(spec.stride).collect())
}

pub fn window_at(
    traj: &Trajectory,
    protein_id: &str,
    start: usize,
    spec: &WindowSpec,
) -> Result<WindowSample> {
    spec.validate()?;
    if start + spec.span() > traj.len() {
        return Err(Error::InvalidArgument(format!(
            "window at {start} of span {} exceeds {} states",
            spec.span(),
            traj.len()
        )));
    }
    let r = start + spec.s_mot;
    Ok(WindowSample {
        motion: traj.states[start..r].to_vec(),
        reference: traj.states[r].clone(),
        targets: traj.states[r + 1..r + 1 + spec.s].to_vec(),
        protein_id: protein_id.to_string(),
        window_start: start,
    })
}

pub fn make_windows(traj: &Trajectory, protein_id: &str, spec: &WindowSpec) -> Result<WindowSet> {
    let starts = window_starts(traj.len(), spec)?;
    if starts.is_empty() {
        log::warn!(
            "trajectory '{protein_id}' has {} states, fewer than one window of {}",
            traj.len(),
            spec.span()
        );
        return Ok(WindowSet {
            windows: Vec::new(),
            too_short: true,
        });
    }
    let windows = starts
        .into_iter()
        .map(|k| window_at(traj, protein_id, k, spec))
        .collect::<Result<_>>()?;
    Ok(WindowSet {
        windows,
        too_short: false,
    })
}
