use super::config::{DataSplit, TrainConfig};
use crate::dataio::{load_trajectory, split_s2l, window_at, window_starts, WindowSample, WindowSpec};
use crate::diffusion::PreparedWindow;
use crate::error::{Error, Result};
use crate::protein::{RigidGroupTemplates, Trajectory};

/// Training windows over one or more trajectories, addressed by a flat index.
#[derive(Clone, Debug)]
pub struct Dataset {
    entries: Vec<(String, Trajectory)>,
    spec: WindowSpec,
    index: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn new(entries: Vec<(String, Trajectory)>, spec: WindowSpec) -> Result<Self> {
        let mut index = Vec::new();
        for (k, (id, traj)) in entries.iter().enumerate() {
            let starts = window_starts(traj.len(), &spec)?;
            if starts.is_empty() {
                log::warn!("trajectory '{id}' is shorter than one window; skipped");
            }
            index.extend(starts.into_iter().map(|s| (k, s)));
        }
        if index.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no trajectory holds a window of {} states",
                spec.span()
            )));
        }
        Ok(Dataset { entries, spec, index })
    }

    /// Loads every trajectory named in `cfg.data`, keeps the training part
    /// under the configured split and windows it with the config's shape.
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        if cfg.data.is_empty() {
            return Err(Error::InvalidArgument("config lists no data files".into()));
        }
        let mut entries = Vec::with_capacity(cfg.data.len());
        for path in &cfg.data {
            let traj = load_trajectory(path)?;
            let traj = match cfg.split {
                DataSplit::S2l => split_s2l(&traj)?.0,
                DataSplit::All => traj,
            };
            let id = path
                .file_stem()
                .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
            entries.push((id, traj));
        }
        Self::new(entries, Self::spec_for(cfg))
    }

    /// Window shape matching a config's model and target count.
    pub fn spec_for(cfg: &TrainConfig) -> WindowSpec {
        WindowSpec {
            s_mot: cfg.model.s_mot,
            s_ref: cfg.model.s_ref,
            s: cfg.s,
            stride: cfg.stride,
        }
    }

    pub fn single(id: &str, traj: Trajectory, spec: WindowSpec) -> Result<Self> {
        Self::new(vec![(id.to_string(), traj)], spec)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn trajectories(&self) -> &[(String, Trajectory)] {
        &self.entries
    }

    pub fn window(&self, k: usize) -> Result<WindowSample> {
        let &(t, start) = self
            .index
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("window {k} out of range")))?;
        let (id, traj) = &self.entries[t];
        window_at(traj, id, start, &self.spec)
    }

    pub fn prepared(&self, k: usize) -> Result<PreparedWindow> {
        let w = self.window(k)?;
        PreparedWindow::new(&w.motion, &w.reference, &w.targets, RigidGroupTemplates::standard())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_trajectory, SynthKind};

    #[test]
    fn indexes_windows_across_trajectories() {
        let a = synth_trajectory(SynthKind::Hinge, 5, 10, 1.0, 1).unwrap();
        let b = synth_trajectory(SynthKind::Hinge, 6, 4, 1.0, 2).unwrap();
        let d = Dataset::new(
            vec![("a".into(), a), ("b".into(), b)],
            WindowSpec::new(4),
        )
        .unwrap();
        assert_eq!(d.len(), 4);
        let w = d.window(3).unwrap();
        assert_eq!((w.protein_id.as_str(), w.window_start), ("a", 3));
        assert_eq!(d.prepared(0).unwrap().s(), 4);
        assert!(d.window(4).is_err());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let b = synth_trajectory(SynthKind::Hinge, 6, 4, 1.0, 2).unwrap();
        assert!(Dataset::single("b", b, WindowSpec::new(8)).is_err());
    }

    #[test]
    fn from_config_keeps_the_training_split() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        let traj = synth_trajectory(SynthKind::Hinge, 5, 30, 1.0, 4).unwrap();
        crate::dataio::save_trajectory(&traj, &path).unwrap();
        let mut cfg = TrainConfig { s: 4, data: vec![path], ..TrainConfig::default() };
        // 27 training states leave 27 - 7 + 1 windows.
        let d = Dataset::from_config(&cfg).unwrap();
        assert_eq!(d.len(), 21);
        assert_eq!(d.trajectories()[0].0, "h");
        cfg.split = DataSplit::All;
        assert_eq!(Dataset::from_config(&cfg).unwrap().len(), 24);
        cfg.data.clear();
        assert!(Dataset::from_config(&cfg).is_err());
    }
}
