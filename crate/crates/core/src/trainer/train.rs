use std::fs::OpenOptions;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::{Checkpoint, RngState};
use super::config::TrainConfig;
use super::dataset::Dataset;
use super::optim::{clip_grad_norm, cosine_lr, AdamState};
use crate::autodiff::{Tape, Tensor};
use crate::diffusion::{window_loss_on, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::features::PrecomputedEmbedding;
use crate::network::{Binder, ModelParams, ParamGroup, TrunkOptions};

/// Stream offsets keep the per-step draws and the per-epoch shuffles on
/// separate ChaCha streams of the same seed.
const STEP_STREAM: u64 = 1;
const EPOCH_STREAM_BASE: u64 = 1 << 32;

/// Parameter groups updated in each stage. Stage 1 trains everything but
/// motion alignment; stage 2 trains motion alignment alone.
pub fn stage_trainable(stage: u8) -> impl Fn(ParamGroup) -> bool {
    move |g| match stage {
        1 => g != ParamGroup::MotionAlignment,
        _ => g == ParamGroup::MotionAlignment,
    }
}

/// Stage 1 bypasses the temporal residual entirely.
pub fn stage_options(stage: u8) -> TrunkOptions {
    TrunkOptions {
        motion_alignment: stage != 1,
    }
}

/// One JSON-lines log record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub t_mean: f64,
    pub loss: f64,
    pub dsm_rot: f64,
    pub dsm_trans: f64,
    pub torsion: f64,
    pub l_omega: f64,
    pub l_2d: f64,
    pub grad_norm: f64,
}

pub struct Trainer<'d> {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub step: usize,
    data: &'d Dataset,
    sched: DiffusionSchedule,
    rng: ChaCha8Rng,
    embedding: Option<PrecomputedEmbedding>,
}

fn step_rng(seed: u64, stage: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STEP_STREAM + stage as u64);
    rng
}

impl<'d> Trainer<'d> {
    /// Fresh stage-1 run with parameters drawn from the seed.
    pub fn new(config: TrainConfig, data: &'d Dataset) -> Result<Self> {
        config.validate()?;
        if config.stage != 1 {
            return Err(Error::InvalidArgument("a fresh run starts at stage 1".into()));
        }
        let params = ModelParams::init(&config.model, &mut ChaCha8Rng::seed_from_u64(config.seed));
        Self::assemble(config, data, params, None, 0, None)
    }

    /// Stage-2 run on top of a finished stage-1 checkpoint. The model shape
    /// comes from the checkpoint.
    pub fn stage2(mut config: TrainConfig, data: &'d Dataset, from: &Checkpoint) -> Result<Self> {
        if from.stage != 1 {
            return Err(Error::InvalidArgument(format!(
                "stage 2 needs a stage-1 checkpoint, got stage {}",
                from.stage
            )));
        }
        config.stage = 2;
        config.model = from.config.model.clone();
        config.validate()?;
        Self::assemble(config, data, from.params.clone(), None, 0, None)
    }

    /// Continues a run exactly where its checkpoint stopped.
    pub fn resume(ckpt: &Checkpoint, data: &'d Dataset) -> Result<Self> {
        let mut config = ckpt.config.clone();
        config.stage = ckpt.stage;
        Self::assemble(
            config,
            data,
            ckpt.params.clone(),
            Some(ckpt.optimizer.clone()),
            ckpt.step,
            Some(&ckpt.rng),
        )
    }

    fn assemble(
        config: TrainConfig,
        data: &'d Dataset,
        params: ModelParams,
        optimizer: Option<AdamState>,
        step: usize,
        rng: Option<&RngState>,
    ) -> Result<Self> {
        if data.spec().s_mot != config.model.s_mot || data.spec().s != config.s {
            return Err(Error::InvalidArgument(format!(
                "dataset windows ({} motion, {} targets) do not match the config ({}, {})",
                data.spec().s_mot,
                data.spec().s,
                config.model.s_mot,
                config.s
            )));
        }
        let reference = ModelParams::init(&config.model, &mut ChaCha8Rng::seed_from_u64(0));
        let same_layout = reference.len() == params.len()
            && reference
                .entries()
                .iter()
                .zip(params.entries())
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape());
        if !same_layout {
            return Err(Error::Shape("parameters do not match the model config".into()));
        }
        let optimizer = optimizer.unwrap_or_else(|| AdamState::new(&params));
        let rng = match rng {
            Some(state) => state.restore(),
            None => step_rng(config.seed, config.stage),
        };
        Ok(Trainer {
            sched: config.schedule()?,
            config,
            params,
            optimizer,
            step,
            data,
            rng,
            embedding: None,
        })
    }

    /// Uses fixed external embeddings instead of the trainable embedder.
    pub fn with_embedding(mut self, embedding: PrecomputedEmbedding) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.config.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        let full = self.config.epochs * self.steps_per_epoch();
        self.config.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn epoch(&self) -> usize {
        self.step / self.steps_per_epoch()
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.sched
    }

    /// Windows of the batch at `step`: a slice of that epoch's seeded shuffle.
    fn batch_indices(&self, step: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let (epoch, j) = (step / spe, step % spe);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(EPOCH_STREAM_BASE + epoch as u64);
        let mut perm: Vec<usize> = (0..self.data.len()).collect();
        perm.shuffle(&mut rng);
        let bs = self.config.batch_size;
        perm[j * bs..((j + 1) * bs).min(perm.len())].to_vec()
    }

    fn diverged(&self, detail: String) -> Error {
        Error::TrainingDivergence {
            step: self.step,
            detail,
        }
    }

    /// One optimizer step on one batch. Every window gets its own `t` and its
    /// own tape; gradients are averaged in batch order.
    pub fn step_once(&mut self) -> Result<StepRecord> {
        let stage = self.config.stage;
        let lr = cosine_lr(self.config.learning_rate, self.step, self.total_steps());
        let batch = self.batch_indices(self.step);
        let inv = 1.0 / batch.len() as f64;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.params.len()];
        let mut rec = StepRecord {
            step: self.step,
            epoch: self.epoch(),
            stage,
            lr,
            t_mean: 0.0,
            loss: 0.0,
            dsm_rot: 0.0,
            dsm_trans: 0.0,
            torsion: 0.0,
            l_omega: 0.0,
            l_2d: 0.0,
            grad_norm: 0.0,
        };
        for &k in &batch {
            let window = self.data.prepared(k)?;
            let t = self.rng.random_range(self.config.t_min..1.0);
            let mut tape = Tape::new();
            let mut binder = Binder::new(&self.params, stage_trainable(stage));
            let wl = window_loss_on(
                &mut tape,
                &mut binder,
                &self.config.model,
                &self.sched,
                &window,
                t,
                stage_options(stage),
                self.embedding.as_ref(),
                &mut self.rng,
            )
            .map_err(|e| self.diverged(format!("window {k} at t = {t}: {e}")))?;
            let r = wl.report;
            if !r.total.is_finite() {
                return Err(self.diverged(format!("window {k} at t = {t}: loss {:?}", r)));
            }
            rec.t_mean += t * inv;
            rec.loss += r.total * inv;
            rec.dsm_rot += r.dsm_rot * inv;
            rec.dsm_trans += r.dsm_trans * inv;
            rec.torsion += r.torsion * inv;
            rec.l_omega += r.l_omega * inv;
            rec.l_2d += r.l_2d * inv;
            let mut g = tape.backward(wl.total);
            for (acc, gi) in grads.iter_mut().zip(binder.gradients(&mut g)) {
                let Some(mut gi) = gi else { continue };
                gi.scale_in_place(inv);
                match acc {
                    Some(a) => a.add_assign(&gi),
                    None => *acc = Some(gi),
                }
            }
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(self.diverged("non-finite gradient".into()));
        }
        rec.grad_norm = clip_grad_norm(&mut grads, self.config.grad_clip);
        self.optimizer.step(&mut self.params, &grads, lr);
        if !self.params.is_finite() {
            return Err(self.diverged("non-finite parameters after update".into()));
        }
        self.step += 1;
        Ok(rec)
    }

    /// Trains until `until` steps (capped at the run length), writing one
    /// JSON line per step to `log` if given.
    pub fn run(&mut self, until: usize, mut log: Option<&mut dyn Write>) -> Result<Vec<StepRecord>> {
        let end = until.min(self.total_steps());
        let mut out = Vec::with_capacity(end.saturating_sub(self.step));
        while self.step < end {
            let rec = self.step_once()?;
            if let Some(w) = log.as_mut() {
                let line = serde_json::to_string(&rec)?;
                writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
            }
            log::info!("step {} loss {:.5}", rec.step, rec.loss);
            out.push(rec);
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            config: self.config.clone(),
            epoch: self.epoch(),
            step: self.step,
            stage: self.config.stage,
            rng: RngState::capture(&self.rng),
        }
    }
}

fn run_to_end(trainer: &mut Trainer<'_>) -> Result<()> {
    match trainer.config.log.clone() {
        Some(path) => {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            trainer.run(usize::MAX, Some(&mut f))?;
        }
        None => {
            trainer.run(usize::MAX, None)?;
        }
    }
    Ok(())
}

/// Runs stage 1 to completion.
pub fn train_stage1(config: TrainConfig, data: &Dataset) -> Result<Checkpoint> {
    let mut t = Trainer::new(config, data)?;
    run_to_end(&mut t)?;
    Ok(t.checkpoint())
}

/// Runs stage 2 to completion from a stage-1 checkpoint.
pub fn train_stage2(config: TrainConfig, data: &Dataset, from: &Checkpoint) -> Result<Checkpoint> {
    let mut t = Trainer::stage2(config, data, from)?;
    run_to_end(&mut t)?;
    Ok(t.checkpoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_trajectory, SynthKind, WindowSpec};
    use crate::network::ModelConfig;

    fn tiny_config(s: usize) -> TrainConfig {
        TrainConfig {
            model: ModelConfig::tiny(),
            batch_size: 2,
            learning_rate: 1e-2,
            epochs: 1000,
            s,
            weight_samples: 2000,
            weight_grid: 8,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn hinge_data(n: usize, l: usize, s: usize) -> Dataset {
        let traj = synth_trajectory(SynthKind::Hinge, n, l, 1.0, 4).unwrap();
        Dataset::single("hinge", traj, WindowSpec::new(s)).unwrap()
    }

    #[test]
    fn overfits_a_single_window() {
        let data = hinge_data(6, 5, 2);
        assert_eq!(data.len(), 1);
        let mean = |r: &[StepRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
        for seed in 1..=3 {
            let cfg = TrainConfig {
                batch_size: 1,
                max_steps: Some(500),
                seed,
                ..tiny_config(2)
            };
            let mut t = Trainer::new(cfg, &data).unwrap();
            let recs = t.run(usize::MAX, None).unwrap();
            assert_eq!(recs.len(), 500);
            let (start, end) = (mean(&recs[..10]), mean(&recs[490..]));
            assert!(start >= 10.0 * end, "seed {seed}: start {start} end {end}");
        }
    }

    #[test]
    fn fixed_seed_reproduces_losses() {
        let data = hinge_data(6, 8, 2);
        let run = || {
            let mut t = Trainer::new(tiny_config(2), &data).unwrap();
            t.run(10, None).unwrap()
        };
        let (a, b) = (run(), run());
        for (x, y) in a.iter().zip(&b) {
            assert!((x.loss - y.loss).abs() <= 1e-6);
        }
    }

    #[test]
    fn stage_one_leaves_motion_alignment_untouched() {
        let data = hinge_data(6, 8, 2);
        let mut t = Trainer::new(tiny_config(2), &data).unwrap();
        let ma = |p: &ModelParams| p.checksum(|g| g == ParamGroup::MotionAlignment);
        let rest = |p: &ModelParams| p.checksum(|g| g != ParamGroup::MotionAlignment);
        let (ma0, rest0) = (ma(&t.params), rest(&t.params));
        t.run(5, None).unwrap();
        assert_eq!(ma(&t.params), ma0);
        assert_ne!(rest(&t.params), rest0);

        let ck = t.checkpoint();
        let mut t2 = Trainer::stage2(tiny_config(2), &data, &ck).unwrap();
        t2.run(5, None).unwrap();
        assert_eq!(rest(&t2.params), rest(&ck.params));
        assert_ne!(ma(&t2.params), ma(&ck.params));
        assert!(Trainer::stage2(tiny_config(2), &data, &t2.checkpoint()).is_err());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = hinge_data(6, 9, 2);
        let cfg = tiny_config(2);
        let mut straight = Trainer::new(cfg.clone(), &data).unwrap();
        let full = straight.run(8, None).unwrap();

        let mut first = Trainer::new(cfg, &data).unwrap();
        first.run(3, None).unwrap();
        let bytes = first.checkpoint().to_bytes().unwrap();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        let mut resumed = Trainer::resume(&ck, &data).unwrap();
        let rest = resumed.run(8, None).unwrap();
        assert_eq!(rest.len(), 5);
        for (a, b) in full[3..].iter().zip(&rest) {
            assert_eq!(a.step, b.step);
            assert!((a.loss - b.loss).abs() <= 1e-5);
        }
        assert_eq!(resumed.params, straight.params);
    }

    #[test]
    fn log_lines_are_json_records() {
        let data = hinge_data(6, 8, 2);
        let mut t = Trainer::new(tiny_config(2), &data).unwrap();
        let mut buf: Vec<u8> = Vec::new();
        t.run(2, Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> =
            text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1]["step"], 1);
        for key in ["t_mean", "loss", "dsm_rot", "dsm_trans", "torsion", "lr"] {
            assert!(lines[0][key].is_number(), "{key}");
        }
    }

    #[test]
    fn rejects_mismatched_setups() {
        let data = hinge_data(6, 8, 2);
        assert!(Trainer::new(tiny_config(3), &data).is_err());
        let stage2 = TrainConfig { stage: 2, ..tiny_config(2) };
        assert!(Trainer::new(stage2, &data).is_err());
    }

    #[test]
    fn epochs_cover_every_window_once() {
        let data = hinge_data(6, 12, 2);
        let t = Trainer::new(tiny_config(2), &data).unwrap();
        let spe = t.steps_per_epoch();
        let mut seen: Vec<usize> = (0..spe).flat_map(|s| t.batch_indices(s)).collect();
        seen.sort();
        assert_eq!(seen, (0..data.len()).collect::<Vec<_>>());
        assert_ne!(t.batch_indices(0), t.batch_indices(spe));
    }
}
