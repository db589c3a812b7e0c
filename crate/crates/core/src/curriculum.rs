//! Three-phase training schedule and the optimization loop.
//!
//! Phase 1 trains segmentation only. Phase 2 adds the alignment and heatmap
//! losses after a warm-up, ramping their weights linearly to the targets.
//! Phase 3 drops both auxiliaries and attaches the refiner with `γ = 0`.
//! In unscheduled mode everything is active from the first epoch.

use std::collections::BTreeMap;
use std::fmt;

use lesionseg_autodiff::{Real, Tape, Tensor};

use crate::config::{RunConfig, ScheduleConfig, ScheduleMode};
use crate::data::Case;
use crate::error::{Error, Result};
use crate::metrics::{self, CaseMetrics};
use crate::model::Model;
use crate::objectives::{self, LossBreakdown};
use crate::params::{Checkpoint, ParamStore};
use crate::refiner;
use crate::rng;
use crate::sampling::{Batch, Sampler};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    SegOnly,
    SemanticTransfer,
    AuxOffRefine,
    /// Every component active from epoch 0, no warm-up or ramp.
    Unscheduled,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::SegOnly => "seg-only",
            Phase::SemanticTransfer => "transfer",
            Phase::AuxOffRefine => "refine",
            Phase::Unscheduled => "unscheduled",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseState {
    pub phase: Phase,
    pub epoch: usize,
    pub lambda_align: Real,
    pub lambda_heat: Real,
    pub refiner_enabled: bool,
}

/// Schedule state at `epoch`.
pub fn phase_at(epoch: usize, cfg: &ScheduleConfig) -> Result<PhaseState> {
    if epoch >= cfg.total_epochs {
        return Err(Error::Invalid(format!(
            "epoch {epoch} outside 0..{}",
            cfg.total_epochs
        )));
    }
    let gate = |on: bool, target: f64| if on { target } else { 0.0 };
    let (phase, frac, refiner_enabled) = match cfg.mode {
        ScheduleMode::Unscheduled => (Phase::Unscheduled, 1.0, cfg.use_refiner),
        ScheduleMode::Phased if epoch < cfg.transfer_start => (Phase::SegOnly, 0.0, false),
        ScheduleMode::Phased if epoch < cfg.refine_start => {
            let into = epoch as f64 - (cfg.transfer_start + cfg.warmup_epochs) as f64;
            let frac = if cfg.ramp_epochs == 0 {
                if into >= 0.0 { 1.0 } else { 0.0 }
            } else {
                (into / cfg.ramp_epochs as f64).clamp(0.0, 1.0)
            };
            (Phase::SemanticTransfer, frac, false)
        }
        ScheduleMode::Phased => (Phase::AuxOffRefine, 0.0, cfg.use_refiner),
    };
    Ok(PhaseState {
        phase,
        epoch,
        lambda_align: (gate(cfg.use_align, cfg.lambda_align) * frac) as Real,
        lambda_heat: (gate(cfg.use_heat, cfg.lambda_heat) * frac) as Real,
        refiner_enabled,
    })
}

/// Polynomial decay `lr0·(1 − epoch/total)^power`, one global curve across
/// all phases.
pub fn learning_rate(epoch: usize, cfg: &ScheduleConfig) -> Real {
    let frac = 1.0 - epoch as f64 / cfg.total_epochs as f64;
    (cfg.lr * frac.powf(cfg.poly_power)) as Real
}

/// SGD with Nesterov momentum: `v ← μv + g`, `p ← p − lr·(g + μv)`.
pub struct Sgd {
    momentum: Real,
    weight_decay: Real,
    grad_clip: Real,
    velocity: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(cfg: &ScheduleConfig) -> Self {
        Self {
            momentum: cfg.momentum as Real,
            weight_decay: cfg.weight_decay as Real,
            grad_clip: cfg.grad_clip as Real,
            velocity: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, like: &Tensor) -> Result<()> {
        self.velocity
            .entry(name.to_string())
            .or_insert(Tensor::zeros(like.shape().to_vec())?);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.velocity.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.velocity.keys().map(String::as_str)
    }

    /// Applies one update to every registered parameter. Missing gradients
    /// count as zero. Returns the pre-clip global gradient norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: Real) -> Result<Real> {
        let norm = self
            .velocity
            .keys()
            .filter_map(|k| grads.get(k))
            .map(|g| g.data().iter().map(|v| v * v).sum::<Real>())
            .sum::<Real>()
            .sqrt();
        let clip = if self.grad_clip > 0.0 && norm > self.grad_clip {
            self.grad_clip / norm
        } else {
            1.0
        };
        for (name, v) in &mut self.velocity {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Invalid(format!("optimizer parameter `{name}` is missing")))?;
            let g = grads.get(name);
            let (pd, vd) = (p.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.map_or(0.0, |g| g.data()[i] * clip) + self.weight_decay * pd[i];
                vd[i] = self.momentum * vd[i] + gi;
                pd[i] -= lr * (gi + self.momentum * vd[i]);
            }
        }
        Ok(norm)
    }
}

/// Mean losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    pub lambda_align: Real,
    pub lambda_heat: Real,
    pub seg: Real,
    pub align: Real,
    pub heat: Real,
    pub total: Real,
    pub lr: Real,
    /// Parameter tensors the optimizer updated this epoch (not in the CSV).
    pub optimized: usize,
    /// Whether any refiner tensor was among them (not in the CSV).
    pub refiner_optimized: bool,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,phase,lambda_align,lambda_heat,seg,align,heat,total,lr";

impl EpochLog {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch, self.phase, self.lambda_align, self.lambda_heat, self.seg, self.align, self.heat, self.total, self.lr
        )
    }
}

pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{EPOCH_LOG_HEADER}\n");
    for e in log {
        s.push_str(&e.csv_line());
        s.push('\n');
    }
    s
}

/// Which part of the schedule to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PhaseLimit {
    #[default]
    All,
    /// Stop at the end of phase 1.
    SegOnly,
}

/// Loss of one batch under `state`, with gradients left on the tape.
pub struct StepLoss {
    pub tape: Tape,
    pub bound: crate::params::Bound,
    pub breakdown: LossBreakdown,
}

/// Forward pass and composite loss for one batch.
pub fn batch_loss(model: &Model, batch: &Batch, state: &PhaseState, align_eps: Real) -> Result<StepLoss> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let fw = model.forward(&mut tape, &bound, &batch.inputs)?;
    let target = model.config.model.bottleneck_extents();
    let small = objectives::downsample_mask_batch(&batch.mask, target)?;
    let seg = objectives::seg_loss(&mut tape, fw.logits(), &batch.mask)?;
    let align = objectives::align_loss(&mut tape, fw.heatmap, &small, align_eps)?;
    let heat = objectives::heat_loss(&mut tape, fw.heatmap, &small)?;
    let (total, breakdown) = objectives::composite(&mut tape, seg, align, heat, state.lambda_align, state.lambda_heat)?;
    if breakdown.is_finite() {
        tape.backward(total)?;
    }
    Ok(StepLoss { tape, bound, breakdown })
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Per-case metrics of the final model on its training cases.
    pub train_metrics: Vec<CaseMetrics>,
}

impl TrainOutcome {
    pub fn train_dice(&self) -> Real {
        metrics::mean_dice(&self.train_metrics)
    }
}

/// Runs the schedule on `cases`. `on_checkpoint` receives a label
/// (`phase1`, `phase2`, `final`) and the checkpoint at each boundary.
pub fn train(
    config: &RunConfig,
    cases: &[Case],
    limit: PhaseLimit,
    mut on_checkpoint: impl FnMut(&str, &Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let cfg = &config.schedule;
    let mut model = Model::new(config)?;
    let mut opt = Sgd::new(cfg);
    for (name, t) in model.params.iter() {
        opt.register(name, t)?;
    }
    let mut sampler = Sampler::new(
        cases,
        config.model.input_extents,
        cfg.lesion_sample_prob,
        rng::stream(config.seed, rng::STREAM_SAMPLER, 0),
    )?;
    let last_epoch = match (limit, cfg.mode) {
        (PhaseLimit::SegOnly, ScheduleMode::Phased) => cfg.transfer_start,
        _ => cfg.total_epochs,
    };

    let mut log = Vec::with_capacity(last_epoch);
    for epoch in 0..last_epoch {
        let state = phase_at(epoch, cfg)?;
        if state.refiner_enabled && !model.refiner_attached() {
            model.attach_refiner()?;
            for (name, t) in model.params.iter().filter(|(n, _)| refiner::is_refiner_param(n)) {
                opt.register(name, t)?;
            }
            log::info!("epoch {epoch}: refiner attached");
        }
        let lr = learning_rate(epoch, cfg);
        let mut sums = [0.0 as Real; 4];
        for step in 0..cfg.steps_per_epoch {
            let batch = sampler.next_batch(cfg.batch_size)?;
            let loss = batch_loss(&model, &batch, &state, cfg.align_eps as Real)?;
            let b = loss.breakdown;
            if !b.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, breakdown: b });
            }
            let grads = loss.bound.grads(&loss.tape);
            drop(loss);
            opt.step(&mut model.params, &grads, lr)?;
            for (s, v) in sums.iter_mut().zip([b.seg, b.align, b.heat, b.total]) {
                *s += v;
            }
        }
        let n = cfg.steps_per_epoch as Real;
        let entry = EpochLog {
            epoch,
            phase: state.phase,
            lambda_align: state.lambda_align,
            lambda_heat: state.lambda_heat,
            seg: sums[0] / n,
            align: sums[1] / n,
            heat: sums[2] / n,
            total: sums[3] / n,
            lr,
            optimized: opt.names().count(),
            refiner_optimized: opt.names().any(refiner::is_refiner_param),
        };
        log::info!("{}", entry.csv_line());
        log.push(entry);

        if cfg.mode == ScheduleMode::Phased && epoch + 1 < last_epoch {
            let label = if epoch + 1 == cfg.transfer_start {
                Some("phase1")
            } else if epoch + 1 == cfg.refine_start {
                Some("phase2")
            } else {
                None
            };
            if let Some(label) = label {
                on_checkpoint(label, &model.to_checkpoint(state_text(&state, epoch + 1)))?;
            }
        }
    }
    let final_state = phase_at(last_epoch - 1, cfg)?;
    on_checkpoint("final", &model.to_checkpoint(state_text(&final_state, last_epoch)))?;

    let train_metrics = metrics::evaluate_cases(&model, cases, &config.metrics)?;
    Ok(TrainOutcome {
        model,
        log,
        train_metrics,
    })
}

fn state_text(state: &PhaseState, epochs_done: usize) -> String {
    format!(
        "epochs_done = {epochs_done}\nphase = {}\nrefiner = {}\n",
        state.phase, state.refiner_enabled
    )
}
