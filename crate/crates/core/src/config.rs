//! Run configuration and its canonical text form.
//!
//! The document is a flat list of `key = value` lines preceded by a schema
//! line. Keys are written in a fixed order, unknown keys are rejected, and
//! floats use Rust's shortest round-trip formatting, so serializing a parsed
//! document reproduces it byte for byte.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const SCHEMA: &str = "lesionseg-config/1";

/// Multi-encoder U-Net shape.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub modalities: usize,
    pub levels: usize,
    pub base_channels: usize,
    /// Patch extents `D×H×W` the network is trained on.
    pub input_extents: [usize; 3],
    /// Dimension of the text embedding.
    pub text_dim: usize,
    /// Biases on the linear 1×1×1 projections and shifts on the norms.
    pub bias: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            modalities: 3,
            levels: 3,
            base_channels: 8,
            input_extents: [16, 32, 32],
            text_dim: 32,
            bias: true,
        }
    }
}

impl BackboneConfig {
    /// Reference configuration of the full-scale setup (not the default).
    pub fn reference_scale() -> Self {
        Self {
            input_extents: [16, 320, 320],
            ..Self::default()
        }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn extents_at(&self, level: usize) -> [usize; 3] {
        self.input_extents.map(|e| e >> level)
    }

    pub fn bottleneck_extents(&self) -> [usize; 3] {
        self.extents_at(self.levels - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities == 0 || self.base_channels == 0 || self.text_dim == 0 {
            return Err(Error::config("model: modalities, base_channels and text_dim must be ≥ 1"));
        }
        if self.levels < 2 {
            return Err(Error::config("model.levels must be ≥ 2"));
        }
        let factor = 1usize << (self.levels - 1);
        if self.input_extents.iter().any(|&e| e == 0 || e % factor != 0) {
            return Err(Error::config(format!(
                "model.input_extents {:?} must be divisible by 2^(levels-1) = {factor}",
                self.input_extents
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceConfig {
    pub temperature: f64,
    /// Text embedding file; a seeded pseudo-embedding is used when absent.
    pub embedding_file: Option<PathBuf>,
    pub embedding_seed: u64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            embedding_file: None,
            embedding_seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinerConfig {
    pub hidden: usize,
    pub heads: usize,
    pub text_tokens: usize,
    pub gate_init: f64,
    pub alpha: f64,
    pub tau: f64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            heads: 4,
            text_tokens: 1,
            gate_init: 0.0,
            alpha: 0.25,
            tau: 0.35,
        }
    }
}

impl RefinerConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "refiner.hidden {} must be a positive multiple of refiner.heads {}",
                self.hidden, self.heads
            )));
        }
        if self.text_tokens == 0 {
            return Err(Error::config("refiner.text_tokens must be ≥ 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("refiner.alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config(format!("refiner.tau {} outside (0, 1)", self.tau)));
        }
        Ok(())
    }
}

/// Whether the curriculum's phases are honoured or everything starts at once.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleMode {
    Phased,
    Unscheduled,
}

impl ScheduleMode {
    fn as_str(self) -> &'static str {
        match self {
            ScheduleMode::Phased => "phased",
            ScheduleMode::Unscheduled => "unscheduled",
        }
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phased" => Ok(ScheduleMode::Phased),
            "unscheduled" => Ok(ScheduleMode::Unscheduled),
            other => Err(Error::config(format!("schedule.mode: unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// First epoch of semantic transfer (e1).
    pub transfer_start: usize,
    /// First epoch of refinement (e2).
    pub refine_start: usize,
    pub warmup_epochs: usize,
    pub ramp_epochs: usize,
    pub lambda_align: f64,
    pub lambda_heat: f64,
    pub mode: ScheduleMode,
    pub use_align: bool,
    pub use_heat: bool,
    pub use_refiner: bool,
    pub lr: f64,
    pub momentum: f64,
    pub poly_power: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub lesion_sample_prob: f64,
    pub align_eps: f64,
}

impl ScheduleConfig {
    /// Phase boundaries at 40% / 80% of the run, warm-up 5%, ramp 10%.
    pub fn with_total_epochs(total_epochs: usize) -> Self {
        let pct = |p: usize| (total_epochs * p + 50) / 100;
        Self {
            total_epochs,
            steps_per_epoch: 8,
            batch_size: 2,
            transfer_start: pct(40),
            refine_start: pct(80),
            warmup_epochs: pct(5),
            ramp_epochs: pct(10),
            lambda_align: 0.1,
            lambda_heat: 0.1,
            mode: ScheduleMode::Phased,
            use_align: true,
            use_heat: true,
            use_refiner: true,
            lr: 1e-2,
            momentum: 0.99,
            poly_power: 0.9,
            weight_decay: 0.0,
            grad_clip: 12.0,
            lesion_sample_prob: 0.5,
            align_eps: 1e-6,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::config("schedule: epochs, steps_per_epoch and batch_size must be ≥ 1"));
        }
        if !(self.transfer_start < self.refine_start && self.refine_start <= self.total_epochs) {
            return Err(Error::config(format!(
                "schedule: need transfer_start {} < refine_start {} ≤ total_epochs {}",
                self.transfer_start, self.refine_start, self.total_epochs
            )));
        }
        if self.transfer_start + self.warmup_epochs + self.ramp_epochs > self.refine_start {
            return Err(Error::config(format!(
                "schedule: transfer_start + warmup + ramp = {} exceeds refine_start {}",
                self.transfer_start + self.warmup_epochs + self.ramp_epochs,
                self.refine_start
            )));
        }
        if self.lambda_align < 0.0 || self.lambda_heat < 0.0 {
            return Err(Error::config("schedule: auxiliary weights must be ≥ 0"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("optim: need lr > 0 and momentum in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.lesion_sample_prob) {
            return Err(Error::config("sampling.lesion_prob outside [0, 1]"));
        }
        if !(self.align_eps > 0.0) {
            return Err(Error::config("loss.align_eps must be > 0"));
        }
        Ok(())
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::with_total_epochs(80)
    }
}

/// Synthetic phantom dataset parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub train_cases: usize,
    pub val_cases: usize,
    pub test_cases: usize,
    pub extents: [usize; 3],
    pub spacing: [f64; 3],
    pub lesions_min: usize,
    pub lesions_max: usize,
    pub radius_min_mm: f64,
    pub radius_max_mm: f64,
    /// Signed lesion contrast per modality, in background standard deviations.
    pub contrast: [f64; 3],
    pub noise: f64,
    /// Smoothing radius of the background texture, in voxels.
    pub texture_scale: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_cases: 60,
            val_cases: 10,
            test_cases: 20,
            extents: [16, 32, 32],
            spacing: [3.0, 0.5, 0.5],
            lesions_min: 1,
            lesions_max: 2,
            radius_min_mm: 3.0,
            radius_max_mm: 5.0,
            contrast: [-0.8, -1.2, 1.2],
            noise: 0.6,
            texture_scale: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricConfig {
    pub nsd_tolerance_mm: f64,
    pub threshold: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            nsd_tolerance_mm: 2.0,
            threshold: 0.5,
        }
    }
}

/// Everything a run needs; written next to every output.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: BackboneConfig,
    pub guidance: GuidanceConfig,
    pub refiner: RefinerConfig,
    pub schedule: ScheduleConfig,
    pub metrics: MetricConfig,
    pub ablate_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            data: DataConfig::default(),
            model: BackboneConfig::default(),
            guidance: GuidanceConfig::default(),
            refiner: RefinerConfig::default(),
            schedule: ScheduleConfig::default(),
            metrics: MetricConfig::default(),
            ablate_seeds: 3,
        }
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse `{value}`")))
}

fn parse_triple<T: FromStr + Copy>(key: &str, value: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::config(format!("{key}: expected three values, got `{value}`")));
    }
    Ok([
        parse_one(key, parts[0])?,
        parse_one(key, parts[1])?,
        parse_one(key, parts[2])?,
    ])
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got `{value}`"))),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.refiner.validate()?;
        self.schedule.validate()?;
        if !(self.guidance.temperature > 0.0) {
            return Err(Error::config("guidance.temperature must be > 0"));
        }
        if self.model.modalities != 3 {
            return Err(Error::config("model.modalities must match the three phantom channels"));
        }
        if self.ablate_seeds == 0 {
            return Err(Error::config("ablate.seeds must be ≥ 1"));
        }
        if !(self.metrics.nsd_tolerance_mm > 0.0) {
            return Err(Error::config("metrics.nsd_tolerance_mm must be > 0"));
        }
        Ok(())
    }

    /// Ordered `(key, value)` pairs of the canonical document.
    fn entries(&self) -> Vec<(&'static str, String)> {
        let (d, m, g, r, s) = (&self.data, &self.model, &self.guidance, &self.refiner, &self.schedule);
        vec![
            ("seed", self.seed.to_string()),
            ("data.train_cases", d.train_cases.to_string()),
            ("data.val_cases", d.val_cases.to_string()),
            ("data.test_cases", d.test_cases.to_string()),
            ("data.extents", join(&d.extents)),
            ("data.spacing", join(&d.spacing)),
            ("data.lesions_min", d.lesions_min.to_string()),
            ("data.lesions_max", d.lesions_max.to_string()),
            ("data.radius_min_mm", d.radius_min_mm.to_string()),
            ("data.radius_max_mm", d.radius_max_mm.to_string()),
            ("data.contrast", join(&d.contrast)),
            ("data.noise", d.noise.to_string()),
            ("data.texture_scale", d.texture_scale.to_string()),
            ("model.modalities", m.modalities.to_string()),
            ("model.levels", m.levels.to_string()),
            ("model.base_channels", m.base_channels.to_string()),
            ("model.input_extents", join(&m.input_extents)),
            ("model.text_dim", m.text_dim.to_string()),
            ("model.bias", m.bias.to_string()),
            ("guidance.temperature", g.temperature.to_string()),
            (
                "guidance.embedding_file",
                g.embedding_file
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("guidance.embedding_seed", g.embedding_seed.to_string()),
            ("refiner.hidden", r.hidden.to_string()),
            ("refiner.heads", r.heads.to_string()),
            ("refiner.text_tokens", r.text_tokens.to_string()),
            ("refiner.gate_init", r.gate_init.to_string()),
            ("refiner.alpha", r.alpha.to_string()),
            ("refiner.tau", r.tau.to_string()),
            ("schedule.total_epochs", s.total_epochs.to_string()),
            ("schedule.steps_per_epoch", s.steps_per_epoch.to_string()),
            ("schedule.batch_size", s.batch_size.to_string()),
            ("schedule.transfer_start", s.transfer_start.to_string()),
            ("schedule.refine_start", s.refine_start.to_string()),
            ("schedule.warmup_epochs", s.warmup_epochs.to_string()),
            ("schedule.ramp_epochs", s.ramp_epochs.to_string()),
            ("schedule.lambda_align", s.lambda_align.to_string()),
            ("schedule.lambda_heat", s.lambda_heat.to_string()),
            ("schedule.mode", s.mode.as_str().to_string()),
            ("schedule.use_align", s.use_align.to_string()),
            ("schedule.use_heat", s.use_heat.to_string()),
            ("schedule.use_refiner", s.use_refiner.to_string()),
            ("optim.lr", s.lr.to_string()),
            ("optim.momentum", s.momentum.to_string()),
            ("optim.poly_power", s.poly_power.to_string()),
            ("optim.weight_decay", s.weight_decay.to_string()),
            ("optim.grad_clip", s.grad_clip.to_string()),
            ("sampling.lesion_prob", s.lesion_sample_prob.to_string()),
            ("loss.align_eps", s.align_eps.to_string()),
            ("metrics.nsd_tolerance_mm", self.metrics.nsd_tolerance_mm.to_string()),
            ("metrics.threshold", self.metrics.threshold.to_string()),
            ("ablate.seeds", self.ablate_seeds.to_string()),
        ]
    }

    pub fn to_canonical(&self) -> String {
        let mut out = format!("schema = {SCHEMA}\n");
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").expect("writing to a String");
        }
        out
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (d, m, g, r, s) = (
            &mut self.data,
            &mut self.model,
            &mut self.guidance,
            &mut self.refiner,
            &mut self.schedule,
        );
        match key {
            "seed" => self.seed = parse_one(key, v)?,
            "data.train_cases" => d.train_cases = parse_one(key, v)?,
            "data.val_cases" => d.val_cases = parse_one(key, v)?,
            "data.test_cases" => d.test_cases = parse_one(key, v)?,
            "data.extents" => d.extents = parse_triple(key, v)?,
            "data.spacing" => d.spacing = parse_triple(key, v)?,
            "data.lesions_min" => d.lesions_min = parse_one(key, v)?,
            "data.lesions_max" => d.lesions_max = parse_one(key, v)?,
            "data.radius_min_mm" => d.radius_min_mm = parse_one(key, v)?,
            "data.radius_max_mm" => d.radius_max_mm = parse_one(key, v)?,
            "data.contrast" => d.contrast = parse_triple(key, v)?,
            "data.noise" => d.noise = parse_one(key, v)?,
            "data.texture_scale" => d.texture_scale = parse_one(key, v)?,
            "model.modalities" => m.modalities = parse_one(key, v)?,
            "model.levels" => m.levels = parse_one(key, v)?,
            "model.base_channels" => m.base_channels = parse_one(key, v)?,
            "model.input_extents" => m.input_extents = parse_triple(key, v)?,
            "model.text_dim" => m.text_dim = parse_one(key, v)?,
            "model.bias" => m.bias = parse_bool(key, v)?,
            "guidance.temperature" => g.temperature = parse_one(key, v)?,
            "guidance.embedding_file" => {
                g.embedding_file = (!v.is_empty()).then(|| PathBuf::from(v));
            }
            "guidance.embedding_seed" => g.embedding_seed = parse_one(key, v)?,
            "refiner.hidden" => r.hidden = parse_one(key, v)?,
            "refiner.heads" => r.heads = parse_one(key, v)?,
            "refiner.text_tokens" => r.text_tokens = parse_one(key, v)?,
            "refiner.gate_init" => r.gate_init = parse_one(key, v)?,
            "refiner.alpha" => r.alpha = parse_one(key, v)?,
            "refiner.tau" => r.tau = parse_one(key, v)?,
            "schedule.total_epochs" => s.total_epochs = parse_one(key, v)?,
            "schedule.steps_per_epoch" => s.steps_per_epoch = parse_one(key, v)?,
            "schedule.batch_size" => s.batch_size = parse_one(key, v)?,
            "schedule.transfer_start" => s.transfer_start = parse_one(key, v)?,
            "schedule.refine_start" => s.refine_start = parse_one(key, v)?,
            "schedule.warmup_epochs" => s.warmup_epochs = parse_one(key, v)?,
            "schedule.ramp_epochs" => s.ramp_epochs = parse_one(key, v)?,
            "schedule.lambda_align" => s.lambda_align = parse_one(key, v)?,
            "schedule.lambda_heat" => s.lambda_heat = parse_one(key, v)?,
            "schedule.mode" => s.mode = v.parse()?,
            "schedule.use_align" => s.use_align = parse_bool(key, v)?,
            "schedule.use_heat" => s.use_heat = parse_bool(key, v)?,
            "schedule.use_refiner" => s.use_refiner = parse_bool(key, v)?,
            "optim.lr" => s.lr = parse_one(key, v)?,
            "optim.momentum" => s.momentum = parse_one(key, v)?,
            "optim.poly_power" => s.poly_power = parse_one(key, v)?,
            "optim.weight_decay" => s.weight_decay = parse_one(key, v)?,
            "optim.grad_clip" => s.grad_clip = parse_one(key, v)?,
            "sampling.lesion_prob" => s.lesion_sample_prob = parse_one(key, v)?,
            "loss.align_eps" => s.align_eps = parse_one(key, v)?,
            "metrics.nsd_tolerance_mm" => self.metrics.nsd_tolerance_mm = parse_one(key, v)?,
            "metrics.threshold" => self.metrics.threshold = parse_one(key, v)?,
            "ablate.seeds" => self.ablate_seeds = parse_one(key, v)?,
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses a document. Keys not present keep their defaults; blank lines
    /// and `#` comments are ignored.
    pub fn from_canonical(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, l)) if l.split_once('=').map(|(k, v)| (k.trim(), v.trim())) == Some(("schema", SCHEMA)) => {}
            _ => return Err(Error::config(format!("first entry must be `schema = {SCHEMA}`"))),
        }
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (no, line) in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", no + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::config(format!("line {}: duplicate key `{k}`", no + 1)));
            }
            cfg.set(k, v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.data.spacing = [3.0, 0.7, 0.1 + 0.2];
        cfg.guidance.embedding_file = Some(PathBuf::from("emb.txt"));
        cfg.schedule.mode = ScheduleMode::Unscheduled;
        let text = cfg.to_canonical();
        let back = RunConfig::from_canonical(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_canonical(), text);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_errors() {
        let base = format!("schema = {SCHEMA}\n");
        assert!(RunConfig::from_canonical(&format!("{base}model.depth = 3\n")).is_err());
        assert!(RunConfig::from_canonical(&format!("{base}seed = 1\nseed = 2\n")).is_err());
        assert!(RunConfig::from_canonical("seed = 1\n").is_err());
        assert!(RunConfig::from_canonical(&format!("{base}seed = 5\n")).is_ok());
    }

    #[test]
    fn default_boundaries_follow_percentages() {
        let s = ScheduleConfig::with_total_epochs(100);
        assert_eq!((s.transfer_start, s.refine_start, s.warmup_epochs, s.ramp_epochs), (40, 80, 5, 10));
        s.validate().unwrap();
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.model.input_extents = [15, 32, 32];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.refiner.heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.schedule.warmup_epochs = 50;
        assert!(cfg.validate().is_err());
    }
}
