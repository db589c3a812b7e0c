//! The five training variants compared by `ablate`, run over several seeds.

use std::fmt;

use crate::config::{RunConfig, ScheduleMode};
use crate::curriculum::{self, PhaseLimit};
use crate::data::Case;
use crate::error::Result;
use crate::metrics::{self, AggregateReport, CaseMetrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    HeatOnly,
    AlignOnly,
    HeatAlign,
    UnscheduledAttn,
    PhaseScheduled,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::HeatOnly,
        Variant::AlignOnly,
        Variant::HeatAlign,
        Variant::UnscheduledAttn,
        Variant::PhaseScheduled,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::HeatOnly => "L_heat only",
            Variant::AlignOnly => "L_align only",
            Variant::HeatAlign => "L_heat + L_align",
            Variant::UnscheduledAttn => "+attn (unscheduled)",
            Variant::PhaseScheduled => "+attn (phase-scheduled)",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::HeatOnly => "heat-only",
            Variant::AlignOnly => "align-only",
            Variant::HeatAlign => "heat-align",
            Variant::UnscheduledAttn => "unscheduled-attn",
            Variant::PhaseScheduled => "phase-scheduled",
        }
    }

    /// `base` with this variant's loss, refiner and schedule switches.
    /// Variants without attention keep the phase boundaries but never
    /// attach the refiner.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        let s = &mut cfg.schedule;
        let (align, heat, refiner, mode) = match self {
            Variant::HeatOnly => (false, true, false, ScheduleMode::Phased),
            Variant::AlignOnly => (true, false, false, ScheduleMode::Phased),
            Variant::HeatAlign => (true, true, false, ScheduleMode::Phased),
            Variant::UnscheduledAttn => (true, true, true, ScheduleMode::Unscheduled),
            Variant::PhaseScheduled => (true, true, true, ScheduleMode::Phased),
        };
        s.use_align = align;
        s.use_heat = heat;
        s.use_refiner = refiner;
        s.mode = mode;
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Seeds used for repeat `k` of a run with base seed `seed`.
pub fn repeat_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(k as u64)
}

/// Trains `variant` with one seed and scores it on `test`.
pub fn run_variant(base: &RunConfig, variant: Variant, seed: u64, train: &[Case], test: &[Case]) -> Result<Vec<CaseMetrics>> {
    let mut cfg = variant.apply(base);
    cfg.seed = seed;
    let outcome = curriculum::train(&cfg, train, PhaseLimit::All, |_, _| Ok(()))?;
    metrics::evaluate_cases(&outcome.model, test, &cfg.metrics)
}

pub struct VariantResult {
    pub variant: Variant,
    /// Test metrics per seed, in seed order; a failed seed holds its error.
    pub per_seed: Vec<(u64, std::result::Result<Vec<CaseMetrics>, String>)>,
}

impl VariantResult {
    /// All successful case metrics, pooled across seeds.
    pub fn pooled(&self) -> Vec<CaseMetrics> {
        self.per_seed
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok())
            .flatten()
            .cloned()
            .collect()
    }

    /// Mean over seeds of the per-seed mean test Dice.
    pub fn mean_dice(&self) -> Option<f64> {
        let means: Vec<f64> = self
            .per_seed
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok())
            .map(|m| metrics::mean_dice(m))
            .collect();
        (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
    }

    pub fn aggregate(&self) -> Option<AggregateReport> {
        metrics::aggregate(&self.pooled()).ok()
    }
}

/// Runs `variants` for `base.ablate_seeds` seeds each. A failing run is
/// recorded and the rest continue.
pub fn ablate(base: &RunConfig, variants: &[Variant], train: &[Case], test: &[Case]) -> Vec<VariantResult> {
    variants
        .iter()
        .map(|&variant| {
            let per_seed = (0..base.ablate_seeds)
                .map(|k| {
                    let seed = repeat_seed(base.seed, k);
                    log::info!("ablation: {variant} seed {seed}");
                    let r = run_variant(base, variant, seed, train, test).map_err(|e| e.to_string());
                    if let Err(e) = &r {
                        log::warn!("ablation: {variant} seed {seed} failed: {e}");
                    }
                    (seed, r)
                })
                .collect();
            VariantResult { variant, per_seed }
        })
        .collect()
}

/// Table with one row per variant, metrics pooled over cases and seeds.
pub fn render(results: &[VariantResult]) -> String {
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r.aggregate() {
            Some(a) => rows.push((r.variant.label().to_string(), a)),
            None => failed.push(r.variant.label()),
        }
    }
    let mut s = metrics::render_table(&rows);
    for label in failed {
        s.push_str(&format!("| {label} | failed | failed | failed | failed | failed | 0 (0) |\n"));
    }
    s
}
