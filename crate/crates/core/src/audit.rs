//! Self-checks run by `audit`: finite-difference gradient checks of every
//! loss and of the refiner path, and randomized invariant checks across
//! modules.

use std::fmt;

use lesionseg_autodiff::{grad_check, sigmoid, Real, Result as TensorResult, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, HEAD_BIAS, HEAD_WEIGHT};
use crate::config::{BackboneConfig, DataConfig, RefinerConfig, RunConfig, ScheduleConfig};
use crate::curriculum::{phase_at, Phase};
use crate::data::{self, CaseSpec};
use crate::guidance::{self, TextEmbedding, PROJ_WEIGHT};
use crate::metrics;
use crate::objectives;
use crate::params::{Bound, Checkpoint};
use crate::refiner;
use crate::model::Model;

pub const GRAD_EPS: Real = 3e-5;
pub const GRAD_TOL: Real = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct AuditItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for AuditItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{mark}  {}: {}", self.name, self.detail)
    }
}

fn item(name: &str, passed: bool, detail: impl Into<String>) -> AuditItem {
    AuditItem {
        name: name.to_string(),
        passed,
        detail: detail.into(),
    }
}

fn lift<T>(r: crate::Result<T>) -> TensorResult<T> {
    r.map_err(|e| TensorError::Invalid {
        op: "audit",
        detail: e.to_string(),
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: Real, hi: Real) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi)).expect("shape")
}

fn binary(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| if rng.random_bool(p) { 1.0 } else { 0.0 }).expect("shape")
}

fn small_grid(rng: &mut ChaCha8Rng) -> Vec<usize> {
    vec![rng.random_range(1..3), 1, rng.random_range(1..4), rng.random_range(2..4), rng.random_range(2..4)]
}

/// A scalar-output function of some inputs, ready for [`grad_check`].
pub struct GradCase {
    pub inputs: Vec<Tensor>,
    pub f: Box<dyn Fn(&mut Tape, &[Var]) -> TensorResult<Var>>,
}

/// Random instance of the segmentation loss, differentiated in the logits.
pub fn seg_case(rng: &mut ChaCha8Rng) -> GradCase {
    let shape = small_grid(rng);
    let logits = uniform(rng, &shape, -3.0, 3.0);
    let mask = binary(rng, &shape, 0.4);
    GradCase {
        inputs: vec![logits],
        f: Box::new(move |t, v| lift(objectives::seg_loss(t, v[0], &mask))),
    }
}

/// Random heatmap in the reachable band `[σ(−1), σ(1)]` with a random mask.
fn heat_inputs(rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let shape = small_grid(rng);
    (uniform(rng, &shape, 0.27, 0.73), binary(rng, &shape, 0.4))
}

pub fn align_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (s, mask) = heat_inputs(rng);
    GradCase {
        inputs: vec![s],
        f: Box::new(move |t, v| lift(objectives::align_loss(t, v[0], &mask, 1e-6))),
    }
}

pub fn heat_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (s, mask) = heat_inputs(rng);
    GradCase {
        inputs: vec![s],
        f: Box::new(move |t, v| lift(objectives::heat_loss(t, v[0], &mask))),
    }
}

/// Composite loss over bottleneck features, the similarity projection and
/// logits, with both auxiliary weights positive.
pub fn composite_case(rng: &mut ChaCha8Rng) -> GradCase {
    // One input channel makes the normalized projection constant in f.
    let channels = rng.random_range(2..4);
    let dim = rng.random_range(2..5);
    let bottleneck = [1, 2, 2];
    let f = uniform(rng, &[1, channels, bottleneck[0], bottleneck[1], bottleneck[2]], -1.0, 1.0);
    let w = uniform(rng, &[dim, channels, 1, 1, 1], -1.0, 1.0);
    let full = [1, 1, 2, 4, 4];
    let logits = uniform(rng, &full, -2.0, 2.0);
    let mask = binary(rng, &full, 0.4);
    let small = objectives::downsample_mask_batch(&mask, bottleneck).expect("divisible");
    let text = TextEmbedding::pseudo(rng.random(), dim).expect("nonzero");
    let (la, lh) = (rng.random_range(0.01..0.2), rng.random_range(0.01..0.2));
    let temperature = rng.random_range(0.5..2.0);
    GradCase {
        inputs: vec![f, w, logits],
        f: Box::new(move |t, v| {
            let bound = Bound::from_vars([(PROJ_WEIGHT, v[1])]);
            let s = lift(guidance::similarity_head(t, &bound, v[0], &text, temperature))?;
            let seg = lift(objectives::seg_loss(t, v[2], &mask))?;
            let align = lift(objectives::align_loss(t, s, &small, 1e-6))?;
            let heat = lift(objectives::heat_loss(t, s, &small))?;
            Ok(lift(objectives::composite(t, seg, align, heat, la, lh))?.0)
        }),
    }
}

const REFINER_NAMES: [&str; 9] = [
    "features",
    refiner::Q_WEIGHT,
    refiner::K_WEIGHT,
    refiner::K_BIAS,
    refiner::V_WEIGHT,
    refiner::V_BIAS,
    refiner::O_WEIGHT,
    refiner::GATE,
    HEAD_WEIGHT,
];

/// Segmentation loss of the blended logits, differentiated in the top
/// features and every refiner and head parameter. Instances whose base
/// logits sit within 1e-3 of the confidence threshold are redrawn so the
/// finite-difference probe cannot flip the (constant) gate.
pub fn refiner_case(rng: &mut ChaCha8Rng) -> GradCase {
    loop {
        let heads = rng.random_range(1..3);
        let cfg = RefinerConfig {
            hidden: heads * rng.random_range(1..3),
            heads,
            text_tokens: rng.random_range(1..3),
            gate_init: 0.0,
            alpha: rng.random_range(0.1..0.9),
            tau: rng.random_range(0.2..0.8),
        };
        let channels = rng.random_range(1..4);
        let dim = rng.random_range(2..4);
        let grid = [1, 2, 3];
        let mt = cfg.text_tokens * cfg.hidden;
        let inputs = vec![
            uniform(rng, &[1, channels, grid[0], grid[1], grid[2]], -1.5, 1.5),
            uniform(rng, &[cfg.hidden, channels, 1, 1, 1], -1.0, 1.0),
            uniform(rng, &[dim, mt], -1.0, 1.0),
            uniform(rng, &[mt], -0.5, 0.5),
            uniform(rng, &[dim, mt], -1.0, 1.0),
            uniform(rng, &[mt], -0.5, 0.5),
            uniform(rng, &[channels, cfg.hidden, 1, 1, 1], -1.0, 1.0),
            uniform(rng, &[1], -1.0, 1.0),
            uniform(rng, &[1, channels, 1, 1, 1], -1.0, 1.0),
        ];
        let head_bias = rng.random_range(-0.5..0.5);
        // Base logits at the unperturbed point.
        let threshold = (cfg.tau / (1.0 - cfg.tau)).ln();
        let fdata = inputs[0].data();
        let hw = inputs[8].data();
        let vox = grid.iter().product::<usize>();
        let near = (0..vox).any(|i| {
            let y: Real = head_bias + (0..channels).map(|c| hw[c] * fdata[c * vox + i]).sum::<Real>();
            (y - threshold).abs() < 1e-3
        });
        if near {
            continue;
        }
        let mask = binary(rng, &[1, 1, grid[0], grid[1], grid[2]], 0.4);
        let text = TextEmbedding::pseudo(rng.random(), dim).expect("nonzero");
        let backbone = Backbone {
            cfg: BackboneConfig {
                base_channels: channels,
                ..BackboneConfig::default()
            },
        };
        return GradCase {
            inputs,
            f: Box::new(move |t, v| {
                let hb = t.constant(Tensor::full([1], head_bias)?);
                let mut named: Vec<(&str, Var)> = REFINER_NAMES[1..].iter().copied().zip(v[1..].iter().copied()).collect();
                named.push((HEAD_BIAS, hb));
                let bound = Bound::from_vars(named);
                let y_base = lift(backbone.head(t, &bound, v[0]))?;
                let out = lift(refiner::refine(t, &bound, &backbone, &cfg, v[0], y_base, &text))?;
                lift(objectives::seg_loss(t, out.y, &mask))
            }),
        };
    }
}

/// Worst relative error of `trials` random instances of `make`.
pub fn grad_audit_one(name: &str, trials: usize, seed: u64, make: fn(&mut ChaCha8Rng) -> GradCase) -> AuditItem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Real = 0.0;
    for trial in 0..trials {
        let case = make(&mut rng);
        match grad_check(&case.f, &case.inputs, GRAD_EPS, GRAD_TOL) {
            Ok(r) => worst = worst.max(r.max_rel_error),
            Err(e) => return item(name, false, format!("trial {trial}: {e}")),
        }
    }
    item(
        name,
        worst < GRAD_TOL,
        format!("{trials} trials, max relative error {worst:.3e} (tol {GRAD_TOL:e})"),
    )
}

pub fn gradient_audit(trials: usize) -> Vec<AuditItem> {
    vec![
        grad_audit_one("gradient L_seg", trials, 101, seg_case),
        grad_audit_one("gradient L_align", trials, 102, align_case),
        grad_audit_one("gradient L_heat", trials, 103, heat_case),
        grad_audit_one("gradient composite", trials, 104, composite_case),
        grad_audit_one("gradient refiner path", trials, 105, refiner_case),
    ]
}

fn check(name: &str, f: impl FnOnce() -> crate::Result<(bool, String)>) -> AuditItem {
    match f() {
        Ok((ok, detail)) => item(name, ok, detail),
        Err(e) => item(name, false, format!("error: {e}")),
    }
}

fn tiny_run_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.input_extents = [4, 8, 8];
    cfg.model.base_channels = 2;
    cfg.model.text_dim = 4;
    cfg.refiner.hidden = 4;
    cfg.refiner.heads = 2;
    cfg.data.extents = [4, 8, 8];
    cfg
}

/// Randomized property checks across modules.
pub fn invariant_audit(seed: u64) -> Vec<AuditItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();

    items.push(check("heatmap within [σ(−1/T), σ(1/T)]", || {
        let mut worst: Real = 0.0;
        for _ in 0..100 {
            let c = rng.random_range(1..5);
            let d = rng.random_range(1..6);
            let temperature: Real = rng.random_range(0.5..2.0);
            let mut t = Tape::new();
            let f = t.constant(uniform(&mut rng, &[1, c, 2, 2, 2], -3.0, 3.0));
            let w = t.constant(uniform(&mut rng, &[d, c, 1, 1, 1], -1.0, 1.0));
            let text = TextEmbedding::pseudo(rng.random(), d)?;
            let s = guidance::similarity_head(&mut t, &Bound::from_vars([(PROJ_WEIGHT, w)]), f, &text, temperature)?;
            let (lo, hi) = (sigmoid(-1.0 / temperature), sigmoid(1.0 / temperature));
            for &v in t.value(s).data() {
                worst = worst.max(lo - v).max(v - hi);
            }
        }
        Ok((worst <= 1e-9, format!("largest excursion {worst:.2e}")))
    }));

    items.push(check("refiner γ = 0 and α = 0 leave base logits bit-exact", || {
        let cfg = tiny_run_config();
        let mut model = Model::new(&cfg)?;
        model.attach_refiner()?;
        let inputs: Vec<Tensor> = (0..3).map(|_| uniform(&mut rng, &[1, 1, 4, 8, 8], -2.0, 2.0)).collect();
        let mut exact = true;
        for alpha in [cfg.refiner.alpha, 0.0] {
            let mut m = Model::new(&cfg)?;
            m.params = model.params.clone();
            m.config.refiner.alpha = alpha;
            if alpha == 0.0 {
                m.params.insert(refiner::GATE, Tensor::full([1], 0.8)?);
            }
            let mut t = Tape::new();
            let b = m.bind(&mut t);
            let fw = m.forward(&mut t, &b, &inputs)?;
            let y = t.value(fw.logits()).data().iter().map(|v| v.to_bits());
            exact &= y.eq(t.value(fw.y_base).data().iter().map(|v| v.to_bits()));
        }
        Ok((exact, "blended logits compared bitwise".into()))
    }));

    items.push(check("phase 1: composite total equals seg", || {
        let s = ScheduleConfig::with_total_epochs(20);
        let st = phase_at(0, &s)?;
        let mut t = Tape::new();
        let (s_in, mask) = heat_inputs(&mut rng);
        let logits = t.param(uniform(&mut rng, mask.shape(), -2.0, 2.0));
        let sv = t.param(s_in);
        let seg = objectives::seg_loss(&mut t, logits, &mask)?;
        let a = objectives::align_loss(&mut t, sv, &mask, 1e-6)?;
        let h = objectives::heat_loss(&mut t, sv, &mask)?;
        let (total, b) = objectives::composite(&mut t, seg, a, h, st.lambda_align, st.lambda_heat)?;
        t.backward(total)?;
        let silent = t.grad(sv).is_some_and(|g| g.data().iter().all(|&v| v == 0.0));
        Ok((b.total.to_bits() == b.seg.to_bits() && silent, format!("total {} seg {}", b.total, b.seg)))
    }));

    items.push(check("∂L_align/∂s vanishes on background", || {
        let mut bad = 0;
        for _ in 0..50 {
            let (s_in, mask) = heat_inputs(&mut rng);
            let mut t = Tape::new();
            let s = t.param(s_in);
            let l = objectives::align_loss(&mut t, s, &mask, 1e-6)?;
            t.backward(l)?;
            let g = t.grad(s).expect("gradient");
            bad += g.data().iter().zip(mask.data()).filter(|(g, m)| **m == 0.0 && **g != 0.0).count();
        }
        Ok((bad == 0, format!("{bad} nonzero background entries")))
    }));

    items.push(check("schedule: λ ramps only in phase 2, two transitions", || {
        let s = ScheduleConfig::with_total_epochs(rng.random_range(20..120));
        let mut prev = 0.0;
        let mut transitions = 0;
        let mut last = Phase::SegOnly;
        let mut ok = true;
        for e in 0..s.total_epochs {
            let st = phase_at(e, &s)?;
            if st.phase != last {
                transitions += 1;
                last = st.phase;
            }
            match st.phase {
                Phase::SemanticTransfer => {
                    ok &= st.lambda_align >= prev && !st.refiner_enabled;
                    prev = st.lambda_align;
                }
                _ => ok &= st.lambda_align == 0.0 && st.lambda_heat == 0.0,
            }
        }
        Ok((ok && transitions == 2, format!("{} epochs, {transitions} transitions", s.total_epochs)))
    }));

    items.push(check("metrics: symmetry and Dice identity", || {
        let mut ok = true;
        for _ in 0..50 {
            let ext = [rng.random_range(2..7), rng.random_range(2..7), rng.random_range(2..7)];
            let n = ext.iter().product();
            let a: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
            let b: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
            let sp = [1.0, 0.5, 2.0];
            let ab = metrics::surface_metrics(&a, &b, ext, sp, 1.5)?;
            let ba = metrics::surface_metrics(&b, &a, ext, sp, 1.5)?;
            ok &= ab == ba;
            let (d, p, r) = metrics::overlap_metrics(&a, &b)?;
            if p + r > 0.0 {
                ok &= (d - 2.0 * p * r / (p + r)).abs() < 1e-12;
            }
        }
        Ok((ok, "50 random pairs".into()))
    }));

    items.push(check("checkpoint and case round-trip", || {
        let cfg = tiny_run_config();
        let mut model = Model::new(&cfg)?;
        model.attach_refiner()?;
        let ck = model.to_checkpoint("epochs_done = 0\n".into());
        let back = Checkpoint::from_bytes(&ck.to_bytes(), std::path::Path::new("<memory>"))?;
        let dir = std::env::temp_dir().join(format!("lesionseg-audit-{}-{seed}", std::process::id()));
        let spec = CaseSpec::from_config(&DataConfig::default(), "audit", rng.random());
        let case = data::generate_case(&spec)?;
        data::save_case(&case, &dir)?;
        let loaded = data::load_case(&dir);
        let _ = std::fs::remove_dir_all(&dir);
        let loaded = loaded?;
        Ok((back == ck && loaded == case, "in-memory checkpoint, temporary case directory".into()))
    }));

    items
}
