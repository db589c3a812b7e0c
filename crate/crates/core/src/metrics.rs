//! Overlap and surface-distance metrics with physical spacing, and their
//! aggregation.
//!
//! Conventions:
//! - A prediction voxel is foreground iff its probability exceeds the
//!   threshold (strictly).
//! - Both masks empty: Dice, precision, recall and NSD are 1, HD95 is 0.
//!   Otherwise a 0/0 precision or recall is 0.
//! - Exactly one mask empty: HD95 and NSD are undefined and left out of
//!   the aggregate, which reports how many cases were dropped.
//! - A surface voxel is a foreground voxel with a background 6-neighbour or
//!   on the volume border; its point is `index · spacing` in mm.
//! - HD95 takes the 95th percentile of each directed nearest-surface
//!   distance list (linear interpolation between order statistics) and
//!   reports the larger of the two.

use lesionseg_autodiff::Real;
use serde::Serialize;

use crate::config::MetricConfig;
use crate::data::Case;
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn confusion(pred: &[u8], reference: &[u8]) -> Result<Confusion> {
    if pred.len() != reference.len() {
        return Err(Error::Invalid(format!(
            "prediction has {} voxels, reference {}",
            pred.len(),
            reference.len()
        )));
    }
    let mut c = Confusion { tp: 0, fp: 0, fn_: 0 };
    for (&p, &r) in pred.iter().zip(reference) {
        match (p != 0, r != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(dice, precision, recall)`.
pub fn overlap_metrics(pred: &[u8], reference: &[u8]) -> Result<(f64, f64, f64)> {
    let c = confusion(pred, reference)?;
    if c.tp + c.fp + c.fn_ == 0 {
        return Ok((1.0, 1.0, 1.0));
    }
    Ok((
        ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        ratio(c.tp, c.tp + c.fp),
        ratio(c.tp, c.tp + c.fn_),
    ))
}

fn check_grid(mask: &[u8], extents: [usize; 3]) -> Result<()> {
    if mask.len() != extents.iter().product::<usize>() {
        return Err(Error::Invalid(format!("mask of {} voxels for extents {extents:?}", mask.len())));
    }
    Ok(())
}

/// Flat indices of the surface voxels of `mask`.
pub fn surface_voxels(mask: &[u8], extents: [usize; 3]) -> Result<Vec<usize>> {
    check_grid(mask, extents)?;
    let [d, h, w] = extents;
    let plane = h * w;
    let bg = |i: usize| mask[i] == 0;
    Ok((0..mask.len())
        .filter(|&i| {
            if mask[i] == 0 {
                return false;
            }
            let (z, y, x) = (i / plane, (i / w) % h, i % w);
            z == 0
                || z + 1 == d
                || y == 0
                || y + 1 == h
                || x == 0
                || x + 1 == w
                || bg(i - plane)
                || bg(i + plane)
                || bg(i - w)
                || bg(i + w)
                || bg(i - 1)
                || bg(i + 1)
        })
        .collect())
}

/// Surface points in mm.
pub fn surface_extract(mask: &[u8], extents: [usize; 3], spacing: [f64; 3]) -> Result<Vec<[f64; 3]>> {
    let [_, h, w] = extents;
    Ok(surface_voxels(mask, extents)?
        .into_iter()
        .map(|i| {
            let idx = [i / (h * w), (i / w) % h, i % w];
            std::array::from_fn(|a| idx[a] as f64 * spacing[a])
        })
        .collect())
}

/// Squared distance (mm²) from every voxel centre to the nearest voxel of
/// `seeds`, by separable minimization along x, then y, then z. Each pass
/// only compares index differences, so the result is invariant under
/// translating the seeds and the query together. Voxels with no seed get
/// `+∞`.
pub fn squared_distance_map(seeds: &[usize], extents: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let n: usize = extents.iter().product();
    let mut g = vec![f64::INFINITY; n];
    for &s in seeds {
        g[s] = 0.0;
    }
    let strides = [extents[1] * extents[2], extents[2], 1];
    let mut line = Vec::new();
    for axis in [2, 1, 0] {
        let len = extents[axis];
        let stride = strides[axis];
        let step2: Vec<f64> = (0..len).map(|k| (k as f64 * spacing[axis]).powi(2)).collect();
        for base in 0..n {
            if (base / stride) % len != 0 {
                continue;
            }
            line.clear();
            line.extend((0..len).map(|k| g[base + k * stride]));
            for q in 0..len {
                let mut best = f64::INFINITY;
                for (p, &gp) in line.iter().enumerate() {
                    if gp.is_finite() {
                        best = best.min(step2[q.abs_diff(p)] + gp);
                    }
                }
                g[base + q * stride] = best;
            }
        }
    }
    g
}

/// Distances (mm) from each surface voxel of `from` to the nearest surface
/// voxel of `to`.
pub fn directed_surface_distances(
    from: &[usize],
    to: &[usize],
    extents: [usize; 3],
    spacing: [f64; 3],
) -> Vec<f64> {
    let map = squared_distance_map(to, extents, spacing);
    from.iter().map(|&i| map[i].sqrt()).collect()
}

/// Linear-interpolated percentile `q ∈ [0, 100]` of a non-empty list.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Surface-distance results for one mask pair; `None` when exactly one
/// mask is empty.
pub fn surface_metrics(
    pred: &[u8],
    reference: &[u8],
    extents: [usize; 3],
    spacing: [f64; 3],
    tol_mm: f64,
) -> Result<(Option<f64>, Option<f64>)> {
    check_grid(pred, extents)?;
    check_grid(reference, extents)?;
    if !(tol_mm > 0.0) {
        return Err(Error::Invalid(format!("NSD tolerance {tol_mm} must be > 0")));
    }
    let sp = surface_voxels(pred, extents)?;
    let sr = surface_voxels(reference, extents)?;
    match (sp.is_empty(), sr.is_empty()) {
        (true, true) => return Ok((Some(0.0), Some(1.0))),
        (true, false) | (false, true) => return Ok((None, None)),
        _ => {}
    }
    let dp = directed_surface_distances(&sp, &sr, extents, spacing);
    let dr = directed_surface_distances(&sr, &sp, extents, spacing);
    let hd95 = percentile(&dp, 95.0).max(percentile(&dr, 95.0));
    let close = dp.iter().chain(&dr).filter(|&&d| d <= tol_mm).count();
    let nsd = close as f64 / (dp.len() + dr.len()) as f64;
    Ok((Some(hd95), Some(nsd)))
}

pub fn hd95(pred: &[u8], reference: &[u8], extents: [usize; 3], spacing: [f64; 3]) -> Result<Option<f64>> {
    Ok(surface_metrics(pred, reference, extents, spacing, 1.0)?.0)
}

pub fn nsd(pred: &[u8], reference: &[u8], extents: [usize; 3], spacing: [f64; 3], tol_mm: f64) -> Result<Option<f64>> {
    Ok(surface_metrics(pred, reference, extents, spacing, tol_mm)?.1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub hd95_mm: Option<f64>,
    pub nsd: Option<f64>,
}

pub fn case_metrics(
    case_id: &str,
    pred: &[u8],
    reference: &[u8],
    extents: [usize; 3],
    spacing: [f64; 3],
    cfg: &MetricConfig,
) -> Result<CaseMetrics> {
    let (dice, precision, recall) = overlap_metrics(pred, reference)?;
    let (hd95_mm, nsd) = surface_metrics(pred, reference, extents, spacing, cfg.nsd_tolerance_mm)?;
    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        dice,
        precision,
        recall,
        hd95_mm,
        nsd,
    })
}

pub fn binarize(probabilities: &[Real], threshold: f64) -> Vec<u8> {
    probabilities.iter().map(|&p| u8::from(f64::from(p) > threshold)).collect()
}

/// Predicts every case with `model` and scores it against its mask.
pub fn evaluate_cases(model: &Model, cases: &[Case], cfg: &MetricConfig) -> Result<Vec<CaseMetrics>> {
    cases
        .iter()
        .map(|c| {
            let pred = binarize(&model.predict(&c.volume)?.probabilities, cfg.threshold);
            case_metrics(&c.volume.case_id, &pred, &c.mask.data, c.volume.extents, c.volume.spacing, cfg)
        })
        .collect()
}

pub fn mean_dice(cases: &[CaseMetrics]) -> f64 {
    if cases.is_empty() {
        return f64::NAN;
    }
    cases.iter().map(|c| c.dice).sum::<f64>() / cases.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub defined: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return Self { mean: None, std: None, defined: 0 };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            mean: Some(mean),
            std: Some(var.sqrt()),
            defined: v.len(),
        }
    }

    pub fn render(&self, digits: usize) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.digits$} ± {s:.digits$}"),
            _ => "undefined".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateReport {
    pub cases: usize,
    pub dice: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub hd95_mm: Summary,
    pub nsd: Summary,
}

impl AggregateReport {
    /// Cases whose surface metrics were undefined.
    pub fn undefined_surface_cases(&self) -> usize {
        self.cases - self.hd95_mm.defined
    }
}

/// Mean and population std per metric, in case order.
pub fn aggregate(cases: &[CaseMetrics]) -> Result<AggregateReport> {
    if cases.is_empty() {
        return Err(Error::Invalid("cannot aggregate zero cases".into()));
    }
    Ok(AggregateReport {
        cases: cases.len(),
        dice: Summary::of(cases.iter().map(|c| Some(c.dice))),
        precision: Summary::of(cases.iter().map(|c| Some(c.precision))),
        recall: Summary::of(cases.iter().map(|c| Some(c.recall))),
        hd95_mm: Summary::of(cases.iter().map(|c| c.hd95_mm)),
        nsd: Summary::of(cases.iter().map(|c| c.nsd)),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const CASE_CSV_HEADER: &str = "case_id,dice,precision,recall,hd95_mm,nsd";

/// Per-case CSV; undefined values are empty fields.
pub fn cases_csv(cases: &[CaseMetrics]) -> String {
    let mut s = format!("{CASE_CSV_HEADER}\n");
    for c in cases {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.case_id,
            c.dice,
            c.precision,
            c.recall,
            opt(c.hd95_mm),
            opt(c.nsd)
        ));
    }
    s
}

/// Markdown table with one row per labelled report, columns Dice,
/// Precision, Recall, HD95 (mm), NSD.
pub fn render_table(rows: &[(String, AggregateReport)]) -> String {
    let mut s = String::from("| Model | Dice | Precision | Recall | HD95 (mm) | NSD | Cases (surface undefined) |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for (label, r) in rows {
        s.push_str(&format!(
            "| {label} | {} | {} | {} | {} | {} | {} ({}) |\n",
            r.dice.render(4),
            r.precision.render(4),
            r.recall.render(4),
            r.hd95_mm.render(4),
            r.nsd.render(4),
            r.cases,
            r.undefined_surface_cases()
        ));
    }
    s
}

#[derive(Serialize)]
struct JsonReport<'a> {
    hd95_unit: &'static str,
    aggregate: &'a AggregateReport,
    cases: &'a [CaseMetrics],
}

pub fn report_json(cases: &[CaseMetrics], aggregate: &AggregateReport) -> String {
    serde_json::to_string_pretty(&JsonReport {
        hd95_unit: "mm",
        aggregate,
        cases,
    })
    .expect("metric report serializes")
}
