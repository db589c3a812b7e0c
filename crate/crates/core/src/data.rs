//! Synthetic multi-modal phantoms and their on-disk case format.
//!
//! A case directory holds `header.txt` plus one little-endian float blob per
//! modality and a byte-per-voxel `mask.bin`:
//!
//! ```text
//! lesionseg-case v1
//! case_id = case_0003
//! extents = 16 32 32
//! spacing = 3 0.5 0.5
//! modalities = t2w adc dwi
//! dtype = f64
//! byte_order = little
//! lesion_count = 2
//! ```
//!
//! Blobs are row-major over `D×H×W` and hold the in-memory values verbatim,
//! so loading a saved case is bit-exact.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use lesionseg_autodiff::Real;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{DataConfig, RunConfig};
use crate::error::{Error, Result};
use crate::rng;

pub const MODALITY_NAMES: [&str; 3] = ["t2w", "adc", "dwi"];
const CASE_MAGIC: &str = "lesionseg-case v1";

const DTYPE: &str = if std::mem::size_of::<Real>() == 8 { "f64" } else { "f32" };

pub fn voxel_index(extents: [usize; 3], z: usize, y: usize, x: usize) -> usize {
    (z * extents[1] + y) * extents[2] + x
}

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub name: String,
    pub data: Vec<Real>,
}

/// Co-registered intensity channels of one case.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub case_id: String,
    pub extents: [usize; 3],
    /// Voxel size in mm along D, H, W.
    pub spacing: [f64; 3],
    pub channels: Vec<Channel>,
}

impl Volume {
    pub fn voxels(&self) -> usize {
        self.extents.iter().product()
    }
}

/// Binary lesion label co-registered with a [`Volume`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LesionMask {
    pub extents: [usize; 3],
    pub data: Vec<u8>,
    /// Number of 6-connected foreground components.
    pub lesion_count: usize,
}

impl LesionMask {
    pub fn new(extents: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if data.len() != extents.iter().product::<usize>() {
            return Err(Error::Invalid(format!(
                "mask of {} voxels for extents {extents:?}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("mask values must be 0 or 1".into()));
        }
        let lesion_count = count_components(extents, &data);
        Ok(Self {
            extents,
            data,
            lesion_count,
        })
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.foreground() == 0
    }
}

/// Labels 6-connected foreground components; returns the count.
pub fn count_components(extents: [usize; 3], data: &[u8]) -> usize {
    let [d, h, w] = extents;
    let mut seen = vec![false; data.len()];
    let mut queue = VecDeque::new();
    let mut count = 0;
    for start in 0..data.len() {
        if data[start] == 0 || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (z, y, x) = (i / (h * w), (i / w) % h, i % w);
            let mut visit = |j: usize| {
                if data[j] == 1 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if z > 0 {
                visit(i - h * w);
            }
            if z + 1 < d {
                visit(i + h * w);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
    }
    count
}

#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub volume: Volume,
    pub mask: LesionMask,
}

/// An axis-aligned ellipsoid in mm, centred at `center`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    /// Whether the voxel centre at `idx·spacing` satisfies the ellipsoid inequality.
    pub fn contains(&self, idx: [usize; 3], spacing: [f64; 3]) -> bool {
        let mut acc = 0.0;
        for a in 0..3 {
            let t = (idx[a] as f64 * spacing[a] - self.center[a]) / self.radii[a];
            acc += t * t;
        }
        acc <= 1.0
    }
}

/// Everything needed to regenerate one phantom.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseSpec {
    pub case_id: String,
    pub seed: u64,
    pub extents: [usize; 3],
    pub spacing: [f64; 3],
    pub lesion_count: (usize, usize),
    pub radius_mm: (f64, f64),
    pub contrast: [f64; 3],
    pub noise: f64,
    pub texture_scale: f64,
}

impl CaseSpec {
    pub fn from_config(cfg: &DataConfig, case_id: impl Into<String>, seed: u64) -> Self {
        Self {
            case_id: case_id.into(),
            seed,
            extents: cfg.extents,
            spacing: cfg.spacing,
            lesion_count: (cfg.lesions_min, cfg.lesions_max),
            radius_mm: (cfg.radius_min_mm, cfg.radius_max_mm),
            contrast: cfg.contrast,
            noise: cfg.noise,
            texture_scale: cfg.texture_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Generation(format!("{}: {m}", self.case_id)));
        if self.extents.contains(&0) {
            return fail(format!("extents {:?} must be positive", self.extents));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return fail(format!("spacing {:?} must be positive", self.spacing));
        }
        if self.lesion_count.0 > self.lesion_count.1 {
            return fail(format!("lesion count range {:?} is empty", self.lesion_count));
        }
        let (rmin, rmax) = self.radius_mm;
        if !(rmin <= rmax) {
            return fail(format!("radius range {:?} is empty", self.radius_mm));
        }
        let max_spacing = self.spacing.iter().copied().fold(0.0, f64::max);
        if self.lesion_count.1 > 0 && rmin < max_spacing {
            return fail(format!(
                "minimum radius {rmin} mm is below one voxel ({max_spacing} mm) on some axis"
            ));
        }
        if !(self.noise >= 0.0) || !(self.texture_scale >= 0.0) {
            return fail("noise and texture_scale must be ≥ 0".into());
        }
        Ok(())
    }
}

fn box_blur_axis(data: &mut [f64], extents: [usize; 3], axis: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let strides = [extents[1] * extents[2], extents[2], 1];
    let n = extents[axis];
    let stride = strides[axis];
    let mut line = vec![0.0; n];
    for base in 0..data.len() {
        // Visit each line once, from its first element.
        if (base / stride) % n != 0 {
            continue;
        }
        for (i, v) in line.iter_mut().enumerate() {
            *v = data[base + i * stride];
        }
        for i in 0..n {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            let s: f64 = line[lo..=hi].iter().sum();
            data[base + i * stride] = s / (hi - lo + 1) as f64;
        }
    }
}

fn standardize(data: &mut [f64]) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    for v in data {
        *v = (*v - mean) * inv;
    }
}

fn rasterize(extents: [usize; 3], spacing: [f64; 3], e: &Ellipsoid) -> Vec<usize> {
    let mut voxels = Vec::new();
    for z in 0..extents[0] {
        for y in 0..extents[1] {
            for x in 0..extents[2] {
                if e.contains([z, y, x], spacing) {
                    voxels.push(voxel_index(extents, z, y, x));
                }
            }
        }
    }
    voxels
}

fn touches(extents: [usize; 3], mask: &[u8], voxels: &[usize]) -> bool {
    let [_, h, w] = extents;
    let plane = h * w;
    voxels.iter().any(|&i| {
        let (z, y, x) = (i / plane, (i / w) % h, i % w);
        mask[i] == 1
            || (z > 0 && mask[i - plane] == 1)
            || (z + 1 < extents[0] && mask[i + plane] == 1)
            || (y > 0 && mask[i - w] == 1)
            || (y + 1 < h && mask[i + w] == 1)
            || (x > 0 && mask[i - 1] == 1)
            || (x + 1 < w && mask[i + 1] == 1)
    })
}

/// Lesions placed by [`generate_case`], in placement order.
pub fn plan_lesions(spec: &CaseSpec) -> Result<Vec<Ellipsoid>> {
    Ok(generate_with_plan(spec)?.1)
}

/// Builds one phantom: smoothed-noise background, ellipsoidal lesions with
/// per-modality signed contrast, additive noise, then per-modality
/// standardization to zero mean and unit variance.
pub fn generate_case(spec: &CaseSpec) -> Result<Case> {
    Ok(generate_with_plan(spec)?.0)
}

fn generate_with_plan(spec: &CaseSpec) -> Result<(Case, Vec<Ellipsoid>)> {
    spec.validate()?;
    let extents = spec.extents;
    let voxels: usize = extents.iter().product();
    let mut rng = rng::stream(spec.seed, rng::STREAM_CASES, 0);

    let count = rng.random_range(spec.lesion_count.0..=spec.lesion_count.1);
    let mut mask = vec![0u8; voxels];
    let mut lesions = Vec::with_capacity(count);
    for lesion in 0..count {
        const ATTEMPTS: usize = 64;
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let radii: [f64; 3] = std::array::from_fn(|_| {
                if spec.radius_mm.0 == spec.radius_mm.1 {
                    spec.radius_mm.0
                } else {
                    rng.random_range(spec.radius_mm.0..spec.radius_mm.1)
                }
            });
            let mut center = [0.0; 3];
            for a in 0..3 {
                let span = (extents[a] - 1) as f64 * spec.spacing[a];
                if 2.0 * radii[a] > span {
                    return Err(Error::Generation(format!(
                        "{}: lesion of radius {:.2} mm cannot fit in {:.2} mm along axis {a}",
                        spec.case_id, radii[a], span
                    )));
                }
                center[a] = rng.random_range(radii[a]..=span - radii[a]);
            }
            let e = Ellipsoid { center, radii };
            let vox = rasterize(extents, spec.spacing, &e);
            if vox.is_empty() || touches(extents, &mask, &vox) {
                continue;
            }
            for &i in &vox {
                mask[i] = 1;
            }
            lesions.push(e);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Generation(format!(
                "{}: could not place lesion {} of {count} without touching another",
                spec.case_id,
                lesion + 1
            )));
        }
    }

    let min_spacing = spec.spacing.iter().copied().fold(f64::INFINITY, f64::min);
    let radii: [usize; 3] =
        std::array::from_fn(|a| (spec.texture_scale * min_spacing / spec.spacing[a]).round() as usize);
    let heterogeneity: Vec<f64> = (0..count).map(|_| rng.random_range(0.7..1.3)).collect();
    let lesion_voxels: Vec<Vec<usize>> = lesions
        .iter()
        .map(|e| rasterize(extents, spec.spacing, e))
        .collect();

    let mut channels = Vec::with_capacity(MODALITY_NAMES.len());
    for (m, name) in MODALITY_NAMES.iter().enumerate() {
        let mut data: Vec<f64> = (0..voxels).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for axis in 0..3 {
                box_blur_axis(&mut data, extents, axis, radii[axis]);
            }
        }
        standardize(&mut data);
        for (vox, h) in lesion_voxels.iter().zip(&heterogeneity) {
            for &i in vox {
                data[i] += spec.contrast[m] * h;
            }
        }
        if spec.noise > 0.0 {
            for v in &mut data {
                *v += spec.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        standardize(&mut data);
        channels.push(Channel {
            name: name.to_string(),
            data: data.into_iter().map(|v| v as Real).collect(),
        });
    }

    let volume = Volume {
        case_id: spec.case_id.clone(),
        extents,
        spacing: spec.spacing,
        channels,
    };
    let mask = LesionMask::new(extents, mask)?;
    Ok((Case { volume, mask }, lesions))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Writes `case` into directory `dir` (created if needed).
pub fn save_case(case: &Case, dir: &Path) -> Result<()> {
    let v = &case.volume;
    if case.mask.extents != v.extents {
        return Err(Error::Invalid(format!(
            "{}: mask extents {:?} differ from volume extents {:?}",
            v.case_id, case.mask.extents, v.extents
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<&str> = v.channels.iter().map(|c| c.name.as_str()).collect();
    let header = format!(
        "{CASE_MAGIC}\ncase_id = {}\nextents = {}\nspacing = {}\nmodalities = {}\ndtype = {DTYPE}\nbyte_order = little\nlesion_count = {}\n",
        v.case_id,
        join(&v.extents),
        join(&v.spacing),
        names.join(" "),
        case.mask.lesion_count,
    );
    write_file(&dir.join("header.txt"), header.as_bytes())?;
    for c in &v.channels {
        let mut bytes = Vec::with_capacity(c.data.len() * std::mem::size_of::<Real>());
        for x in &c.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        write_file(&dir.join(format!("{}.bin", c.name)), &bytes)?;
    }
    write_file(&dir.join("mask.bin"), &case.mask.data)
}

struct Header {
    case_id: String,
    extents: [usize; 3],
    spacing: [f64; 3],
    modalities: Vec<String>,
    lesion_count: usize,
}

fn parse_header(path: &Path, text: &str) -> Result<Header> {
    let bad = |what: &'static str, detail: String| Error::format(path, what, detail);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CASE_MAGIC) {
        return Err(bad("magic", format!("first line must be `{CASE_MAGIC}`")));
    }
    let mut fields = std::collections::BTreeMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad("header", format!("expected `key = value`, got `{line}`")))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |key: &'static str| {
        fields
            .get(key)
            .cloned()
            .ok_or_else(|| bad("header", format!("missing field `{key}`")))
    };
    fn triple<T: std::str::FromStr>(s: &str) -> Option<[T; 3]> {
        let p: Vec<T> = s.split_whitespace().map(|x| x.parse().ok()).collect::<Option<_>>()?;
        p.try_into().ok()
    }
    let extents: [usize; 3] = triple(&get("extents")?)
        .filter(|e: &[usize; 3]| !e.contains(&0))
        .ok_or_else(|| bad("extents", "expected three positive integers".into()))?;
    let spacing: [f64; 3] = triple(&get("spacing")?)
        .filter(|s: &[f64; 3]| s.iter().all(|&v| v > 0.0))
        .ok_or_else(|| bad("spacing", "expected three positive reals".into()))?;
    let dtype = get("dtype")?;
    if dtype != DTYPE {
        return Err(bad("dtype", format!("expected {DTYPE}, found {dtype}")));
    }
    let order = get("byte_order")?;
    if order != "little" {
        return Err(bad("byte_order", format!("expected little, found {order}")));
    }
    let lesion_count = get("lesion_count")?
        .parse()
        .map_err(|_| bad("lesion_count", "expected an integer".into()))?;
    let modalities: Vec<String> = get("modalities")?.split_whitespace().map(String::from).collect();
    if modalities.is_empty() {
        return Err(bad("modalities", "no modality names".into()));
    }
    Ok(Header {
        case_id: get("case_id")?,
        extents,
        spacing,
        modalities,
        lesion_count,
    })
}

pub fn load_case(dir: &Path) -> Result<Case> {
    let header_path = dir.join("header.txt");
    let text = String::from_utf8(read_file(&header_path)?)
        .map_err(|_| Error::format(&header_path, "header", "not UTF-8"))?;
    let header = parse_header(&header_path, &text)?;
    let voxels: usize = header.extents.iter().product();
    let width = std::mem::size_of::<Real>();

    let mut channels = Vec::with_capacity(header.modalities.len());
    for name in &header.modalities {
        let path = dir.join(format!("{name}.bin"));
        let bytes = read_file(&path)?;
        if bytes.len() != voxels * width {
            return Err(Error::format(
                &path,
                "payload",
                format!(
                    "extents {:?} need {} bytes, found {}",
                    header.extents,
                    voxels * width,
                    bytes.len()
                ),
            ));
        }
        let data = bytes
            .chunks_exact(width)
            .map(|b| Real::from_le_bytes(b.try_into().expect("chunk width")))
            .collect();
        channels.push(Channel {
            name: name.clone(),
            data,
        });
    }
    let mask_path = dir.join("mask.bin");
    let mask_bytes = read_file(&mask_path)?;
    if mask_bytes.len() != voxels {
        return Err(Error::format(
            &mask_path,
            "payload",
            format!("extents {:?} need {voxels} bytes, found {}", header.extents, mask_bytes.len()),
        ));
    }
    let mask = LesionMask::new(header.extents, mask_bytes)
        .map_err(|e| Error::format(&mask_path, "mask", e.to_string()))?;
    if mask.lesion_count != header.lesion_count {
        return Err(Error::format(
            &header_path,
            "lesion_count",
            format!("header says {}, mask has {}", header.lesion_count, mask.lesion_count),
        ));
    }
    Ok(Case {
        volume: Volume {
            case_id: header.case_id,
            extents: header.extents,
            spacing: header.spacing,
            channels,
        },
        mask,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Invalid(format!("unknown split `{s}` (train, val, test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub case_id: String,
    pub split: Split,
    pub lesion_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const CASES_DIR: &str = "cases";

impl Manifest {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("case_id,split,lesion_count\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{}\n", e.case_id, e.split.as_str(), e.lesion_count));
        }
        s
    }

    pub fn load(data_dir: &Path) -> Result<Self> {
        let path = data_dir.join(MANIFEST_FILE);
        let text = String::from_utf8(read_file(&path)?)
            .map_err(|_| Error::format(&path, "manifest", "not UTF-8"))?;
        let mut lines = text.lines();
        if lines.next() != Some("case_id,split,lesion_count") {
            return Err(Error::format(&path, "manifest", "unexpected header line"));
        }
        let mut entries = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let parts: Vec<&str> = line.split(',').collect();
            let [id, split, count] = parts[..] else {
                return Err(Error::format(&path, "manifest", format!("bad row `{line}`")));
            };
            entries.push(ManifestEntry {
                case_id: id.to_string(),
                split: split.parse()?,
                lesion_count: count
                    .parse()
                    .map_err(|_| Error::format(&path, "manifest", format!("bad count in `{line}`")))?,
            });
        }
        Ok(Self { entries })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

pub fn case_dir(data_dir: &Path, case_id: &str) -> PathBuf {
    data_dir.join(CASES_DIR).join(case_id)
}

/// Specs for every case of the dataset, in manifest order.
pub fn dataset_specs(cfg: &RunConfig) -> Vec<(CaseSpec, Split)> {
    let d = &cfg.data;
    let total = d.train_cases + d.val_cases + d.test_cases;
    (0..total)
        .map(|i| {
            let split = if i < d.train_cases {
                Split::Train
            } else if i < d.train_cases + d.val_cases {
                Split::Val
            } else {
                Split::Test
            };
            let seed = rng::derive_seed(cfg.seed, rng::STREAM_CASES, i as u64);
            (CaseSpec::from_config(d, format!("case_{i:04}"), seed), split)
        })
        .collect()
}

/// Generates and writes the whole dataset plus `manifest.csv`.
pub fn generate_dataset(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let mut manifest = Manifest::default();
    for (spec, split) in dataset_specs(cfg) {
        let case = generate_case(&spec)?;
        save_case(&case, &case_dir(out, &spec.case_id))?;
        manifest.entries.push(ManifestEntry {
            case_id: spec.case_id,
            split,
            lesion_count: case.mask.lesion_count,
        });
    }
    write_file(&out.join(MANIFEST_FILE), manifest.to_csv().as_bytes())?;
    Ok(manifest)
}

/// Generates the cases of one split in memory, without touching disk.
pub fn generate_split(cfg: &RunConfig, split: Split) -> Result<Vec<Case>> {
    dataset_specs(cfg)
        .into_iter()
        .filter(|(_, s)| *s == split)
        .map(|(spec, _)| generate_case(&spec))
        .collect()
}

pub fn load_split(data_dir: &Path, split: Split) -> Result<Vec<Case>> {
    let manifest = Manifest::load(data_dir)?;
    manifest
        .split(split)
        .map(|e| load_case(&case_dir(data_dir, &e.case_id)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> CaseSpec {
        CaseSpec::from_config(&DataConfig::default(), "t", 11)
    }

    #[test]
    fn components_are_six_connected() {
        // Two voxels touching only along an edge are separate components.
        let mut m = vec![0u8; 8];
        m[voxel_index([2, 2, 2], 0, 0, 0)] = 1;
        m[voxel_index([2, 2, 2], 0, 1, 1)] = 1;
        assert_eq!(count_components([2, 2, 2], &m), 2);
        m[voxel_index([2, 2, 2], 0, 0, 1)] = 1;
        assert_eq!(count_components([2, 2, 2], &m), 1);
    }

    #[test]
    fn too_small_radius_is_rejected() {
        let mut s = spec();
        s.radius_mm = (1.0, 2.0);
        assert!(matches!(generate_case(&s), Err(Error::Generation(_))));
    }

    #[test]
    fn lesion_that_cannot_fit_is_an_error() {
        let mut s = spec();
        s.radius_mm = (30.0, 30.0);
        s.lesion_count = (1, 1);
        assert!(matches!(generate_case(&s), Err(Error::Generation(_))));
    }

    #[test]
    fn zero_lesions_give_empty_mask() {
        let mut s = spec();
        s.lesion_count = (0, 0);
        let c = generate_case(&s).unwrap();
        assert!(c.mask.is_empty());
        assert_eq!(c.mask.lesion_count, 0);
    }

    #[test]
    fn split_parsing() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert!("dev".parse::<Split>().is_err());
    }
}
