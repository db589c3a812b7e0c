use std::fs;

use lesionseg::config::{DataConfig, RunConfig};
use lesionseg::data::{self, CaseSpec, Manifest, Split};
use lesionseg::error::Error;
use proptest::prelude::*;

fn small_spec(seed: u64) -> CaseSpec {
    let cfg = DataConfig {
        extents: [8, 20, 20],
        radius_min_mm: 3.0,
        radius_max_mm: 3.5,
        lesions_max: 1,
        ..DataConfig::default()
    };
    CaseSpec::from_config(&cfg, format!("c{seed}"), seed)
}

#[test]
fn generation_is_deterministic_per_seed() {
    let a = data::generate_case(&small_spec(3)).unwrap();
    let b = data::generate_case(&small_spec(3)).unwrap();
    assert_eq!(a, b);
    let c = data::generate_case(&small_spec(4)).unwrap();
    assert_ne!(a.volume.channels[0].data, c.volume.channels[0].data);
}

#[test]
fn channels_are_standardized() {
    let case = data::generate_case(&small_spec(8)).unwrap();
    assert_eq!(case.volume.channels.len(), 3);
    for c in &case.volume.channels {
        let n = c.data.len() as f64;
        let mean = c.data.iter().sum::<f64>() / n;
        let var = c.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "{}: mean {mean}", c.name);
        assert!((var - 1.0).abs() < 1e-9, "{}: var {var}", c.name);
    }
}

#[test]
fn lesions_raise_dwi_and_lower_adc() {
    let case = data::generate_case(&small_spec(21)).unwrap();
    let mask = &case.mask.data;
    let mean_where = |ch: usize, want: u8| {
        let v: Vec<f64> = case.volume.channels[ch]
            .data
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m == want)
            .map(|(&x, _)| x)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean_where(1, 1) < mean_where(1, 0));
    assert!(mean_where(2, 1) > mean_where(2, 0));
}

#[test]
fn mask_matches_planned_ellipsoids() {
    let spec = CaseSpec::from_config(&DataConfig::default(), "plan", 77);
    let case = data::generate_case(&spec).unwrap();
    let lesions = data::plan_lesions(&spec).unwrap();
    assert_eq!(lesions.len(), case.mask.lesion_count);
    let [d, h, w] = spec.extents;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let inside = lesions.iter().any(|e| e.contains([z, y, x], spec.spacing));
                assert_eq!(case.mask.data[data::voxel_index(spec.extents, z, y, x)], u8::from(inside));
            }
        }
    }
}

#[test]
fn default_dataset_has_ninety_cases() {
    let cfg = RunConfig::default();
    let specs = data::dataset_specs(&cfg);
    assert_eq!(specs.len(), 90);
    let count = |s: Split| specs.iter().filter(|(_, x)| *x == s).count();
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (60, 10, 20));
    let mut ids: Vec<_> = specs.iter().map(|(s, _)| s.case_id.clone()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 90);
}

#[test]
fn dataset_round_trips_through_disk() {
    let mut cfg = RunConfig::default();
    cfg.data = DataConfig {
        train_cases: 2,
        val_cases: 1,
        test_cases: 1,
        extents: [8, 20, 20],
        radius_max_mm: 3.5,
        lesions_max: 1,
        ..DataConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let manifest = data::generate_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(Manifest::load(dir.path()).unwrap(), manifest);
    for split in [Split::Train, Split::Val, Split::Test] {
        assert_eq!(data::load_split(dir.path(), split).unwrap(), data::generate_split(&cfg, split).unwrap());
    }
}

fn corrupt_and_load(edit: impl FnOnce(&std::path::Path)) -> Error {
    let dir = tempfile::tempdir().unwrap();
    let case = data::generate_case(&small_spec(5)).unwrap();
    data::save_case(&case, dir.path()).unwrap();
    edit(dir.path());
    data::load_case(dir.path()).unwrap_err()
}

fn rewrite_header(dir: &std::path::Path, from: &str, to: &str) {
    let p = dir.join("header.txt");
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.contains(from));
    fs::write(&p, text.replace(from, to)).unwrap();
}

#[test]
fn corrupt_files_name_the_offending_field() {
    let err = corrupt_and_load(|d| rewrite_header(d, "dtype = ", "dtype = u16"));
    assert!(matches!(err, Error::Format { what: "dtype", .. }), "{err}");

    let err = corrupt_and_load(|d| rewrite_header(d, "extents = 8 20 20", "extents = 8 20"));
    assert!(matches!(err, Error::Format { what: "extents", .. }), "{err}");

    let err = corrupt_and_load(|d| rewrite_header(d, "byte_order = little", "byte_order = big"));
    assert!(matches!(err, Error::Format { what: "byte_order", .. }), "{err}");

    let err = corrupt_and_load(|d| {
        let p = d.join("adc.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, bytes).unwrap();
    });
    assert!(matches!(err, Error::Format { what: "payload", .. }), "{err}");
    assert!(err.to_string().contains("adc.bin"));

    let err = corrupt_and_load(|d| fs::write(d.join("mask.bin"), vec![2u8; 8 * 20 * 20]).unwrap());
    assert!(matches!(err, Error::Format { what: "mask", .. }), "{err}");

    let err = corrupt_and_load(|d| fs::remove_file(d.join("dwi.bin")).unwrap());
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = small_spec(1);
    s.lesion_count = (3, 2);
    assert!(data::generate_case(&s).is_err());
    let mut s = small_spec(1);
    s.extents = [0, 4, 4];
    assert!(data::generate_case(&s).is_err());
    let mut s = small_spec(1);
    s.noise = -1.0;
    assert!(data::generate_case(&s).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lesion_count_stays_in_range(seed in any::<u64>(), lo in 0usize..2, extra in 0usize..2) {
        let cfg = DataConfig {
            lesions_min: lo,
            lesions_max: lo + extra,
            radius_min_mm: 3.0,
            radius_max_mm: 4.0,
            ..DataConfig::default()
        };
        let case = data::generate_case(&CaseSpec::from_config(&cfg, "p", seed)).unwrap();
        prop_assert!((lo..=lo + extra).contains(&case.mask.lesion_count));
        prop_assert_eq!(
            data::count_components(case.mask.extents, &case.mask.data),
            case.mask.lesion_count
        );
        prop_assert_eq!(case.mask.is_empty(), case.mask.lesion_count == 0);
    }
}
