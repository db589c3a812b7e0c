use std::collections::BTreeMap;

use lesionseg::autodiff::Tensor;
use lesionseg::config::{BackboneConfig, DataConfig, RefinerConfig, RunConfig, ScheduleConfig, ScheduleMode};
use lesionseg::curriculum::{self, Phase, Sgd};
use lesionseg::data::{self, Split};
use lesionseg::model::Model;
use lesionseg::params::ParamStore;
use proptest::prelude::*;

fn schedule(total: usize) -> ScheduleConfig {
    ScheduleConfig::with_total_epochs(total)
}

#[test]
fn ramp_midpoint_is_half_the_target() {
    let s = schedule(100);
    // Ramp runs from epoch 45 (λ = 0) to epoch 55 (λ = target).
    let at = |e| curriculum::phase_at(e, &s).unwrap();
    assert_eq!(at(45).lambda_align, 0.0);
    assert!((at(50).lambda_align - 0.05).abs() < 1e-15);
    assert!((at(50).lambda_heat - 0.05).abs() < 1e-15);
    assert_eq!(at(55).lambda_align, 0.1);
    assert_eq!(at(79).lambda_heat, 0.1);
}

#[test]
fn phases_switch_at_the_boundaries() {
    let s = schedule(100);
    let phase = |e| curriculum::phase_at(e, &s).unwrap().phase;
    assert_eq!(phase(0), Phase::SegOnly);
    assert_eq!(phase(39), Phase::SegOnly);
    assert_eq!(phase(40), Phase::SemanticTransfer);
    assert_eq!(phase(79), Phase::SemanticTransfer);
    assert_eq!(phase(80), Phase::AuxOffRefine);
    assert!(curriculum::phase_at(100, &s).is_err());
    assert!(curriculum::phase_at(79, &s).map(|p| !p.refiner_enabled).unwrap());
    assert!(curriculum::phase_at(80, &s).unwrap().refiner_enabled);
}

#[test]
fn unscheduled_mode_is_fully_on_from_the_start() {
    let mut s = schedule(10);
    s.mode = ScheduleMode::Unscheduled;
    for e in 0..10 {
        let p = curriculum::phase_at(e, &s).unwrap();
        assert_eq!(p.phase, Phase::Unscheduled);
        assert_eq!((p.lambda_align, p.lambda_heat, p.refiner_enabled), (0.1, 0.1, true));
    }
}

#[test]
fn disabled_auxiliaries_make_phase_two_look_like_phase_one() {
    let mut s = schedule(50);
    s.use_align = false;
    s.use_heat = false;
    for e in 0..s.refine_start {
        let p = curriculum::phase_at(e, &s).unwrap();
        assert_eq!((p.lambda_align, p.lambda_heat, p.refiner_enabled), (0.0, 0.0, false));
    }
}

#[test]
fn learning_rate_follows_poly_decay() {
    let s = schedule(20);
    for e in 0..20 {
        let want = 1e-2 * (1.0 - e as f64 / 20.0).powf(0.9);
        assert_eq!(curriculum::learning_rate(e, &s), want);
    }
}

#[test]
fn nesterov_step_matches_hand_computation() {
    let mut s = schedule(10);
    s.momentum = 0.5;
    s.grad_clip = 0.0;
    let mut store = ParamStore::new();
    store.insert("w", Tensor::new([2], vec![1.0, -2.0]).unwrap());
    let mut opt = Sgd::new(&s);
    opt.register("w", store.get("w").unwrap()).unwrap();
    let grads = BTreeMap::from([("w".to_string(), Tensor::new([2], vec![0.4, -0.2]).unwrap())]);

    // v = g; p -= lr (g + μ v)
    opt.step(&mut store, &grads, 0.1).unwrap();
    let p1 = [1.0 - 0.1 * (0.4 + 0.5 * 0.4), -2.0 - 0.1 * (-0.2 + 0.5 * -0.2)];
    assert_eq!(store.get("w").unwrap().data(), &p1);

    // v = μ g + g
    opt.step(&mut store, &grads, 0.1).unwrap();
    let v = [0.5 * 0.4 + 0.4, 0.5 * -0.2 + -0.2];
    let p2 = [p1[0] - 0.1 * (0.4 + 0.5 * v[0]), p1[1] - 0.1 * (-0.2 + 0.5 * v[1])];
    assert_eq!(store.get("w").unwrap().data(), &p2);
}

#[test]
fn clipping_rescales_to_the_threshold() {
    let mut s = schedule(10);
    s.momentum = 0.0;
    s.grad_clip = 1.0;
    let mut store = ParamStore::new();
    store.insert("a", Tensor::zeros([1]).unwrap());
    store.insert("b", Tensor::zeros([1]).unwrap());
    let mut opt = Sgd::new(&s);
    opt.register("a", store.get("a").unwrap()).unwrap();
    opt.register("b", store.get("b").unwrap()).unwrap();
    let grads = BTreeMap::from([
        ("a".to_string(), Tensor::new([1], vec![3.0]).unwrap()),
        ("b".to_string(), Tensor::new([1], vec![4.0]).unwrap()),
    ]);
    let norm = opt.step(&mut store, &grads, 1.0).unwrap();
    assert_eq!(norm, 5.0);
    assert!((store.get("a").unwrap().data()[0] + 0.6).abs() < 1e-15);
    assert!((store.get("b").unwrap().data()[0] + 0.8).abs() < 1e-15);
}

#[test]
fn unregistered_parameters_are_left_alone() {
    let s = schedule(10);
    let mut store = ParamStore::new();
    store.insert("kept", Tensor::ones([2]).unwrap());
    store.insert("moved", Tensor::ones([2]).unwrap());
    let mut opt = Sgd::new(&s);
    opt.register("moved", store.get("moved").unwrap()).unwrap();
    let g = Tensor::ones([2]).unwrap();
    let grads = BTreeMap::from([("kept".to_string(), g.clone()), ("moved".to_string(), g)]);
    opt.step(&mut store, &grads, 0.1).unwrap();
    assert_eq!(store.get("kept").unwrap().data(), &[1.0, 1.0]);
    assert_ne!(store.get("moved").unwrap().data(), &[1.0, 1.0]);
    assert!(!opt.contains("kept"));
}

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig {
        seed: 5,
        data: DataConfig {
            train_cases: 1,
            val_cases: 0,
            test_cases: 0,
            extents: [8, 20, 20],
            lesions_max: 1,
            radius_min_mm: 3.0,
            radius_max_mm: 3.5,
            ..DataConfig::default()
        },
        model: BackboneConfig {
            input_extents: [8, 16, 16],
            base_channels: 2,
            text_dim: 8,
            ..BackboneConfig::default()
        },
        refiner: RefinerConfig {
            hidden: 8,
            heads: 2,
            ..RefinerConfig::default()
        },
        ..RunConfig::default()
    };
    cfg.schedule = ScheduleConfig {
        steps_per_epoch: 1,
        ..schedule(5)
    };
    cfg
}

#[test]
fn attaching_the_refiner_leaves_predictions_unchanged() {
    let cfg = tiny_config();
    let cases = data::generate_split(&cfg, Split::Train).unwrap();
    let mut model = Model::new(&cfg).unwrap();
    let before = model.predict(&cases[0].volume).unwrap();
    model.attach_refiner().unwrap();
    let after = model.predict(&cases[0].volume).unwrap();
    assert_eq!(before.probabilities, after.probabilities);
}

#[test]
fn aux_free_epochs_log_total_equal_to_seg() {
    let cfg = tiny_config();
    let cases = data::generate_split(&cfg, Split::Train).unwrap();
    let out = curriculum::train(&cfg, &cases, curriculum::PhaseLimit::All, |_, _| Ok(())).unwrap();
    assert_eq!(out.log.len(), 5);
    for e in &out.log {
        if e.lambda_align == 0.0 && e.lambda_heat == 0.0 {
            assert_eq!(e.total, e.seg, "epoch {}", e.epoch);
        }
        assert_eq!(e.refiner_optimized, e.phase == Phase::AuxOffRefine);
    }
    let csv = curriculum::epoch_log_csv(&out.log);
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with(curriculum::EPOCH_LOG_HEADER));
}

proptest! {
    #[test]
    fn lambda_is_monotone_and_bounded(total in 10usize..200) {
        let s = schedule(total);
        let mut prev = 0.0;
        for e in 0..total {
            let p = curriculum::phase_at(e, &s).unwrap();
            prop_assert!((0.0..=s.lambda_align).contains(&p.lambda_align));
            match p.phase {
                Phase::SemanticTransfer => {
                    prop_assert!(p.lambda_align >= prev);
                    prev = p.lambda_align;
                }
                _ => prop_assert_eq!(p.lambda_align, 0.0),
            }
        }
    }

    #[test]
    fn learning_rate_never_increases(total in 1usize..300) {
        let s = schedule(total);
        for e in 1..total {
            prop_assert!(curriculum::learning_rate(e, &s) <= curriculum::learning_rate(e - 1, &s));
        }
    }
}
