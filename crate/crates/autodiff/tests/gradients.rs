//! Every differentiable operation against central finite differences:
//! 100 randomized small-shape trials each, tolerance 1e-4.

use lesionseg_autodiff::{grad_check, Real, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 100;
const EPS: Real = 1e-6;
const TOL: Real = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: Real, hi: Real) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi)).unwrap()
}

/// Reduces a tensor-valued output to a scalar with a fixed random weighting,
/// so every output element contributes a distinct cotangent.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, tape.shape(y), -1.0, 1.0);
    let wv = tape.constant(w);
    let p = tape.mul(y, wv)?;
    tape.sum(p)
}

fn check<F>(name: &str, seed: u64, make: impl Fn(&mut ChaCha8Rng) -> (Vec<Tensor>, F))
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Real = 0.0;
    for trial in 0..TRIALS {
        let (inputs, f) = make(&mut rng);
        let report = grad_check(&f, &inputs, EPS, TOL).unwrap();
        worst = worst.max(report.max_rel_error);
        assert!(report.passed(), "{name} trial {trial}: {report:?}");
    }
    eprintln!("{name}: worst relative error {worst:.3e}");
}

fn dims(rng: &mut ChaCha8Rng, rank: usize, max: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=max)).collect()
}

#[test]
fn binary_elementwise() {
    check("add/sub/mul/div", 11, |rng| {
        let shape = dims(rng, 2, 4);
        let a = random(rng, &shape, -2.0, 2.0);
        let b = random(rng, &shape, 0.5, 2.0);
        let seed = rng.random();
        (vec![a, b], move |t: &mut Tape, v: &[Var]| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[1])?;
            let m = t.mul(d, v[1])?;
            let q = t.div(m, v[1])?;
            let q2 = t.div(v[0], v[1])?;
            let r = t.add(q, q2)?;
            project(t, r, seed)
        })
    });
}

#[test]
fn unary_elementwise() {
    check("scale/scale_by/add_scalar/one_minus/ln/exp/sigmoid/tanh", 12, |rng| {
        let shape = dims(rng, 3, 3);
        let a = random(rng, &shape, 0.2, 2.0);
        let g = random(rng, &[1], -1.0, 1.0);
        let seed = rng.random();
        (vec![a, g], move |t: &mut Tape, v: &[Var]| {
            let l = t.ln(v[0])?;
            let e = t.exp(l)?;
            let s = t.sigmoid(e)?;
            let h = t.tanh(s)?;
            let o = t.one_minus(h)?;
            let c = t.add_scalar(o, 0.3)?;
            let k = t.scale(c, -1.7)?;
            let g = t.tanh(v[1])?;
            let b = t.scale_by(k, g)?;
            project(t, b, seed)
        })
    });
}

#[test]
fn leaky_relu_and_clamp() {
    check("leaky_relu/clamp", 13, |rng| {
        let shape = dims(rng, 2, 5);
        // Keep samples away from the kinks at 0 and ±0.5.
        let a = Tensor::from_fn(shape.clone(), |_| {
            let mag = rng.random_range(0.05..0.45) + if rng.random_bool(0.5) { 0.55 } else { 0.0 };
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .unwrap();
        let seed = rng.random();
        (vec![a], move |t: &mut Tape, v: &[Var]| {
            let r = t.leaky_relu(v[0], 0.01)?;
            let c = t.clamp(v[0], -0.5, 0.5)?;
            let s = t.add(r, c)?;
            project(t, s, seed)
        })
    });
}

#[test]
fn channel_broadcasts() {
    check("add_channel/mul_channel/add_last", 14, |rng| {
        let mut shape = dims(rng, 4, 3);
        shape[1] = rng.random_range(1..4);
        let x = random(rng, &shape, -1.0, 1.0);
        let w = random(rng, &[shape[1]], -1.0, 1.0);
        let b = random(rng, &[shape[1]], -1.0, 1.0);
        let bl = random(rng, &[shape[3]], -1.0, 1.0);
        let seed = rng.random();
        (vec![x, w, b, bl], move |t: &mut Tape, v: &[Var]| {
            let m = t.mul_channel(v[0], v[1])?;
            let a = t.add_channel(m, v[2])?;
            let l = t.add_last(a, v[3])?;
            project(t, l, seed)
        })
    });
}

#[test]
fn masked_lerp() {
    check("masked_lerp", 23, |rng| {
        let shape = dims(rng, 3, 4);
        let a = random(rng, &shape, -2.0, 2.0);
        let b = random(rng, &shape, -2.0, 2.0);
        let gate = Tensor::from_fn(shape, |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).unwrap();
        let alpha = rng.random_range(0.0..1.0);
        let seed = rng.random();
        (vec![a, b], move |t: &mut Tape, v: &[Var]| {
            let y = t.masked_lerp(v[0], v[1], &gate, alpha)?;
            project(t, y, seed)
        })
    });
}

#[test]
fn reductions() {
    check("sum/mean", 15, |rng| {
        let shape = dims(rng, 3, 4);
        let a = random(rng, &shape, -1.0, 1.0);
        (vec![a], |t: &mut Tape, v: &[Var]| {
            let sq = t.mul(v[0], v[0])?;
            let s = t.sum(sq)?;
            let m = t.mean(v[0])?;
            let mm = t.mul(m, m)?;
            t.add(s, mm)
        })
    });
}

#[test]
fn matmul_and_bmm() {
    check("matmul/bmm", 16, |rng| {
        let (m, k, n, b) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..3));
        let a = random(rng, &[m, k], -1.0, 1.0);
        let c = random(rng, &[k, n], -1.0, 1.0);
        let ba = random(rng, &[b, m, k], -1.0, 1.0);
        let bb = random(rng, &[b, k, n], -1.0, 1.0);
        let (s1, s2) = (rng.random(), rng.random());
        (vec![a, c, ba, bb], move |t: &mut Tape, v: &[Var]| {
            let p = t.matmul(v[0], v[1])?;
            let q = t.bmm(v[2], v[3])?;
            let x = project(t, p, s1)?;
            let y = project(t, q, s2)?;
            t.add(x, y)
        })
    });
}

#[test]
fn shape_ops() {
    check("reshape/permute/concat", 17, |rng| {
        let shape = dims(rng, 3, 3);
        let a = random(rng, &shape, -1.0, 1.0);
        let mut other = shape.clone();
        other[1] = rng.random_range(1..4);
        let b = random(rng, &other, -1.0, 1.0);
        let seed = rng.random();
        (vec![a, b], move |t: &mut Tape, v: &[Var]| {
            let c = t.concat(&[v[0], v[1], v[0]], 1)?;
            let p = t.permute(c, &[2, 0, 1])?;
            let n: usize = t.shape(p).iter().product();
            let r = t.reshape(p, &[n])?;
            project(t, r, seed)
        })
    });
}

#[test]
fn softmax_and_l2_normalize() {
    check("softmax_last/l2_normalize_channels", 18, |rng| {
        let shape = dims(rng, 3, 4);
        let a = random(rng, &shape, -2.0, 2.0);
        let mut s5 = dims(rng, 3, 3);
        s5.insert(1, rng.random_range(1..5));
        let f = random(rng, &s5, -2.0, 2.0);
        let (s1, s2) = (rng.random(), rng.random());
        (vec![a, f], move |t: &mut Tape, v: &[Var]| {
            let s = t.softmax_last(v[0])?;
            let n = t.l2_normalize_channels(v[1])?;
            let x = project(t, s, s1)?;
            let y = project(t, n, s2)?;
            t.add(x, y)
        })
    });
}

#[test]
fn instance_norm() {
    check("instance_norm", 19, |rng| {
        let shape = [rng.random_range(1..3), rng.random_range(1..3), 2, rng.random_range(2..4), 2];
        let a = random(rng, &shape, -2.0, 2.0);
        let seed = rng.random();
        (vec![a], move |t: &mut Tape, v: &[Var]| {
            let n = t.instance_norm(v[0], 1e-5)?;
            project(t, n, seed)
        })
    });
}

#[test]
fn conv3d() {
    check("conv3d", 20, |rng| {
        let ci = rng.random_range(1..3);
        let co = rng.random_range(1..3);
        let ext: [usize; 3] = std::array::from_fn(|_| rng.random_range(2..5));
        let kern: [usize; 3] = std::array::from_fn(|a| rng.random_range(1..=ext[a].min(3)));
        let stride: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..3));
        let pad: [usize; 3] = std::array::from_fn(|a| rng.random_range(0..kern[a]));
        let b = rng.random_range(1..3);
        let x = random(rng, &[b, ci, ext[0], ext[1], ext[2]], -1.0, 1.0);
        let k = random(rng, &[co, ci, kern[0], kern[1], kern[2]], -1.0, 1.0);
        let seed = rng.random();
        (vec![x, k], move |t: &mut Tape, v: &[Var]| {
            let y = t.conv3d(v[0], v[1], stride, pad)?;
            project(t, y, seed)
        })
    });
}

#[test]
fn max_pool_and_resize() {
    check("max_pool3d/resize_trilinear", 21, |rng| {
        let ext: [usize; 3] = std::array::from_fn(|_| 2 * rng.random_range(1..3));
        let c = rng.random_range(1..3);
        let x = random(rng, &[1, c, ext[0], ext[1], ext[2]], -1.0, 1.0);
        let target: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..6));
        let seed = rng.random();
        (vec![x], move |t: &mut Tape, v: &[Var]| {
            let p = t.max_pool3d(v[0], [2; 3], [2; 3])?;
            let r = t.resize_trilinear(p, target)?;
            let r2 = t.resize_trilinear(v[0], target)?;
            let s = t.add(r, r2)?;
            project(t, s, seed)
        })
    });
}

#[test]
fn bce_with_logits() {
    check("bce_with_logits_mean", 22, |rng| {
        let shape = dims(rng, 2, 5);
        let x = random(rng, &shape, -4.0, 4.0);
        let z = Tensor::from_fn(shape, |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).unwrap();
        (vec![x], move |t: &mut Tape, v: &[Var]| t.bce_with_logits_mean(v[0], &z))
    });
}
