//! Forward values checked against independent scalar-loop implementations.

use lesionseg_autodiff::{Real, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap()
}

/// Direct nested-loop cross-correlation with zero padding.
fn conv_oracle(x: &Tensor, k: &Tensor, stride: [usize; 3], pad: [usize; 3]) -> Tensor {
    let [b, ci, d, h, w] = x.dims5("oracle").unwrap();
    let [co, _, kd, kh, kw] = k.dims5("oracle").unwrap();
    let out = |n: usize, kk: usize, s: usize, p: usize| (n + 2 * p - kk) / s + 1;
    let (od, oh, ow) = (
        out(d, kd, stride[0], pad[0]),
        out(h, kh, stride[1], pad[1]),
        out(w, kw, stride[2], pad[2]),
    );
    let xs = |n, c, z: isize, y: isize, xx: isize| -> Real {
        if z < 0 || y < 0 || xx < 0 || z >= d as isize || y >= h as isize || xx >= w as isize {
            return 0.0;
        }
        x.data()[(((n * ci + c) * d + z as usize) * h + y as usize) * w + xx as usize]
    };
    let mut res = Vec::new();
    for n in 0..b {
        for o in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for a in 0..kd {
                                for bb in 0..kh {
                                    for e in 0..kw {
                                        let kv = k.data()[(((o * ci + c) * kd + a) * kh + bb) * kw + e];
                                        acc += kv
                                            * xs(
                                                n,
                                                c,
                                                (z * stride[0] + a) as isize - pad[0] as isize,
                                                (y * stride[1] + bb) as isize - pad[1] as isize,
                                                (xx * stride[2] + e) as isize - pad[2] as isize,
                                            );
                                    }
                                }
                            }
                        }
                        res.push(acc);
                    }
                }
            }
        }
    }
    Tensor::new([b, co, od, oh, ow], res).unwrap()
}

fn assert_close(a: &Tensor, b: &Tensor, tol: Real) {
    assert_eq!(a.shape(), b.shape());
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

#[test]
fn conv_all_ones_kernel_sums_neighbourhood() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[1, 1, 4, 4, 4]);
    let k = Tensor::ones([1, 1, 3, 3, 3]).unwrap();
    let mut tape = Tape::new();
    let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
    let y = tape.conv3d(xv, kv, [1; 3], [1; 3]).unwrap();
    // Independent: explicit 27-neighbourhood sums.
    let at = |z: isize, yy: isize, xx: isize| -> Real {
        if (0..4).contains(&z) && (0..4).contains(&yy) && (0..4).contains(&xx) {
            x.data()[((z * 4 + yy) * 4 + xx) as usize]
        } else {
            0.0
        }
    };
    for z in 0..4isize {
        for yy in 0..4isize {
            for xx in 0..4isize {
                let mut s = 0.0;
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            s += at(z + dz, yy + dy, xx + dx);
                        }
                    }
                }
                let got = tape.value(y).data()[((z * 4 + yy) * 4 + xx) as usize];
                assert!((got - s).abs() < 1e-12);
            }
        }
    }
    assert_close(tape.value(y), &conv_oracle(&x, &k, [1; 3], [1; 3]), 1e-12);
}

#[test]
fn conv_matches_oracle_on_random_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let b = rng.random_range(1..3);
        let ci = rng.random_range(1..4);
        let co = rng.random_range(1..4);
        let ext: [usize; 3] = std::array::from_fn(|_| rng.random_range(2..7));
        let kern: [usize; 3] = std::array::from_fn(|a| rng.random_range(1..=ext[a].min(3)));
        let stride: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..3));
        let pad: [usize; 3] = std::array::from_fn(|a| rng.random_range(0..kern[a]));
        let x = random(&mut rng, &[b, ci, ext[0], ext[1], ext[2]]);
        let k = random(&mut rng, &[co, ci, kern[0], kern[1], kern[2]]);
        let mut tape = Tape::new();
        let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
        let y = tape.conv3d(xv, kv, stride, pad).unwrap();
        assert_close(tape.value(y), &conv_oracle(&x, &k, stride, pad), 1e-12);
    }
}

#[test]
fn conv_of_zero_input_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = random(&mut rng, &[3, 2, 3, 3, 3]);
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::zeros([1, 2, 4, 5, 6]).unwrap());
    let kv = tape.constant(k);
    let y = tape.conv3d(xv, kv, [2, 1, 2], [1; 3]).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

/// Per-voxel trilinear interpolation written from the half-pixel formula.
fn trilinear_oracle(x: &Tensor, target: [usize; 3]) -> Tensor {
    let [b, c, d, h, w] = x.dims5("oracle").unwrap();
    let src = [d, h, w];
    let mut out = Vec::new();
    for plane in 0..b * c {
        for z in 0..target[0] {
            for y in 0..target[1] {
                for xx in 0..target[2] {
                    let pos = [z, y, xx];
                    let coord: Vec<Real> = (0..3)
                        .map(|a| {
                            let s = (pos[a] as Real + 0.5) * src[a] as Real / target[a] as Real - 0.5;
                            s.max(0.0).min((src[a] - 1) as Real)
                        })
                        .collect();
                    let mut acc = 0.0;
                    for corner in 0..8 {
                        let mut weight = 1.0;
                        let mut idx = [0usize; 3];
                        for a in 0..3 {
                            let lo = coord[a].floor();
                            let frac = coord[a] - lo;
                            let upper = (corner >> (2 - a)) & 1 == 1;
                            idx[a] = if upper { (lo as usize + 1).min(src[a] - 1) } else { lo as usize };
                            weight *= if upper { frac } else { 1.0 - frac };
                        }
                        acc += weight * x.data()[plane * d * h * w + (idx[0] * h + idx[1]) * w + idx[2]];
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new([b, c, target[0], target[1], target[2]], out).unwrap()
}

#[test]
fn trilinear_upsample_of_ramp_matches_oracle() {
    let x = Tensor::from_fn([1, 1, 2, 2, 2], |i| i as Real).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = tape.resize_trilinear(xv, [4, 4, 4]).unwrap();
    assert_close(tape.value(y), &trilinear_oracle(&x, [4, 4, 4]), 1e-12);
    // Corner voxels clamp onto the source corners.
    assert_eq!(tape.value(y).data()[0], 0.0);
    assert_eq!(*tape.value(y).data().last().unwrap(), 7.0);
}

#[test]
fn trilinear_random_resizes_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let src: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..6));
        let dst: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..9));
        let x = random(&mut rng, &[2, 2, src[0], src[1], src[2]]);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = tape.resize_trilinear(xv, dst).unwrap();
        assert_close(tape.value(y), &trilinear_oracle(&x, dst), 1e-12);
    }
}

#[test]
fn trilinear_identity_and_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[1, 2, 3, 4, 5]);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let same = tape.resize_trilinear(xv, [3, 4, 5]).unwrap();
    assert_eq!(tape.value(same), &x);

    let c = tape.constant(Tensor::full([1, 1, 3, 2, 5], 0.625).unwrap());
    let up = tape.resize_trilinear(c, [7, 9, 2]).unwrap();
    assert!(tape.value(up).data().iter().all(|&v| v == 0.625));
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random(&mut rng, &[4, 7]);
    let b = random(&mut rng, &[7, 3]);
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.matmul(av, bv).unwrap();
    for i in 0..4 {
        for j in 0..3 {
            let want: Real = (0..7).map(|k| a.data()[i * 7 + k] * b.data()[k * 3 + j]).sum();
            assert!((tape.value(c).data()[i * 3 + j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_and_l2_normalize_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let n = rng.random_range(1..9);
        let rows = rng.random_range(1..6);
        let x = Tensor::from_fn([rows, n], |_| rng.random_range(-20.0..20.0)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let s = tape.softmax_last(xv).unwrap();
        for row in tape.value(s).data().chunks(n) {
            assert!((row.iter().sum::<Real>() - 1.0).abs() < 1e-9);
        }

        let c = rng.random_range(1..6);
        let f = Tensor::from_fn([2, c, 3, 2], |_| rng.random_range(-3.0..3.0)).unwrap();
        let fv = tape.constant(f);
        let nrm = tape.l2_normalize_channels(fv).unwrap();
        let v = tape.value(nrm).data();
        for b in 0..2 {
            for p in 0..6 {
                let norm: Real = (0..c).map(|ch| v[(b * c + ch) * 6 + p].powi(2)).sum::<Real>().sqrt();
                assert!((norm - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn operations_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&mut rng, &[2, 3, 4, 4, 4]);
        let k = random(&mut rng, &[2, 3, 3, 3, 3]);
        let mut tape = Tape::new();
        let (xv, kv) = (tape.param(x), tape.param(k));
        let y = tape.conv3d(xv, kv, [2; 3], [1; 3]).unwrap();
        let up = tape.resize_trilinear(y, [4, 4, 4]).unwrap();
        let n = tape.instance_norm(up, 1e-5).unwrap();
        let s = tape.sigmoid(n).unwrap();
        let m = tape.mean(s).unwrap();
        tape.backward(m).unwrap();
        (tape.value(m).clone(), tape.grad(kv).unwrap().clone(), tape.grad(xv).unwrap().clone())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.data()[0].to_bits(), b.0.data()[0].to_bits());
    assert!(a.1.data().iter().zip(b.1.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.2.data().iter().zip(b.2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
