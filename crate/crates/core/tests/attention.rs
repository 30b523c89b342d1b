#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfa_autodiff::{Graph, ParamSet, Tensor};
use tfa_core::attention::{combine, fa_branch, ta_branch, AttentionBranch, TfaModule, TfaSpec, TfaVariant};

fn spec(d: usize, variant: TfaVariant) -> TfaSpec {
    TfaSpec {
        d_model: d,
        k_tfa: 17,
        c_mid: 1,
        variant,
    }
}

fn random_grid(r: &mut ChaCha8Rng, l: usize, d: usize) -> Tensor<f64> {
    Tensor::new([l, d], (0..l * d).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap()
}

fn scramble(p: &mut ParamSet<f64>, r: &mut ChaCha8Rng, scale: f64) {
    for t in p.iter_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = scale * r.random_range(-1.0..1.0));
    }
}

fn zero(p: &mut ParamSet<f64>) {
    for t in p.iter_mut() {
        t.data_mut().fill(0.0);
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i][j] * a[i][j];
                }
            }
        }
        if off < 1e-300 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Singular values of an `l × d` row-major matrix, descending.
fn singular_values(m: &[f64], l: usize, d: usize) -> Vec<f64> {
    let gram: Vec<Vec<f64>> = (0..l)
        .map(|i| {
            (0..l)
                .map(|j| (0..d).map(|k| m[i * d + k] * m[j * d + k]).sum())
                .collect()
        })
        .collect();
    symmetric_eigenvalues(gram)
        .into_iter()
        .map(|v| v.max(0.0).sqrt())
        .collect()
}

#[test]
fn jacobi_oracle_recovers_known_spectrum() {
    let d = singular_values(&[3.0, 0.0, 0.0, 0.0, 4.0, 0.0], 2, 3);
    assert!((d[0] - 4.0).abs() < 1e-12 && (d[1] - 3.0).abs() < 1e-12);
    let m = [1.0, 2.0, 2.0, 4.0, 3.0, 6.0];
    let s = singular_values(&m, 3, 2);
    assert!(s[1] < 1e-7 * s[0]);
}

#[test]
fn zero_parameters_give_half_maps_and_quarter_output() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut p = ParamSet::<f64>::new();
    let tfa = TfaModule::new(&mut p, "t", spec(12, TfaVariant::Tfa), &mut r).unwrap();
    zero(&mut p);
    let y = random_grid(&mut r, 5, 12);
    let mut g = Graph::inference();
    let yv = g.constant(y.clone());
    let (out, maps) = tfa.apply(&mut g, &p, yv).unwrap();
    assert!(g.value(maps.t_map.unwrap()).iter().all(|v| *v == 0.5));
    assert!(g.value(maps.f_map.unwrap()).iter().all(|v| *v == 0.5));
    for (o, v) in g.value(out).iter().zip(y.data()) {
        assert_eq!(*o, 0.25 * v);
    }
}

#[test]
fn off_is_bitwise_identity() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut p = ParamSet::<f64>::new();
    let tfa = TfaModule::new(&mut p, "t", spec(8, TfaVariant::Off), &mut r).unwrap();
    assert_eq!(p.len(), 0);
    let y = random_grid(&mut r, 4, 8);
    let mut g = Graph::inference();
    let yv = g.constant(y.clone());
    let (out, maps) = tfa.apply(&mut g, &p, yv).unwrap();
    assert_eq!(g.value(out), y.data());
    assert!(maps.t_map.is_none() && maps.f_map.is_none() && maps.tf_map.is_none());
}

#[test]
fn combine_hand_example() {
    let mut g = Graph::<f64>::inference();
    let t = g.constant(Tensor::new([2, 1], vec![0.5, 1.0]).unwrap());
    let f = g.constant(Tensor::new([1, 2], vec![0.2, 0.4]).unwrap());
    let tf = combine(&mut g, t, f).unwrap();
    let want = [0.1, 0.2, 0.2, 0.4];
    for (a, b) in g.value(tf).iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    let ones = g.constant(Tensor::full([3, 1], 1.0));
    let rows = combine(&mut g, ones, f).unwrap();
    assert_eq!(g.value(rows), &[0.2, 0.4, 0.2, 0.4, 0.2, 0.4]);
    assert!(combine(&mut g, f, t).is_err());
}

#[test]
fn factorised_rank_one_maps_in_unit_interval() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for draw in 0..200 {
        let (l, d) = (r.random_range(1..9), r.random_range(2..24));
        let mut p = ParamSet::<f64>::new();
        let tfa = TfaModule::new(&mut p, "t", spec(d, TfaVariant::Tfa), &mut r).unwrap();
        scramble(&mut p, &mut r, 1.5);
        let y = random_grid(&mut r, l, d);
        let mut g = Graph::inference();
        let yv = g.constant(y.clone());
        let (out, maps) = tfa.apply(&mut g, &p, yv).unwrap();
        let t = g.value(maps.t_map.unwrap()).to_vec();
        let f = g.value(maps.f_map.unwrap()).to_vec();
        let tf = g.value(maps.tf_map.unwrap()).to_vec();
        for li in 0..l {
            for k in 0..d {
                assert_eq!(tf[li * d + k], t[li] * f[k], "draw {draw}");
            }
        }
        assert!(t.iter().chain(&f).chain(&tf).all(|v| *v > 0.0 && *v < 1.0));
        for (o, v) in g.value(out).iter().zip(y.data()) {
            assert!(o.abs() <= v.abs());
        }
        if l >= 2 {
            let s = singular_values(&tf, l, d);
            assert!(s[1] < 1e-6 * s[0], "draw {draw}: {s:?}");
        }
    }
}

#[test]
fn single_branch_variants_broadcast() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let (l, d) = (5, 6);
    for variant in [TfaVariant::TaOnly, TfaVariant::FaOnly] {
        let mut p = ParamSet::<f64>::new();
        let tfa = TfaModule::new(&mut p, "t", spec(d, variant), &mut r).unwrap();
        assert_eq!(p.num_scalars(), 36);
        scramble(&mut p, &mut r, 1.0);
        let y = random_grid(&mut r, l, d);
        let mut g = Graph::inference();
        let yv = g.constant(y.clone());
        let (out, maps) = tfa.apply(&mut g, &p, yv).unwrap();
        assert!(maps.tf_map.is_none());
        let out = g.value(out);
        for li in 0..l {
            for k in 0..d {
                let w = match variant {
                    TfaVariant::TaOnly => g.value(maps.t_map.unwrap())[li],
                    _ => g.value(maps.f_map.unwrap())[k],
                };
                assert_eq!(out[li * d + k], y.data()[li * d + k] * w);
            }
        }
    }
}

fn branch(seed: u64, d: usize) -> (ParamSet<f64>, AttentionBranch) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::<f64>::new();
    let b = AttentionBranch::new(&mut p, "b", &spec(d, TfaVariant::Tfa), &mut r).unwrap();
    scramble(&mut p, &mut r, 1.0);
    (p, b)
}

#[test]
fn frequency_branch_sees_only_the_time_average() {
    let (p, b) = branch(5, 10);
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let v: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
    let run = |frames: usize| {
        let mut g = Graph::inference();
        let y = g.constant(Tensor::new([frames, 10], v.repeat(frames)).unwrap());
        let f = fa_branch(&mut g, &p, &b, y, 10).unwrap();
        g.value(f).to_vec()
    };
    let a = run(1);
    for (x, y) in a.iter().zip(run(7)) {
        assert!((x - y).abs() < 1e-15);
    }
    let mut g = Graph::inference();
    let mut zparams = ParamSet::<f64>::new();
    let mut zr = ChaCha8Rng::seed_from_u64(0);
    let zb = AttentionBranch::new(&mut zparams, "z", &spec(4, TfaVariant::Tfa), &mut zr).unwrap();
    zero(&mut zparams);
    let y = g.constant(Tensor::full([3, 4], 2.0));
    let f = fa_branch(&mut g, &zparams, &zb, y, 4).unwrap();
    assert_eq!(g.value(f), &[0.5; 4]);
    let t = ta_branch(&mut g, &zparams, &zb, y, 4).unwrap();
    assert_eq!(g.value(t), &[0.5; 3]);
}

#[test]
fn time_branch_input_follows_cyclic_frame_shifts() {
    // With unit centre taps only, T_A(l) = σ(relu(Z_T(l))) so frame shifts carry through.
    let d = 6;
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut p = ParamSet::<f64>::new();
    let b = AttentionBranch::new(&mut p, "b", &spec(d, TfaVariant::Tfa), &mut r).unwrap();
    zero(&mut p);
    for conv in b.convs() {
        p.get_mut(conv.weight()).data_mut()[8] = 1.0;
    }
    let l = 7;
    let y = random_grid(&mut r, l, d);
    let shift = 3;
    let rows: Vec<f64> = (0..l)
        .flat_map(|i| y.data()[((i + shift) % l) * d..((i + shift) % l + 1) * d].to_vec())
        .collect();
    let run = |data: Vec<f64>| {
        let mut g = Graph::inference();
        let yv = g.constant(Tensor::new([l, d], data).unwrap());
        let t = ta_branch(&mut g, &p, &b, yv, d).unwrap();
        g.value(t).to_vec()
    };
    let (a, s) = (run(y.data().to_vec()), run(rows));
    for i in 0..l {
        assert_eq!(s[i], a[(i + shift) % l]);
        let z: f64 = y.data()[i * d..(i + 1) * d].iter().sum::<f64>() / d as f64;
        assert!((a[i] - 1.0 / (1.0 + (-z.max(0.0)).exp())).abs() < 1e-12);
    }
}

#[test]
fn even_kernel_and_bad_shapes_rejected() {
    let mut p = ParamSet::<f64>::new();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let mut even = spec(8, TfaVariant::Tfa);
    even.k_tfa = 16;
    assert!(TfaModule::new(&mut p, "e", even, &mut r).is_err());
    let tfa = TfaModule::new(&mut p, "t", spec(8, TfaVariant::Tfa), &mut r).unwrap();
    let mut g = Graph::inference();
    let y = g.constant(Tensor::zeros([3, 9]));
    assert!(tfa.apply(&mut g, &p, y).is_err());
    assert!("both".parse::<TfaVariant>().is_err());
}

#[test]
fn default_spec_parameter_count() {
    let s = TfaSpec::default();
    assert_eq!((s.d_model, s.k_tfa, s.c_mid), (256, 17, 1));
    assert_eq!(s.num_params(), 2 * ((17 + 1) + (17 + 1)));
}
