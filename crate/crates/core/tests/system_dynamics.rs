//! Attractor discovery, basin classification, and structural properties of
//! the built-in vector fields.

use sepx_core::dynamics::{
    self, builtin_system, classify_basin, find_attractors, integrate, AttractorKind, BasinLabel,
    SystemParams, SystemSpec,
};
use sepx_core::io::BlockFile;

/// Every known attractor must be matched by exactly one discovered one.
fn assert_recovers_known(s: &SystemSpec, seed: u64) {
    let found = find_attractors(s, 24, seed).unwrap();
    let known = s.known_attractors.as_ref().expect("system declares attractors");
    assert_eq!(found.len(), known.len(), "{}: found {:?}", s.name, found);
    for k in known {
        let hits = found
            .iter()
            .filter(|a| {
                a.representative
                    .iter()
                    .zip(k)
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt()
                    < 10.0 * s.attractor_tol
            })
            .count();
        assert_eq!(hits, 1, "{}: attractor {:?} not uniquely recovered", s.name, k);
    }
}

#[test]
fn bistable_attractors_recovered() {
    assert_recovers_known(&dynamics::bistable1d(), 5);
}

#[test]
fn duffing_attractors_recovered() {
    assert_recovers_known(&dynamics::duffing2d(), 5);
}

#[test]
fn glv_attractors_recovered() {
    assert_recovers_known(&dynamics::glv_test_instance(), 5);
}

#[test]
fn embedded_attractors_recovered() {
    let s = dynamics::embedded_bistable(6, 3).unwrap();
    assert_recovers_known(&s, 5);
}

#[test]
fn two_limit_cycles_finds_both_cycles() {
    let s = dynamics::two_limit_cycles();
    let found = find_attractors(&s, 24, 5).unwrap();
    assert_eq!(found.len(), 2);
    let mut radii: Vec<f64> = found
        .iter()
        .map(|a| {
            assert_eq!(a.kind, AttractorKind::LimitCycle);
            a.radius
        })
        .collect();
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!((radii[0] - 1.0).abs() < 0.05, "inner radius {}", radii[0]);
    assert!((radii[1] - 3.0).abs() < 0.05, "outer radius {}", radii[1]);
}

#[test]
fn bistable_basins_split_at_origin() {
    let s = dynamics::bistable1d();
    let att = find_attractors(&s, 8, 1).unwrap();
    let plus = att
        .iter()
        .find(|a| a.representative[0] > 0.0)
        .map(|a| a.id)
        .unwrap();
    let minus = att
        .iter()
        .find(|a| a.representative[0] < 0.0)
        .map(|a| a.id)
        .unwrap();
    for x in [0.01, 0.5, 1.7, 2.9] {
        assert_eq!(classify_basin(&s, &[x], &att), BasinLabel::Attractor(plus));
        assert_eq!(classify_basin(&s, &[-x], &att), BasinLabel::Attractor(minus));
    }
}

#[test]
fn glv_field_has_coordinate_swap_symmetry() {
    // r and A are symmetric under (x, y) ↦ (y, x), so f must commute with
    // the swap: f(y, x) = swap(f(x, y)).
    let s = dynamics::glv_test_instance();
    for (x, y) in [(0.2, 0.7), (1.0, 0.1), (0.4, 0.4), (1.3, 0.9)] {
        let a = s.f_vec(&[x, y]);
        let b = s.f_vec(&[y, x]);
        // The interaction sum reassociates under the swap, so allow rounding.
        assert!((a[0] - b[1]).abs() <= 1e-14, "{} vs {}", a[0], b[1]);
        assert!((a[1] - b[0]).abs() <= 1e-14, "{} vs {}", a[1], b[0]);
    }
}

#[test]
fn glv_diagonal_is_invariant() {
    // On x = y the swap symmetry forces the orbit to stay on the diagonal,
    // which is therefore the basin boundary between (1,0) and (0,1).
    let s = dynamics::glv_test_instance();
    for start in [0.1, 0.4, 1.5] {
        let end = integrate(&s, &[start, start], 10.0, s.dt).unwrap();
        // Rounding in the interaction sum breaks the symmetry at ulp scale and
        // the transverse direction is unstable (rate 0.2), so allow e^{0.2 t}
        // amplification of that noise.
        assert!((end[0] - end[1]).abs() < 1e-10, "diagonal left: {end:?}");
    }
}

#[test]
fn embedded_field_reduces_to_1d_along_q1() {
    // u₁ = q₁·x obeys u̇₁ = u₁ − u₁³ exactly, independent of the other
    // coordinates.
    let s = dynamics::embedded_bistable(8, 11).unwrap();
    let q1 = &s.known_attractors.as_ref().unwrap()[0];
    let x: Vec<f64> = (0..8).map(|i| 0.3 * (i as f64) - 1.1).collect();
    let u1: f64 = q1.iter().zip(&x).map(|(a, b)| a * b).sum();
    let fx = s.f_vec(&x);
    let lhs: f64 = q1.iter().zip(&fx).map(|(a, b)| a * b).sum();
    assert!((lhs - (u1 - u1 * u1 * u1)).abs() < 1e-12);
}

#[test]
fn embedded_basins_split_by_hyperplane_sign() {
    let s = dynamics::embedded_bistable(5, 2).unwrap();
    let att = find_attractors(&s, 16, 1).unwrap();
    let q1 = s.known_attractors.as_ref().unwrap()[0].clone();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let plus = att.iter().find(|a| dot(&a.representative, &q1) > 0.0).unwrap().id;
    let minus = att.iter().find(|a| dot(&a.representative, &q1) < 0.0).unwrap().id;
    let mut x: Vec<f64> = vec![0.2; 5];
    // Push x to the positive side of the hyperplane, then mirror it.
    let shift = 0.5 - dot(&x, &q1);
    for i in 0..5 {
        x[i] += shift * q1[i];
    }
    let mirrored: Vec<f64> = (0..5).map(|i| x[i] - 2.0 * dot(&x, &q1) * q1[i]).collect();
    assert_eq!(classify_basin(&s, &x, &att), BasinLabel::Attractor(plus));
    assert_eq!(classify_basin(&s, &mirrored, &att), BasinLabel::Attractor(minus));
}

#[test]
fn integrator_matches_exponential_decay() {
    let s = SystemSpec::custom("decay", 1, 0.01, 50.0, 1e-6, |x, out| out[0] = -x[0]);
    let end = integrate(&s, &[1.0], 1.0, 0.01).unwrap();
    assert!((end[0] - (-1.0_f64).exp()).abs() < 1e-9);
}

#[test]
fn integrator_uses_partial_final_step() {
    let s = SystemSpec::custom("decay", 1, 0.01, 50.0, 1e-6, |x, out| out[0] = -x[0]);
    // t = 0.015 is not a multiple of dt; the endpoint must still land at t.
    let end = integrate(&s, &[1.0], 0.015, 0.01).unwrap();
    assert!((end[0] - (-0.015_f64).exp()).abs() < 1e-12);
}

#[test]
fn finite_time_blowup_is_reported() {
    let s = SystemSpec::custom("explode", 1, 0.01, 50.0, 1e-6, |x, out| {
        out[0] = x[0] * x[0] * x[0]
    });
    assert!(integrate(&s, &[2.0], 50.0, 0.01).is_err());
    let att = find_attractors(&dynamics::bistable1d(), 4, 0).unwrap();
    assert_eq!(classify_basin(&s, &[2.0], &att), BasinLabel::Blowup);
}

#[test]
fn rnn_file_roundtrip_defines_expected_field() {
    // ẋ = −x + W tanh(x) + b
    let dir = std::env::temp_dir().join(format!("sepx-rnn-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("rnn.txt");
    let mut f = BlockFile::new("RNN v1 N=2");
    f.push_block("W", 2, 2, vec![0.5, -0.25, 1.0, 0.0]);
    f.push_block("b", 2, 1, vec![0.1, -0.2]);
    f.write(&path).unwrap();

    let s = builtin_system("loaded_rnn", SystemParams::File(&path)).unwrap();
    assert_eq!(s.n, 2);
    let x = [0.3, -0.6];
    let got = s.f_vec(&x);
    let t = [x[0].tanh(), x[1].tanh()];
    let want = [
        -x[0] + 0.5 * t[0] - 0.25 * t[1] + 0.1,
        -x[1] + 1.0 * t[0] + 0.0 * t[1] - 0.2,
    ];
    assert!((got[0] - want[0]).abs() < 1e-15);
    assert!((got[1] - want[1]).abs() < 1e-15);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_system_name_is_rejected() {
    assert!(builtin_system("lorenz", SystemParams::None).is_err());
    assert!(builtin_system("glv", SystemParams::Embedded { n: 3, seed: 0 }).is_err());
    assert!(builtin_system("embedded_bistable", SystemParams::None).is_err());
}
