mod common;

use noisycal::noise::{
    empirical_transition_matrix, inject, inject_asymmetric, inject_instance_dependent, inject_symmetric, noise_ratio,
    NoiseKind, NoiseSpec,
};
use proptest::prelude::*;
use rand::Rng;

fn balanced(n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|i| i % classes).collect()
}

fn spec(kind: NoiseKind, ratio: f64, seed: u64) -> NoiseSpec {
    NoiseSpec { kind, ratio, seed }
}

#[test]
fn symmetric_and_asymmetric_match_their_targets() {
    let truth = balanced(10_000, 3);
    let sn = inject_symmetric(&truth, 3, &spec(NoiseKind::Symmetric, 0.2, 0)).unwrap();
    let asn = inject_asymmetric(&truth, 3, &spec(NoiseKind::Asymmetric, 0.2, 0)).unwrap();
    let sn = empirical_transition_matrix(&truth, &sn, 3).unwrap();
    let asn = empirical_transition_matrix(&truth, &asn, 3).unwrap();
    assert!(common::worst_entry(&sn.normalized, &common::symmetric_target(3, 0.2)) < 0.02);
    assert!(common::worst_entry(&asn.normalized, &common::asymmetric_target(3, 0.2)) < 0.02);
}

#[test]
fn symmetric_off_diagonal_entries_nine_classes() {
    let truth = balanced(10_000, 9);
    let noisy = inject_symmetric(&truth, 9, &spec(NoiseKind::Symmetric, 0.5, 21)).unwrap();
    let m = empirical_transition_matrix(&truth, &noisy, 9).unwrap();
    for a in 0..9 {
        for b in 0..9 {
            if a != b {
                assert!(
                    (m.normalized[a][b] - 0.0625).abs() < 0.02,
                    "[{a}][{b}] = {}",
                    m.normalized[a][b]
                );
            }
        }
    }
}

#[test]
fn asymmetric_half_flip_is_cyclic() {
    let truth = balanced(10_000, 2);
    let noisy = inject_asymmetric(&truth, 2, &spec(NoiseKind::Asymmetric, 0.5, 5)).unwrap();
    let m = empirical_transition_matrix(&truth, &noisy, 2).unwrap();
    for a in 0..2 {
        assert!((m.normalized[a][a] - 0.5).abs() < 0.02);
        assert!((m.normalized[a][(a + 1) % 2] - 0.5).abs() < 0.02);
    }
}

#[test]
fn asymmetric_full_flip_shifts_by_one() {
    let noisy = inject_asymmetric(&[0, 1, 2], 3, &spec(NoiseKind::Asymmetric, 1.0, 0)).unwrap();
    assert_eq!(noisy, vec![1, 2, 0]);
}

fn gaussian_features(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = common::rng(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
        .collect()
}

#[test]
fn instance_dependent_ratio_and_seed_sensitivity() {
    let truth = balanced(10_000, 4);
    let x = gaussian_features(10_000, 8, 1);
    let a = inject_instance_dependent(&x, &truth, 4, &spec(NoiseKind::InstanceDependent, 0.5, 1)).unwrap();
    let b = inject_instance_dependent(&x, &truth, 4, &spec(NoiseKind::InstanceDependent, 0.5, 2)).unwrap();
    assert!((noise_ratio(&truth, &a).unwrap() - 0.5).abs() < 0.03);
    let ma = empirical_transition_matrix(&truth, &a, 4).unwrap();
    let mb = empirical_transition_matrix(&truth, &b, 4).unwrap();
    assert!(ma.frobenius_distance(&mb) > 0.0);
}

#[test]
fn instance_dependent_rejects_misaligned_features() {
    let x = gaussian_features(3, 2, 0);
    assert!(inject_instance_dependent(&x, &[0, 1], 2, &spec(NoiseKind::InstanceDependent, 0.3, 0)).is_err());
}

#[test]
fn transition_matrix_by_hand() {
    let m = empirical_transition_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
    assert_eq!(m.counts, vec![vec![1, 1], vec![0, 2]]);
    assert_eq!(m.normalized, vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
}

#[test]
fn noise_ratio_extremes() {
    assert_eq!(noise_ratio(&[0, 1, 2], &[0, 1, 2]).unwrap(), 0.0);
    assert_eq!(noise_ratio(&[0, 1, 2], &[1, 2, 0]).unwrap(), 1.0);
}

fn kind() -> impl Strategy<Value = NoiseKind> {
    prop_oneof![
        Just(NoiseKind::Symmetric),
        Just(NoiseKind::Asymmetric),
        Just(NoiseKind::InstanceDependent)
    ]
}

proptest! {
    #[test]
    fn injectors_stay_in_range_and_are_deterministic(
        kind in kind(),
        classes in 2usize..8,
        n in 0usize..200,
        ratio in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let truth = balanced(n, classes);
        let x = gaussian_features(n, 3, seed);
        let s = spec(kind, ratio, seed);
        let a = inject(&x, &truth, classes, &s).unwrap();
        let b = inject(&x, &truth, classes, &s).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iter().all(|&y| y < classes));
        let zero = inject(&x, &truth, classes, &spec(kind, 0.0, seed)).unwrap();
        prop_assert_eq!(zero, truth.clone());
        let m = empirical_transition_matrix(&truth, &a, classes).unwrap();
        for (c, row) in m.counts.iter().enumerate() {
            let expected = truth.iter().filter(|&&y| y == c).count() as u64;
            prop_assert_eq!(row.iter().sum::<u64>(), expected);
            if expected > 0 {
                prop_assert!((m.normalized[c].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
