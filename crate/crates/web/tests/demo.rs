use noisycal_web::{knn_candidates_impl, schedule_curve_impl, transition_matrix_impl};

#[test]
fn schedule_curve_starts_at_one_and_decreases() {
    let curve = schedule_curve_impl(500, 0.008).unwrap();
    assert_eq!(curve.len(), 501);
    assert_eq!(curve[0], 1.0);
    assert!(curve.windows(2).all(|w| w[1] < w[0]));
    assert!(schedule_curve_impl(0, 0.008).is_err());
}

#[test]
fn transition_rows_are_distributions() {
    for kind in ["sn", "asn", "idn"] {
        let m = transition_matrix_impl(kind, 0.3, 4, 2000, 1).unwrap();
        assert_eq!(m.len(), 16);
        for row in m.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    let clean = transition_matrix_impl("sn", 0.0, 3, 300, 0).unwrap();
    assert_eq!(clean, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    assert!(transition_matrix_impl("gaussian", 0.3, 3, 30, 0).is_err());
}

#[test]
fn retrieval_on_a_point_cloud() {
    // Three points of class 0 on the left, three of class 1 on the right.
    let xy = [0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 1.0, 1.0, 0.9, 1.0, 1.0, 0.9];
    let labels = [0, 0, 0, 1, 1, 1];
    assert_eq!(
        knn_candidates_impl(&xy, &labels, 2, 0.05, 0.05, 3, 0.9, 0.8).unwrap(),
        vec![0.0, 1.0]
    );
    // Four neighbours split 3:1 fall below lambda but the top two cover everything.
    let out = knn_candidates_impl(&xy, &labels, 2, 0.05, 0.05, 4, 0.9, 0.8).unwrap();
    assert_eq!(out, vec![0.0, 0.75, 1.0, 0.25]);
    assert!(knn_candidates_impl(&xy, &labels[..5], 2, 0.0, 0.0, 3, 0.9, 0.8).is_err());
    assert!(knn_candidates_impl(&xy, &labels, 2, 0.0, 0.0, 7, 0.9, 0.8).is_err());
}
