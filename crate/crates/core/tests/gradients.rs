mod common;

#[test]
fn denoiser_cross_entropy_gradients() {
    for seed in 0..5 {
        let err = common::denoiser_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn co_regularized_denoiser_gradients() {
    for seed in [11, 12] {
        let err = common::coregularized_denoiser_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn classifier_ensemble_gradients() {
    for seed in 0..5 {
        let err = common::classifier_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}
