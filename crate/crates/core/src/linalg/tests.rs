use super::*;
use std::f64::consts::FRAC_PI_2;

#[test]
fn exp_of_zero_is_identity() {
    for t in [0.0, 0.3, 17.0, -4.0] {
        let e = matrix_exponential(&Matrix::zeros(5, 5), t).unwrap();
        assert_eq!(e, Matrix::identity(5));
    }
}

#[test]
fn exp_of_diagonal_is_elementwise() {
    let d = [-1.5, 0.0, 0.25, 2.0];
    let t = 0.8;
    let e = matrix_exponential(&Matrix::from_diag(&d), t).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want = if i == j { (d[i] * t).exp() } else { 0.0 };
            assert!((e[(i, j)] - want).abs() < 1e-11 * want.abs().max(1.0), "({i},{j})");
        }
    }
}

#[test]
fn squaring_count_rule() {
    assert_eq!(squaring_count(0.0), 0);
    assert_eq!(squaring_count(0.1), 0);
    assert_eq!(squaring_count(0.5), 0);
    assert_eq!(squaring_count(0.6), 1);
    assert_eq!(squaring_count(1.0), 1);
    assert_eq!(squaring_count(3.0), 3);
    assert_eq!(squaring_count(8.0), 4);
}

#[test]
fn exp_rejects_bad_input() {
    assert_eq!(
        matrix_exponential(&Matrix::zeros(2, 3), 1.0),
        Err(LinalgError::NotSquare { rows: 2, cols: 3 })
    );
    let mut a = Matrix::zeros(2, 2);
    a[(0, 1)] = f64::NAN;
    assert!(matches!(matrix_exponential(&a, 1.0), Err(LinalgError::NonFinite(_))));
    assert!(matches!(matrix_exponential(&Matrix::zeros(2, 2), f64::INFINITY), Err(LinalgError::NonFinite(_))));
}

fn sample_cov() -> Matrix {
    Matrix::from_vec(3, 3, vec![2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5])
}

#[test]
fn brownian_limit() {
    let q = Matrix::from_diag(&[0.1, 0.2, 0.3]);
    let dt = 0.7;
    let s = matrix_fraction_prior_cov(&Matrix::zeros(3, 3), &q, &sample_cov(), dt).unwrap();
    let mut want = sample_cov();
    want.add_scaled(&q, dt);
    assert!(s.max_abs_diff(&want) < 1e-14);
}

#[test]
fn zero_duration_keeps_covariance() {
    let a = Matrix::from_fn(3, 3, |i, j| (i as f64 - j as f64) * 0.3);
    let s = matrix_fraction_prior_cov(&a, &Matrix::identity(3), &sample_cov(), 0.0).unwrap();
    assert_eq!(s, sample_cov());
}

#[test]
fn matrix_fraction_errors() {
    let a = Matrix::zeros(3, 3);
    assert!(matches!(
        matrix_fraction_prior_cov(&a, &Matrix::zeros(2, 2), &sample_cov(), 1.0),
        Err(LinalgError::DimensionMismatch(_))
    ));
    assert_eq!(
        matrix_fraction_prior_cov(&a, &Matrix::zeros(3, 3), &sample_cov(), -1.0),
        Err(LinalgError::NegativeDuration(-1.0))
    );
}

#[test]
fn eigen_prior_zero_duration() {
    let e = orthogonal_map(&SkewParams::new(3, vec![0.3, -0.2, 0.9]).unwrap());
    let d = Matrix::column(&[-0.5, 0.1, -1.0]);
    let q = Matrix::column(&[0.2, 0.1, 0.4]);
    let mu = Matrix::column(&[1.0, -2.0, 0.5]);
    let (m, s) = eigen_prior(&e, &d, &q, &mu, &sample_cov(), 0.0).unwrap();
    assert_eq!(m, mu);
    assert_eq!(s, sample_cov());
}

#[test]
fn eigen_prior_scalar_closed_form() {
    let (d, sigma, q, dt) = (-0.35, 0.8, 0.25, 1.3);
    let e = Matrix::identity(1);
    let (_, s) = eigen_prior(
        &e,
        &Matrix::scalar(d),
        &Matrix::scalar(q),
        &Matrix::scalar(1.0),
        &Matrix::scalar(sigma),
        dt,
    )
    .unwrap();
    let want = q * ((2.0 * d * dt).exp() - 1.0) / (2.0 * d) + sigma * (2.0 * d * dt).exp();
    assert!((s[(0, 0)] - want).abs() < 1e-14);
    let full = matrix_fraction_prior_cov(&Matrix::scalar(d), &Matrix::scalar(q), &Matrix::scalar(sigma), dt).unwrap();
    assert!((full[(0, 0)] - want).abs() < 1e-12);
}

#[test]
fn eigen_prior_zero_eigenvalues_use_series() {
    let e = Matrix::identity(2);
    let (_, s) = eigen_prior(
        &e,
        &Matrix::column(&[0.0, 3e-9]),
        &Matrix::column(&[0.5, 0.5]),
        &Matrix::column(&[0.0, 0.0]),
        &Matrix::zeros(2, 2),
        2.0,
    )
    .unwrap();
    assert!(s.is_finite());
    assert!((s[(0, 0)] - 1.0).abs() < 1e-12);
    assert!((s[(1, 1)] - 1.0).abs() < 1e-7);
}

#[test]
fn eigen_prior_rejects_non_orthogonal_basis() {
    let mut e = Matrix::identity(2);
    e[(0, 1)] = 1e-3;
    let r = eigen_prior(
        &e,
        &Matrix::zeros(2, 1),
        &Matrix::zeros(2, 1),
        &Matrix::zeros(2, 1),
        &Matrix::identity(2),
        1.0,
    );
    assert!(matches!(r, Err(LinalgError::NotOrthogonal(_))));
    let r = eigen_prior(
        &Matrix::identity(2),
        &Matrix::zeros(2, 1),
        &Matrix::zeros(2, 1),
        &Matrix::zeros(2, 1),
        &Matrix::identity(2),
        -0.1,
    );
    assert_eq!(r, Err(LinalgError::NegativeDuration(-0.1)));
}

#[test]
fn orthogonal_map_of_zero_is_identity() {
    assert_eq!(orthogonal_map(&SkewParams::zeros(5)), Matrix::identity(5));
}

#[test]
fn orthogonal_map_two_dimensional_rotation() {
    let e = orthogonal_map(&SkewParams::new(2, vec![FRAC_PI_2]).unwrap());
    // W = [[0, -a], [a, 0]] exponentiates to a rotation by a.
    let (c, s) = (FRAC_PI_2.cos(), FRAC_PI_2.sin());
    let want = Matrix::from_vec(2, 2, vec![c, -s, s, c]);
    assert!(e.max_abs_diff(&want) < 1e-11, "{e:?}");
}

#[test]
fn skew_params_validate_length() {
    assert_eq!(skew_len(4), 6);
    assert_eq!(
        SkewParams::new(4, vec![0.0; 5]),
        Err(LinalgError::SkewLength { dim: 4, expected: 6, got: 5 })
    );
    assert_eq!(strict_lower_positions(3), vec![(1, 0), (2, 0), (2, 1)]);
}
