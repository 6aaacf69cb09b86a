//! Ornstein-Uhlenbeck statistics against the discrete-recursion closed forms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sam_core::exploration::OuProcess;

#[test]
fn ou_stationary_variance_and_lag_one_autocorrelation() {
    let (kappa, sigma, dt) = (0.15, 0.4, 1.0);
    let mut ou = OuProcess::new(1, kappa, sigma, dt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    for _ in 0..1000 {
        ou.step(&mut rng);
    }
    let n = 1_000_000;
    let xs: Vec<f64> = (0..n).map(|_| ou.step(&mut rng)[0]).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let expected = sigma * sigma * dt / (2.0 * kappa * dt - kappa * kappa * dt * dt);
    assert!((var / expected - 1.0).abs() < 0.05, "variance {var} vs {expected}");
    assert!((ou.stationary_variance() - expected).abs() < 1e-15);
    let cov = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1) as f64;
    let rho = cov / var;
    let expected_rho = 1.0 - kappa * dt;
    assert!((rho / expected_rho - 1.0).abs() < 0.02, "lag-1 {rho} vs {expected_rho}");
}

#[test]
fn ou_state_persists_until_reset() {
    let mut ou = OuProcess::new(2, 0.15, 0.3, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = ou.step(&mut rng);
    assert_eq!(ou.state(), a.as_slice());
    ou.reset();
    assert_eq!(ou.state(), &[0.0, 0.0]);
}
