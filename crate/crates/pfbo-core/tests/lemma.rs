//! Posterior-proximity verification: KL between nearby exact posteriors is
//! bounded linearly in the pair distance.

use pfbo_core::gp::GpHyperparams;
use pfbo_core::lemma::{gaussian_kl, verify_lemma, LemmaConfig};

fn theta() -> GpHyperparams {
    GpHyperparams { lengthscale: 0.3, outputscale: 1.0, noise: 1e-2 }
}

#[test]
fn gaussian_kl_identity_is_exactly_zero() {
    assert_eq!(gaussian_kl(0.7, 0.4, 0.7, 0.4).unwrap(), 0.0);
}

#[test]
fn gaussian_kl_mean_shift_closed_form() {
    // equal unit variances: KL = (mu1 - mu2)^2 / 2
    let v = gaussian_kl(0.0, 1.0, 1.0, 1.0).unwrap();
    assert!((v - 0.5).abs() < 1e-12);
}

#[test]
fn gaussian_kl_is_asymmetric_but_non_negative() {
    let a = gaussian_kl(0.0, 1.0, 0.5, 2.0).unwrap();
    let b = gaussian_kl(0.5, 2.0, 0.0, 1.0).unwrap();
    assert!(a >= 0.0 && b >= 0.0);
    assert!((a - b).abs() > 1e-6, "generic pair should be asymmetric");
}

#[test]
fn gaussian_kl_rejects_non_positive_variance() {
    assert!(gaussian_kl(0.0, 0.0, 0.0, 1.0).is_err());
    assert!(gaussian_kl(0.0, 1.0, 0.0, -0.5).is_err());
}

#[test]
fn max_kl_shrinks_with_eta_on_the_decade_grid() {
    let mut cfg = LemmaConfig::default_with(theta(), 2, 20, 99);
    cfg.eta_grid = vec![1e-1, 1e-2, 1e-3, 1e-4];
    cfg.trials = 100;
    let report = verify_lemma(&cfg).unwrap();
    for w in report.per_eta.windows(2) {
        assert!(
            w[1].max_kl <= w[0].max_kl * 1.2,
            "max KL failed to shrink: {} at eta {} vs {} at eta {}",
            w[1].max_kl,
            w[1].eta,
            w[0].max_kl,
            w[0].eta
        );
    }
    // linear bound with slack across the grid
    for e in &report.per_eta {
        assert!(e.max_kl <= report.fitted_slope * e.eta * (1.0 + 0.5) + 1e-12);
        assert!(e.mean_kl >= 0.0 && e.max_kl >= e.mean_kl);
    }
}

/// Guard against sub-linear KL (which would break the linear bound near 0):
/// the ratio KL(eta)/eta anywhere on the grid must stay within 2x its level
/// in the largest decade. Exact-GP KL decays quadratically, so the ratio
/// actually falls as eta shrinks; a sqrt-like KL would blow this up by
/// orders of magnitude at eta = 1e-4.
#[test]
fn ratio_kl_over_eta_stays_bounded() {
    let mut cfg = LemmaConfig::default_with(theta(), 2, 20, 41);
    cfg.trials = 100;
    let report = verify_lemma(&cfg).unwrap();
    let ratios: Vec<(f64, f64)> =
        report.per_eta.iter().map(|e| (e.eta, e.max_kl / e.eta)).collect();
    let top_decade = ratios
        .iter()
        .filter(|(eta, _)| *eta >= 1e-2)
        .map(|(_, r)| *r)
        .fold(0.0, f64::max);
    let max_ratio = ratios.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    assert!(
        max_ratio <= 2.0 * top_decade,
        "KL(eta)/eta blow-up: max {} vs top-decade level {}",
        max_ratio,
        top_decade
    );
}

#[test]
fn fitted_constant_grows_with_observation_count() {
    let mut slopes = Vec::new();
    for n in [5usize, 20, 80] {
        let mut cfg = LemmaConfig::default_with(theta(), 2, n, 7);
        cfg.eta_grid = vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
        cfg.trials = 100;
        slopes.push(verify_lemma(&cfg).unwrap().fitted_slope);
    }
    assert!(
        slopes[0] < slopes[1] && slopes[1] < slopes[2],
        "slope should grow with N: {:?}",
        slopes
    );
}

#[test]
fn report_regenerates_bit_identically() {
    let mut cfg = LemmaConfig::default_with(theta(), 1, 10, 5);
    cfg.trials = 40;
    cfg.eta_grid = vec![1e-2, 1e-3];
    let a = verify_lemma(&cfg).unwrap();
    let b = verify_lemma(&cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.fitted_slope.to_bits(), b.fitted_slope.to_bits());
}

#[test]
fn rejects_eta_beyond_domain_diameter() {
    let mut cfg = LemmaConfig::default_with(theta(), 1, 10, 5);
    cfg.eta_grid = vec![2.0];
    assert!(verify_lemma(&cfg).is_err());
}
