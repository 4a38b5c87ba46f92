//! Dataset-prior and split-law checks: determinism, partition invariants,
//! and the target-weighted ordering property.

use proptest::prelude::*;

use pfbo_core::prior::{
    read_dataset, sample_dataset, split_softmax, split_uniform, write_dataset, HyperPrior,
    SyntheticDataset,
};
use pfbo_core::stats::mean;

fn default_hp() -> HyperPrior {
    HyperPrior::default_for_dim(1)
}

#[test]
fn sampling_is_deterministic() {
    let hp = default_hp();
    let a = sample_dataset(2, 30, &hp, 42).unwrap();
    let b = sample_dataset(2, 30, &hp, 42).unwrap();
    assert_eq!(a.x.data(), b.x.data());
    assert_eq!(a.y, b.y);
    assert_eq!(a.theta, b.theta);
}

#[test]
fn inputs_stay_in_unit_cube() {
    let hp = HyperPrior::default_for_dim(3);
    for seed in 0..20 {
        let ds = sample_dataset(3, 50, &hp, seed).unwrap();
        assert!(ds.x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn targets_have_zero_mean_on_average() {
    let hp = default_hp();
    let n_sets = 10_000;
    let mut acc = 0.0;
    let mut acc_sq = 0.0;
    for seed in 0..n_sets {
        let ds = sample_dataset(1, 8, &hp, seed).unwrap();
        let m = mean(&ds.y);
        acc += m;
        acc_sq += m * m;
    }
    let grand_mean = acc / n_sets as f64;
    let se = ((acc_sq / n_sets as f64 - grand_mean * grand_mean) / n_sets as f64).sqrt();
    assert!(
        grand_mean.abs() < 3.0 * se.max(1e-6),
        "mean of dataset means {} exceeds 3 standard errors ({})",
        grand_mean,
        se
    );
}

#[test]
fn paper_scale_dataset_size_default() {
    use pfbo_core::pt::PtConfig;
    assert_eq!(PtConfig::paper_scale(2).dataset_size, 2000);
    assert_eq!(PtConfig::paper_scale(1).dataset_size, 2000);
}

#[test]
fn tiny_dataset_split_is_forced() {
    let hp = default_hp();
    let ds = sample_dataset(1, 2, &hp, 0).unwrap();
    let split = split_uniform(&ds, None, 1).unwrap();
    assert_eq!(split.obs_index.len(), 1);
    assert_eq!(split.pred_index.len(), 1);
}

#[test]
fn uniform_split_inclusion_frequencies() {
    let hp = default_hp();
    let n = 10;
    let ds = sample_dataset(1, n, &hp, 3).unwrap();
    let trials = 20_000;
    let mut hits = vec![0usize; n];
    let ratio = 0.4; // n_obs = 4
    for seed in 0..trials {
        let s = split_uniform(&ds, Some(ratio), seed).unwrap();
        for &i in &s.obs_index {
            hits[i] += 1;
        }
    }
    let expected = 0.4 * trials as f64;
    let sd = (trials as f64 * 0.4 * 0.6).sqrt();
    for (i, &h) in hits.iter().enumerate() {
        assert!(
            (h as f64 - expected).abs() < 5.0 * sd,
            "index {} hit {} times, expected about {}",
            i,
            h,
            expected
        );
    }
}

#[test]
fn softmax_split_prefers_high_targets() {
    // weights e^10 vs e^0: first index picked with probability
    // e^10/(e^10 + 2) ~ 0.9999/1.0
    let hp = default_hp();
    let mut ds = sample_dataset(1, 3, &hp, 9).unwrap();
    ds.y = vec![10.0, 0.0, 0.0];
    let trials = 100_000u64;
    let mut first_picked = 0u64;
    for seed in 0..trials {
        let s = split_softmax(&ds, 1, seed).unwrap();
        if s.obs_index == [0] {
            first_picked += 1;
        }
    }
    let p = (10f64).exp() / ((10f64).exp() + 2.0);
    let se = (trials as f64 * p * (1.0 - p)).sqrt();
    let expected = p * trials as f64;
    assert!(
        (first_picked as f64 - expected).abs() <= 3.0 * se.max(1.0),
        "picked {} vs expected {} (3se = {})",
        first_picked,
        expected,
        3.0 * se
    );
}

#[test]
fn softmax_split_constant_targets_is_uniform() {
    let hp = default_hp();
    let n = 8;
    let mut ds = sample_dataset(1, n, &hp, 12).unwrap();
    ds.y = vec![1.5; n];
    let trials = 16_000;
    let mut hits = vec![0usize; n];
    for seed in 0..trials {
        let s = split_softmax(&ds, 2, seed).unwrap();
        for &i in &s.obs_index {
            hits[i] += 1;
        }
    }
    // chi-square against the uniform expectation 2/8 per index
    let expected = trials as f64 * 2.0 / n as f64;
    let chi2: f64 = hits.iter().map(|&h| (h as f64 - expected).powi(2) / expected).sum();
    // critical value for 7 dof at alpha = 0.001
    let crit = statrs::distribution::ChiSquared::new((n - 1) as f64)
        .map(|d| statrs::distribution::ContinuousCDF::inverse_cdf(&d, 0.999))
        .unwrap();
    assert!(chi2 < crit, "chi2 {} above critical {}", chi2, crit);
}

#[test]
fn softmax_split_orders_means() {
    let hp = default_hp();
    let mut delta_sum = 0.0;
    let n_sets = 1000;
    for seed in 0..n_sets {
        let ds = sample_dataset(1, 20, &hp, seed).unwrap();
        let s = split_softmax(&ds, 10, seed ^ 0xABCD).unwrap();
        delta_sum += mean(&s.obs_y()) - mean(&s.pred_y());
    }
    let avg = delta_sum / n_sets as f64;
    assert!(avg > 0.0, "softmax split should put higher targets in obs, got delta {}", avg);
}

#[test]
fn dataset_dump_round_trips() {
    let hp = default_hp();
    let ds = sample_dataset(3, 40, &hp, 5).unwrap();
    let ds = split_softmax(&ds, 25, 6).unwrap();
    let mut buf = Vec::new();
    write_dataset(&ds, &mut buf).unwrap();
    assert_eq!(&buf[0..4], b"PFDS");
    let back = read_dataset(&mut buf.as_slice()).unwrap();
    assert_eq!(back.x.data(), ds.x.data());
    assert_eq!(back.y, ds.y);
    assert_eq!(back.obs_index, ds.obs_index);
    assert_eq!(back.pred_index, ds.pred_index);
}

fn check_partition(ds: &SyntheticDataset) {
    let n = ds.len();
    let mut seen = vec![false; n];
    for &i in ds.obs_index.iter().chain(ds.pred_index.iter()) {
        assert!(i < n && !seen[i], "index {} repeated or out of range", i);
        seen[i] = true;
    }
    assert!(seen.iter().all(|&b| b), "partition does not cover the dataset");
    assert!(!ds.obs_index.is_empty() && !ds.pred_index.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_always_partition(n in 2usize..40, seed in 0u64..10_000, softmax in proptest::bool::ANY) {
        let hp = default_hp();
        let ds = sample_dataset(1, n, &hp, seed).unwrap();
        let split = if softmax {
            split_softmax(&ds, 1 + (seed as usize % (n - 1)), seed).unwrap()
        } else {
            split_uniform(&ds, None, seed).unwrap()
        };
        check_partition(&split);
    }
}
