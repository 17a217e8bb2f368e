//! Statistical checks of the generator and the masking mechanisms against
//! independent simulations.

use cadlab_core::analysis;
use cadlab_core::metrics;
use cadlab_core::scm::{
    self, apply_mcar, apply_mnar, assign_group, generate_dataset, DatasetSchema, MaskTemplate, MultimodalSample,
    SchemaConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn schema(seed: u64) -> DatasetSchema {
    DatasetSchema::random(&SchemaConfig::default(), seed).unwrap()
}

fn score(schema: &DatasetSchema, c: &[f64]) -> f64 {
    let w = &schema.label_causal;
    (0..c.len()).map(|j| (w.get(1, j) - w.get(0, j)) * c[j]).sum()
}

/// Population AUC of the causal score, simulated with our own sampler.
fn monte_carlo_auc(schema: &DatasetSchema, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..schema.dim_z).map(|_| rng.sample(StandardNormal)).collect();
        let c: Vec<f64> = (0..schema.dim_c).map(|_| rng.sample(StandardNormal)).collect();
        let logit = |k: usize| -> f64 {
            (0..c.len()).map(|j| schema.label_causal.get(k, j) * c[j]).sum::<f64>()
                + schema.eta * (0..z.len()).map(|j| schema.label_confounder.get(k, j) * z[j]).sum::<f64>()
        };
        let p1 = 1.0 / (1.0 + (logit(0) - logit(1)).exp());
        labels.push(rng.random::<f64>() < p1);
        scores.push(score(schema, &c));
    }
    metrics::auc_roc(&scores, &labels).unwrap()
}

#[test]
fn causal_score_auc_matches_simulation() {
    for seed in [1, 2, 3] {
        let s = schema(seed);
        let data = generate_dataset(&s, 20_000, seed + 10).unwrap();
        let scores: Vec<f64> = data.iter().map(|x| score(&s, &x.latents.as_ref().unwrap().c)).collect();
        let labels: Vec<bool> = data.iter().map(|x| x.label == 1).collect();
        let got = metrics::auc_roc(&scores, &labels).unwrap();
        let oracle = monte_carlo_auc(&s, 100_000, seed + 100);
        assert!((got - oracle).abs() <= 0.02, "seed {seed}: {got} vs {oracle}");
    }
}

#[test]
fn bias_latents_have_the_coupled_covariance() {
    let s = schema(4);
    let n = 40_000;
    let data = generate_dataset(&s, n, 5).unwrap();
    let k = s.dim_b;
    // Cov(b) = γ² G Gᵀ + I.
    let g = &s.bias_coupling;
    for i in 0..k {
        for j in 0..k {
            let ggt: f64 = (0..s.dim_z).map(|t| g.get(i, t) * g.get(j, t)).sum();
            let expected = s.gamma * s.gamma * ggt + f64::from(u8::from(i == j));
            let emp: f64 = data
                .iter()
                .map(|x| {
                    let b = &x.latents.as_ref().unwrap().b;
                    b[i] * b[j]
                })
                .sum::<f64>()
                / n as f64;
            let scale = (expected.abs() + 1.0) * 0.06;
            assert!((emp - expected).abs() < scale, "({i},{j}): {emp} vs {expected}");
        }
    }
}

fn three_sigma(target: f64, trials: usize) -> f64 {
    3.0 * (target * (1.0 - target) / trials as f64).sqrt()
}

#[test]
fn mcar_rate_within_binomial_band() {
    let data = generate_dataset(&schema(6), 2000, 7).unwrap();
    let all = [0, 1, 2, 3];
    let masked = apply_mcar(&data, 0.3, 2).unwrap();
    let got = scm::missing_rate(&masked, &all);
    assert!((got - 0.3).abs() <= three_sigma(0.3, 8000), "{got}");
    // Re-rolling fully hidden patients lowers the rate to
    // (p − p^M) / (1 − p^M), which matters at high rates.
    for (rate, seed) in [(0.1, 1), (0.3, 2), (0.5, 3), (0.8, 4)] {
        let masked = apply_mcar(&data, rate, seed).unwrap();
        let got = scm::missing_rate(&masked, &all);
        let target = (rate - rate.powi(4)) / (1.0 - rate.powi(4));
        assert!((got - target).abs() <= three_sigma(target, 8000), "rate {rate}: {got} vs {target}");
    }
}

/// Mutual information (nats) between labels and a 10-bin quantization.
fn binned_mi(bins: &[usize], labels: &[bool]) -> f64 {
    let n = labels.len() as f64;
    let mut joint = [[0.0f64; 2]; 10];
    for (&b, &y) in bins.iter().zip(labels) {
        joint[b][usize::from(y)] += 1.0;
    }
    let py: Vec<f64> = (0..2).map(|y| joint.iter().map(|r| r[y]).sum::<f64>() / n).collect();
    let mut mi = 0.0;
    for row in &joint {
        let pb = (row[0] + row[1]) / n;
        for y in 0..2 {
            let p = row[y] / n;
            if p > 0.0 {
                mi += p * (p / (pb * py[y])).ln();
            }
        }
    }
    mi
}

#[test]
fn labels_ignore_the_confounder_without_coupling() {
    let cfg = SchemaConfig {
        eta: 0.0,
        gamma: 0.0,
        ..SchemaConfig::default()
    };
    let s = DatasetSchema::random(&cfg, 13).unwrap();
    let data = generate_dataset(&s, 100_000, 14).unwrap();
    let mut z0: Vec<(f64, usize)> = data.iter().enumerate().map(|(i, x)| (x.latents.as_ref().unwrap().z[0], i)).collect();
    z0.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut bins = vec![0; data.len()];
    for (rank, &(_, i)) in z0.iter().enumerate() {
        bins[i] = rank * 10 / data.len();
    }
    let mut labels: Vec<bool> = data.iter().map(|x| x.label == 1).collect();
    let observed = binned_mi(&bins, &labels);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut null: Vec<f64> = (0..200)
        .map(|_| {
            for i in (1..labels.len()).rev() {
                labels.swap(i, rng.random_range(0..=i));
            }
            binned_mi(&bins, &labels)
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let p95 = null[189];
    assert!(observed < p95, "{observed} vs {p95}");
}

#[test]
fn mnar_rate_within_binomial_band() {
    let data = generate_dataset(&schema(8), 2000, 9).unwrap();
    let template = MaskTemplate::default();
    let all = [0, 1, 2, 3];
    for (alpha, seed) in [(0.5, 1), (1.0, 2), (2.0, 3)] {
        // Mean of min(α·p, 1) over every (sample, modality) pair.
        let target: f64 = data
            .iter()
            .flat_map(|s| {
                let row = &template.probabilities[assign_group(s.age, s.severity) - 1];
                row.iter().map(move |p| (alpha * p).min(1.0))
            })
            .sum::<f64>()
            / 8000.0;
        let masked = apply_mnar(&data, &template, alpha, &all, seed).unwrap();
        let got = scm::missing_rate(&masked, &all);
        assert!((got - target).abs() <= three_sigma(target, 8000), "alpha {alpha}: {got} vs {target}");
    }
}

#[test]
fn scale_four_clamps_the_largest_entry() {
    let t = MaskTemplate::default();
    assert_eq!(t.probabilities[0][3], 0.35);
    assert_eq!(t.final_probability(1, 3, 4.0), 1.0);
    assert_eq!(t.final_probability(6, 0, 4.0), 4.0 * 0.03);
}

#[test]
fn mnar_hits_young_low_severity_hardest() {
    let data = generate_dataset(&schema(10), 4000, 11).unwrap();
    let masked = apply_mnar(&data, &MaskTemplate::default(), 1.5, &[0, 1, 2, 3], 12).unwrap();
    let rate_of = |g: usize| {
        let members: Vec<MultimodalSample> = masked
            .iter()
            .filter(|s| assign_group(s.age, s.severity) == g)
            .cloned()
            .collect();
        scm::missing_rate(&members, &[0, 1, 2, 3])
    };
    assert!(rate_of(1) > rate_of(6));
}

fn brute_nce(labels: &[usize], classes: usize) -> f64 {
    let n = labels.len() as f64;
    let mut h = 0.0;
    for k in 0..classes {
        let p = labels.iter().filter(|&&y| y == k).count() as f64 / n;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h / (classes as f64).ln()
}

fn crafted(patterns: &[(Vec<bool>, usize)]) -> Vec<MultimodalSample> {
    patterns
        .iter()
        .enumerate()
        .map(|(i, (mask, y))| MultimodalSample {
            id: i as u64,
            features: vec![vec![0.0]; mask.len()],
            mask: mask.clone(),
            label: *y,
            age: 50.0,
            severity: 1.0,
            latents: None,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nce_matches_brute_force(rows in prop::collection::vec((prop::collection::vec(any::<bool>(), 3), 0usize..3), 1..80)) {
        let samples = crafted(&rows);
        let report = analysis::nce_analysis(&samples, 3);
        let mut total = 0;
        for p in &report.patterns {
            let labels: Vec<usize> = rows.iter().filter(|(m, _)| *m == p.pattern).map(|(_, y)| *y).collect();
            prop_assert_eq!(labels.len(), p.count);
            prop_assert!((p.nce - brute_nce(&labels, 3)).abs() <= 1e-9);
            prop_assert!((0.0..=1.0).contains(&p.nce));
            total += p.count;
        }
        prop_assert_eq!(total, rows.len());
        prop_assert_eq!(report.bucket_counts.iter().sum::<usize>(), rows.len());
    }

    #[test]
    fn masking_only_hides_and_keeps_one(seed in 0u64..1000, rate in 0.0f64..0.99, alpha in 0.0f64..6.0) {
        let data = generate_dataset(&schema(seed % 7), 30, seed).unwrap();
        let pre = apply_mcar(&data, 0.3, seed).unwrap();
        let mcar = apply_mcar(&pre, rate, seed + 1).unwrap();
        let mnar = apply_mnar(&pre, &MaskTemplate::default(), alpha, &[0, 1, 2, 3], seed + 2).unwrap();
        for out in [&mcar, &mnar] {
            for (a, b) in pre.iter().zip(out.iter()) {
                prop_assert!(b.mask.iter().any(|&m| m));
                prop_assert!(a.mask.iter().zip(&b.mask).all(|(&x, &y)| x || !y));
                prop_assert_eq!(&a.features, &b.features);
                prop_assert_eq!(a.label, b.label);
            }
        }
    }
}

#[test]
fn hand_nce_case() {
    let p = vec![true, false];
    let rows: Vec<(Vec<bool>, usize)> = [1, 1, 0, 0, 0, 0].iter().map(|&y| (p.clone(), y)).collect();
    let r = analysis::nce_analysis(&crafted(&rows), 2);
    assert!((r.patterns[0].nce - brute_nce(&[1, 1, 0, 0, 0, 0], 2)).abs() <= 1e-9);
    assert!((r.patterns[0].nce - 0.91829).abs() < 1e-5);
    assert!((analysis::entropy(&[4, 2]) - 0.63651).abs() < 1e-5);
}
