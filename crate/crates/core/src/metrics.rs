//! Ranking metrics and bootstrap summaries.

use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::rng::{self, tags};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("both classes must be present")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("empty input")]
    Empty,
    #[error("bootstrap needs at least one resample")]
    NoResamples,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Probability that a random positive outscores a random negative, with
/// ties counted as one half. Computed from tie-averaged ranks.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (twice) the ascending ranks of positives; ties share the mean rank.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let doubled_mean = (i + 1 + j + 1) as u128;
        let positives = idx[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank_sum2 += doubled_mean * positives;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    // 2·U = 2·Σranks − p(p+1)
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Step-interpolated area under the precision–recall curve (average
/// precision): `Σ (R_k − R_{k−1})·P_k` over distinct score thresholds.
pub fn auc_prc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let idx = descending(scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        tp += idx[i..=j].iter().filter(|&&k| labels[k]).count();
        seen += j - i + 1;
        let recall = tp as f64 / pos as f64;
        area += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
        i = j + 1;
    }
    Ok(area)
}

/// Fraction of positions where `predicted == actual`.
pub fn accuracy(predicted: &[usize], actual: &[usize]) -> Result<f64, MetricError> {
    if predicted.len() != actual.len() {
        return Err(MetricError::LengthMismatch {
            scores: predicted.len(),
            labels: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = predicted.iter().zip(actual).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub mean: f64,
    /// Population standard deviation over resamples.
    pub std: f64,
    pub values: Vec<f64>,
}

impl BootstrapSummary {
    fn from_values(values: Vec<f64>) -> Self {
        // Shifted by the first value so a constant sample has exactly zero spread.
        let b = values.len() as f64;
        let shift = values[0];
        let dm = values.iter().map(|v| v - shift).sum::<f64>() / b;
        let var = values.iter().map(|v| (v - shift) * (v - shift)).sum::<f64>() / b - dm * dm;
        Self {
            mean: shift + dm,
            std: math::sqrt(var.max(0.0)),
            values,
        }
    }
}

/// Bootstrap with a caller-supplied index sampler. A resample that holds a
/// single class is redrawn.
pub fn bootstrap_with<M, S>(
    metric: M,
    scores: &[f64],
    labels: &[bool],
    resamples: usize,
    mut sampler: S,
) -> Result<BootstrapSummary, MetricError>
where
    M: Fn(&[f64], &[bool]) -> Result<f64, MetricError>,
    S: FnMut(usize) -> Vec<usize>,
{
    check(scores, labels)?;
    if resamples == 0 {
        return Err(MetricError::NoResamples);
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(MetricError::SingleClass);
    }
    let mut values = Vec::with_capacity(resamples);
    let (mut s, mut l) = (Vec::new(), Vec::new());
    while values.len() < resamples {
        let idx = sampler(scores.len());
        s.clear();
        l.clear();
        s.extend(idx.iter().map(|&i| scores[i]));
        l.extend(idx.iter().map(|&i| labels[i]));
        if l.iter().all(|&x| x) || l.iter().all(|&x| !x) {
            continue;
        }
        values.push(metric(&s, &l)?);
    }
    Ok(BootstrapSummary::from_values(values))
}

/// `resamples` draws of `n` pairs with replacement.
pub fn bootstrap<M>(
    metric: M,
    scores: &[f64],
    labels: &[bool],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapSummary, MetricError>
where
    M: Fn(&[f64], &[bool]) -> Result<f64, MetricError>,
{
    let mut rng = rng::stream(seed, tags::BOOTSTRAP);
    bootstrap_with(metric, scores, labels, resamples, |n| {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    })
}

/// Point metrics with bootstrap summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub auc_roc: f64,
    pub auc_prc: f64,
    pub accuracy: f64,
    pub auc_roc_boot: BootstrapSummary,
    pub auc_prc_boot: BootstrapSummary,
    pub accuracy_boot: BootstrapSummary,
}

/// Scores a binary task from positive-class probabilities.
pub fn report(
    positive_prob: &[f64],
    labels: &[bool],
    resamples: usize,
    seed: u64,
) -> Result<MetricsReport, MetricError> {
    let acc = |s: &[f64], l: &[bool]| -> Result<f64, MetricError> {
        let pred: Vec<usize> = s.iter().map(|&p| usize::from(p >= 0.5)).collect();
        let act: Vec<usize> = l.iter().map(|&b| usize::from(b)).collect();
        accuracy(&pred, &act)
    };
    Ok(MetricsReport {
        auc_roc: auc_roc(positive_prob, labels)?,
        auc_prc: auc_prc(positive_prob, labels)?,
        accuracy: acc(positive_prob, labels)?,
        auc_roc_boot: bootstrap(auc_roc, positive_prob, labels, resamples, seed)?,
        auc_prc_boot: bootstrap(auc_prc, positive_prob, labels, resamples, seed)?,
        accuracy_boot: bootstrap(acc, positive_prob, labels, resamples, seed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn roc_hand_cases() {
        let labels = [true, false, true, false];
        assert_eq!(auc_roc(&[0.9, 0.8, 0.3, 0.2], &labels).unwrap(), 0.75);
        assert_eq!(pairwise(&[0.9, 0.8, 0.3, 0.2], &labels), 0.75);
        assert_eq!(auc_roc(&[0.9, 0.1, 0.8, 0.2], &labels).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.4; 4], &labels).unwrap(), 0.5);
        assert_eq!(auc_roc(&[0.4; 2], &[true, true]), Err(MetricError::SingleClass));
    }

    #[test]
    fn prc_hand_cases() {
        assert_eq!(auc_prc(&[0.9, 0.8, 0.1, 0.0], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc_prc(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap(), 0.25);
        // Thresholds 0.9 (P=1, R=1/2) and 0.3 (P=2/3, R=1).
        let v = auc_prc(&[0.9, 0.5, 0.3], &[true, false, true]).unwrap();
        assert!((v - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(auc_prc(&[0.1], &[false]), Err(MetricError::NoPositives));
    }

    #[test]
    fn identity_bootstrap_reproduces_point_metric() {
        let s = [0.9, 0.8, 0.3, 0.2, 0.55];
        let l = [true, false, true, false, true];
        let b = bootstrap_with(auc_roc, &s, &l, 1, |n| (0..n).collect()).unwrap();
        assert_eq!(b.mean, auc_roc(&s, &l).unwrap());
        assert_eq!(b.std, 0.0);
    }

    #[test]
    fn constant_metric_has_zero_spread() {
        let s = [0.1, 0.2, 0.3, 0.4];
        let l = [true, false, false, true];
        let b = bootstrap(|_, _| Ok(0.42), &s, &l, 50, 3).unwrap();
        assert_eq!(b.std, 0.0);
        assert_eq!(b.values.len(), 50);
    }

    #[test]
    fn single_class_resamples_are_redrawn() {
        let s = [0.1, 0.9];
        let l = [false, true];
        let b = bootstrap(auc_roc, &s, &l, 200, 1).unwrap();
        assert_eq!(b.values.len(), 200);
    }

    #[test]
    fn doubling_resamples_barely_moves_the_mean() {
        let mut r = rng::stream(8, 0);
        let l: Vec<bool> = (0..500).map(|_| r.random::<f64>() < 0.4).collect();
        let s: Vec<f64> = l
            .iter()
            .map(|&y| if y { 0.6 } else { 0.4 } + 0.3 * rng::normal(&mut r))
            .collect();
        let a = bootstrap(auc_roc, &s, &l, 500, 2).unwrap();
        let b = bootstrap(auc_roc, &s, &l, 1000, 2).unwrap();
        assert!((a.mean - b.mean).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn roc_equals_pairwise_count(
            pairs in proptest::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 19.0).collect();
            let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let pos = labels.iter().filter(|&&x| x).count();
            prop_assume!(pos > 0 && pos < labels.len());
            prop_assert_eq!(auc_roc(&scores, &labels).unwrap(), pairwise(&scores, &labels));
        }

        #[test]
        fn prc_is_bounded_by_prevalence_and_one(
            pairs in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..100)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let pos = labels.iter().filter(|&&x| x).count();
            prop_assume!(pos > 0);
            let v = auc_prc(&scores, &labels).unwrap();
            // Floor: every positive ranked below every negative.
            let n = labels.len();
            let floor: f64 = (0..pos).map(|k| (k + 1) as f64 / (n - pos + k + 1) as f64).sum::<f64>() / pos as f64;
            prop_assert!(v <= 1.0 + 1e-12);
            prop_assert!(v >= floor - 1e-12);
        }
    }
}
