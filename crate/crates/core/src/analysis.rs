//! Bias diagnostics: label entropy per missingness pattern, per-group AUC,
//! and embedding drift under extra masking.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::metrics::{self, MetricError};
use crate::model::{CadModel, ModelError};
use crate::scm::{self, MultimodalSample, NUM_GROUPS};

/// Width of the NCE histogram buckets.
pub const NCE_BUCKET: f64 = 0.2;
pub const NCE_BUCKETS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct PatternEntropy {
    pub pattern: Vec<bool>,
    pub count: usize,
    pub label_histogram: Vec<usize>,
    /// `H(y | pattern) / ln C`, in `[0, 1]`.
    pub nce: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NceReport {
    pub num_classes: usize,
    /// One entry per distinct pattern, ordered by pattern bits.
    pub patterns: Vec<PatternEntropy>,
    /// Samples per bucket `[0, 0.2), [0.2, 0.4), …, [0.8, 1.0]`.
    pub bucket_counts: [usize; NCE_BUCKETS],
}

/// Shannon entropy (nats) of a count histogram.
pub fn entropy(histogram: &[usize]) -> f64 {
    let total: usize = histogram.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * math::ln(p)
        })
        .sum();
    // A single class sums to -0.0.
    h + 0.0
}

pub fn bucket_of(nce: f64) -> usize {
    ((nce / NCE_BUCKET) as usize).min(NCE_BUCKETS - 1)
}

pub fn nce_analysis(samples: &[MultimodalSample], num_classes: usize) -> NceReport {
    let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for s in samples {
        let h = groups.entry(s.mask.clone()).or_insert_with(|| vec![0; num_classes]);
        if s.label >= h.len() {
            h.resize(s.label + 1, 0);
        }
        h[s.label] += 1;
    }
    let norm = math::ln(num_classes.max(2) as f64);
    let mut buckets = [0; NCE_BUCKETS];
    let patterns = groups
        .into_iter()
        .map(|(pattern, label_histogram)| {
            let count = label_histogram.iter().sum();
            let nce = (entropy(&label_histogram) / norm).clamp(0.0, 1.0);
            buckets[bucket_of(nce)] += count;
            PatternEntropy {
                pattern,
                count,
                label_histogram,
                nce,
            }
        })
        .collect();
    NceReport {
        num_classes,
        patterns,
        bucket_counts: buckets,
    }
}

/// AUC-ROC inside one MNAR group; `None` when the group lacks a class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupAuc {
    pub group: usize,
    pub count: usize,
    pub auc: Option<f64>,
}

/// Per-group AUC of positive-class scores.
pub fn subgroup_auc(samples: &[MultimodalSample], positive_prob: &[f64]) -> Vec<GroupAuc> {
    (1..=NUM_GROUPS)
        .map(|g| {
            let members: Vec<usize> = (0..samples.len())
                .filter(|&i| scm::assign_group(samples[i].age, samples[i].severity) == g)
                .collect();
            let scores: Vec<f64> = members.iter().map(|&i| positive_prob[i]).collect();
            let labels: Vec<bool> = members.iter().map(|&i| samples[i].label == 1).collect();
            let auc = match metrics::auc_roc(&scores, &labels) {
                Ok(v) => Some(v),
                Err(MetricError::SingleClass | MetricError::Empty) => None,
                Err(e) => unreachable!("{e}"),
            };
            GroupAuc {
                group: g,
                count: members.len(),
                auc,
            }
        })
        .collect()
}

pub fn subgroup_eval(model: &CadModel, samples: &[MultimodalSample]) -> Result<Vec<GroupAuc>, ModelError> {
    let p = model.predict_proba(samples)?;
    let pos: Vec<f64> = (0..p.rows()).map(|r| p.get(r, 1)).collect();
    Ok(subgroup_auc(samples, &pos))
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Mean L2 distance between each fully observed patient's embedding and
/// its embedding after MCAR masking at `mask_rate`.
pub fn embedding_distance(
    model: &CadModel,
    samples: &[MultimodalSample],
    mask_rate: f64,
    seed: u64,
) -> Result<f64, AnalysisError> {
    let full: Vec<MultimodalSample> = samples.iter().filter(|s| s.fully_observed()).cloned().collect();
    if full.is_empty() {
        return Err(AnalysisError::NoFullyObserved);
    }
    let masked = scm::apply_mcar(&full, mask_rate, seed ^ crate::rng::tags::EMBED_MASK)
        .map_err(AnalysisError::Mask)?;
    let a = model.embed(&full)?;
    let b = model.embed(&masked)?;
    let total: f64 = (0..a.rows()).map(|r| l2(a.row(r), b.row(r))).sum();
    Ok(total / a.rows() as f64)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("no fully observed samples; embedding distance needs complete patients")]
    NoFullyObserved,
    #[error(transparent)]
    Mask(scm::MaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(mask: &[bool], label: usize, age: f64, severity: f64) -> MultimodalSample {
        MultimodalSample {
            id: 0,
            features: vec![vec![0.0; 2]; mask.len()],
            mask: mask.to_vec(),
            label,
            age,
            severity,
            latents: None,
        }
    }

    #[test]
    fn hand_entropy_case() {
        let h = entropy(&[4, 2]);
        let p = [2.0f64 / 6.0, 4.0 / 6.0];
        let oracle = -(p[0] * p[0].ln() + p[1] * p[1].ln());
        assert!((h - oracle).abs() < 1e-15);
        assert!((h - 0.63651).abs() < 1e-5);
        assert!((h / 2f64.ln() - 0.91829).abs() < 1e-5);
    }

    #[test]
    fn two_pattern_report() {
        let a = [true, true];
        let b = [true, false];
        let mut s = Vec::new();
        for y in [1, 1, 0, 0, 0, 0] {
            s.push(sample(&a, y, 50.0, 1.0));
        }
        for _ in 0..3 {
            s.push(sample(&b, 1, 50.0, 1.0));
        }
        let r = nce_analysis(&s, 2);
        assert_eq!(r.patterns.len(), 2);
        let pb = &r.patterns[0];
        assert_eq!((pb.pattern.as_slice(), pb.count, pb.nce), (&b[..], 3, 0.0));
        assert!(pb.nce.is_sign_positive());
        let pa = &r.patterns[1];
        assert!((pa.nce - 0.91829).abs() < 1e-5);
        assert_eq!(r.bucket_counts, [3, 0, 0, 0, 6]);
        assert_eq!(r.bucket_counts.iter().sum::<usize>(), s.len());
    }

    #[test]
    fn balanced_pattern_has_unit_nce() {
        let s: Vec<_> = (0..4).map(|i| sample(&[true], i % 2, 50.0, 1.0)).collect();
        assert_eq!(nce_analysis(&s, 2).patterns[0].nce, 1.0);
    }

    #[test]
    fn subgroup_undefined_when_one_class() {
        // Groups 1 (young/low) and 6 (old/high).
        let s = vec![
            sample(&[true], 1, 30.0, 1.0),
            sample(&[true], 0, 30.0, 2.0),
            sample(&[true], 1, 80.0, 9.0),
        ];
        let r = subgroup_auc(&s, &[0.9, 0.2, 0.5]);
        assert_eq!(r[0].auc, Some(1.0));
        assert_eq!(r[5].auc, None);
        assert_eq!(r[5].count, 1);
        assert!(r[1..5].iter().all(|g| g.count == 0 && g.auc.is_none()));
    }
}
