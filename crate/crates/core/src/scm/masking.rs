//! MCAR and group-conditioned MNAR masking.
//!
//! Both mechanisms keep at least one observed modality per sample: a draw
//! that would hide everything is repeated.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::MultimodalSample;
use crate::rng::{self, tags, SeededRng};

pub const NUM_GROUPS: usize = 6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaskError {
    #[error("MCAR rate must lie in [0, 1), got {0}")]
    BadRate(f64),
    #[error("MNAR scaling factor must be non-negative, got {0}")]
    BadAlpha(f64),
    #[error("invalid template: {0}")]
    BadTemplate(String),
    #[error("maskable modality set is empty")]
    NoMaskable,
    #[error("modality index {index} out of range for {count} modalities")]
    ModalityOutOfRange { index: usize, count: usize },
}

/// Group index in `1..=6` from age bracket (<40, 40–65, >65) and severity
/// (low below 5, high from 5).
pub fn assign_group(age: f64, severity: f64) -> usize {
    let bracket = if age < 40.0 {
        0
    } else if age <= 65.0 {
        1
    } else {
        2
    };
    let high = usize::from(severity >= 5.0);
    bracket * 2 + high + 1
}

/// Per-group masking probabilities for a list of maskable modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTemplate {
    pub groups: Vec<String>,
    pub modalities: Vec<String>,
    /// `probabilities[group][j]` for the `j`-th maskable modality.
    pub probabilities: Vec<Vec<f64>>,
}

impl Default for MaskTemplate {
    /// Medication, lab, notes and vitals template; younger and less severe
    /// patients miss more.
    fn default() -> Self {
        let groups = [
            "Young, Low severity",
            "Young, High severity",
            "Middle, Low severity",
            "Middle, High severity",
            "Old, Low severity",
            "Old, High severity",
        ];
        let probabilities = vec![
            vec![0.15, 0.30, 0.18, 0.35],
            vec![0.12, 0.25, 0.15, 0.30],
            vec![0.10, 0.20, 0.12, 0.25],
            vec![0.08, 0.15, 0.10, 0.20],
            vec![0.05, 0.10, 0.08, 0.15],
            vec![0.03, 0.08, 0.05, 0.10],
        ];
        MaskTemplate {
            groups: groups.iter().map(|g| String::from(*g)).collect(),
            modalities: ["Med", "Lab", "Notes", "Vital"]
                .iter()
                .map(|m| String::from(*m))
                .collect(),
            probabilities,
        }
    }
}

impl MaskTemplate {
    pub fn validate(&self) -> Result<(), MaskError> {
        let bad = |m: String| Err(MaskError::BadTemplate(m));
        if self.probabilities.len() != NUM_GROUPS {
            return bad(alloc::format!(
                "{} groups, expected {NUM_GROUPS}",
                self.probabilities.len()
            ));
        }
        if !self.groups.is_empty() && self.groups.len() != NUM_GROUPS {
            return bad("group names do not match the group count".into());
        }
        let width = self.modalities.len();
        for (g, row) in self.probabilities.iter().enumerate() {
            if row.len() != width {
                return bad(alloc::format!(
                    "group {} has {} entries, expected {width}",
                    g + 1,
                    row.len()
                ));
            }
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return bad(alloc::format!("probability {p} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// `min(alpha · p_template, 1)` for a 1-based group and template column.
    pub fn final_probability(&self, group: usize, column: usize, alpha: f64) -> f64 {
        (alpha * self.probabilities[group - 1][column]).min(1.0)
    }
}

/// Fraction of masked `(sample, modality)` pairs over `modalities`.
pub fn missing_rate(samples: &[MultimodalSample], modalities: &[usize]) -> f64 {
    let total = samples.len() * modalities.len();
    if total == 0 {
        return 0.0;
    }
    let missing: usize = samples
        .iter()
        .map(|s| modalities.iter().filter(|&&m| !s.mask[m]).count())
        .sum();
    missing as f64 / total as f64
}

/// Redraws `mask` over `candidates` with per-candidate drop probabilities
/// until at least one modality remains observed.
fn draw_with_reroll(
    mask: &mut [bool],
    candidates: &[(usize, f64)],
    rng: &mut SeededRng,
) {
    let original: Vec<bool> = mask.to_vec();
    let hopeless = candidates.iter().all(|(_, p)| *p >= 1.0);
    loop {
        for &(m, p) in candidates {
            mask[m] = original[m] && !(rng.random::<f64>() < p);
        }
        if mask.iter().any(|&o| o) {
            return;
        }
        if hopeless {
            // Every observed modality is certain to be dropped; keep one.
            let keep = candidates[rng.random_range(0..candidates.len())].0;
            mask[keep] = true;
            return;
        }
    }
}

/// Hides each observed modality independently with probability `rate`.
pub fn apply_mcar(
    samples: &[MultimodalSample],
    rate: f64,
    seed: u64,
) -> Result<Vec<MultimodalSample>, MaskError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(MaskError::BadRate(rate));
    }
    let mut rng = rng::stream(seed, tags::MASK);
    Ok(samples
        .iter()
        .map(|s| {
            let mut out = s.clone();
            if rate > 0.0 {
                let candidates: Vec<(usize, f64)> = s.observed().map(|m| (m, rate)).collect();
                if !candidates.is_empty() {
                    draw_with_reroll(&mut out.mask, &candidates, &mut rng);
                }
            }
            out
        })
        .collect())
}

/// Hides modality `maskable[j]` of a sample in group `g` with probability
/// `min(alpha · template[g][j], 1)`. Other modalities are untouched.
pub fn apply_mnar(
    samples: &[MultimodalSample],
    template: &MaskTemplate,
    alpha: f64,
    maskable: &[usize],
    seed: u64,
) -> Result<Vec<MultimodalSample>, MaskError> {
    if !(alpha >= 0.0) {
        return Err(MaskError::BadAlpha(alpha));
    }
    if maskable.is_empty() {
        return Err(MaskError::NoMaskable);
    }
    template.validate()?;
    if maskable.len() != template.modalities.len() {
        return Err(MaskError::BadTemplate(alloc::format!(
            "template covers {} modalities, {} maskable given",
            template.modalities.len(),
            maskable.len()
        )));
    }
    let mut rng = rng::stream(seed, tags::MASK);
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        if let Some(&bad) = maskable.iter().find(|&&m| m >= s.num_modalities()) {
            return Err(MaskError::ModalityOutOfRange {
                index: bad,
                count: s.num_modalities(),
            });
        }
        let mut next = s.clone();
        if alpha > 0.0 {
            let group = assign_group(s.age, s.severity);
            let candidates: Vec<(usize, f64)> = maskable
                .iter()
                .enumerate()
                .filter(|(_, &m)| s.mask[m])
                .map(|(j, &m)| (m, template.final_probability(group, j, alpha)))
                .collect();
            if !candidates.is_empty() {
                draw_with_reroll(&mut next.mask, &candidates, &mut rng);
            }
        }
        out.push(next);
    }
    Ok(out)
}

/// Mean of `min(alpha · p_template, 1)` over every `(sample, maskable
/// modality)` pair.
pub fn expected_mnar_rate(
    samples: &[MultimodalSample],
    template: &MaskTemplate,
    alpha: f64,
    maskable: &[usize],
) -> f64 {
    if samples.is_empty() || maskable.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .iter()
        .map(|s| {
            let g = assign_group(s.age, s.severity);
            (0..maskable.len())
                .map(|j| template.final_probability(g, j, alpha))
                .sum::<f64>()
        })
        .sum();
    total / (samples.len() * maskable.len()) as f64
}

/// Per-group sample counts, indexed by group − 1.
pub fn group_counts(samples: &[MultimodalSample]) -> [usize; NUM_GROUPS] {
    let mut counts = [0; NUM_GROUPS];
    for s in samples {
        counts[assign_group(s.age, s.severity) - 1] += 1;
    }
    counts
}
