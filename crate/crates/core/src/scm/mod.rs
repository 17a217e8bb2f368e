//! Synthetic multimodal cohorts with a known confounding structure.
//!
//! A latent confounder `z` drives bias features `b` (and optionally leaks
//! into the label), causal features `c` drive the label, and each modality
//! observes a linear mix of `c` and `b`:
//!
//! ```text
//! z ~ N(0, I)            c ~ N(0, I)
//! b = γ·G·z + ε_b        ε_b ~ N(0, I)
//! y ~ Cat(softmax(W_y·c + η·W_z·z))
//! x_m = A_m·c + B_m·b + σ·ε_m
//! age = clamp(55 + 15·z₀, 18, 90)      severity = clamp(5 + 3·c₀, 0, 24)
//! ```
//!
//! Age and severity feed the group-conditioned missingness in [`masking`].

pub mod masking;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::rng::{self, tags};
use crate::tensor::{Tensor, TensorError};

pub use masking::{
    apply_mcar, apply_mnar, assign_group, missing_rate, MaskError, MaskTemplate, NUM_GROUPS,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemaError {
    #[error("invalid schema: {0}")]
    Invalid(String),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Ground-truth latent variables of a synthetic sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub z: Vec<f64>,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
}

/// One patient record.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub id: u64,
    /// Feature vector per modality. Entries whose `mask` bit is clear are
    /// retained for bookkeeping but never read by models.
    pub features: Vec<Vec<f64>>,
    /// `true` where the modality is observed.
    pub mask: Vec<bool>,
    pub label: usize,
    pub age: f64,
    pub severity: f64,
    pub latents: Option<Latents>,
}

impl MultimodalSample {
    pub fn num_modalities(&self) -> usize {
        self.mask.len()
    }

    pub fn observed(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn fully_observed(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }
}

/// Knobs for building a [`DatasetSchema`] with random mixing matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaConfig {
    pub num_modalities: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub dim_z: usize,
    pub dim_c: usize,
    pub dim_b: usize,
    /// Scale of the causal mix `A_m`, per modality.
    pub causal_strength: Vec<f64>,
    /// Scale of the bias mix `B_m`, per modality.
    pub bias_strength: Vec<f64>,
    /// Scale of the label weights `W_y`.
    pub label_scale: f64,
    pub gamma: f64,
    pub eta: f64,
    pub sigma: f64,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            num_modalities: 4,
            feature_dim: 16,
            num_classes: 2,
            dim_z: 4,
            dim_c: 4,
            dim_b: 4,
            causal_strength: vec![1.0, 1.0, 0.5, 0.25],
            bias_strength: vec![0.25, 0.5, 1.0, 1.0],
            label_scale: 2.0,
            gamma: 2.0,
            eta: 1.5,
            sigma: 0.5,
        }
    }
}

/// Mechanism parameters of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSchema {
    pub feature_dims: Vec<usize>,
    pub num_classes: usize,
    pub dim_z: usize,
    pub dim_c: usize,
    pub dim_b: usize,
    /// `A_m`, `feature_dims[m] × dim_c`.
    pub causal_mix: Vec<Tensor>,
    /// `B_m`, `feature_dims[m] × dim_b`.
    pub bias_mix: Vec<Tensor>,
    /// `W_y`, `num_classes × dim_c`.
    pub label_causal: Tensor,
    /// `W_z`, `num_classes × dim_z`.
    pub label_confounder: Tensor,
    /// `G`, `dim_b × dim_z`.
    pub bias_coupling: Tensor,
    pub gamma: f64,
    pub eta: f64,
    pub sigma: f64,
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Tensor {
    let s = scale / math::sqrt(cols.max(1) as f64);
    let data = (0..rows * cols).map(|_| s * rng::normal(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized buffer")
}

impl DatasetSchema {
    /// Draws mixing and label matrices from `seed`.
    pub fn random(cfg: &SchemaConfig, seed: u64) -> Result<Self, SchemaError> {
        let m = cfg.num_modalities;
        if cfg.causal_strength.len() != m || cfg.bias_strength.len() != m {
            return Err(SchemaError::Invalid(alloc::format!(
                "strength vectors must have {m} entries"
            )));
        }
        let mut rng = rng::stream(seed, tags::SCHEMA);
        let f = cfg.feature_dim;
        let causal_mix = (0..m)
            .map(|i| gaussian_matrix(f, cfg.dim_c, cfg.causal_strength[i], &mut rng))
            .collect();
        let bias_mix = (0..m)
            .map(|i| gaussian_matrix(f, cfg.dim_b, cfg.bias_strength[i], &mut rng))
            .collect();
        let label_causal = gaussian_matrix(cfg.num_classes, cfg.dim_c, cfg.label_scale, &mut rng);
        let label_confounder =
            gaussian_matrix(cfg.num_classes, cfg.dim_z, cfg.label_scale, &mut rng);
        let bias_coupling = gaussian_matrix(cfg.dim_b, cfg.dim_z, 1.0, &mut rng);
        let schema = DatasetSchema {
            feature_dims: vec![f; m],
            num_classes: cfg.num_classes,
            dim_z: cfg.dim_z,
            dim_c: cfg.dim_c,
            dim_b: cfg.dim_b,
            causal_mix,
            bias_mix,
            label_causal,
            label_confounder,
            bias_coupling,
            gamma: cfg.gamma,
            eta: cfg.eta,
            sigma: cfg.sigma,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn num_modalities(&self) -> usize {
        self.feature_dims.len()
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let bad = |msg: String| Err(SchemaError::Invalid(msg));
        let m = self.num_modalities();
        if m == 0 {
            return bad("at least one modality required".into());
        }
        if self.num_classes < 2 {
            return bad("at least two classes required".into());
        }
        if self.causal_mix.len() != m || self.bias_mix.len() != m {
            return bad(alloc::format!("expected {m} mixing matrices per kind"));
        }
        for i in 0..m {
            let f = self.feature_dims[i];
            let (a, b) = (&self.causal_mix[i], &self.bias_mix[i]);
            if a.rows() != f || a.cols() != self.dim_c {
                return bad(alloc::format!(
                    "A_{i} is {}, expected [{f}, {}]",
                    a.shape(),
                    self.dim_c
                ));
            }
            if b.rows() != f || b.cols() != self.dim_b {
                return bad(alloc::format!(
                    "B_{i} is {}, expected [{f}, {}]",
                    b.shape(),
                    self.dim_b
                ));
            }
        }
        let expect = |t: &Tensor, r: usize, c: usize, name: &str| {
            if t.rows() != r || t.cols() != c {
                Err(SchemaError::Invalid(alloc::format!(
                    "{name} is {}, expected [{r}, {c}]",
                    t.shape()
                )))
            } else {
                Ok(())
            }
        };
        expect(&self.label_causal, self.num_classes, self.dim_c, "W_y")?;
        expect(&self.label_confounder, self.num_classes, self.dim_z, "W_z")?;
        expect(&self.bias_coupling, self.dim_b, self.dim_z, "G")?;
        if self.dim_z == 0 || self.dim_c == 0 {
            return bad("dim_z and dim_c must be positive".into());
        }
        for (name, v) in [("gamma", self.gamma), ("eta", self.eta), ("sigma", self.sigma)] {
            if !(v >= 0.0) {
                return bad(alloc::format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }

    /// Class probabilities given the causal and confounder latents.
    pub fn label_distribution(&self, c: &[f64], z: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.num_classes)
            .map(|k| {
                dot(self.label_causal.row(k), c) + self.eta * dot(self.label_confounder.row(k), z)
            })
            .collect();
        softmax(&logits)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| math::exp(l - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn mat_vec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| dot(m.row(r), v)).collect()
}

pub fn age_from_confounder(z: &[f64]) -> f64 {
    (55.0 + 15.0 * z[0]).clamp(18.0, 90.0)
}

pub fn severity_from_causal(c: &[f64]) -> f64 {
    (5.0 + 3.0 * c[0]).clamp(0.0, 24.0)
}

/// Draws `n` fully observed samples. Sample ids run from `id_offset`.
pub fn generate_dataset(
    schema: &DatasetSchema,
    n: usize,
    seed: u64,
) -> Result<Vec<MultimodalSample>, SchemaError> {
    generate_with_offset(schema, n, seed, 0)
}

pub fn generate_with_offset(
    schema: &DatasetSchema,
    n: usize,
    seed: u64,
    id_offset: u64,
) -> Result<Vec<MultimodalSample>, SchemaError> {
    if n == 0 {
        return Err(SchemaError::NoSamples);
    }
    schema.validate()?;
    let mut rng = rng::stream(seed, tags::SAMPLES);
    let draw = |k: usize, rng: &mut rng::SeededRng| -> Vec<f64> {
        (0..k).map(|_| rng::normal(rng)).collect()
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let z = draw(schema.dim_z, &mut rng);
        let c = draw(schema.dim_c, &mut rng);
        let noise_b = draw(schema.dim_b, &mut rng);
        let gz = mat_vec(&schema.bias_coupling, &z);
        let b: Vec<f64> = gz
            .iter()
            .zip(&noise_b)
            .map(|(g, e)| schema.gamma * g + e)
            .collect();

        let probs = schema.label_distribution(&c, &z);
        let u: f64 = rng.random();
        let mut label = probs.len() - 1;
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                label = k;
                break;
            }
        }

        let features = (0..schema.num_modalities())
            .map(|m| {
                let ac = mat_vec(&schema.causal_mix[m], &c);
                let bb = mat_vec(&schema.bias_mix[m], &b);
                ac.iter()
                    .zip(&bb)
                    .map(|(x, y)| {
                        let e = rng::normal(&mut rng);
                        x + y + schema.sigma * e
                    })
                    .collect()
            })
            .collect();

        out.push(MultimodalSample {
            id: id_offset + i as u64,
            features,
            mask: vec![true; schema.num_modalities()],
            label,
            age: age_from_confounder(&z),
            severity: severity_from_causal(&c),
            latents: Some(Latents { z, c, b }),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_degenerate_case_is_pure_causal_mix() {
        let cfg = SchemaConfig {
            gamma: 0.0,
            eta: 0.0,
            sigma: 0.0,
            bias_strength: vec![0.0; 4],
            ..SchemaConfig::default()
        };
        let schema = DatasetSchema::random(&cfg, 3).unwrap();
        let samples = generate_dataset(&schema, 50, 11).unwrap();
        for s in &samples {
            let c = &s.latents.as_ref().unwrap().c;
            for (m, x) in s.features.iter().enumerate() {
                assert_eq!(x, &mat_vec(&schema.causal_mix[m], c));
            }
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let schema = DatasetSchema::random(&SchemaConfig::default(), 1).unwrap();
        let a = generate_dataset(&schema, 1000, 42).unwrap();
        let b = generate_dataset(&schema, 1000, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&schema, 1000, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_shapes_and_empty_requests() {
        let mut schema = DatasetSchema::random(&SchemaConfig::default(), 1).unwrap();
        assert_eq!(generate_dataset(&schema, 0, 1), Err(SchemaError::NoSamples));
        schema.bias_mix[2] = Tensor::zeros(3, 3);
        assert!(matches!(
            generate_dataset(&schema, 5, 1),
            Err(SchemaError::Invalid(_))
        ));
        let mut neg = DatasetSchema::random(&SchemaConfig::default(), 1).unwrap();
        neg.sigma = -1.0;
        assert!(neg.validate().is_err());
    }

    #[test]
    fn attributes_follow_fixed_maps() {
        let schema = DatasetSchema::random(&SchemaConfig::default(), 9).unwrap();
        for s in generate_dataset(&schema, 200, 5).unwrap() {
            let l = s.latents.as_ref().unwrap();
            assert_eq!(s.age, age_from_confounder(&l.z));
            assert_eq!(s.severity, severity_from_causal(&l.c));
            assert!((18.0..=90.0).contains(&s.age));
            assert!((0.0..=24.0).contains(&s.severity));
            assert!(s.label < 2 && s.fully_observed());
        }
    }
}
