//! Experiment pipeline and run directories.

use std::fs;
use std::path::Path;

use cadlab_core::analysis;
use cadlab_core::metrics::{self, MetricsReport};
use cadlab_core::model::CadModel;
use cadlab_core::scm::{self, DatasetSchema, MaskTemplate, MultimodalSample};
use cadlab_core::train::{self, TrainOutcome};

use crate::config::RunConfig;
use crate::formats::{self, Checkpoint, DictionaryFile};
use crate::tables::{self, LossRow};
use crate::Error;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Generates `n + test_n` samples from one seed and splits them in order.
pub fn generate_split(
    schema: &DatasetSchema,
    n: usize,
    test_n: usize,
    seed: u64,
) -> Result<(Vec<MultimodalSample>, Vec<MultimodalSample>), Error> {
    let mut all = scm::generate_dataset(schema, n + test_n, seed)?;
    let test = all.split_off(n);
    Ok((all, test))
}

/// Per-modality feature widths, read from observed entries.
pub fn feature_dims(samples: &[MultimodalSample]) -> Result<Vec<usize>, Error> {
    let m = samples
        .first()
        .ok_or_else(|| Error::Invalid("dataset is empty".into()))?
        .num_modalities();
    let mut dims = vec![None; m];
    for s in samples {
        for j in s.observed() {
            let w = s.features[j].len();
            match dims[j] {
                None => dims[j] = Some(w),
                Some(d) if d != w => {
                    return Err(Error::Invalid(format!(
                        "sample {} has width {w} for modality {j}, expected {d}",
                        s.id
                    )))
                }
                _ => {}
            }
        }
    }
    dims.into_iter()
        .enumerate()
        .map(|(j, d)| d.ok_or_else(|| Error::Invalid(format!("modality {j} is never observed"))))
        .collect()
}

pub fn num_classes(samples: &[MultimodalSample]) -> usize {
    samples.iter().map(|s| s.label + 1).max().unwrap_or(0).max(2)
}

/// Template scale whose expected missing rate over `maskable` is `target`,
/// by bisection. Errors when the template cannot reach the target.
pub fn mnar_alpha_for_rate(
    samples: &[MultimodalSample],
    template: &MaskTemplate,
    maskable: &[usize],
    target: f64,
) -> Result<f64, Error> {
    let rate = |a| scm::masking::expected_mnar_rate(samples, template, a, maskable);
    let min_p = template
        .probabilities
        .iter()
        .flatten()
        .copied()
        .filter(|&p| p > 0.0)
        .fold(f64::INFINITY, f64::min);
    let mut hi = if min_p.is_finite() { 1.0 / min_p } else { 0.0 };
    if !(0.0..=1.0).contains(&target) || rate(hi) < target {
        return Err(Error::Invalid(format!(
            "template cannot reach a missing rate of {target}"
        )));
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

pub fn positive_prob(model: &CadModel, samples: &[MultimodalSample]) -> Result<Vec<f64>, Error> {
    if model.config.num_classes != 2 {
        return Err(Error::Invalid(format!(
            "metrics need a binary task, model has {} classes",
            model.config.num_classes
        )));
    }
    let p = model.predict_proba(samples)?;
    Ok((0..p.rows()).map(|r| p.get(r, 1)).collect())
}

pub fn evaluate(
    model: &CadModel,
    samples: &[MultimodalSample],
    resamples: usize,
    seed: u64,
) -> Result<MetricsReport, Error> {
    let scores = positive_prob(model, samples)?;
    let labels: Vec<bool> = samples.iter().map(|s| s.label == 1).collect();
    Ok(metrics::report(&scores, &labels, resamples, seed)?)
}

pub struct RunOutput {
    pub outcome: TrainOutcome,
    /// Metrics on the test set when one was given.
    pub report: Option<MetricsReport>,
}

/// Applies the configured MNAR template to training data, if any.
pub fn mask_training_data(cfg: &RunConfig, samples: &[MultimodalSample]) -> Result<Vec<MultimodalSample>, Error> {
    let Some(path) = &cfg.mnar_template else {
        return Ok(samples.to_vec());
    };
    let template = formats::load_template(path)?;
    let m = samples.first().map_or(0, |s| s.num_modalities());
    let width = template.modalities.len();
    if width > m {
        return Err(Error::Invalid(format!(
            "template covers {width} modalities, data has {m}"
        )));
    }
    let maskable: Vec<usize> = (m - width..m).collect();
    Ok(scm::apply_mnar(samples, &template, cfg.train.mnar_alpha, &maskable, cfg.train.seed)?)
}

pub fn run(
    cfg: &RunConfig,
    train_data: &[MultimodalSample],
    test_data: Option<&[MultimodalSample]>,
    resamples: usize,
) -> Result<RunOutput, Error> {
    let data = mask_training_data(cfg, train_data)?;
    let dims = feature_dims(&data)?;
    let outcome = train::fit(&cfg.train, &data, &dims, num_classes(&data))?;
    let report = test_data
        .map(|t| evaluate(&outcome.model, t, resamples, cfg.train.seed))
        .transpose()?;
    Ok(RunOutput { outcome, report })
}

/// Writes the config snapshot, seed, loss curve, metrics, checkpoint and
/// dictionary into `dir`.
pub fn write_run_dir(dir: &Path, cfg: &RunConfig, out: &RunOutput) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("config.cfg", cfg.render())?;
    write("seed", format!("{}\n", cfg.train.seed))?;
    let o = &out.outcome;
    let losses: Vec<LossRow> = o
        .backbone_curve
        .iter()
        .map(|l| LossRow::new("backbone", l))
        .chain(o.curve.iter().map(|l| LossRow::new("train", l)))
        .collect();
    tables::save_rows(&losses, &dir.join("loss.csv"))?;
    let metric_rows = out.report.as_ref().map(tables::metric_rows).unwrap_or_default();
    tables::save_rows(&metric_rows, &dir.join("metrics.csv"))?;
    formats::write_json(&Checkpoint::from_model(&o.model, cfg.train.seed), &dir.join("checkpoint.json"))?;
    if let Some(d) = &o.model.dictionary {
        formats::write_json(&DictionaryFile::from(d), &dir.join("dictionary.json"))?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CadModel, Error> {
    let ck: Checkpoint = formats::read_json(path)?;
    ck.into_model().map_err(|e| e.in_file(path))
}

pub fn embedding_distance(
    model: &CadModel,
    samples: &[MultimodalSample],
    rate: f64,
    seed: u64,
) -> Result<f64, Error> {
    Ok(analysis::embedding_distance(model, samples, rate, seed)?)
}
