//! Grids over dictionary size, loss weight, missing rate and ablation
//! variants. One CSV row per cell.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::thread;

use cadlab_core::mdm::CorpusMode;
use cadlab_core::scm::{self, MaskTemplate, MultimodalSample};
use cadlab_core::train::DictionaryMode;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::run;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Baseline,
    /// No disentanglement branch.
    A1,
    /// No adjustment module.
    A4,
    /// One corpus copy per modality.
    A5,
    /// Random prototypes.
    A6,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::Baseline,
        Variant::A1,
        Variant::A4,
        Variant::A5,
        Variant::A6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Baseline => "baseline",
            Variant::A1 => "a1",
            Variant::A4 => "a4",
            Variant::A5 => "a5",
            Variant::A6 => "a6",
        }
    }

    pub fn apply(self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        match self {
            Variant::Full => {}
            Variant::Baseline => {
                t.cbdm = false;
                t.mdm = false;
            }
            Variant::A1 => t.cbdm = false,
            Variant::A4 => t.mdm = false,
            Variant::A5 => t.masking_mode = CorpusMode::Multi,
            Variant::A6 => t.dictionary_mode = DictionaryMode::Random,
        }
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?}; expected one of full, baseline, a1, a4, a5, a6"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mnar,
}

impl FromStr for Mechanism {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mcar" => Ok(Mechanism::Mcar),
            "mnar" => Ok(Mechanism::Mnar),
            _ => Err(format!("mechanism must be mcar or mnar, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub variants: Vec<Variant>,
    pub ks: Vec<usize>,
    pub alphas: Vec<f64>,
    pub missing_rates: Vec<f64>,
    pub mechanism: Mechanism,
    pub template: MaskTemplate,
    pub resamples: usize,
    pub jobs: usize,
    /// Per-cell run directories are written under this path when set.
    pub run_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub variant: Variant,
    pub k: usize,
    pub alpha: f64,
    pub missing_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub variant: Variant,
    pub k: usize,
    pub alpha: f64,
    pub mechanism: Option<Mechanism>,
    pub missing_rate: Option<f64>,
    pub observed_missing_rate: f64,
    pub seed: u64,
    pub auc_roc: f64,
    pub auc_prc: f64,
    pub accuracy: f64,
    pub auc_roc_std: f64,
    pub auc_prc_std: f64,
}

impl SweepSpec {
    /// Cartesian product; an empty axis contributes the base value.
    pub fn cells(&self) -> Vec<Cell> {
        let t = &self.base.train;
        let variants = if self.variants.is_empty() { vec![Variant::Full] } else { self.variants.clone() };
        let ks = if self.ks.is_empty() { vec![t.k] } else { self.ks.clone() };
        let alphas = if self.alphas.is_empty() { vec![t.alpha] } else { self.alphas.clone() };
        let rates: Vec<Option<f64>> = if self.missing_rates.is_empty() {
            vec![None]
        } else {
            self.missing_rates.iter().map(|&r| Some(r)).collect()
        };
        let mut out = Vec::new();
        for &variant in &variants {
            for &k in &ks {
                for &alpha in &alphas {
                    for &missing_rate in &rates {
                        out.push(Cell {
                            index: out.len(),
                            variant,
                            k,
                            alpha,
                            missing_rate,
                        });
                    }
                }
            }
        }
        out
    }

    fn mask(&self, data: &[MultimodalSample], rate: f64, seed: u64) -> Result<Vec<MultimodalSample>, Error> {
        match self.mechanism {
            Mechanism::Mcar => Ok(scm::apply_mcar(data, rate, seed)?),
            Mechanism::Mnar => {
                let m = data.first().map_or(0, |s| s.num_modalities());
                let width = self.template.modalities.len().min(m);
                let maskable: Vec<usize> = (m - width..m).collect();
                let a = run::mnar_alpha_for_rate(data, &self.template, &maskable, rate)?;
                Ok(scm::apply_mnar(data, &self.template, a, &maskable, seed)?)
            }
        }
    }

    pub fn run_cell(
        &self,
        cell: &Cell,
        train: &[MultimodalSample],
        test: &[MultimodalSample],
    ) -> Result<SweepRow, Error> {
        let mut cfg = self.base.clone();
        cfg.train.k = cell.k;
        cfg.train.alpha = cell.alpha;
        cell.variant.apply(&mut cfg);
        let seed = cfg.train.seed;
        let (train, test) = match cell.missing_rate {
            Some(r) => (self.mask(train, r, seed)?, self.mask(test, r, seed.wrapping_add(1))?),
            None => (train.to_vec(), test.to_vec()),
        };
        let out = run::run(&cfg, &train, Some(&test), self.resamples)?;
        if let Some(root) = &self.run_root {
            run::write_run_dir(&cell_dir(root, cell.index), &cfg, &out)?;
        }
        let r = out.report.expect("test set given");
        let m = train.first().map_or(0, |s| s.num_modalities());
        let all: Vec<usize> = (0..m).collect();
        Ok(SweepRow {
            cell: cell.index,
            variant: cell.variant,
            k: cell.k,
            alpha: cell.alpha,
            mechanism: cell.missing_rate.map(|_| self.mechanism),
            missing_rate: cell.missing_rate,
            observed_missing_rate: scm::missing_rate(&train, &all),
            seed,
            auc_roc: r.auc_roc,
            auc_prc: r.auc_prc,
            accuracy: r.accuracy,
            auc_roc_std: r.auc_roc_boot.std,
            auc_prc_std: r.auc_prc_boot.std,
        })
    }

    /// Runs every cell on up to `jobs` threads; rows come back in cell order.
    pub fn run(&self, train: &[MultimodalSample], test: &[MultimodalSample]) -> Result<Vec<SweepRow>, Error> {
        let cells = self.cells();
        let jobs = self.jobs.clamp(1, cells.len().max(1));
        let next = Mutex::new(0usize);
        let results: Vec<Mutex<Option<Result<SweepRow, Error>>>> =
            cells.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(|| loop {
                    let i = {
                        let mut n = next.lock().unwrap();
                        let i = *n;
                        *n += 1;
                        i
                    };
                    let Some(cell) = cells.get(i) else { break };
                    *results[i].lock().unwrap() = Some(self.run_cell(cell, train, test));
                });
            }
        });
        results
            .into_iter()
            .map(|r| r.into_inner().unwrap().expect("every cell ran"))
            .collect()
    }
}

pub fn cell_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("cell-{index:03}"))
}
