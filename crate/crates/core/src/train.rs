//! Training schedule.
//!
//! With the adjustment on, a baseline backbone is trained first, frozen,
//! and used to embed the masked corpus that the dictionary is clustered
//! from. The main model then optimises `L_dis` for the warmup epochs and
//! `L_dis + α·L_cf` afterwards.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::cbdm::{self, BranchEdges, GateMode};
use crate::graph::BipartiteGraph;
use crate::mdm::{self, ConfounderDictionary, CorpusMode};
use crate::model::{CadModel, ModelConfig, ModelError};
use crate::rng::{self, tags, SeededRng};
use crate::scm::MultimodalSample;
use crate::tensor::{Optimizer, Tape};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("loss became non-finite ({value}) at epoch {epoch}")]
    NonFinite { epoch: usize, value: f64 },
    #[error("training set is empty")]
    NoSamples,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<mdm::MdmError> for TrainError {
    fn from(e: mdm::MdmError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<cbdm::LossError> for TrainError {
    fn from(e: cbdm::LossError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<crate::tensor::TensorError> for TrainError {
    fn from(e: crate::tensor::TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<crate::graph::GraphError> for TrainError {
    fn from(e: crate::graph::GraphError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DictionaryMode {
    #[default]
    Learned,
    /// Prototypes replaced by random vectors of matching scale.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub layers: usize,
    pub d_m: usize,
    pub d_n: usize,
    pub q: f64,
    pub alpha: f64,
    pub k: usize,
    pub dropout: f64,
    pub warmup: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Patients per step; 0 means the whole training graph.
    pub batch_size: usize,
    pub seed: u64,
    pub mdm: bool,
    pub cbdm: bool,
    pub masking_mode: CorpusMode,
    pub dictionary_mode: DictionaryMode,
    /// Scale applied to the MNAR template when the harness masks data.
    pub mnar_alpha: f64,
    pub backbone_epochs: usize,
    pub pca_dim: usize,
    pub gate_mode: GateMode,
    pub encoder_relu: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 2,
            d_m: 32,
            d_n: 16,
            q: 0.7,
            alpha: 0.5,
            k: 16,
            dropout: 0.1,
            warmup: 15,
            epochs: 100,
            lr: 1e-3,
            batch_size: 0,
            seed: 0,
            mdm: true,
            cbdm: true,
            masking_mode: CorpusMode::Single,
            dictionary_mode: DictionaryMode::Learned,
            mnar_alpha: 1.0,
            backbone_epochs: 30,
            pca_dim: mdm::PCA_DIM,
            gate_mode: GateMode::Shared,
            encoder_relu: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.warmup > self.epochs {
            return bad(format!("warmup {} exceeds epochs {}", self.warmup, self.epochs));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return bad(format!("q = {} outside (0, 1]", self.q));
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha = {} is negative", self.alpha));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout = {} outside [0, 1)", self.dropout));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {}", self.lr));
        }
        if !(self.mnar_alpha >= 0.0) {
            return bad(format!("mnar alpha = {}", self.mnar_alpha));
        }
        if self.mdm && (self.k == 0 || self.pca_dim == 0) {
            return bad(format!("K = {}, PCA dim = {}", self.k, self.pca_dim));
        }
        Ok(())
    }

    pub fn model_config(&self, feature_dims: Vec<usize>, num_classes: usize) -> ModelConfig {
        ModelConfig {
            feature_dims,
            num_classes,
            hidden: self.hidden,
            layers: self.layers,
            d_m: self.d_m,
            d_n: self.d_n,
            cbdm: self.cbdm,
            mdm: self.mdm,
            gate_mode: self.gate_mode,
            encoder_relu: self.encoder_relu,
        }
    }

    /// The same run with both modules off.
    pub fn baseline(&self) -> Self {
        Self {
            cbdm: false,
            mdm: false,
            ..self.clone()
        }
    }
}

/// Mean losses over the steps of one epoch. Components that are not part
/// of the active objective are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub ce: f64,
    pub gce: Option<f64>,
    pub counterfactual: Option<f64>,
}

/// Steps a model through the schedule one epoch at a time.
pub struct Trainer<'a> {
    config: TrainConfig,
    samples: &'a [MultimodalSample],
    model: CadModel,
    full_graph: BipartiteGraph,
    dropout_rng: SeededRng,
    cf_rng: SeededRng,
    batch_rng: SeededRng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        samples: &'a [MultimodalSample],
        model: CadModel,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if samples.is_empty() {
            return Err(TrainError::NoSamples);
        }
        let full_graph = BipartiteGraph::from_samples(samples)?;
        let seed = config.seed;
        Ok(Self {
            config,
            samples,
            model,
            full_graph,
            dropout_rng: rng::stream(seed, tags::DROPOUT),
            cf_rng: rng::stream(seed, tags::COUNTERFACTUAL),
            batch_rng: rng::stream(seed, tags::BATCHES),
            epoch: 0,
        })
    }

    pub fn model(&self) -> &CadModel {
        &self.model
    }

    pub fn into_model(self) -> CadModel {
        self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn batches(&mut self) -> Vec<Vec<usize>> {
        let n = self.samples.len();
        let bs = self.config.batch_size;
        if bs == 0 || bs >= n {
            return alloc::vec![(0..n).collect()];
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.batch_rng);
        order.chunks(bs).map(|c| c.to_vec()).collect()
    }

    /// One optimiser step on the patients in `batch`.
    fn step(&mut self, batch: &[usize], counterfactual: bool) -> Result<EpochLoss, TrainError> {
        let owned: Vec<MultimodalSample>;
        let (samples, graph_owned);
        let graph = if batch.len() == self.samples.len() {
            samples = self.samples;
            &self.full_graph
        } else {
            owned = batch.iter().map(|&i| self.samples[i].clone()).collect();
            samples = &owned;
            graph_owned = BipartiteGraph::from_samples(samples)?;
            &graph_owned
        };
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let rate = self.config.dropout;
        let causal = graph.edge_dropout(rate, &mut self.dropout_rng)?;
        let bias = if self.config.cbdm {
            graph.edge_dropout(rate, &mut self.dropout_rng)?
        } else {
            causal.clone()
        };
        let edges = BranchEdges { causal, bias };

        let mut tape = Tape::new();
        let emb = self.model.embeddings(&mut tape, samples, graph, &edges)?;
        for z in [Some(emb.z_c), emb.z_b].into_iter().flatten() {
            if let Some(&bad) = tape.value(z).data().iter().find(|x| !x.is_finite()) {
                return Err(TrainError::NonFinite {
                    epoch: self.epoch + 1,
                    value: bad,
                });
            }
        }
        let (loss, record) = match emb.z_b {
            None => {
                let logits = self.model.logits(&mut tape, emb)?;
                let ce = cbdm::cross_entropy(&mut tape, logits, &labels)?;
                let v = tape.value(ce).item();
                (ce, EpochLoss { epoch: 0, total: v, ce: v, gce: None, counterfactual: None })
            }
            Some(z_b) => {
                let q = self.config.q;
                let dis = cbdm::disentangle_loss(&mut tape, &self.model.store, emb.z_c, z_b, &labels, q)?;
                let mut rec = EpochLoss {
                    epoch: 0,
                    total: tape.value(dis.total).item(),
                    ce: tape.value(dis.ce).item(),
                    gce: Some(tape.value(dis.gce).item()),
                    counterfactual: None,
                };
                let loss = if counterfactual {
                    let perm = rng::permutation(&mut self.cf_rng, labels.len());
                    let cf = cbdm::counterfactual_loss(
                        &mut tape,
                        &self.model.store,
                        emb.z_c,
                        z_b,
                        &labels,
                        &perm,
                        q,
                    )?;
                    let total = cbdm::total_loss(&mut tape, dis.total, cf.total, self.config.alpha)?;
                    rec.counterfactual = Some(tape.value(cf.total).item());
                    rec.total = tape.value(total).item();
                    total
                } else {
                    dis.total
                };
                (loss, rec)
            }
        };
        if !record.total.is_finite() {
            return Err(TrainError::NonFinite {
                epoch: self.epoch + 1,
                value: record.total,
            });
        }
        let grads = tape.backward(loss)?;
        let store = &mut self.model.store;
        store.accumulate(&tape, &grads);
        store.step(self.config.lr)?;
        Ok(record)
    }

    /// Runs the next epoch and returns its mean losses.
    pub fn run_epoch(&mut self) -> Result<EpochLoss, TrainError> {
        let counterfactual = self.epoch >= self.config.warmup;
        let batches = self.batches();
        let count = batches.len() as f64;
        let mut sum = EpochLoss {
            epoch: self.epoch + 1,
            total: 0.0,
            ce: 0.0,
            gce: None,
            counterfactual: None,
        };
        let add = |acc: &mut Option<f64>, v: Option<f64>| {
            if let Some(v) = v {
                *acc = Some(acc.unwrap_or(0.0) + v / count);
            }
        };
        for batch in &batches {
            let r = self.step(batch, counterfactual)?;
            sum.total += r.total / count;
            sum.ce += r.ce / count;
            add(&mut sum.gce, r.gce);
            add(&mut sum.counterfactual, r.counterfactual);
        }
        self.epoch += 1;
        Ok(sum)
    }
}

/// Everything produced by [`fit`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CadModel,
    pub backbone: Option<CadModel>,
    pub curve: Vec<EpochLoss>,
    pub backbone_curve: Vec<EpochLoss>,
}

/// Trains a baseline backbone for `config.backbone_epochs` and freezes it.
pub fn pretrain_backbone(
    config: &TrainConfig,
    samples: &[MultimodalSample],
    feature_dims: &[usize],
    num_classes: usize,
) -> Result<(CadModel, Vec<EpochLoss>), TrainError> {
    let base = TrainConfig {
        epochs: config.backbone_epochs,
        warmup: 0,
        ..config.baseline()
    };
    let model = CadModel::new(
        base.model_config(feature_dims.to_vec(), num_classes),
        Optimizer::default(),
        config.seed,
    )?;
    let mut trainer = Trainer::new(base, samples, model)?;
    let mut curve = Vec::new();
    for _ in 0..config.backbone_epochs {
        curve.push(trainer.run_epoch()?);
    }
    let mut model = trainer.into_model();
    model.store.freeze_all();
    model.id = format!("backbone-seed{}-epochs{}", config.seed, config.backbone_epochs);
    Ok((model, curve))
}

/// Confounder dictionary from the frozen backbone's view of `samples`.
pub fn dictionary_for(
    config: &TrainConfig,
    samples: &[MultimodalSample],
    backbone: &CadModel,
) -> Result<ConfounderDictionary, TrainError> {
    let corpus = mdm::build_masked_corpus(samples, backbone, config.masking_mode, config.seed)?;
    let dict = mdm::build_dictionary(&corpus, config.k, config.pca_dim, config.seed, &backbone.id)?;
    Ok(match config.dictionary_mode {
        DictionaryMode::Learned => dict,
        DictionaryMode::Random => mdm::randomize_dictionary(&dict, config.seed),
    })
}

/// The full schedule: optional backbone and dictionary, then training.
pub fn fit(
    config: &TrainConfig,
    samples: &[MultimodalSample],
    feature_dims: &[usize],
    num_classes: usize,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let mut model = CadModel::new(
        config.model_config(feature_dims.to_vec(), num_classes),
        Optimizer::default(),
        config.seed,
    )?;
    let (backbone, backbone_curve) = if config.mdm {
        let (bb, curve) = pretrain_backbone(config, samples, feature_dims, num_classes)?;
        model.attach_dictionary(dictionary_for(config, samples, &bb)?)?;
        (Some(bb), curve)
    } else {
        (None, Vec::new())
    };
    let mut trainer = Trainer::new(config.clone(), samples, model)?;
    let mut curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        curve.push(trainer.run_epoch()?);
    }
    Ok(TrainOutcome {
        model: trainer.into_model(),
        backbone,
        curve,
        backbone_curve,
    })
}
