//! The assembled predictor: shared edge encoder, one or two graph branches,
//! optional missingness adjustment, and a linear head.
//!
//! With both `cbdm` and `mdm` off this is the plain bipartite baseline:
//! one branch under [`cbdm::CAUSAL_BRANCH`] and a `d → C` head under
//! [`cbdm::CAUSAL_HEAD`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::cbdm::{self, BranchEdges, GateMode, LossError};
use crate::graph::{self, ActiveEdges, BipartiteGraph, GraphError};
use crate::mdm::{self, ConfounderDictionary, Embedder, MdmError, NwgmNames};
use crate::rng::{self, tags};
use crate::scm::MultimodalSample;
use crate::tensor::{Optimizer, ParameterStore, Tape, Tensor, TensorError, Var};

pub const ENCODER: &str = "enc";
pub const MDM_CAUSAL: &str = "mdm_c";
pub const MDM_BIAS: &str = "mdm_b";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("the adjustment module is enabled but no confounder dictionary is attached")]
    MissingDictionary,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Mdm(#[from] MdmError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub feature_dims: Vec<usize>,
    pub num_classes: usize,
    /// Hidden width `d` of node and edge states.
    pub hidden: usize,
    pub layers: usize,
    /// Output width of the adjustment.
    pub d_m: usize,
    /// Attention width of the adjustment.
    pub d_n: usize,
    pub cbdm: bool,
    pub mdm: bool,
    pub gate_mode: GateMode,
    pub encoder_relu: bool,
}

impl ModelConfig {
    /// Desk defaults: `d = 32`, two layers, `d_m = d`, `d_n = d / 2`, both
    /// modules on.
    pub fn new(feature_dims: Vec<usize>, num_classes: usize) -> Self {
        Self {
            feature_dims,
            num_classes,
            hidden: 32,
            layers: 2,
            d_m: 32,
            d_n: 16,
            cbdm: true,
            mdm: true,
            gate_mode: GateMode::Shared,
            encoder_relu: false,
        }
    }

    /// Same dimensions with both modules off.
    pub fn baseline(&self) -> Self {
        Self {
            cbdm: false,
            mdm: false,
            ..self.clone()
        }
    }

    pub fn embedding_dim(&self) -> usize {
        if self.mdm {
            self.d_m
        } else {
            self.hidden
        }
    }

    pub fn head_input(&self) -> usize {
        if self.cbdm {
            2 * self.embedding_dim()
        } else {
            self.embedding_dim()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let m = self.feature_dims.len();
        let bad = |msg: String| Err(ModelError::Config(msg));
        if m == 0 || self.feature_dims.contains(&0) {
            return bad(format!("feature dims {:?}", self.feature_dims));
        }
        if self.num_classes < 2 {
            return bad(format!("{} classes", self.num_classes));
        }
        if self.hidden < m {
            return bad(format!("hidden width {} below modality count {m}", self.hidden));
        }
        if self.layers == 0 {
            return bad("zero layers".into());
        }
        if self.mdm && (self.d_m == 0 || self.d_n == 0) {
            return bad(format!("d_m = {}, d_n = {}", self.d_m, self.d_n));
        }
        Ok(())
    }
}

/// Symbolic outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Embeddings {
    /// `Z′_c` when adjusted, else `Z_c` (or the single-branch `Z`).
    pub z_c: Var,
    pub z_b: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct CadModel {
    pub config: ModelConfig,
    pub store: ParameterStore,
    pub dictionary: Option<ConfounderDictionary>,
    /// Free-form provenance, used as the backbone id of dictionaries.
    pub id: String,
}

impl CadModel {
    pub fn new(config: ModelConfig, optimizer: Optimizer, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng::stream(seed, tags::INIT);
        let mut store = ParameterStore::new(optimizer);
        let d = config.hidden;
        graph::register_encoder(&mut store, ENCODER, &config.feature_dims, d, &mut rng)?;
        if config.cbdm {
            cbdm::register(
                &mut store,
                config.layers,
                d,
                config.head_input(),
                config.num_classes,
                config.gate_mode,
                &mut rng,
            )?;
        } else {
            graph::register_gnn(&mut store, cbdm::CAUSAL_BRANCH, config.layers, d, &mut rng)?;
            cbdm::register_head(&mut store, cbdm::CAUSAL_HEAD, config.head_input(), config.num_classes, &mut rng)?;
        }
        if config.mdm {
            mdm::register_nwgm(&mut store, MDM_CAUSAL, d, config.d_m, config.d_n, &mut rng)?;
            if config.cbdm {
                mdm::register_nwgm(&mut store, MDM_BIAS, d, config.d_m, config.d_n, &mut rng)?;
            }
        }
        let id = format!(
            "{}-seed{seed}",
            match (config.cbdm, config.mdm) {
                (false, false) => "baseline",
                (true, false) => "cbdm",
                (false, true) => "mdm",
                (true, true) => "cad",
            }
        );
        Ok(Self {
            config,
            store,
            dictionary: None,
            id,
        })
    }

    pub fn attach_dictionary(&mut self, dict: ConfounderDictionary) -> Result<(), ModelError> {
        dict.validate()?;
        if dict.dim() != self.config.hidden {
            return Err(MdmError::Dimension(format!(
                "dictionary width {} against hidden width {}",
                dict.dim(),
                self.config.hidden
            ))
            .into());
        }
        self.dictionary = Some(dict);
        Ok(())
    }

    /// Builds the branch embeddings for `samples` on `graph` using the
    /// given active edge subsets.
    pub fn embeddings(
        &self,
        tape: &mut Tape,
        samples: &[MultimodalSample],
        graph: &BipartiteGraph,
        edges: &BranchEdges,
    ) -> Result<Embeddings, ModelError> {
        let cfg = &self.config;
        let e0 = graph::encode_edges(tape, &self.store, ENCODER, samples, graph, cfg.encoder_relu)?;
        let (z_c, z_b) = if cfg.cbdm {
            let out = cbdm::dual_forward(
                tape,
                &self.store,
                graph,
                e0,
                edges,
                cfg.layers,
                cfg.hidden,
                cfg.gate_mode,
            )?;
            (out.embeddings.z_c, Some(out.embeddings.z_b))
        } else {
            let active = &edges.causal;
            let e = if active.is_complete(graph.edges.len()) {
                e0
            } else {
                tape.gather_rows(e0, &active.edge_index)?
            };
            let init = graph::place_nodes(tape, graph.num_patients, graph.num_modalities, cfg.hidden)?;
            let z = graph::readout_patients(tape, &self.store, cbdm::CAUSAL_BRANCH, cfg.layers, init, e, active)?;
            (z, None)
        };
        if !cfg.mdm {
            return Ok(Embeddings { z_c, z_b });
        }
        let dict = self.dictionary.as_ref().ok_or(ModelError::MissingDictionary)?;
        let z_c = mdm::nwgm_adjust(tape, &self.store, &NwgmNames::new(MDM_CAUSAL), z_c, dict)?;
        let z_b = match z_b {
            Some(z) => Some(mdm::nwgm_adjust(tape, &self.store, &NwgmNames::new(MDM_BIAS), z, dict)?),
            None => None,
        };
        Ok(Embeddings { z_c, z_b })
    }

    /// Prediction logits: `f_c([Z′_c ‖ Z′_b])`, or the single head on `Z`.
    pub fn logits(&self, tape: &mut Tape, emb: Embeddings) -> Result<Var, ModelError> {
        let input = match emb.z_b {
            Some(z_b) => tape.concat_cols(emb.z_c, z_b)?,
            None => emb.z_c,
        };
        Ok(cbdm::head_logits(tape, &self.store, cbdm::CAUSAL_HEAD, input)?)
    }

    fn full_pass(&self, samples: &[MultimodalSample]) -> Result<(Tape, Embeddings), ModelError> {
        let graph = BipartiteGraph::from_samples(samples)?;
        let all: ActiveEdges = graph.all_edges();
        let edges = BranchEdges {
            causal: all.clone(),
            bias: all,
        };
        let mut tape = Tape::new();
        let emb = self.embeddings(&mut tape, samples, &graph, &edges)?;
        Ok((tape, emb))
    }

    /// Class probabilities with every observed edge active.
    pub fn predict_proba(&self, samples: &[MultimodalSample]) -> Result<Tensor, ModelError> {
        let (mut tape, emb) = self.full_pass(samples)?;
        let logits = self.logits(&mut tape, emb)?;
        Ok(cbdm::probabilities(&mut tape, logits))
    }

    /// Causal-side patient embeddings (`Z′_c`, or `Z` for the baseline).
    pub fn embed(&self, samples: &[MultimodalSample]) -> Result<Tensor, ModelError> {
        let (tape, emb) = self.full_pass(samples)?;
        Ok(tape.value(emb.z_c).clone())
    }
}

impl Embedder for CadModel {
    fn embed(&self, samples: &[MultimodalSample]) -> Result<Tensor, MdmError> {
        CadModel::embed(self, samples).map_err(|e| match e {
            ModelError::Mdm(m) => m,
            other => MdmError::Backbone(format!("{other}")),
        })
    }
}
