//! JSON forms of templates, schemas, dictionaries and checkpoints.

use std::fs;
use std::path::Path;

use cadlab_core::cbdm::GateMode;
use cadlab_core::mdm::ConfounderDictionary;
use cadlab_core::model::{CadModel, ModelConfig};
use cadlab_core::scm::{DatasetSchema, MaskTemplate, SchemaConfig};
use cadlab_core::tensor::{Optimizer, Tensor};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Error;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(path))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Tensor> for MatrixFile {
    fn from(t: &Tensor) -> Self {
        MatrixFile {
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().to_vec(),
        }
    }
}

impl TryFrom<MatrixFile> for Tensor {
    type Error = Error;
    fn try_from(m: MatrixFile) -> Result<Self, Error> {
        Ok(Tensor::from_vec(m.rows, m.cols, m.data)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateFile {
    pub groups: Vec<String>,
    pub modalities: Vec<String>,
    pub probabilities: Vec<Vec<f64>>,
}

impl From<&MaskTemplate> for TemplateFile {
    fn from(t: &MaskTemplate) -> Self {
        TemplateFile {
            groups: t.groups.clone(),
            modalities: t.modalities.clone(),
            probabilities: t.probabilities.clone(),
        }
    }
}

pub fn load_template(path: &Path) -> Result<MaskTemplate, Error> {
    let f: TemplateFile = read_json(path)?;
    let t = MaskTemplate {
        groups: f.groups,
        modalities: f.modalities,
        probabilities: f.probabilities,
    };
    t.validate().map_err(|e| Error::from(e).in_file(path))?;
    Ok(t)
}

/// Generator knobs plus the seed the mechanism matrices are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaFile {
    pub seed: u64,
    pub num_modalities: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub dim_z: usize,
    pub dim_c: usize,
    pub dim_b: usize,
    pub causal_strength: Vec<f64>,
    pub bias_strength: Vec<f64>,
    pub label_scale: f64,
    pub gamma: f64,
    pub eta: f64,
    pub sigma: f64,
}

impl Default for SchemaFile {
    fn default() -> Self {
        SchemaFile::new(&SchemaConfig::default(), 0)
    }
}

impl SchemaFile {
    pub fn new(c: &SchemaConfig, seed: u64) -> Self {
        SchemaFile {
            seed,
            num_modalities: c.num_modalities,
            feature_dim: c.feature_dim,
            num_classes: c.num_classes,
            dim_z: c.dim_z,
            dim_c: c.dim_c,
            dim_b: c.dim_b,
            causal_strength: c.causal_strength.clone(),
            bias_strength: c.bias_strength.clone(),
            label_scale: c.label_scale,
            gamma: c.gamma,
            eta: c.eta,
            sigma: c.sigma,
        }
    }

    pub fn config(&self) -> SchemaConfig {
        SchemaConfig {
            num_modalities: self.num_modalities,
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
            dim_z: self.dim_z,
            dim_c: self.dim_c,
            dim_b: self.dim_b,
            causal_strength: self.causal_strength.clone(),
            bias_strength: self.bias_strength.clone(),
            label_scale: self.label_scale,
            gamma: self.gamma,
            eta: self.eta,
            sigma: self.sigma,
        }
    }

    pub fn build(&self) -> Result<DatasetSchema, Error> {
        Ok(DatasetSchema::random(&self.config(), self.seed)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryFile {
    pub prototypes: MatrixFile,
    pub priors: Vec<f64>,
    pub cluster_sizes: Vec<usize>,
    pub corpus_size: usize,
    pub pca_mean: Vec<f64>,
    pub pca_basis: MatrixFile,
    pub seed: u64,
    pub backbone_id: String,
}

impl From<&ConfounderDictionary> for DictionaryFile {
    fn from(d: &ConfounderDictionary) -> Self {
        DictionaryFile {
            prototypes: (&d.prototypes).into(),
            priors: d.priors.clone(),
            cluster_sizes: d.cluster_sizes.clone(),
            corpus_size: d.corpus_size,
            pca_mean: d.pca_mean.clone(),
            pca_basis: (&d.pca_basis).into(),
            seed: d.seed,
            backbone_id: d.backbone_id.clone(),
        }
    }
}

impl TryFrom<DictionaryFile> for ConfounderDictionary {
    type Error = Error;
    fn try_from(f: DictionaryFile) -> Result<Self, Error> {
        let d = ConfounderDictionary {
            prototypes: f.prototypes.try_into()?,
            priors: f.priors,
            cluster_sizes: f.cluster_sizes,
            corpus_size: f.corpus_size,
            pca_mean: f.pca_mean,
            pca_basis: f.pca_basis.try_into()?,
            seed: f.seed,
            backbone_id: f.backbone_id,
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateModeName {
    Shared,
    Separate,
}

impl From<GateMode> for GateModeName {
    fn from(m: GateMode) -> Self {
        match m {
            GateMode::Shared => GateModeName::Shared,
            GateMode::Separate => GateModeName::Separate,
        }
    }
}

impl From<GateModeName> for GateMode {
    fn from(m: GateModeName) -> Self {
        match m {
            GateModeName::Shared => GateMode::Shared,
            GateModeName::Separate => GateMode::Separate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfigFile {
    pub feature_dims: Vec<usize>,
    pub num_classes: usize,
    pub hidden: usize,
    pub layers: usize,
    pub d_m: usize,
    pub d_n: usize,
    pub cbdm: bool,
    pub mdm: bool,
    pub gate_mode: GateModeName,
    pub encoder_relu: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub name: String,
    #[serde(flatten)]
    pub value: MatrixFile,
}

/// Everything needed to rebuild a trained model for inference. Optimizer
/// moments are not kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub id: String,
    pub seed: u64,
    pub config: ModelConfigFile,
    pub params: Vec<ParamFile>,
    pub dictionary: Option<DictionaryFile>,
}

impl Checkpoint {
    pub fn from_model(model: &CadModel, seed: u64) -> Self {
        let c = &model.config;
        Checkpoint {
            id: model.id.clone(),
            seed,
            config: ModelConfigFile {
                feature_dims: c.feature_dims.clone(),
                num_classes: c.num_classes,
                hidden: c.hidden,
                layers: c.layers,
                d_m: c.d_m,
                d_n: c.d_n,
                cbdm: c.cbdm,
                mdm: c.mdm,
                gate_mode: c.gate_mode.into(),
                encoder_relu: c.encoder_relu,
            },
            params: model
                .store
                .iter()
                .map(|p| ParamFile {
                    name: p.name.clone(),
                    value: (&p.value).into(),
                })
                .collect(),
            dictionary: model.dictionary.as_ref().map(DictionaryFile::from),
        }
    }

    pub fn into_model(self) -> Result<CadModel, Error> {
        let c = self.config;
        let config = ModelConfig {
            feature_dims: c.feature_dims,
            num_classes: c.num_classes,
            hidden: c.hidden,
            layers: c.layers,
            d_m: c.d_m,
            d_n: c.d_n,
            cbdm: c.cbdm,
            mdm: c.mdm,
            gate_mode: c.gate_mode.into(),
            encoder_relu: c.encoder_relu,
        };
        let mut model = CadModel::new(config, Optimizer::default(), self.seed)?;
        if self.params.len() != model.store.len() {
            return Err(Error::Invalid(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for p in self.params {
            model.store.set(&p.name, p.value.try_into()?)?;
        }
        if let Some(d) = self.dictionary {
            model.attach_dictionary(d.try_into()?)?;
        }
        model.id = self.id;
        Ok(model)
    }
}
