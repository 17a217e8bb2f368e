//! Missingness deconfounding.
//!
//! A frozen backbone embeds extra-masked copies of fully observed patients.
//! The embeddings are clustered (PCA, k-means++) into a confounder
//! dictionary of prototypes with empirical priors. At training time each
//! branch embedding `Z` is adjusted to
//! `Z′ = W_h·Z + W_g·Σ_i λ_i·P(z_i)·z_i`, where `λ` is a dot-product
//! attention of the patient's own embedding over the prototypes.

mod kmeans;
mod pca;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

pub use kmeans::{kmeanspp, Clustering, MAX_LLOYD_ITERATIONS};
pub use pca::{pca_reduce, symmetric_eigen, Pca};

use crate::math;
use crate::rng::{self, tags};
use crate::scm::MultimodalSample;
use crate::tensor::{ParameterStore, Tape, Tensor, TensorError, Var};

/// Default ceiling on the clustering space dimension.
pub const PCA_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MdmError {
    #[error("PCA target dimension {target} must lie in 1..={} for a {rows} x {dim} corpus", (*rows).min(*dim))]
    BadTargetDim { target: usize, rows: usize, dim: usize },
    #[error("corpus has zero variance; nothing to cluster")]
    DegenerateCorpus,
    #[error("cannot form {k} clusters from {points} points")]
    BadClusterCount { k: usize, points: usize },
    #[error("no fully observed samples to build the masked corpus from; lower the masking rate")]
    NoEligibleSamples,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("backbone failed: {0}")]
    Backbone(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How many extra-masked copies each eligible sample contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusMode {
    /// One copy with a single random modality hidden.
    #[default]
    Single,
    /// One copy per modality, each hiding that modality.
    Multi,
}

/// Anything that maps patients to `n × d` embeddings without side effects.
pub trait Embedder {
    fn embed(&self, samples: &[MultimodalSample]) -> Result<Tensor, MdmError>;
}

/// Extra-masked copies of the fully observed samples, ready to embed.
pub fn masked_copies(
    samples: &[MultimodalSample],
    mode: CorpusMode,
    seed: u64,
) -> Result<Vec<MultimodalSample>, MdmError> {
    let mut rng = rng::stream(seed, tags::CORPUS);
    let mut out = Vec::new();
    for s in samples.iter().filter(|s| s.fully_observed()) {
        let m = s.num_modalities();
        let hide: Vec<usize> = match mode {
            CorpusMode::Single => vec![rng.random_range(0..m)],
            CorpusMode::Multi => (0..m).collect(),
        };
        for h in hide {
            let mut copy = s.clone();
            copy.mask[h] = false;
            out.push(copy);
        }
    }
    if out.is_empty() {
        return Err(MdmError::NoEligibleSamples);
    }
    Ok(out)
}

/// Embeds the masked copies with the (frozen) backbone.
pub fn build_masked_corpus<E: Embedder + ?Sized>(
    samples: &[MultimodalSample],
    backbone: &E,
    mode: CorpusMode,
    seed: u64,
) -> Result<Tensor, MdmError> {
    let copies = masked_copies(samples, mode, seed)?;
    let z = backbone.embed(&copies)?;
    if z.rows() != copies.len() {
        return Err(MdmError::Dimension(format!(
            "backbone returned {} rows for {} samples",
            z.rows(),
            copies.len()
        )));
    }
    Ok(z)
}

/// K prototypes with empirical priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfounderDictionary {
    /// `K × d`.
    pub prototypes: Tensor,
    pub priors: Vec<f64>,
    pub cluster_sizes: Vec<usize>,
    pub corpus_size: usize,
    pub pca_mean: Vec<f64>,
    /// `k_pca × d`.
    pub pca_basis: Tensor,
    pub seed: u64,
    pub backbone_id: String,
}

impl ConfounderDictionary {
    pub fn k(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    /// `diag(P)·Z_d`, the prior-weighted prototype matrix.
    pub fn weighted_prototypes(&self) -> Tensor {
        let d = self.dim();
        let mut out = self.prototypes.clone();
        for (i, p) in self.priors.iter().enumerate() {
            for x in &mut out.data_mut()[i * d..(i + 1) * d] {
                *x *= p;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), MdmError> {
        let k = self.k();
        if k == 0 || self.priors.len() != k || self.cluster_sizes.len() != k {
            return Err(MdmError::Dimension(format!(
                "{k} prototypes, {} priors, {} cluster sizes",
                self.priors.len(),
                self.cluster_sizes.len()
            )));
        }
        if self.cluster_sizes.iter().sum::<usize>() != self.corpus_size {
            return Err(MdmError::Dimension("cluster sizes do not sum to corpus size".into()));
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.priors.iter().any(|&p| !(p > 0.0)) {
            return Err(MdmError::Dimension(format!("priors sum to {total}")));
        }
        if self.pca_mean.len() != self.dim() || self.pca_basis.cols() != self.dim() {
            return Err(MdmError::Dimension("PCA basis does not match prototype width".into()));
        }
        Ok(())
    }
}

/// Clusters `corpus` rows into `k` prototypes. Assignments are made in a
/// PCA space of width `min(d, pca_dim, n)`; prototypes are member means in
/// the original space.
pub fn build_dictionary(
    corpus: &Tensor,
    k: usize,
    pca_dim: usize,
    seed: u64,
    backbone_id: &str,
) -> Result<ConfounderDictionary, MdmError> {
    let (n, d) = (corpus.rows(), corpus.cols());
    if k == 0 || k > n {
        return Err(MdmError::BadClusterCount { k, points: n });
    }
    let target = pca_dim.min(d).min(n).max(1);
    let (projected, pca) = pca_reduce(corpus, target)?;
    let clustering = kmeanspp(&projected, k, seed)?;
    let sizes = clustering.sizes(k);
    let mut protos = vec![0.0; k * d];
    for (i, &a) in clustering.assignments.iter().enumerate() {
        for (p, x) in protos[a * d..(a + 1) * d].iter_mut().zip(corpus.row(i)) {
            *p += x;
        }
    }
    for c in 0..k {
        for p in &mut protos[c * d..(c + 1) * d] {
            *p /= sizes[c] as f64;
        }
    }
    Ok(ConfounderDictionary {
        prototypes: Tensor::from_vec(k, d, protos)?,
        priors: sizes.iter().map(|&s| s as f64 / n as f64).collect(),
        cluster_sizes: sizes,
        corpus_size: n,
        pca_mean: pca.mean,
        pca_basis: pca.basis,
        seed,
        backbone_id: backbone_id.into(),
    })
}

/// Replaces the prototypes with Gaussian vectors matching the per-column
/// mean and spread of the learned ones. Priors and provenance are kept.
pub fn randomize_dictionary(dict: &ConfounderDictionary, seed: u64) -> ConfounderDictionary {
    let (k, d) = (dict.k(), dict.dim());
    let mut rng = rng::stream(seed, tags::RANDOM_DICT);
    let mut out = dict.clone();
    for j in 0..d {
        let col: Vec<f64> = (0..k).map(|i| dict.prototypes.get(i, j)).collect();
        let mean = col.iter().sum::<f64>() / k as f64;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k as f64;
        let sd = if var > 0.0 { math::sqrt(var) } else { 1.0 };
        for i in 0..k {
            out.prototypes.data_mut()[i * d + j] = mean + sd * rng::normal(&mut rng);
        }
    }
    out
}

/// Parameter names of one adjustment block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NwgmNames {
    pub w_h: String,
    pub w_g: String,
    pub w_q: String,
    pub w_k: String,
}

impl NwgmNames {
    pub fn new(prefix: &str) -> Self {
        Self {
            w_h: format!("{prefix}.W_h"),
            w_g: format!("{prefix}.W_g"),
            w_q: format!("{prefix}.W_q"),
            w_k: format!("{prefix}.W_k"),
        }
    }
}

/// Registers `W_h, W_g: d_m × d` and `W_q, W_k: d_n × d`.
pub fn register_nwgm<R: Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    d: usize,
    d_m: usize,
    d_n: usize,
    rng: &mut R,
) -> Result<NwgmNames, TensorError> {
    let names = NwgmNames::new(prefix);
    store.insert_glorot(&names.w_h, d_m, d, rng)?;
    store.insert_glorot(&names.w_g, d_m, d, rng)?;
    store.insert_glorot(&names.w_q, d_n, d, rng)?;
    store.insert_glorot(&names.w_k, d_n, d, rng)?;
    Ok(names)
}

fn check_width(tape: &Tape, z: Var, dict: &ConfounderDictionary) -> Result<(), MdmError> {
    let got = tape.shape(z).cols;
    if got != dict.dim() {
        return Err(MdmError::Dimension(format!(
            "embedding width {got} against prototype width {}",
            dict.dim()
        )));
    }
    Ok(())
}

/// `λ = softmax((W_q h)ᵀ(W_k z_i) / √d)` for every row `h` of `z`.
pub fn attention_weights(
    tape: &mut Tape,
    store: &ParameterStore,
    names: &NwgmNames,
    z: Var,
    dict: &ConfounderDictionary,
) -> Result<Var, MdmError> {
    check_width(tape, z, dict)?;
    let wq = tape.param(store, &names.w_q)?;
    let wk = tape.param(store, &names.w_k)?;
    let protos = tape.constant(dict.prototypes.clone());
    let queries = tape.linear(z, wq)?;
    let keys = tape.linear(protos, wk)?;
    let keys_t = tape.transpose(keys);
    let logits = tape.matmul(queries, keys_t)?;
    let scaled = tape.scale(logits, 1.0 / math::sqrt(dict.dim() as f64));
    Ok(tape.row_softmax(scaled))
}

/// `Z′ = Z·W_hᵀ + (λ·diag(P)·Z_d)·W_gᵀ`.
pub fn nwgm_adjust(
    tape: &mut Tape,
    store: &ParameterStore,
    names: &NwgmNames,
    z: Var,
    dict: &ConfounderDictionary,
) -> Result<Var, MdmError> {
    let lambda = attention_weights(tape, store, names, z, dict)?;
    let weighted = tape.constant(dict.weighted_prototypes());
    let expectation = tape.matmul(lambda, weighted)?;
    let wh = tape.param(store, &names.w_h)?;
    let wg = tape.param(store, &names.w_g)?;
    let direct = tape.linear(z, wh)?;
    let shift = tape.linear(expectation, wg)?;
    Ok(tape.add(direct, shift)?)
}
