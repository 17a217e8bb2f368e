//! Bipartite patient–modality graph and its message-passing network.
//!
//! Patients and modalities are the two node partitions; an edge joins
//! patient `p` to modality `m` exactly when `m` is observed for `p`. The
//! edge carries the encoded modality features. One layer updates every node
//! from the mean of ReLU messages over its neighbours and then every edge
//! from its two endpoints:
//!
//! ```text
//! h_i ← U·[h_i ‖ mean_j w_ji·relu(W·h_j + O·e_ji)]
//! e_ji ← w_ji · P·[h_j ‖ h_i ‖ e_ji]
//! ```
//!
//! `w_ji` is a per-edge weight in `[0, 1]`: all ones for the plain network,
//! the causal or bias gate inside the dual-branch model.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::scm::MultimodalSample;
use crate::tensor::{ParameterStore, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("sample {id} has {got} modalities, expected {expected}")]
    ModalityCount { id: u64, got: usize, expected: usize },
    #[error("sample {id}, modality {modality}: {got} features, expected {expected}")]
    FeatureDim {
        id: u64,
        modality: usize,
        got: usize,
        expected: usize,
    },
    #[error("sample {0} has no observed modality")]
    Disconnected(u64),
    #[error("hidden size {d} cannot hold a one-hot code for {modalities} modalities")]
    HiddenTooSmall { d: usize, modalities: usize },
    #[error("edge dropout rate must lie in [0, 1), got {0}")]
    BadDropout(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub patient: usize,
    pub modality: usize,
}

/// Graph topology for one batch of patients. Edges are ordered by
/// modality, then patient.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    pub num_patients: usize,
    pub num_modalities: usize,
    pub edges: Vec<Edge>,
}

/// The subset of edges taking part in one forward pass, as parallel index
/// lists.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveEdges {
    /// Positions in [`BipartiteGraph::edges`].
    pub edge_index: Vec<usize>,
    pub patient: Vec<usize>,
    pub modality: Vec<usize>,
    pub num_patients: usize,
    pub num_modalities: usize,
}

impl ActiveEdges {
    pub fn len(&self) -> usize {
        self.edge_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_index.is_empty()
    }

    /// Whether every edge of a graph with `total` edges is active, in order.
    pub fn is_complete(&self, total: usize) -> bool {
        self.edge_index.len() == total
    }
}

impl BipartiteGraph {
    pub fn from_samples(samples: &[MultimodalSample]) -> Result<Self, GraphError> {
        let m = samples.first().map_or(0, |s| s.num_modalities());
        for s in samples {
            if s.num_modalities() != m {
                return Err(GraphError::ModalityCount {
                    id: s.id,
                    got: s.num_modalities(),
                    expected: m,
                });
            }
            if s.observed_count() == 0 {
                return Err(GraphError::Disconnected(s.id));
            }
        }
        let mut edges = Vec::new();
        for modality in 0..m {
            for (patient, s) in samples.iter().enumerate() {
                if s.mask[modality] {
                    edges.push(Edge { patient, modality });
                }
            }
        }
        Ok(BipartiteGraph {
            num_patients: samples.len(),
            num_modalities: m,
            edges,
        })
    }

    pub fn all_edges(&self) -> ActiveEdges {
        self.select((0..self.edges.len()).collect())
    }

    fn select(&self, edge_index: Vec<usize>) -> ActiveEdges {
        ActiveEdges {
            patient: edge_index.iter().map(|&i| self.edges[i].patient).collect(),
            modality: edge_index.iter().map(|&i| self.edges[i].modality).collect(),
            edge_index,
            num_patients: self.num_patients,
            num_modalities: self.num_modalities,
        }
    }

    /// Drops each edge with probability `rate`, except that a patient never
    /// loses its last edge: if every edge of a patient was drawn for
    /// removal, one of them, chosen uniformly, is kept.
    pub fn edge_dropout<R: Rng>(&self, rate: f64, rng: &mut R) -> Result<ActiveEdges, GraphError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(GraphError::BadDropout(rate));
        }
        if rate == 0.0 {
            return Ok(self.all_edges());
        }
        let mut keep: Vec<bool> = (0..self.edges.len())
            .map(|_| rng.random::<f64>() >= rate)
            .collect();
        let mut per_patient: Vec<Vec<usize>> = vec![Vec::new(); self.num_patients];
        for (i, e) in self.edges.iter().enumerate() {
            per_patient[e.patient].push(i);
        }
        for edges in &per_patient {
            if !edges.is_empty() && edges.iter().all(|&i| !keep[i]) {
                keep[edges[rng.random_range(0..edges.len())]] = true;
            }
        }
        Ok(self.select((0..self.edges.len()).filter(|&i| keep[i]).collect()))
    }
}

/// Patient and modality node states at one layer.
#[derive(Debug, Clone, Copy)]
pub struct NodeStates {
    pub patients: Var,
    pub modalities: Var,
}

/// Initial states: all-ones patient vectors and zero-padded one-hot
/// modality vectors.
pub fn init_nodes(n: usize, m: usize, d: usize) -> Result<(Tensor, Tensor), GraphError> {
    if d < m {
        return Err(GraphError::HiddenTooSmall { d, modalities: m });
    }
    let patients = Tensor::full(n, d, 1.0);
    let mut modalities = Tensor::zeros(m, d);
    for i in 0..m {
        modalities.data_mut()[i * d + i] = 1.0;
    }
    Ok((patients, modalities))
}

pub fn place_nodes(tape: &mut Tape, n: usize, m: usize, d: usize) -> Result<NodeStates, GraphError> {
    let (p, v) = init_nodes(n, m, d)?;
    Ok(NodeStates {
        patients: tape.constant(p),
        modalities: tape.constant(v),
    })
}

pub fn encoder_names(prefix: &str, modality: usize) -> (String, String) {
    (
        format!("{prefix}.m{modality}.W"),
        format!("{prefix}.m{modality}.b"),
    )
}

/// Registers one `d × feature_dims[m]` linear encoder per modality.
pub fn register_encoder<R: Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    feature_dims: &[usize],
    d: usize,
    rng: &mut R,
) -> Result<(), TensorError> {
    for (m, &f) in feature_dims.iter().enumerate() {
        let (w, b) = encoder_names(prefix, m);
        store.insert_glorot(&w, d, f, rng)?;
        store.insert_zeros(&b, 1, d)?;
    }
    Ok(())
}

/// Initial edge features `e⁰ = W_m·x_m + b_m`, one row per graph edge.
pub fn encode_edges(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    samples: &[MultimodalSample],
    graph: &BipartiteGraph,
    relu: bool,
) -> Result<Var, GraphError> {
    let mut blocks = Vec::new();
    let mut start = 0;
    while start < graph.edges.len() {
        let modality = graph.edges[start].modality;
        let end = graph.edges[start..]
            .iter()
            .position(|e| e.modality != modality)
            .map_or(graph.edges.len(), |off| start + off);
        let (wn, bn) = encoder_names(prefix, modality);
        let w = tape.param(store, &wn)?;
        let b = tape.param(store, &bn)?;
        let expected = tape.shape(w).cols;
        let mut rows = Vec::with_capacity(end - start);
        for e in &graph.edges[start..end] {
            let s = &samples[e.patient];
            let x = &s.features[modality];
            if x.len() != expected {
                return Err(GraphError::FeatureDim {
                    id: s.id,
                    modality,
                    got: x.len(),
                    expected,
                });
            }
            rows.push(x.as_slice());
        }
        let x = tape.constant(Tensor::from_rows(&rows)?);
        let mut out = tape.affine_layer(x, w, b)?;
        if relu {
            out = tape.relu(out);
        }
        blocks.push(out);
        start = end;
    }
    if blocks.is_empty() {
        let d = store.value(&encoder_names(prefix, 0).1)?.cols();
        return Ok(tape.constant(Tensor::zeros(0, d)));
    }
    Ok(tape.concat_rows(&blocks)?)
}

/// Parameter names of one message-passing layer.
#[derive(Debug, Clone)]
pub struct LayerNames {
    pub u: String,
    pub w: String,
    pub o: String,
    pub p: String,
}

impl LayerNames {
    pub fn new(prefix: &str, layer: usize) -> Self {
        LayerNames {
            u: format!("{prefix}.layer{layer}.U"),
            w: format!("{prefix}.layer{layer}.W"),
            o: format!("{prefix}.layer{layer}.O"),
            p: format!("{prefix}.layer{layer}.P"),
        }
    }
}

/// Registers `layers` sets of `U (d×2d)`, `W (d×d)`, `O (d×d)`, `P (d×3d)`.
pub fn register_gnn<R: Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    layers: usize,
    d: usize,
    rng: &mut R,
) -> Result<(), TensorError> {
    for l in 0..layers {
        let n = LayerNames::new(prefix, l);
        store.insert_glorot(&n.u, d, 2 * d, rng)?;
        store.insert_glorot(&n.w, d, d, rng)?;
        store.insert_glorot(&n.o, d, d, rng)?;
        store.insert_glorot(&n.p, d, 3 * d, rng)?;
    }
    Ok(())
}

/// Layer parameters loaded onto a tape.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub u: Var,
    pub w: Var,
    pub o: Var,
    pub p: Var,
}

impl LayerVars {
    pub fn load(tape: &mut Tape, store: &ParameterStore, names: &LayerNames) -> Result<Self, TensorError> {
        Ok(LayerVars {
            u: tape.param(store, &names.u)?,
            w: tape.param(store, &names.w)?,
            o: tape.param(store, &names.o)?,
            p: tape.param(store, &names.p)?,
        })
    }
}

fn weighted(tape: &mut Tape, x: Var, weights: Option<Var>) -> Result<Var, TensorError> {
    match weights {
        Some(w) => tape.mul(x, w),
        None => Ok(x),
    }
}

/// Node update for both partitions. `edges` holds one feature row per
/// active edge; `weights`, when given, is an `|active| × 1` column.
pub fn message_pass_layer(
    tape: &mut Tape,
    params: &LayerVars,
    states: NodeStates,
    edges: Var,
    active: &ActiveEdges,
    weights: Option<Var>,
) -> Result<NodeStates, TensorError> {
    let oe = tape.linear(edges, params.o)?;

    let from_modality = tape.gather_rows(states.modalities, &active.modality)?;
    let wh = tape.linear(from_modality, params.w)?;
    let pre = tape.add(wh, oe)?;
    let msg = tape.relu(pre);
    let msg = weighted(tape, msg, weights)?;
    let agg = tape.segment_mean(msg, &active.patient, active.num_patients)?;
    let cat = tape.concat_cols(states.patients, agg)?;
    let patients = tape.linear(cat, params.u)?;

    let from_patient = tape.gather_rows(states.patients, &active.patient)?;
    let wh = tape.linear(from_patient, params.w)?;
    let pre = tape.add(wh, oe)?;
    let msg = tape.relu(pre);
    let msg = weighted(tape, msg, weights)?;
    let agg = tape.segment_mean(msg, &active.modality, active.num_modalities)?;
    let cat = tape.concat_cols(states.modalities, agg)?;
    let modalities = tape.linear(cat, params.u)?;

    Ok(NodeStates {
        patients,
        modalities,
    })
}

/// Edge update `e ← w · P·[h_modality ‖ h_patient ‖ e]` from the states
/// that entered the layer.
pub fn update_edges(
    tape: &mut Tape,
    params: &LayerVars,
    states: NodeStates,
    edges: Var,
    active: &ActiveEdges,
    weights: Option<Var>,
) -> Result<Var, TensorError> {
    let hm = tape.gather_rows(states.modalities, &active.modality)?;
    let hp = tape.gather_rows(states.patients, &active.patient)?;
    let cat = tape.concat_cols(hm, hp)?;
    let cat = tape.concat_cols(cat, edges)?;
    let out = tape.linear(cat, params.p)?;
    weighted(tape, out, weights)
}

/// One full layer: nodes and edges both updated from the incoming states.
pub fn gnn_layer(
    tape: &mut Tape,
    params: &LayerVars,
    states: NodeStates,
    edges: Var,
    active: &ActiveEdges,
    weights: Option<Var>,
) -> Result<(NodeStates, Var), TensorError> {
    let next = message_pass_layer(tape, params, states, edges, active, weights)?;
    let next_edges = update_edges(tape, params, states, edges, active, weights)?;
    Ok((next, next_edges))
}

/// Runs `layers` unweighted layers and returns the final patient states.
pub fn readout_patients(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    layers: usize,
    states: NodeStates,
    edges: Var,
    active: &ActiveEdges,
) -> Result<Var, TensorError> {
    let mut states = states;
    let mut edges = edges;
    for l in 0..layers {
        let params = LayerVars::load(tape, store, &LayerNames::new(prefix, l))?;
        let (s, e) = gnn_layer(tape, &params, states, edges, active, None)?;
        states = s;
        edges = e;
    }
    Ok(states.patients)
}
