//! Causal/bias disentanglement with a gated pair of graph branches.
//!
//! A per-layer gate scores every edge from the causal branch's incoming
//! node states and splits it into a causal weight `c = σ(α)` and a bias
//! weight `b = 1 − c`. The causal branch propagates with `c`, the bias
//! branch with `b`. Two linear heads read `[Z_c ‖ Z_b]`: `f_c` is trained
//! with cross-entropy, `f_b` with generalised cross-entropy. Cross-entropy
//! never reaches the bias branch and GCE never reaches the causal branch;
//! both rules are realised by stop-gradient barriers on the opposite half
//! of the concatenation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::graph::{self, ActiveEdges, BipartiteGraph, GraphError, LayerNames, LayerVars, NodeStates};
use crate::tensor::{ParameterStore, Tape, Tensor, TensorError, Var};

pub const CAUSAL_BRANCH: &str = "gnn_c";
pub const BIAS_BRANCH: &str = "gnn_b";
pub const CAUSAL_HEAD: &str = "cls_c";
pub const BIAS_HEAD: &str = "cls_b";
pub const GATE: &str = "gate";
pub const BIAS_GATE: &str = "gate_b";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("GCE exponent q must lie in (0, 1], got {0}")]
    BadQ(f64),
    #[error("row {row} of the probability matrix sums to {sum}")]
    NotProbabilities { row: usize, sum: f64 },
    #[error("loss weight must be non-negative, got {0}")]
    BadWeight(f64),
    #[error("{0} is not a permutation of 0..{1}")]
    BadPermutation(String, usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Where each branch's gate reads its input states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateMode {
    /// One gate driven by the causal branch; `b = 1 − c` exactly.
    #[default]
    Shared,
    /// Each branch runs its own gate on its own states.
    Separate,
}

fn gate_names(prefix: &str, layer: usize) -> (String, String) {
    (
        format!("{prefix}.layer{layer}.w"),
        format!("{prefix}.layer{layer}.b"),
    )
}

/// Registers a `1 × 2d` perceptron with scalar bias per layer.
pub fn register_gate<R: Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    layers: usize,
    d: usize,
    rng: &mut R,
) -> Result<(), TensorError> {
    for l in 0..layers {
        let (w, b) = gate_names(prefix, l);
        store.insert_glorot(&w, 1, 2 * d, rng)?;
        store.insert_zeros(&b, 1, 1)?;
    }
    Ok(())
}

/// Gate logits `α = w·[h_modality ‖ h_patient] + b` for every listed edge,
/// returned as `(c, b)` columns with `b = 1 − c`.
pub fn gate_edges(
    tape: &mut Tape,
    weight: Var,
    bias: Var,
    states: NodeStates,
    edges: &ActiveEdges,
) -> Result<(Var, Var), TensorError> {
    let hm = tape.gather_rows(states.modalities, &edges.modality)?;
    let hp = tape.gather_rows(states.patients, &edges.patient)?;
    let cat = tape.concat_cols(hm, hp)?;
    let logits = tape.affine_layer(cat, weight, bias)?;
    let c = tape.sigmoid(logits);
    let b = tape.affine(c, -1.0, 1.0);
    Ok((c, b))
}

/// Edge subsets used by the two branches in one forward pass.
#[derive(Debug, Clone)]
pub struct BranchEdges {
    pub causal: ActiveEdges,
    pub bias: ActiveEdges,
}

#[derive(Debug, Clone, Copy)]
pub struct DualEmbeddings {
    pub z_c: Var,
    pub z_b: Var,
    pub concat: Var,
}

/// Per-layer gate outputs over all graph edges, kept for inspection.
#[derive(Debug, Clone, Default)]
pub struct GateTrace {
    pub causal: Vec<Var>,
    pub bias: Vec<Var>,
}

pub struct DualOutput {
    pub embeddings: DualEmbeddings,
    pub gates: GateTrace,
}

fn select(tape: &mut Tape, all: Var, active: &ActiveEdges, total: usize) -> Result<Var, TensorError> {
    if active.is_complete(total) {
        Ok(all)
    } else {
        tape.gather_rows(all, &active.edge_index)
    }
}

/// Runs both branches for `layers` layers from shared initial edges `e0`
/// (one row per graph edge).
pub fn dual_forward(
    tape: &mut Tape,
    store: &ParameterStore,
    graph: &BipartiteGraph,
    e0: Var,
    edges: &BranchEdges,
    layers: usize,
    d: usize,
    mode: GateMode,
) -> Result<DualOutput, GraphError> {
    let total = graph.edges.len();
    let all = graph.all_edges();
    let init = graph::place_nodes(tape, graph.num_patients, graph.num_modalities, d)?;
    let mut causal = init;
    let mut bias = init;
    let mut e_c = select(tape, e0, &edges.causal, total)?;
    let mut e_b = select(tape, e0, &edges.bias, total)?;
    let mut trace = GateTrace::default();

    for l in 0..layers {
        let (gw, gb) = gate_names(GATE, l);
        let (w, b) = (tape.param(store, &gw)?, tape.param(store, &gb)?);
        let c_all = gate_edges(tape, w, b, causal, &all)?.0;
        let b_all = if mode == GateMode::Separate {
            let (gw, gb) = gate_names(BIAS_GATE, l);
            let (w, b) = (tape.param(store, &gw)?, tape.param(store, &gb)?);
            gate_edges(tape, w, b, bias, &all)?.1
        } else {
            // Same values as 1 − c, but the bias path must not reach the
            // causal branch through the states the gate reads.
            let fixed = NodeStates {
                patients: tape.stop_gradient(causal.patients),
                modalities: tape.stop_gradient(causal.modalities),
            };
            gate_edges(tape, w, b, fixed, &all)?.1
        };
        trace.causal.push(c_all);
        trace.bias.push(b_all);
        let c_w = select(tape, c_all, &edges.causal, total)?;
        let b_w = select(tape, b_all, &edges.bias, total)?;

        let pc = LayerVars::load(tape, store, &LayerNames::new(CAUSAL_BRANCH, l))?;
        let (next_c, next_ec) = graph::gnn_layer(tape, &pc, causal, e_c, &edges.causal, Some(c_w))?;
        let pb = LayerVars::load(tape, store, &LayerNames::new(BIAS_BRANCH, l))?;
        let (next_b, next_eb) = graph::gnn_layer(tape, &pb, bias, e_b, &edges.bias, Some(b_w))?;
        causal = next_c;
        bias = next_b;
        e_c = next_ec;
        e_b = next_eb;
    }
    let concat = tape.concat_cols(causal.patients, bias.patients)?;
    Ok(DualOutput {
        embeddings: DualEmbeddings {
            z_c: causal.patients,
            z_b: bias.patients,
            concat,
        },
        gates: trace,
    })
}

/// Registers a linear head `in_dim → classes` under `prefix`.
pub fn register_head<R: Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    in_dim: usize,
    classes: usize,
    rng: &mut R,
) -> Result<(), TensorError> {
    store.insert_glorot(&format!("{prefix}.W"), classes, in_dim, rng)?;
    store.insert_zeros(&format!("{prefix}.b"), 1, classes)
}

pub fn head_logits(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    input: Var,
) -> Result<Var, TensorError> {
    let w = tape.param(store, &format!("{prefix}.W"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    tape.affine_layer(input, w, b)
}

/// Mean of `−ln max(p_y, 1e-12)` over rows of softmax(logits).
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
    let probs = tape.row_softmax(logits);
    let py = tape.pick(probs, labels)?;
    let lp = tape.log(py);
    let m = tape.mean(lp);
    Ok(tape.scale(m, -1.0))
}

/// Mean of `(1 − p_y^q) / q` over rows of a probability matrix.
pub fn gce_loss(tape: &mut Tape, probs: Var, labels: &[usize], q: f64) -> Result<Var, LossError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(LossError::BadQ(q));
    }
    let p = tape.value(probs);
    for r in 0..p.rows() {
        let sum: f64 = p.row(r).iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(LossError::NotProbabilities { row: r, sum });
        }
    }
    let py = tape.pick(probs, labels)?;
    let pq = tape.pow(py, q)?;
    let per = tape.affine(pq, -1.0 / q, 1.0 / q);
    Ok(tape.mean(per))
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub ce: Var,
    pub gce: Var,
    pub total: Var,
}

/// CE through `f_c` on `[Z_c ‖ sg(Z_b)]` plus GCE through `f_b` on
/// `[sg(Z_c) ‖ Z_b]`. `ce_labels` and `gce_labels` differ only for
/// counterfactual samples.
fn routed_loss(
    tape: &mut Tape,
    store: &ParameterStore,
    z_c: Var,
    z_b: Var,
    ce_labels: &[usize],
    gce_labels: &[usize],
    q: f64,
) -> Result<LossParts, LossError> {
    let zb_fixed = tape.stop_gradient(z_b);
    let zc_fixed = tape.stop_gradient(z_c);
    let causal_in = tape.concat_cols(z_c, zb_fixed)?;
    let bias_in = tape.concat_cols(zc_fixed, z_b)?;
    let logits_c = head_logits(tape, store, CAUSAL_HEAD, causal_in)?;
    let ce = cross_entropy(tape, logits_c, ce_labels)?;
    let logits_b = head_logits(tape, store, BIAS_HEAD, bias_in)?;
    let probs_b = tape.row_softmax(logits_b);
    let gce = gce_loss(tape, probs_b, gce_labels, q)?;
    let total = tape.add(ce, gce)?;
    Ok(LossParts { ce, gce, total })
}

/// `L_dis = CE(f_c(Z_concat), y) + GCE(f_b(Z_concat), y)`.
pub fn disentangle_loss(
    tape: &mut Tape,
    store: &ParameterStore,
    z_c: Var,
    z_b: Var,
    labels: &[usize],
    q: f64,
) -> Result<LossParts, LossError> {
    routed_loss(tape, store, z_c, z_b, labels, labels, q)
}

fn check_permutation(perm: &[usize], n: usize) -> Result<(), LossError> {
    let mut seen = alloc::vec![false; n];
    if perm.len() != n {
        return Err(LossError::BadPermutation(format!("{perm:?}"), n));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(LossError::BadPermutation(format!("{perm:?}"), n));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Pairs each patient's causal half with the bias half of patient
/// `perm[i]` and returns the donors' labels.
pub fn counterfactual_mix(
    tape: &mut Tape,
    z_c: Var,
    z_b: Var,
    labels: &[usize],
    perm: &[usize],
) -> Result<(Var, Var, Vec<usize>), LossError> {
    check_permutation(perm, labels.len())?;
    let donor = tape.gather_rows(z_b, perm)?;
    let mixed = tape.concat_cols(z_c, donor)?;
    let donor_labels = perm.iter().map(|&p| labels[p]).collect();
    Ok((mixed, donor, donor_labels))
}

/// `CE(f_c([Z_c ‖ Ẑ_b]), y) + GCE(f_b([Z_c ‖ Ẑ_b]), ŷ)` under the same
/// routing as [`disentangle_loss`].
pub fn counterfactual_loss(
    tape: &mut Tape,
    store: &ParameterStore,
    z_c: Var,
    z_b: Var,
    labels: &[usize],
    perm: &[usize],
    q: f64,
) -> Result<LossParts, LossError> {
    let (_, donor, donor_labels) = counterfactual_mix(tape, z_c, z_b, labels, perm)?;
    routed_loss(tape, store, z_c, donor, labels, &donor_labels, q)
}

/// `L_total = L_dis + alpha · L_cf`.
pub fn total_loss(tape: &mut Tape, dis: Var, cf: Var, alpha: f64) -> Result<Var, LossError> {
    if !(alpha >= 0.0) {
        return Err(LossError::BadWeight(alpha));
    }
    let weighted = tape.scale(cf, alpha);
    Ok(tape.add(dis, weighted)?)
}

/// Registers both branches, the gate(s) and both heads.
pub fn register<R: Rng>(
    store: &mut ParameterStore,
    layers: usize,
    d: usize,
    head_in: usize,
    classes: usize,
    mode: GateMode,
    rng: &mut R,
) -> Result<(), TensorError> {
    graph::register_gnn(store, CAUSAL_BRANCH, layers, d, rng)?;
    graph::register_gnn(store, BIAS_BRANCH, layers, d, rng)?;
    register_gate(store, GATE, layers, d, rng)?;
    if mode == GateMode::Separate {
        register_gate(store, BIAS_GATE, layers, d, rng)?;
    }
    register_head(store, CAUSAL_HEAD, head_in, classes, rng)?;
    register_head(store, BIAS_HEAD, head_in, classes, rng)
}

/// Class probabilities as plain rows, for inference.
pub fn probabilities(tape: &mut Tape, logits: Var) -> Tensor {
    let p = tape.row_softmax(logits);
    tape.value(p).clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;

    fn probs(tape: &mut Tape, rows: &[&[f64]]) -> Var {
        tape.constant(Tensor::from_rows(rows).unwrap())
    }

    fn value(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item()
    }

    #[test]
    fn gce_reference_values() {
        let mut t = Tape::new();
        let p = probs(&mut t, &[&[0.0, 1.0]]);
        let l = gce_loss(&mut t, p, &[1], 0.7).unwrap();
        assert_eq!(value(&t, l), 0.0);

        let p = probs(&mut t, &[&[0.25, 0.75]]);
        let l = gce_loss(&mut t, p, &[0], 1.0).unwrap();
        assert_eq!(value(&t, l), 0.75);

        let p = probs(&mut t, &[&[0.5, 0.5]]);
        let l = gce_loss(&mut t, p, &[0], 0.7).unwrap();
        let direct = (1.0 - math::powf(0.5, 0.7)) / 0.7;
        assert!((value(&t, l) - 0.54918).abs() < 1e-5);
        assert!((value(&t, l) - direct).abs() < 1e-15);
    }

    #[test]
    fn gce_rejects_bad_inputs() {
        let mut t = Tape::new();
        let p = probs(&mut t, &[&[0.5, 0.5]]);
        assert_eq!(gce_loss(&mut t, p, &[0], 0.0).err(), Some(LossError::BadQ(0.0)));
        assert_eq!(gce_loss(&mut t, p, &[0], 1.2).err(), Some(LossError::BadQ(1.2)));
        let bad = probs(&mut t, &[&[0.5, 0.6]]);
        assert!(matches!(
            gce_loss(&mut t, bad, &[0], 0.7),
            Err(LossError::NotProbabilities { row: 0, .. })
        ));
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut t = Tape::new();
        let dis = t.constant(Tensor::scalar(1.0));
        let cf = t.constant(Tensor::scalar(0.4));
        let l = total_loss(&mut t, dis, cf, 0.5).unwrap();
        assert!((value(&t, l) - 1.2).abs() < 1e-15);
        let l = total_loss(&mut t, dis, cf, 0.0).unwrap();
        assert_eq!(value(&t, l), 1.0);
        assert!(total_loss(&mut t, dis, cf, -0.1).is_err());
    }

    #[test]
    fn counterfactual_swap_and_identity() {
        let mut t = Tape::new();
        let zc = t.constant(Tensor::from_rows(&[[1.0], [2.0]]).unwrap());
        let zb = t.constant(Tensor::from_rows(&[[10.0], [20.0]]).unwrap());
        let (mixed, _, y) = counterfactual_mix(&mut t, zc, zb, &[0, 1], &[1, 0]).unwrap();
        assert_eq!(t.value(mixed).data(), &[1.0, 20.0, 2.0, 10.0]);
        assert_eq!(y, alloc::vec![1, 0]);
        let (mixed, _, y) = counterfactual_mix(&mut t, zc, zb, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(t.value(mixed).data(), &[1.0, 10.0, 2.0, 20.0]);
        assert_eq!(y, alloc::vec![0, 1]);
        assert!(counterfactual_mix(&mut t, zc, zb, &[0, 1], &[1, 1]).is_err());
    }

    #[test]
    fn gate_zero_weights_split_evenly() {
        let mut t = Tape::new();
        let g = BipartiteGraph {
            num_patients: 2,
            num_modalities: 2,
            edges: alloc::vec![
                graph::Edge { patient: 0, modality: 0 },
                graph::Edge { patient: 1, modality: 1 },
            ],
        };
        let states = graph::place_nodes(&mut t, 2, 2, 3).unwrap();
        let w = t.constant(Tensor::zeros(1, 6));
        let b = t.constant(Tensor::zeros(1, 1));
        let (c, bb) = gate_edges(&mut t, w, b, states, &g.all_edges()).unwrap();
        assert_eq!(t.value(c).data(), &[0.5, 0.5]);
        assert_eq!(t.value(bb).data(), &[0.5, 0.5]);
    }
}
