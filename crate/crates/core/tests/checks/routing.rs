//! Stop-gradient routing of the two loss terms: CE must never reach the
//! bias branch and GCE must never reach the causal branch.

use cadlab_core::cbdm::{self, BranchEdges, GateMode};
use cadlab_core::graph::BipartiteGraph;
use cadlab_core::model::{CadModel, MDM_BIAS, MDM_CAUSAL};
use cadlab_core::scm::{generate_dataset, DatasetSchema, MultimodalSample, SchemaConfig};
use cadlab_core::tensor::Tape;
use cadlab_core::train::{self, TrainConfig};

pub fn cohort(n: usize, seed: u64) -> Vec<MultimodalSample> {
    let schema = DatasetSchema::random(&SchemaConfig::default(), seed).unwrap();
    let mut s = generate_dataset(&schema, n, seed + 1).unwrap();
    // A few partial patients so the graph is not complete.
    for (i, x) in s.iter_mut().enumerate() {
        if i % 3 == 0 {
            x.mask[i % 4] = false;
        }
    }
    s
}

pub fn small(seed: u64) -> TrainConfig {
    TrainConfig {
        hidden: 8,
        d_m: 8,
        d_n: 4,
        k: 3,
        warmup: 3,
        epochs: 6,
        backbone_epochs: 2,
        lr: 1e-2,
        seed,
        ..TrainConfig::default()
    }
}

enum Part {
    Ce,
    Gce,
}

/// Gradient norm sums per prefix after backpropagating one loss term.
fn routed_norms(model: &CadModel, samples: &[MultimodalSample], part: Part) -> Vec<(&'static str, f64)> {
    let graph = BipartiteGraph::from_samples(samples).unwrap();
    let all = graph.all_edges();
    let edges = BranchEdges {
        causal: all.clone(),
        bias: all,
    };
    let mut tape = Tape::new();
    let emb = model.embeddings(&mut tape, samples, &graph, &edges).unwrap();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let parts = cbdm::disentangle_loss(&mut tape, &model.store, emb.z_c, emb.z_b.unwrap(), &labels, 0.7).unwrap();
    let loss = match part {
        Part::Ce => parts.ce,
        Part::Gce => parts.gce,
    };
    let grads = tape.backward(loss).unwrap();
    let mut store = model.store.clone();
    store.zero_grads();
    store.accumulate(&tape, &grads);
    [
        cbdm::CAUSAL_BRANCH,
        cbdm::BIAS_BRANCH,
        cbdm::CAUSAL_HEAD,
        cbdm::BIAS_HEAD,
        MDM_CAUSAL,
        MDM_BIAS,
        cbdm::BIAS_GATE,
    ]
    .into_iter()
    .map(|p| (p, store.grad_norm_sum(&format!("{p}."))))
    .collect()
}

fn norm(v: &[(&str, f64)], prefix: &str) -> f64 {
    v.iter().find(|(p, _)| *p == prefix).unwrap().1
}

pub fn trained_model(gate_mode: GateMode, layers: usize) -> (CadModel, Vec<MultimodalSample>) {
    let samples = cohort(40, 3);
    let cfg = TrainConfig {
        layers,
        gate_mode,
        epochs: 4,
        warmup: 2,
        ..small(5)
    };
    let out = train::fit(&cfg, &samples, &[16; 4], 2).unwrap();
    (out.model, samples)
}

pub fn ce_term_never_reaches_the_bias_branch() {
    for mode in [GateMode::Shared, GateMode::Separate] {
        for layers in [1, 2, 3] {
            let (model, samples) = trained_model(mode, layers);
            let g = routed_norms(&model, &samples, Part::Ce);
            assert_eq!(norm(&g, cbdm::BIAS_BRANCH), 0.0, "{mode:?} L={layers}");
            assert_eq!(norm(&g, cbdm::BIAS_HEAD), 0.0);
            assert_eq!(norm(&g, MDM_BIAS), 0.0);
            assert_eq!(norm(&g, cbdm::BIAS_GATE), 0.0);
            assert!(norm(&g, cbdm::CAUSAL_BRANCH) > 0.0);
            assert!(norm(&g, cbdm::CAUSAL_HEAD) > 0.0);
        }
    }
}

pub fn gce_term_never_reaches_the_causal_branch() {
    for mode in [GateMode::Shared, GateMode::Separate] {
        for layers in [1, 2, 3] {
            let (model, samples) = trained_model(mode, layers);
            let g = routed_norms(&model, &samples, Part::Gce);
            assert_eq!(norm(&g, cbdm::CAUSAL_BRANCH), 0.0, "{mode:?} L={layers}");
            assert_eq!(norm(&g, cbdm::CAUSAL_HEAD), 0.0);
            assert_eq!(norm(&g, MDM_CAUSAL), 0.0);
            assert!(norm(&g, cbdm::BIAS_BRANCH) > 0.0);
            assert!(norm(&g, cbdm::BIAS_HEAD) > 0.0);
        }
    }
}
