//! Central finite-difference checks of every differentiable operation and
//! of the full stacked model. Each check panics on the first mismatch.

use cadlab_core::cbdm::{self, BranchEdges, GateMode};
use cadlab_core::graph::{self, BipartiteGraph, LayerNames, LayerVars};
use cadlab_core::mdm::{self, NwgmNames};
use cadlab_core::model::{CadModel, ModelConfig};
use cadlab_core::rng::{self, SeededRng};
use cadlab_core::scm::{Latents, MultimodalSample};
use cadlab_core::tensor::{Optimizer, ParameterStore, Tape, Tensor, Var};
use rand::Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn uniform(rng: &mut SeededRng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Reduces `v` to a scalar through fixed random weights so every entry
/// receives a distinct gradient.
fn probe(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let s = tape.shape(v);
    let w = tape.constant(uniform(&mut rng::stream(seed, 99), s.rows, s.cols));
    let p = tape.mul(v, w).unwrap();
    tape.sum(p)
}

/// Checks d f / d inputs for a function of leaf tensors.
fn check_inputs(name: &str, inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let pins = tape.stopped_values();
    let eval = |perturbed: &[Tensor]| {
        let mut t = Tape::with_pinned(pins.clone());
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let o = f(&mut t, &vs);
        t.value(o).item()
    };
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; input.data().len()]);
        for j in 0..input.data().len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let e = rel_err(analytic[j], numeric);
            assert!(
                e <= TOLERANCE,
                "{name}: input {i} entry {j}: analytic {} numeric {numeric} rel err {e}",
                analytic[j]
            );
            worst = worst.max(e);
        }
    }
    worst
}

/// Checks d loss / d every trainable parameter of `store`.
fn check_params(name: &str, store: &ParameterStore, loss: impl Fn(&mut Tape, &ParameterStore) -> Var) -> usize {
    let mut store = store.clone();
    let mut tape = Tape::new();
    let out = loss(&mut tape, &store);
    let grads = tape.backward(out).unwrap();
    store.zero_grads();
    store.accumulate(&tape, &grads);
    let pins = tape.stopped_values();
    let eval = |s: &ParameterStore| {
        let mut t = Tape::with_pinned(pins.clone());
        let o = loss(&mut t, s);
        t.value(o).item()
    };
    let names: Vec<String> = store.names().map(String::from).collect();
    let mut checked = 0;
    for n in &names {
        let p = store.get(n).unwrap();
        let analytic = p.grad.clone().unwrap_or_else(|| vec![0.0; p.value.data().len()]);
        let base = p.value.clone();
        for j in 0..base.data().len() {
            let mut s = store.clone();
            let mut v = base.clone();
            v.data_mut()[j] += STEP;
            s.set(n, v).unwrap();
            let up = eval(&s);
            let mut v = base.clone();
            v.data_mut()[j] -= STEP;
            s.set(n, v).unwrap();
            let down = eval(&s);
            let numeric = (up - down) / (2.0 * STEP);
            let e = rel_err(analytic[j], numeric);
            assert!(
                e <= TOLERANCE,
                "{name}: {n}[{j}]: analytic {} numeric {numeric} rel err {e}",
                analytic[j]
            );
            checked += 1;
        }
    }
    checked
}

fn r(seed: u64, rows: usize, cols: usize) -> Tensor {
    uniform(&mut rng::stream(seed, 7), rows, cols)
}

pub fn elementwise_and_shape_ops() {
    let (a, b) = (r(1, 3, 4), r(2, 3, 4));
    check_inputs("add", &[a.clone(), b.clone()], |t, v| {
        let x = t.add(v[0], v[1]).unwrap();
        probe(t, x, 1)
    });
    check_inputs("add row broadcast", &[a.clone(), r(3, 1, 4)], |t, v| {
        let x = t.add(v[0], v[1]).unwrap();
        probe(t, x, 2)
    });
    check_inputs("mul", &[a.clone(), b.clone()], |t, v| {
        let x = t.mul(v[0], v[1]).unwrap();
        probe(t, x, 3)
    });
    check_inputs("mul column broadcast", &[a.clone(), r(4, 3, 1)], |t, v| {
        let x = t.mul(v[0], v[1]).unwrap();
        probe(t, x, 4)
    });
    check_inputs("affine", &[a.clone()], |t, v| {
        let x = t.affine(v[0], -1.7, 0.3);
        probe(t, x, 5)
    });
    check_inputs("transpose", &[a.clone()], |t, v| {
        let x = t.transpose(v[0]);
        probe(t, x, 6)
    });
    check_inputs("concat_cols", &[a.clone(), r(5, 3, 2)], |t, v| {
        let x = t.concat_cols(v[0], v[1]).unwrap();
        probe(t, x, 7)
    });
    check_inputs("concat_rows", &[a.clone(), r(6, 2, 4)], |t, v| {
        let x = t.concat_rows(&[v[0], v[1]]).unwrap();
        probe(t, x, 8)
    });
    check_inputs("gather_rows with repeats", &[a.clone()], |t, v| {
        let x = t.gather_rows(v[0], &[2, 0, 2, 1, 2]).unwrap();
        probe(t, x, 9)
    });
    check_inputs("segment_mean", &[r(7, 6, 3)], |t, v| {
        let x = t.segment_mean(v[0], &[1, 0, 1, 3, 1, 0], 4).unwrap();
        probe(t, x, 10)
    });
    check_inputs("sum", &[a.clone()], |t, v| {
        let s = t.sum(v[0]);
        t.mul(s, s).unwrap()
    });
    check_inputs("mean", &[a.clone()], |t, v| {
        let s = t.mean(v[0]);
        t.mul(s, s).unwrap()
    });
}

pub fn matrix_products() {
    check_inputs("matmul", &[r(1, 3, 4), r(2, 4, 2)], |t, v| {
        let x = t.matmul(v[0], v[1]).unwrap();
        probe(t, x, 11)
    });
    check_inputs("linear", &[r(3, 3, 4), r(4, 5, 4)], |t, v| {
        let x = t.linear(v[0], v[1]).unwrap();
        probe(t, x, 12)
    });
    check_inputs("affine_layer", &[r(5, 3, 4), r(6, 2, 4), r(7, 1, 2)], |t, v| {
        let x = t.affine_layer(v[0], v[1], v[2]).unwrap();
        probe(t, x, 13)
    });
}

pub fn nonlinearities() {
    // Shift away from the kink so the central difference never straddles it.
    let mut a = r(8, 4, 3);
    for x in a.data_mut() {
        if x.abs() < 1e-3 {
            *x += 0.01;
        }
    }
    check_inputs("relu", &[a.clone()], |t, v| {
        let x = t.relu(v[0]);
        probe(t, x, 14)
    });
    check_inputs("sigmoid", &[a.clone()], |t, v| {
        let x = t.sigmoid(v[0]);
        probe(t, x, 15)
    });
    check_inputs("log", &[a.clone()], |t, v| {
        let s = t.sigmoid(v[0]);
        let x = t.log(s);
        probe(t, x, 16)
    });
    for q in [0.3, 0.7, 1.0] {
        check_inputs("pow", &[a.clone()], |t, v| {
            let s = t.sigmoid(v[0]);
            let x = t.pow(s, q).unwrap();
            probe(t, x, 17)
        });
    }
    check_inputs("row_softmax", &[a.clone()], |t, v| {
        let x = t.row_softmax(v[0]);
        probe(t, x, 18)
    });
    check_inputs("pick", &[a], |t, v| {
        let x = t.pick(v[0], &[2, 0, 1, 2]).unwrap();
        probe(t, x, 19)
    });
}

pub fn stop_gradient_contributes_nothing() {
    check_inputs("stop_gradient", &[r(9, 2, 3), r(10, 2, 3)], |t, v| {
        let s = t.stop_gradient(v[0]);
        let x = t.mul(s, v[1]).unwrap();
        let y = t.mul(x, v[0]).unwrap();
        probe(t, y, 20)
    });
}

pub fn loss_functions() {
    let logits = r(11, 5, 3);
    let labels = [0, 2, 1, 1, 0];
    check_inputs("cross_entropy", &[logits.clone()], |t, v| {
        cbdm::cross_entropy(t, v[0], &labels).unwrap()
    });
    for q in [0.7, 1.0] {
        check_inputs("gce", &[logits.clone()], |t, v| {
            let p = t.row_softmax(v[0]);
            cbdm::gce_loss(t, p, &labels, q).unwrap()
        });
    }
}

fn sample(id: u64, dims: &[usize], mask: &[bool], rng: &mut SeededRng) -> MultimodalSample {
    MultimodalSample {
        id,
        features: dims
            .iter()
            .map(|&f| (0..f).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
        mask: mask.to_vec(),
        label: (id % 2) as usize,
        age: 50.0,
        severity: 3.0,
        latents: None::<Latents>,
    }
}

fn tiny_cohort() -> (Vec<MultimodalSample>, Vec<usize>) {
    let mut rng = rng::stream(42, 1);
    let dims = vec![3, 2];
    let s = vec![
        sample(0, &dims, &[true, true], &mut rng),
        sample(1, &dims, &[true, false], &mut rng),
        sample(2, &dims, &[false, true], &mut rng),
    ];
    (s, dims)
}

pub fn encoder_and_message_passing_layer() {
    let (samples, dims) = tiny_cohort();
    let graph = BipartiteGraph::from_samples(&samples).unwrap();
    let d = 4;
    let mut store = ParameterStore::new(Optimizer::Sgd);
    let mut rng = rng::stream(3, 4);
    graph::register_encoder(&mut store, "enc", &dims, d, &mut rng).unwrap();
    graph::register_gnn(&mut store, "gnn", 1, d, &mut rng).unwrap();
    // Non-zero biases so their gradients are exercised too.
    for m in 0..dims.len() {
        let (_, b) = graph::encoder_names("enc", m);
        store.set(&b, uniform(&mut rng, 1, d)).unwrap();
    }
    let all = graph.all_edges();
    let n = check_params("encoder + layer", &store, |t, s| {
        let e0 = graph::encode_edges(t, s, "enc", &samples, &graph, false).unwrap();
        let states = graph::place_nodes(t, graph.num_patients, graph.num_modalities, d).unwrap();
        let params = LayerVars::load(t, s, &LayerNames::new("gnn", 0)).unwrap();
        let (next, e1) = graph::gnn_layer(t, &params, states, e0, &all, None).unwrap();
        let a = probe(t, next.patients, 21);
        let b = probe(t, next.modalities, 22);
        let c = probe(t, e1, 23);
        let ab = t.add(a, b).unwrap();
        t.add(ab, c).unwrap()
    });
    assert!(n > 0);
}

pub fn gated_dual_branches() {
    let (samples, dims) = tiny_cohort();
    let graph = BipartiteGraph::from_samples(&samples).unwrap();
    let d = 4;
    for mode in [GateMode::Shared, GateMode::Separate] {
        let mut store = ParameterStore::new(Optimizer::Sgd);
        let mut rng = rng::stream(5, 4);
        graph::register_encoder(&mut store, "enc", &dims, d, &mut rng).unwrap();
        cbdm::register(&mut store, 2, d, 2 * d, 2, mode, &mut rng).unwrap();
        let all = graph.all_edges();
        let edges = BranchEdges {
            causal: all.clone(),
            bias: all,
        };
        check_params("dual_forward", &store, |t, s| {
            let e0 = graph::encode_edges(t, s, "enc", &samples, &graph, false).unwrap();
            let out = cbdm::dual_forward(t, s, &graph, e0, &edges, 2, d, mode).unwrap();
            let a = probe(t, out.embeddings.z_c, 24);
            let b = probe(t, out.embeddings.z_b, 25);
            t.add(a, b).unwrap()
        });
    }
}

pub fn attention_and_adjustment() {
    let d = 4;
    let corpus = r(12, 8, d);
    let dict = mdm::build_dictionary(&corpus, 3, d, 1, "test").unwrap();
    let mut store = ParameterStore::new(Optimizer::Sgd);
    mdm::register_nwgm(&mut store, "mdm", d, 5, 3, &mut rng::stream(6, 4)).unwrap();
    let names = NwgmNames::new("mdm");
    let z = r(13, 3, d);
    check_inputs("attention_weights wrt Z", &[z.clone()], |t, v| {
        let l = mdm::attention_weights(t, &store, &names, v[0], &dict).unwrap();
        probe(t, l, 26)
    });
    check_inputs("nwgm_adjust wrt Z", &[z.clone()], |t, v| {
        let x = mdm::nwgm_adjust(t, &store, &names, v[0], &dict).unwrap();
        probe(t, x, 27)
    });
    check_params("nwgm_adjust params", &store, |t, s| {
        let zv = t.constant(z.clone());
        let x = mdm::nwgm_adjust(t, s, &names, zv, &dict).unwrap();
        probe(t, x, 28)
    });
}

/// The whole model, `L = 2`, `d = 8`, `N = 3`, `M = 2`, through
/// `L_dis + α·L_cf` with the adjustment on.
pub fn full_stacked_model() {
    let started = std::time::Instant::now();
    let (samples, dims) = tiny_cohort();
    let cfg = ModelConfig {
        hidden: 8,
        layers: 2,
        d_m: 8,
        d_n: 4,
        ..ModelConfig::new(dims, 2)
    };
    let mut model = CadModel::new(cfg, Optimizer::Sgd, 17).unwrap();
    let dict = mdm::build_dictionary(&r(14, 6, 8), 2, 8, 2, "test").unwrap();
    model.attach_dictionary(dict).unwrap();
    let graph = BipartiteGraph::from_samples(&samples).unwrap();
    let all = graph.all_edges();
    let edges = BranchEdges {
        causal: all.clone(),
        bias: all,
    };
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let perm = [2, 0, 1];
    let checked = check_params("full model", &model.store, |t, s| {
        let m = CadModel {
            store: s.clone(),
            ..model.clone()
        };
        let emb = m.embeddings(t, &samples, &graph, &edges).unwrap();
        let z_b = emb.z_b.unwrap();
        let dis = cbdm::disentangle_loss(t, s, emb.z_c, z_b, &labels, 0.7).unwrap();
        let cf = cbdm::counterfactual_loss(t, s, emb.z_c, z_b, &labels, &perm, 0.7).unwrap();
        cbdm::total_loss(t, dis.total, cf.total, 0.5).unwrap()
    });
    assert_eq!(checked, model.store.iter().map(|p| p.value.data().len()).sum::<usize>());
    assert!(started.elapsed().as_secs() < 30, "took {:?}", started.elapsed());
}

pub fn baseline_model_prediction_loss() {
    let (samples, dims) = tiny_cohort();
    let cfg = ModelConfig {
        hidden: 8,
        ..ModelConfig::new(dims, 2).baseline()
    };
    let model = CadModel::new(cfg, Optimizer::Sgd, 3).unwrap();
    let graph = BipartiteGraph::from_samples(&samples).unwrap();
    let all = graph.all_edges();
    let edges = BranchEdges {
        causal: all.clone(),
        bias: all,
    };
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    check_params("baseline", &model.store, |t, s| {
        let m = CadModel {
            store: s.clone(),
            ..model.clone()
        };
        let emb = m.embeddings(t, &samples, &graph, &edges).unwrap();
        let logits = m.logits(t, emb).unwrap();
        cbdm::cross_entropy(t, logits, &labels).unwrap()
    });
}
