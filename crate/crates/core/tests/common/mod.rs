#![allow(dead_code)]

pub mod invariants;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nspgnn_core::data::{DataSplit, Dataset, FeatureMatrix, LabelVector};
use nspgnn_core::knn::build_dual_knn_with;
use nspgnn_core::model::{
    backward_logits, forward, nll_logit_grad, LayerTape, ModelInputs, ModelParams, Variant,
};
use nspgnn_core::train::nll_loss;
use nspgnn_core::Graph;

pub const ALL_VARIANTS: [Variant; 4] = [
    Variant::Nspgnn,
    Variant::NspgnnWo,
    Variant::Gcn,
    Variant::Sgc,
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_graph(rng: &mut impl Rng, n: usize, p_edge: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p_edge) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(&edges, n).unwrap()
}

pub fn random_features(rng: &mut impl Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, p), |_| rng.gen_range(-1.0..1.0))
}

/// Random small problem with every class present in the training set.
pub fn random_dataset(seed: u64, n: usize, p: usize, c: usize) -> Dataset {
    let mut r = rng(seed);
    let g = random_graph(&mut r, n, 0.2);
    let x = random_features(&mut r, n, p);
    let labels: Vec<usize> = (0..n)
        .map(|i| if i < c { i } else { r.gen_range(0..c) })
        .collect();
    let labels = LabelVector::new(labels, c).unwrap();
    let split = DataSplit::stratified(&labels, 0.5, 0.2, seed);
    Dataset::new(g, FeatureMatrix::new(x).unwrap(), labels, split).unwrap()
}

pub struct Instance {
    pub dataset: Dataset,
    pub inputs: ModelInputs,
    pub params: ModelParams,
}

/// A random model and its inputs for `variant`, `N <= 30`, `p <= 8`.
pub fn random_instance(seed: u64, variant: Variant) -> Instance {
    let mut r = rng(seed ^ 0x9e37_79b9);
    let n = r.gen_range(8..=30);
    let p = r.gen_range(2..=8);
    let c = r.gen_range(2..=4);
    let hidden = r.gen_range(2..=8);
    let ds = random_dataset(seed, n, p, c);
    let taus: Vec<usize> = if r.gen_bool(0.5) {
        vec![1, 2]
    } else {
        vec![0, 1, 3]
    };
    let dual = if variant.needs_dual() {
        let k1 = r.gen_range(1..=4);
        let k2 = r.gen_range(1..=4);
        Some(build_dual_knn_with(&ds.graph, &ds.features.view(), k1, k2, &taus).unwrap())
    } else {
        None
    };
    let inputs = ModelInputs::new(variant, &ds, dual.as_ref(), 2).unwrap();
    let dims = if variant == Variant::Sgc {
        vec![p, c]
    } else {
        vec![p, hidden, c]
    };
    let mut params = ModelParams::init(variant, &dims, taus.len(), seed).unwrap();
    // Non-zero biases so the gate paths are exercised away from 0.5.
    let flat: Vec<f64> = params
        .to_flat()
        .iter()
        .map(|v| v + r.gen_range(-0.3..0.3))
        .collect();
    params.set_flat(&flat).unwrap();
    Instance {
        dataset: ds,
        inputs,
        params,
    }
}

pub fn loss_at(params: &ModelParams, inputs: &ModelInputs, ds: &Dataset) -> f64 {
    let (probs, _) = forward(params, inputs).unwrap();
    nll_loss(&probs, ds.labels.as_slice(), &ds.split.train).unwrap()
}

pub fn analytic_gradient(params: &ModelParams, inputs: &ModelInputs, ds: &Dataset) -> Vec<f64> {
    let (probs, tape) = forward(params, inputs).unwrap();
    let dz = nll_logit_grad(&probs, ds.labels.as_slice(), &ds.split.train).unwrap();
    backward_logits(params, inputs, &tape, dz)
        .unwrap()
        .to_flat()
}

/// Sign pattern of every ReLU pre-activation.
pub fn relu_pattern(params: &ModelParams, inputs: &ModelInputs) -> Vec<bool> {
    let (_, tape) = forward(params, inputs).unwrap();
    let mut out = Vec::new();
    for layer in &tape.layers {
        match layer {
            LayerTape::Gated {
                pre_activation,
                relu: true,
                ..
            }
            | LayerTape::Conv {
                pre_activation,
                relu: true,
                ..
            } => out.extend(pre_activation.iter().map(|&v| v > 0.0)),
            _ => {}
        }
    }
    out
}

pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub n_checked: usize,
    /// Coordinates whose perturbation moved a ReLU across its kink.
    pub n_skipped: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub const REL_FLOOR: f64 = 1e-4;

/// Central finite differences with step `h` on every coordinate.
pub fn gradient_check(
    params: &ModelParams,
    inputs: &ModelInputs,
    ds: &Dataset,
    h: f64,
) -> GradCheck {
    let analytic = analytic_gradient(params, inputs, ds);
    let base = params.to_flat();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        n_checked: 0,
        n_skipped: 0,
    };
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let pp = params.with_flat(&plus).unwrap();
        let pm = params.with_flat(&minus).unwrap();
        if relu_pattern(&pp, inputs) != relu_pattern(&pm, inputs) {
            out.n_skipped += 1;
            continue;
        }
        let numeric = (loss_at(&pp, inputs, ds) - loss_at(&pm, inputs, ds)) / (2.0 * h);
        let e = rel_error(analytic[i], numeric, REL_FLOOR);
        if e > out.max_rel_error {
            out.max_rel_error = e;
            out.worst_index = i;
        }
        out.n_checked += 1;
    }
    out
}
