//! Randomized invariants, 128 cases each.

mod common;

use approx::assert_abs_diff_eq;
use ndarray::Array2;

use common::invariants::{self, MIN_CASES};
use nspgnn_core::knn::build_dual_knn_with;
use nspgnn_core::similarity::similarity_matrix;
use nspgnn_core::Graph;

#[test]
fn csr_round_trip() {
    invariants::csr_round_trip(MIN_CASES).unwrap();
}

#[test]
fn graph_construction_invariants() {
    invariants::graph_construction_invariants(MIN_CASES).unwrap();
}

#[test]
fn normalized_adjacency_is_symmetric() {
    invariants::normalized_adjacency_is_symmetric(MIN_CASES).unwrap();
}

#[test]
fn powered_features_compose() {
    invariants::powered_features_compose(MIN_CASES).unwrap();
}

#[test]
fn homophily_is_permutation_invariant() {
    invariants::homophily_is_permutation_invariant(MIN_CASES).unwrap();
}

#[test]
fn similarity_scale_invariance_and_range() {
    invariants::similarity_scale_invariance_and_range(MIN_CASES).unwrap();
}

#[test]
fn similarity_is_permutation_equivariant() {
    invariants::similarity_is_permutation_equivariant(MIN_CASES).unwrap();
}

#[test]
fn knn_deterministic_and_ordered() {
    invariants::knn_deterministic_and_ordered(MIN_CASES).unwrap();
}

#[test]
fn softmax_rows_are_distributions() {
    invariants::softmax_rows_are_distributions(MIN_CASES).unwrap();
}

#[test]
fn model_outputs_are_distributions() {
    invariants::model_outputs_are_distributions(MIN_CASES).unwrap();
}

#[test]
fn kernel_is_psd() {
    invariants::kernel_is_psd(MIN_CASES).unwrap();
}

#[test]
fn forward_is_permutation_equivariant() {
    invariants::forward_is_permutation_equivariant(MIN_CASES).unwrap();
}

#[test]
fn kl_is_non_negative_and_zero_on_self() {
    invariants::kl_is_non_negative_and_zero_on_self(MIN_CASES).unwrap();
}

#[test]
fn gradient_attack_flip_count_is_exact() {
    invariants::gradient_attack_flip_count_is_exact(MIN_CASES).unwrap();
}

#[test]
fn constant_features_give_lowest_index_neighbors() {
    let g = Graph::from_edges(&[(0, 1), (1, 2), (2, 3), (3, 4)], 5).unwrap();
    let x = Array2::from_elem((5, 2), 1.0);
    let d = build_dual_knn_with(&g, &x.view(), 2, 2, &[0]).unwrap();
    assert_eq!(d.pairs[0].pos_lists[4], vec![0, 1]);
    assert_eq!(d.pairs[0].neg_lists[0], vec![1, 2]);
    assert_abs_diff_eq!(
        similarity_matrix(&g, &x.view(), 0).unwrap().get(1, 3),
        1.0,
        epsilon = 1e-15
    );
}
