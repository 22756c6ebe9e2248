//! Randomized invariants shared by the property tests and the acceptance
//! suite. Each function runs `cases` random cases and reports the first
//! failure.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;
use nspgnn_core::attack::{attack_kernel, gradient_attack, AttackConfig, AttackMode};
use nspgnn_core::data::{DataSplit, Dataset, FeatureMatrix, LabelVector};
use nspgnn_core::knn::{build_dual_knn_with, knn_select, KnnOrder};
use nspgnn_core::model::{forward, softmax_rows, ModelInputs, ModelParams};
use nspgnn_core::similarity::{kl_divergence, similarity_matrix};
use nspgnn_core::sparse::CsrMatrix;
use nspgnn_core::Graph;

pub const MIN_CASES: u32 = 128;

pub type Outcome = Result<(), String>;

fn check<S: Strategy>(
    cases: u32,
    strategy: &S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(strategy, test).map_err(|e| e.to_string())
}

fn dense_to_csr(d: &Array2<f64>) -> CsrMatrix {
    let mut indptr = vec![0];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for row in d.rows() {
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                indices.push(j);
                values.push(v);
            }
        }
        indptr.push(indices.len());
    }
    CsrMatrix::from_raw(d.nrows(), d.ncols(), indptr, indices, values)
}

fn check_graph(g: &Graph) {
    let n = g.n_nodes();
    let edges = g.edges();
    assert!(
        edges.windows(2).all(|w| w[0] < w[1]),
        "edges sorted and unique"
    );
    assert!(edges.iter().all(|&(u, v)| u < v && v < n), "u < v < n");
    let degree_sum: usize = (0..n).map(|u| g.degree(u)).sum();
    assert_eq!(degree_sum, 2 * edges.len());
    for u in 0..n {
        for &v in g.neighbors(u) {
            assert!(g.neighbors(v).contains(&u), "CSR symmetric");
            assert_ne!(u, v, "no self-loops");
        }
    }
}

fn permute_dataset(ds: &Dataset, perm: &[usize]) -> Dataset {
    // Node i of the original becomes node perm[i].
    let n = ds.n_nodes();
    let edges: Vec<(usize, usize)> = ds
        .graph
        .edges()
        .iter()
        .map(|&(u, v)| (perm[u], perm[v]))
        .collect();
    let g = Graph::from_edges(&edges, n).unwrap();
    let mut x = Array2::zeros(ds.features.dim());
    let mut y = vec![0; n];
    let mut split = DataSplit {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for i in 0..n {
        x.row_mut(perm[i]).assign(&ds.features.row(i));
        y[perm[i]] = ds.labels.as_slice()[i];
        split.train[perm[i]] = ds.split.train[i];
        split.val[perm[i]] = ds.split.val[i];
        split.test[perm[i]] = ds.split.test[i];
    }
    let labels = LabelVector::new(y, ds.n_classes()).unwrap();
    Dataset::new(g, FeatureMatrix::new(x).unwrap(), labels, split).unwrap()
}

fn has_ties(ds: &Dataset, taus: &[usize]) -> bool {
    let n = ds.n_nodes();
    taus.iter().any(|&tau| {
        let s = similarity_matrix(&ds.graph, &ds.features.view(), tau).unwrap();
        (0..n).any(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| s.get(i, j)).collect();
            row.sort_by(f64::total_cmp);
            row.windows(2).any(|w| w[0] == w[1])
        })
    })
}

pub fn csr_round_trip(cases: u32) -> Outcome {
    check(
        cases,
        &(any::<u64>(), 1usize..12, 1usize..12, 0.0f64..1.0),
        |(seed, rows, cols, density)| {
            let mut r = rng(seed);
            let d = Array2::from_shape_fn((rows, cols), |_| {
                if r.gen_bool(density) {
                    r.gen_range(-2.0..2.0)
                } else {
                    0.0
                }
            });
            let m = dense_to_csr(&d);
            prop_assert_eq!(m.to_dense(), d.clone());
            prop_assert_eq!(m.transpose().transpose(), m.clone());
            prop_assert_eq!(m.transpose().to_dense(), d.t().to_owned());
            let x = random_features(&mut r, cols, 3);
            let sparse = m.matmul(&x.view());
            let dense = d.dot(&x);
            for (a, b) in sparse.iter().zip(dense.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            prop_assert_eq!(m.matmul_sequential(&x.view()), sparse);
            Ok(())
        },
    )
}

pub fn graph_construction_invariants(cases: u32) -> Outcome {
    check(
        cases,
        &(any::<u64>(), 1usize..25, 0usize..80),
        |(seed, n, m)| {
            let mut r = rng(seed);
            let raw: Vec<(usize, usize)> = (0..m)
                .map(|_| (r.gen_range(0..n), r.gen_range(0..n)))
                .collect();
            let g = Graph::from_edges(&raw, n).unwrap();
            check_graph(&g);
            for &(u, v) in &raw {
                prop_assert_eq!(g.has_edge(u, v), u != v);
            }
            prop_assert_eq!(g.adjacency().to_dense(), g.dense_adjacency());
            Ok(())
        },
    )
}

pub fn normalized_adjacency_is_symmetric(cases: u32) -> Outcome {
    check(
        cases,
        &(any::<u64>(), 1usize..30, 0.0f64..0.6),
        |(seed, n, p)| {
            let mut r = rng(seed);
            let g = random_graph(&mut r, n, p);
            let a = g.normalized_adjacency();
            prop_assert!(a.is_symmetric());
            for (i, j, v) in a.entries() {
                let expected = 1.0 / (((g.degree(i) + 1) * (g.degree(j) + 1)) as f64).sqrt();
                prop_assert!((v - expected).abs() < 1e-15);
            }
            prop_assert_eq!(a.nnz(), n + 2 * g.n_edges());
            Ok(())
        },
    )
}

pub fn powered_features_compose(cases: u32) -> Outcome {
    check(
        cases,
        &(any::<u64>(), 2usize..20, 0usize..4, 0usize..4),
        |(seed, n, a, b)| {
            let mut r = rng(seed);
            let g = random_graph(&mut r, n, 0.3);
            let x = random_features(&mut r, n, 3);
            let direct = g.powered_features(&x.view(), a + b).unwrap();
            let inner = g.powered_features(&x.view(), b).unwrap();
            let composed = g.powered_features(&inner.view(), a).unwrap();
            for (u, v) in direct.iter().zip(composed.iter()) {
                prop_assert!((u - v).abs() <= 1e-10 * (1.0 + u.abs()));
            }
            Ok(())
        },
    )
}

pub fn homophily_is_permutation_invariant(cases: u32) -> Outcome {
    check(cases, &(any::<u64>(), 2usize..25), |(seed, n)| {
        let ds = random_dataset(seed, n.max(4), 2, 2);
        let mut r = rng(seed.wrapping_add(1));
        let mut perm: Vec<usize> = (0..ds.n_nodes()).collect();
        perm.shuffle(&mut r);
        let pd = permute_dataset(&ds, &perm);
        let a = ds.graph.homophily_ratio(&ds.labels);
        let b = pd.graph.homophily_ratio(&pd.labels);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-15),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "one side errored"),
        }
        Ok(())
    })
}

pub fn similarity_scale_invariance_and_range(cases: u32) -> Outcome {
    check(
        cases,
        &(any::<u64>(), 1usize..20, 0usize..4, 0.01f64..100.0),
        |(seed, n, tau, scale)| {
            let mut r = rng(seed);
            let g = random_graph(&mut r, n, 0.3);
            let mut x = random_features(&mut r, n, 4);
            if n > 2 {
                x.row_mut(0).fill(0.0);
            }
            let s = similarity_matrix(&g, &x.view(), tau).unwrap();
            let scaled = similarity_matrix(&g, &(&x * scale).view(), tau).unwrap();
            let f = g.powered_features(&x.view(), tau).unwrap();
            for i in 0..n {
                let nonzero = f.row(i).iter().any(|&v| v != 0.0);
                prop_assert_eq!(s.get(i, i), if nonzero { 1.0 } else { 0.0 });
                for j in 0..n {
                    let v = s.get(i, j);
                    prop_assert!((-1.0..=1.0).contains(&v));
                    prop_assert_eq!(v.to_bits(), s.get(j, i).to_bits());
                    prop_assert!((v - scaled.get(i, j)).abs() < 1e-12);
                }
            }
            if tau == 0 {
                // Per-row positive rescaling leaves ego similarity unchanged.
                let w: Vec<f64> = (0..n).map(|_| r.gen_range(0.1..10.0)).collect();
                let mut xr = x.clone();
                for (mut row, &c) in xr.axis_iter_mut(Axis(0)).zip(&w) {
                    row *= c;
                }
                let sr = similarity_matrix(&g, &xr.view(), 0).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        prop_assert!((s.get(i, j) - sr.get(i, j)).abs() < 1e-12);
                    }
                }
            }
            Ok(())
        },
    )
}

pub fn similarity_is_permutation_equivariant(cases: u32) -> Outcome {
    check(
        cases,
        &(any::<u64>(), 2usize..15, 0usize..3),
        |(seed, n, tau)| {
            let mut r = rng(seed);
            let g = random_graph(&mut r, n, 0.3);
            let x = random_features(&mut r, n, 3);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut r);
            let pg = Graph::from_edges(
                &g.edges()
                    .iter()
                    .map(|&(u, v)| (perm[u], perm[v]))
                    .collect::<Vec<_>>(),
                n,
            )
            .unwrap();
            let mut px = Array2::zeros(x.dim());
            for (i, &pi) in perm.iter().enumerate() {
                px.row_mut(pi).assign(&x.row(i));
            }
            let s = similarity_matrix(&g, &x.view(), tau).unwrap();
            let ps = similarity_matrix(&pg, &px.view(), tau).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((s.get(i, j) - ps.get(perm[i], perm[j])).abs() < 1e-12);
                }
            }
            Ok(())
        },
    )
}

pub fn knn_deterministic_and_ordered(cases: u32) -> Outcome {
    check(
        cases,
        &(any::<u64>(), 3usize..25, 1usize..6, 1usize..6, 0usize..3),
        |(seed, n, k1, k2, tau)| {
            let mut r = rng(seed);
            let g = random_graph(&mut r, n, 0.25);
            // Coarse features so that ties actually occur.
            let x = Array2::from_shape_fn((n, 2), |_| r.gen_range(-2i32..=2) as f64);
            let (k1, k2) = (k1.min(n - 1), k2.min(n - 1));
            let a = build_dual_knn_with(&g, &x.view(), k1, k2, &[tau]).unwrap();
            let b = build_dual_knn_with(&g, &x.view(), k1, k2, &[tau]).unwrap();
            let pa = &a.pairs[0];
            let pb = &b.pairs[0];
            prop_assert_eq!(&pa.pos_lists, &pb.pos_lists);
            prop_assert_eq!(&pa.neg_lists, &pb.neg_lists);
            prop_assert_eq!(&pa.pos, &pb.pos);
            prop_assert!(pa.pos.is_symmetric() && pa.neg.is_symmetric());

            let s = similarity_matrix(&g, &x.view(), tau).unwrap();
            prop_assert_eq!(
                &pa.pos_lists,
                &knn_select(&s, k1, KnnOrder::Descending).unwrap()
            );
            prop_assert_eq!(
                &pa.neg_lists,
                &knn_select(&s, k2, KnnOrder::Ascending).unwrap()
            );
            for i in 0..n {
                for (list, k, desc) in [(&pa.pos_lists[i], k1, true), (&pa.neg_lists[i], k2, false)]
                {
                    prop_assert_eq!(list.len(), k);
                    prop_assert!(!list.contains(&i));
                    // Ordered by score, ties by lower index, and nothing better left out.
                    let key = |j: usize| if desc { -s.get(i, j) } else { s.get(i, j) };
                    for w in list.windows(2) {
                        prop_assert!(
                            key(w[0]) < key(w[1]) || (key(w[0]) == key(w[1]) && w[0] < w[1])
                        );
                    }
                    let last = *list.last().unwrap();
                    for j in (0..n).filter(|&j| j != i && !list.contains(&j)) {
                        prop_assert!(key(j) > key(last) || (key(j) == key(last) && j > last));
                    }
                }
                // With distinct scores the two lists cannot share a node.
                let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| s.get(i, j)).collect();
                let mut sorted = row.clone();
                sorted.sort_by(f64::total_cmp);
                sorted.dedup();
                if sorted.len() == row.len() && k1 + k2 < n {
                    prop_assert!(pa.pos_lists[i].iter().all(|j| !pa.neg_lists[i].contains(j)));
                }
            }
            Ok(())
        },
    )
}

pub fn softmax_rows_are_distributions(cases: u32) -> Outcome {
    check(
        cases,
        &(any::<u64>(), 1usize..20, 2usize..8, 0.1f64..40.0),
        |(seed, n, c, spread)| {
            let mut r = rng(seed);
            let z = Array2::from_shape_fn((n, c), |_| r.gen_range(-spread..spread));
            let s = softmax_rows(&z.view());
            for row in s.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&p| p > 0.0 && p <= 1.0));
            }
            Ok(())
        },
    )
}

pub fn model_outputs_are_distributions(cases: u32) -> Outcome {
    check(cases, &(any::<u64>(), 0usize..4), |(seed, v)| {
        let inst = random_instance(seed, ALL_VARIANTS[v]);
        let (s, tape) = forward(&inst.params, &inst.inputs).unwrap();
        for row in s.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(tape.replay(), s);
        let flat = inst.params.to_flat();
        prop_assert_eq!(inst.params.with_flat(&flat).unwrap(), inst.params.clone());
        Ok(())
    })
}

pub fn kernel_is_psd(cases: u32) -> Outcome {
    check(
        cases,
        &(any::<u64>(), 1usize..16, 1usize..6, 0usize..4),
        |(seed, n, p, tau)| {
            let mut r = rng(seed);
            let g = random_graph(&mut r, n, 0.3);
            let x = random_features(&mut r, n, p);
            let k = attack_kernel(&g, &x.view(), tau).unwrap();
            let m = DMatrix::from_fn(n, n, |i, j| k[[i, j]]);
            prop_assert!(m.clone() == m.transpose());
            let scale = k.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
            let eig = SymmetricEigen::new(m).eigenvalues;
            prop_assert!(
                eig.iter().all(|&l| l >= -1e-10 * scale),
                "min eigenvalue {}",
                eig.min()
            );
            Ok(())
        },
    )
}

pub fn forward_is_permutation_equivariant(cases: u32) -> Outcome {
    check(cases, &(any::<u64>(), 0usize..4), |(seed, v)| {
        let variant = ALL_VARIANTS[v];
        let ds = random_dataset(seed, 14, 3, 3);
        let mut r = rng(seed.wrapping_mul(3));
        let mut perm: Vec<usize> = (0..ds.n_nodes()).collect();
        perm.shuffle(&mut r);
        let pd = permute_dataset(&ds, &perm);
        // The lower-index tie rule is not equivariant, so only tie-free inputs qualify.
        if variant.needs_dual() {
            prop_assume!(!has_ties(&ds, &[1, 2]));
        }
        let params = ModelParams::init(
            variant,
            &if variant == nspgnn_core::Variant::Sgc {
                vec![3, 3]
            } else {
                vec![3, 5, 3]
            },
            2,
            seed,
        )
        .unwrap();
        let run = |d: &Dataset| {
            let dual = variant
                .needs_dual()
                .then(|| build_dual_knn_with(&d.graph, &d.features.view(), 3, 2, &[1, 2]).unwrap());
            let inputs = ModelInputs::new(variant, d, dual.as_ref(), 2).unwrap();
            forward(&params, &inputs).unwrap().0
        };
        let s = run(&ds);
        let ps = run(&pd);
        for i in 0..ds.n_nodes() {
            for c in 0..3 {
                prop_assert!((s[[i, c]] - ps[[perm[i], c]]).abs() < 1e-12);
            }
        }
        Ok(())
    })
}

pub fn kl_is_non_negative_and_zero_on_self(cases: u32) -> Outcome {
    check(
        cases,
        &(any::<u64>(), 1usize..50, 1usize..50, 1usize..60),
        |(seed, n, m, bins)| {
            let mut r = rng(seed);
            let p: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..=1.0)).collect();
            let q: Vec<f64> = (0..m).map(|_| r.gen_range(-1.0..=1.0)).collect();
            prop_assert!(kl_divergence(&p, &q, bins, 1e-6).unwrap() >= 0.0);
            prop_assert_eq!(kl_divergence(&p, &p, bins, 1e-6).unwrap(), 0.0);
            Ok(())
        },
    )
}

pub fn gradient_attack_flip_count_is_exact(cases: u32) -> Outcome {
    check(
        cases,
        &(any::<u64>(), 8usize..20, 0.05f64..0.5, any::<bool>()),
        |(seed, n, delta, add_only)| {
            let ds = random_dataset(seed, n, 3, 2);
            prop_assume!(((delta * ds.graph.n_edges() as f64).floor() as usize) >= 1);
            let cfg = AttackConfig {
                budget_fraction: delta,
                mode: if add_only {
                    AttackMode::AddOnly
                } else {
                    AttackMode::Flip
                },
                surrogate_epochs: 20,
                seed,
                ..AttackConfig::default()
            };
            let rep = gradient_attack(&ds, &cfg).unwrap();
            let budget = (delta * ds.graph.n_edges() as f64).floor() as usize;
            prop_assert_eq!(rep.flips.len(), budget);
            let g = rep.poisoned.as_ref().unwrap();
            check_graph(g);
            let added = rep
                .flips
                .iter()
                .filter(|f| !ds.graph.has_edge(f.u, f.v))
                .count();
            prop_assert_eq!(g.n_edges(), ds.graph.n_edges() + added - (budget - added));
            for f in &rep.flips {
                prop_assert!(f.u < f.v);
                prop_assert_ne!(g.has_edge(f.u, f.v), ds.graph.has_edge(f.u, f.v));
                prop_assert_eq!(g.has_edge(f.v, f.u), g.has_edge(f.u, f.v));
                if add_only {
                    prop_assert!(!ds.graph.has_edge(f.u, f.v));
                }
            }
            let mut pairs = rep.flip_pairs();
            pairs.sort_unstable();
            pairs.dedup();
            prop_assert_eq!(pairs.len(), budget);
            Ok(())
        },
    )
}

pub type Invariant = (&'static str, fn(u32) -> Outcome);

/// Every invariant with its name, in a stable order.
pub const ALL: &[Invariant] = &[
    ("csr_round_trip", csr_round_trip),
    (
        "graph_construction_invariants",
        graph_construction_invariants,
    ),
    (
        "normalized_adjacency_is_symmetric",
        normalized_adjacency_is_symmetric,
    ),
    ("powered_features_compose", powered_features_compose),
    (
        "homophily_is_permutation_invariant",
        homophily_is_permutation_invariant,
    ),
    (
        "similarity_scale_invariance_and_range",
        similarity_scale_invariance_and_range,
    ),
    (
        "similarity_is_permutation_equivariant",
        similarity_is_permutation_equivariant,
    ),
    (
        "knn_deterministic_and_ordered",
        knn_deterministic_and_ordered,
    ),
    (
        "softmax_rows_are_distributions",
        softmax_rows_are_distributions,
    ),
    (
        "model_outputs_are_distributions",
        model_outputs_are_distributions,
    ),
    ("kernel_is_psd", kernel_is_psd),
    (
        "forward_is_permutation_equivariant",
        forward_is_permutation_equivariant,
    ),
    (
        "kl_is_non_negative_and_zero_on_self",
        kl_is_non_negative_and_zero_on_self,
    ),
    (
        "gradient_attack_flip_count_is_exact",
        gradient_attack_flip_count_is_exact,
    ),
];
