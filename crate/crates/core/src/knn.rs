//! Positive and negative kNN graphs over neighbor-feature similarity.
//!
//! For each power `τ`, every node is linked to the `k1` nodes whose `A^τ X`
//! rows are most cosine-similar to its own (positive graph) and to the `k2`
//! least similar ones (negative graph). Directed selections are symmetrized
//! by union, self-loops are added and the result is symmetrically
//! normalized.

use std::cmp::Ordering;

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::similarity::{SimilarityMatrix, UnitRows};
use crate::sparse::CsrMatrix;

/// Powers used by default for the dual graphs.
pub const DEFAULT_TAUS: [usize; 2] = [1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnOrder {
    /// Most similar first.
    Descending,
    /// Least similar first.
    Ascending,
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k + 1 > n {
        Err(Error::InvalidK { k, n_nodes: n })
    } else {
        Ok(())
    }
}

/// Picks `k` indices other than `node` from `scores`. Ties go to the lower
/// node index.
fn select_from_scores(scores: &[f64], node: usize, k: usize, order: KnnOrder) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| -> Ordering {
        let by_score = match order {
            KnnOrder::Descending => scores[*b].total_cmp(&scores[*a]),
            KnnOrder::Ascending => scores[*a].total_cmp(&scores[*b]),
        };
        by_score.then(a.cmp(b))
    };
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|&v| v != node).collect();
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(cmp);
    candidates
}

/// Per-node neighbor lists from a dense similarity matrix.
pub fn knn_select(sim: &SimilarityMatrix, k: usize, order: KnnOrder) -> Result<Vec<Vec<usize>>> {
    let n = sim.n_nodes();
    check_k(k, n)?;
    Ok((0..n)
        .into_par_iter()
        .map(|u| {
            let row = sim.values.row(u);
            select_from_scores(row.as_slice().expect("standard layout"), u, k, order)
        })
        .collect())
}

/// Positive and negative directed lists computed row by row from unit rows,
/// without an `N x N` buffer.
fn knn_select_both(
    unit: &UnitRows,
    k_pos: usize,
    k_neg: usize,
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    (0..unit.len())
        .into_par_iter()
        .map(|u| {
            let scores = unit.row_scores(u);
            (
                select_from_scores(&scores, u, k_pos, KnnOrder::Descending),
                select_from_scores(&scores, u, k_neg, KnnOrder::Ascending),
            )
        })
        .unzip()
}

fn symmetrize(lists: &[Vec<usize>]) -> Graph {
    let edges: Vec<(usize, usize)> = lists
        .iter()
        .enumerate()
        .flat_map(|(u, vs)| vs.iter().map(move |&v| (u, v)))
        .collect();
    Graph::from_edges(&edges, lists.len()).expect("kNN indices are in range")
}

/// kNN structures for one power `τ`.
#[derive(Debug, Clone)]
pub struct KnnPair {
    pub tau: usize,
    pub pos_lists: Vec<Vec<usize>>,
    pub neg_lists: Vec<Vec<usize>>,
    /// Symmetrized positive kNN graph (no self-loops).
    pub pos_graph: Graph,
    pub neg_graph: Graph,
    /// Normalized `D^{-1/2} (A_knn + I) D^{-1/2}` propagation matrices.
    pub pos: CsrMatrix,
    pub neg: CsrMatrix,
}

/// The four (or more, one pair per `τ`) propagation matrices consumed by
/// the gated layers.
#[derive(Debug, Clone)]
pub struct DualKnnGraphs {
    pub k_pos: usize,
    pub k_neg: usize,
    pub pairs: Vec<KnnPair>,
}

impl DualKnnGraphs {
    pub fn taus(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.tau).collect()
    }

    pub fn n_taus(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.pos.n_rows())
    }

    pub fn pos(&self, t: usize) -> &CsrMatrix {
        &self.pairs[t].pos
    }

    pub fn neg(&self, t: usize) -> &CsrMatrix {
        &self.pairs[t].neg
    }

    /// Builds dual graphs directly from given propagation matrices. Used to
    /// feed hand-made operators into the layers.
    pub fn from_matrices(pos: Vec<CsrMatrix>, neg: Vec<CsrMatrix>, taus: Vec<usize>) -> Self {
        assert_eq!(pos.len(), neg.len());
        assert_eq!(pos.len(), taus.len());
        let pairs = pos
            .into_iter()
            .zip(neg)
            .zip(taus)
            .map(|((pos, neg), tau)| {
                let n = pos.n_rows();
                KnnPair {
                    tau,
                    pos_lists: vec![Vec::new(); n],
                    neg_lists: vec![Vec::new(); n],
                    pos_graph: Graph::empty(n),
                    neg_graph: Graph::empty(n),
                    pos,
                    neg,
                }
            })
            .collect();
        Self {
            k_pos: 0,
            k_neg: 0,
            pairs,
        }
    }
}

/// Dual kNN graphs for the default powers `{1, 2}`.
pub fn build_dual_knn(
    g: &Graph,
    x: &ArrayView2<f64>,
    k1: usize,
    k2: usize,
) -> Result<DualKnnGraphs> {
    build_dual_knn_with(g, x, k1, k2, &DEFAULT_TAUS)
}

pub fn build_dual_knn_with(
    g: &Graph,
    x: &ArrayView2<f64>,
    k1: usize,
    k2: usize,
    taus: &[usize],
) -> Result<DualKnnGraphs> {
    let n = g.n_nodes();
    check_k(k1, n)?;
    check_k(k2, n)?;
    if taus.is_empty() {
        return Err(Error::InvalidConfig("tau list is empty".into()));
    }
    let mut pairs = Vec::with_capacity(taus.len());
    for &tau in taus {
        let unit = UnitRows::powered(g, x, tau)?;
        let (pos_lists, neg_lists) = knn_select_both(&unit, k1, k2);
        let pos_graph = symmetrize(&pos_lists);
        let neg_graph = symmetrize(&neg_lists);
        pairs.push(KnnPair {
            tau,
            pos: pos_graph.normalized_adjacency(),
            neg: neg_graph.normalized_adjacency(),
            pos_lists,
            neg_lists,
            pos_graph,
            neg_graph,
        });
    }
    Ok(DualKnnGraphs {
        k_pos: k1,
        k_neg: k2,
        pairs,
    })
}
