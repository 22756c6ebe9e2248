//! Undirected binary graphs in CSR form, symmetric normalization, raw
//! adjacency powers and the edge homophily ratio.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};

use crate::data::LabelVector;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Largest node count for which dense `N x N` intermediates are allowed.
pub const DEFAULT_DENSE_CAP: usize = 20_000;

pub(crate) fn check_dense_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        Err(Error::CapacityExceeded { n, cap })
    } else {
        Ok(())
    }
}

/// Immutable simple undirected graph.
///
/// `edges` holds every edge once as `(u, v)` with `u < v`, sorted. The CSR
/// arrays hold both directions with sorted column indices. Self-loops are
/// never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list.
    ///
    /// Pairs are symmetrized and deduplicated. Self-loops `(u, u)` are
    /// silently dropped. Any index `>= n_nodes` is an error.
    pub fn from_edges(edge_list: &[(usize, usize)], n_nodes: usize) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(u, v) in edge_list {
            for node in [u, v] {
                if node >= n_nodes {
                    return Err(Error::InvalidNode { node, n_nodes });
                }
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        Ok(Self::from_sorted_unique(set.into_iter().collect(), n_nodes))
    }

    /// `edges` must already be sorted, unique, in range and satisfy `u < v`.
    fn from_sorted_unique(edges: Vec<(usize, usize)>, n_nodes: usize) -> Self {
        let mut degree = vec![0usize; n_nodes];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut indptr = vec![0usize; n_nodes + 1];
        for i in 0..n_nodes {
            indptr[i + 1] = indptr[i] + degree[i];
        }
        let mut directed: Vec<(usize, usize)> =
            edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
        directed.sort_unstable();
        let indices = directed.into_iter().map(|(_, col)| col).collect();
        Self {
            n_nodes,
            edges,
            indptr,
            indices,
        }
    }

    pub fn empty(n_nodes: usize) -> Self {
        Self::from_sorted_unique(Vec::new(), n_nodes)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(u, v)` with `u < v`, lexicographically sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.indices[self.indptr[u]..self.indptr[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.indptr[u + 1] - self.indptr[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n_nodes && v < self.n_nodes && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Returns a new graph where each listed pair is toggled (added if
    /// absent, removed if present). Self-pairs are ignored.
    pub fn with_flips(&self, flips: &[(usize, usize)]) -> Result<Graph> {
        let mut set: BTreeSet<(usize, usize)> = self.edges.iter().copied().collect();
        for &(u, v) in flips {
            for node in [u, v] {
                if node >= self.n_nodes {
                    return Err(Error::InvalidNode {
                        node,
                        n_nodes: self.n_nodes,
                    });
                }
            }
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if !set.remove(&key) {
                set.insert(key);
            }
        }
        Ok(Self::from_sorted_unique(
            set.into_iter().collect(),
            self.n_nodes,
        ))
    }

    /// Keeps only the edges for which `keep` returns true.
    pub fn filter_edges(&self, mut keep: impl FnMut(usize, usize) -> bool) -> Graph {
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|&(u, v)| keep(u, v))
            .collect();
        Self::from_sorted_unique(edges, self.n_nodes)
    }

    /// Binary adjacency `A` as a CSR matrix.
    pub fn adjacency(&self) -> CsrMatrix {
        CsrMatrix::from_raw(
            self.n_nodes,
            self.n_nodes,
            self.indptr.clone(),
            self.indices.clone(),
            vec![1.0; self.indices.len()],
        )
    }

    pub fn dense_adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n_nodes, self.n_nodes));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` with degrees taken from `A + I`, so
    /// isolated nodes get a unit diagonal.
    pub fn normalized_adjacency(&self) -> CsrMatrix {
        let n = self.n_nodes;
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|u| 1.0 / ((self.degree(u) + 1) as f64).sqrt())
            .collect();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(self.indices.len() + n);
        let mut values = Vec::with_capacity(self.indices.len() + n);
        indptr.push(0);
        for u in 0..n {
            let nbrs = self.neighbors(u);
            let split = nbrs.partition_point(|&v| v < u);
            let cols = nbrs[..split]
                .iter()
                .copied()
                .chain(std::iter::once(u))
                .chain(nbrs[split..].iter().copied());
            for v in cols {
                indices.push(v);
                // The product is commutative in IEEE arithmetic, so mirrored
                // entries are bit-identical.
                values.push(inv_sqrt[u] * inv_sqrt[v]);
            }
            indptr.push(indices.len());
        }
        CsrMatrix::from_raw(n, n, indptr, indices, values)
    }

    /// `A^τ X` with the raw binary adjacency, computed by `τ` repeated
    /// sparse-dense products.
    pub fn powered_features(&self, x: &ArrayView2<f64>, tau: usize) -> Result<Array2<f64>> {
        if x.nrows() != self.n_nodes {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix has {} rows, graph has {} nodes",
                x.nrows(),
                self.n_nodes
            )));
        }
        let a = self.adjacency();
        let mut out = x.to_owned();
        for _ in 0..tau {
            out = a.matmul(&out.view());
        }
        Ok(out)
    }

    /// Fraction of edges whose endpoints share a label.
    pub fn homophily_ratio(&self, labels: &LabelVector) -> Result<f64> {
        if self.edges.is_empty() {
            return Err(Error::EmptyGraph);
        }
        if labels.len() != self.n_nodes {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n_nodes
            )));
        }
        let y = labels.as_slice();
        let same = self.edges.iter().filter(|&&(u, v)| y[u] == y[v]).count();
        Ok(same as f64 / self.edges.len() as f64)
    }
}

/// Symmetric normalization of an arbitrary graph, as a free function.
pub fn normalized_adjacency(g: &Graph) -> CsrMatrix {
    g.normalized_adjacency()
}
