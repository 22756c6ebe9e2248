//! Cosine similarity of powered neighbor features, benign/malicious link
//! scores and the histogram KL divergence between their distributions.

use ndarray::parallel::prelude::*;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_dense_cap, Graph, DEFAULT_DENSE_CAP};

/// Histogram bins used by the separation analysis.
pub const DEFAULT_KL_BINS: usize = 50;
/// Additive smoothing mass per bin.
pub const DEFAULT_KL_EPSILON: f64 = 1e-6;

/// Rows scaled to unit length. Zero rows stay zero.
#[derive(Debug, Clone)]
pub struct UnitRows {
    rows: Array2<f64>,
    nonzero: Vec<bool>,
}

impl UnitRows {
    pub fn new(m: &ArrayView2<f64>) -> Self {
        let mut rows = m.to_owned();
        let mut nonzero = vec![false; m.nrows()];
        for (i, mut row) in rows.axis_iter_mut(Axis(0)).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                row.mapv_inplace(|v| v / norm);
                nonzero[i] = true;
            } else {
                row.fill(0.0);
            }
        }
        Self { rows, nonzero }
    }

    /// Powered features `A^τ X` of `g`, normalized.
    pub fn powered(g: &Graph, x: &ArrayView2<f64>, tau: usize) -> Result<Self> {
        Ok(Self::new(&g.powered_features(x, tau)?.view()))
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    /// Cosine similarity of rows `i` and `j`. Zero rows score 0 against
    /// everything, including themselves; nonzero rows score exactly 1 with
    /// themselves. The value is symmetric bit-for-bit.
    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        if !self.nonzero[i] || !self.nonzero[j] {
            return 0.0;
        }
        if i == j {
            return 1.0;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let ra = self.rows.row(a);
        let rb = self.rows.row(b);
        let dot: f64 = ra.iter().zip(rb.iter()).map(|(x, y)| x * y).sum();
        // +0.0 normalizes a negative zero so ties compare equal.
        dot.clamp(-1.0, 1.0) + 0.0
    }

    /// Similarities of row `i` to every row.
    pub fn row_scores(&self, i: usize) -> Vec<f64> {
        (0..self.len()).map(|j| self.cosine(i, j)).collect()
    }
}

/// Dense symmetric matrix of cosine similarities of `A^τ X` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    pub tau: usize,
}

impl SimilarityMatrix {
    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }
}

/// `Ω(A^τ X)` with the default dense cap.
pub fn similarity_matrix(g: &Graph, x: &ArrayView2<f64>, tau: usize) -> Result<SimilarityMatrix> {
    similarity_matrix_capped(g, x, tau, DEFAULT_DENSE_CAP)
}

pub fn similarity_matrix_capped(
    g: &Graph,
    x: &ArrayView2<f64>,
    tau: usize,
    cap: usize,
) -> Result<SimilarityMatrix> {
    check_dense_cap(g.n_nodes(), cap)?;
    let unit = UnitRows::powered(g, x, tau)?;
    let n = unit.len();
    let mut values = Array2::zeros((n, n));
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for j in 0..n {
                row[j] = unit.cosine(i, j);
            }
        });
    Ok(SimilarityMatrix { values, tau })
}

/// Similarity scores of benign, injected and deleted links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkScoreSets {
    pub tau: usize,
    /// Edges present in both graphs.
    pub benign: Vec<f64>,
    /// Edges present only in the poisoned graph.
    pub malicious: Vec<f64>,
    /// Edges present only in the clean graph.
    pub removed: Vec<f64>,
    pub malicious_edges: Vec<(usize, usize)>,
    pub removed_edges: Vec<(usize, usize)>,
}

/// Splits the edges of `poisoned` into benign and malicious relative to
/// `clean` and reads their scores from `sim`.
pub fn link_scores(
    clean: &Graph,
    poisoned: &Graph,
    sim: &SimilarityMatrix,
) -> Result<LinkScoreSets> {
    if clean.n_nodes() != poisoned.n_nodes() || sim.n_nodes() != clean.n_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "clean graph has {} nodes, poisoned {}, similarity {}",
            clean.n_nodes(),
            poisoned.n_nodes(),
            sim.n_nodes()
        )));
    }
    Ok(score_links(clean, poisoned, sim.tau, |u, v| sim.get(u, v)))
}

/// Same as [`link_scores`] without materializing the dense matrix.
pub fn link_scores_sparse(
    clean: &Graph,
    poisoned: &Graph,
    x: &ArrayView2<f64>,
    tau: usize,
) -> Result<LinkScoreSets> {
    if clean.n_nodes() != poisoned.n_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "clean graph has {} nodes, poisoned {}",
            clean.n_nodes(),
            poisoned.n_nodes()
        )));
    }
    let unit = UnitRows::powered(poisoned, x, tau)?;
    Ok(score_links(clean, poisoned, tau, |u, v| unit.cosine(u, v)))
}

fn score_links(
    clean: &Graph,
    poisoned: &Graph,
    tau: usize,
    score: impl Fn(usize, usize) -> f64,
) -> LinkScoreSets {
    let mut out = LinkScoreSets {
        tau,
        benign: Vec::new(),
        malicious: Vec::new(),
        removed: Vec::new(),
        malicious_edges: Vec::new(),
        removed_edges: Vec::new(),
    };
    for &(u, v) in poisoned.edges() {
        if clean.has_edge(u, v) {
            out.benign.push(score(u, v));
        } else {
            out.malicious.push(score(u, v));
            out.malicious_edges.push((u, v));
        }
    }
    for &(u, v) in clean.edges() {
        if !poisoned.has_edge(u, v) {
            out.removed.push(score(u, v));
            out.removed_edges.push((u, v));
        }
    }
    out
}

fn histogram(samples: &[f64], n_bins: usize, eps: f64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mut counts = vec![0usize; n_bins];
    for &s in samples {
        if !(-1.0..=1.0).contains(&s) {
            return Err(Error::InvalidData(format!("score {s} outside [-1, 1]")));
        }
        let bin = (((s + 1.0) / 2.0) * n_bins as f64).floor() as usize;
        counts[bin.min(n_bins - 1)] += 1;
    }
    let n = samples.len() as f64;
    let total = 1.0 + n_bins as f64 * eps;
    Ok(counts
        .iter()
        .map(|&c| (c as f64 / n + eps) / total)
        .collect())
}

/// `KL(p || q)` between smoothed histograms of the two sample sets on a
/// shared uniform binning of `[-1, 1]`.
pub fn kl_divergence(p_samples: &[f64], q_samples: &[f64], n_bins: usize, eps: f64) -> Result<f64> {
    if n_bins == 0 || eps <= 0.0 {
        return Err(Error::InvalidConfig(
            "KL needs at least one bin and positive smoothing".into(),
        ));
    }
    let p = histogram(p_samples, n_bins, eps)?;
    let q = histogram(q_samples, n_bins, eps)?;
    let kl: f64 = p.iter().zip(&q).map(|(&pi, &qi)| pi * (pi / qi).ln()).sum();
    Ok(kl.max(0.0))
}

/// One row of the separation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub tau: usize,
    /// `KL(malicious || benign)`; `None` when either set is empty.
    pub kl: Option<f64>,
    pub error: Option<String>,
    pub n_benign: usize,
    pub n_malicious: usize,
    pub mean_benign: Option<f64>,
    pub mean_malicious: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub rows: Vec<SeparationRow>,
    #[serde(skip)]
    pub scores: Vec<LinkScoreSets>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// KL between malicious and benign score distributions for every `τ`.
pub fn separation_report(
    clean: &Graph,
    poisoned: &Graph,
    x: &ArrayView2<f64>,
    taus: &[usize],
) -> Result<SeparationReport> {
    separation_report_with(
        clean,
        poisoned,
        x,
        taus,
        DEFAULT_KL_BINS,
        DEFAULT_KL_EPSILON,
    )
}

pub fn separation_report_with(
    clean: &Graph,
    poisoned: &Graph,
    x: &ArrayView2<f64>,
    taus: &[usize],
    n_bins: usize,
    eps: f64,
) -> Result<SeparationReport> {
    if taus.is_empty() {
        return Err(Error::InvalidConfig("tau list is empty".into()));
    }
    let mut rows = Vec::with_capacity(taus.len());
    let mut scores = Vec::with_capacity(taus.len());
    for &tau in taus {
        let sets = link_scores_sparse(clean, poisoned, x, tau)?;
        let (kl, error) = match kl_divergence(&sets.malicious, &sets.benign, n_bins, eps) {
            Ok(v) => (Some(v), None),
            Err(Error::EmptyDistribution) => {
                let which = if sets.malicious.is_empty() {
                    "no malicious links"
                } else {
                    "no benign links"
                };
                (None, Some(which.to_string()))
            }
            Err(e) => return Err(e),
        };
        rows.push(SeparationRow {
            tau,
            kl,
            error,
            n_benign: sets.benign.len(),
            n_malicious: sets.malicious.len(),
            mean_benign: mean(&sets.benign),
            mean_malicious: mean(&sets.malicious),
        });
        scores.push(sets);
    }
    Ok(SeparationReport { rows, scores })
}
