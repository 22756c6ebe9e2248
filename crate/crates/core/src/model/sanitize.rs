//! Similarity-based edge pruning used as an ablation of the gated layers.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::similarity::UnitRows;

/// How many low-similarity edges to drop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SanitizePolicy {
    /// Keep the `round(f * |E|)` highest-scored edges.
    KeepFraction(f64),
    /// Keep edges scoring at least this value.
    Threshold(f64),
}

/// Per-edge score: the minimum over `taus` of `Ω(A^τ X)[u, v]` on `g`.
pub fn edge_scores(g: &Graph, x: &ArrayView2<f64>, taus: &[usize]) -> Result<Vec<f64>> {
    if taus.is_empty() {
        return Err(Error::InvalidConfig("tau list is empty".into()));
    }
    let mut scores = vec![f64::INFINITY; g.n_edges()];
    for &tau in taus {
        let unit = UnitRows::powered(g, x, tau)?;
        for (s, &(u, v)) in scores.iter_mut().zip(g.edges()) {
            *s = s.min(unit.cosine(u, v));
        }
    }
    Ok(scores)
}

/// Removes the edges with the lowest neighbor similarity.
pub fn nsp_sanitize(
    g: &Graph,
    x: &ArrayView2<f64>,
    policy: SanitizePolicy,
    taus: &[usize],
) -> Result<Graph> {
    let scores = edge_scores(g, x, taus)?;
    let keep: Vec<bool> = match policy {
        SanitizePolicy::KeepFraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidConfig(format!(
                    "keep fraction {f} outside [0, 1]"
                )));
            }
            let n_keep = (f * g.n_edges() as f64).round() as usize;
            let mut order: Vec<usize> = (0..g.n_edges()).collect();
            // Highest score first; ties keep the lexicographically smaller edge.
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let mut keep = vec![false; g.n_edges()];
            for &e in &order[..n_keep] {
                keep[e] = true;
            }
            keep
        }
        SanitizePolicy::Threshold(t) => scores.iter().map(|&s| s >= t).collect(),
    };
    if g.n_edges() > 0 && !keep.iter().any(|&k| k) {
        return Err(Error::EmptyGraph);
    }
    let mut idx = 0;
    Ok(g.filter_edges(|_, _| {
        idx += 1;
        keep[idx - 1]
    }))
}
