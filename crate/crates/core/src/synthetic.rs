//! Contextual stochastic block model graphs with a controllable edge
//! homophily ratio and class-mean Gaussian features.

use std::collections::HashSet;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DataSplit, Dataset, FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    pub n_classes: usize,
    /// Target mean degree; the graph gets `round(n * d / 2)` edges.
    pub mean_degree: f64,
    /// Target fraction of intra-class edges.
    pub homophily: f64,
    pub n_features: usize,
    /// Length of the class-mean vectors.
    pub class_sep: f64,
    /// Standard deviation of the isotropic feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_nodes: 1000,
            n_classes: 2,
            mean_degree: 10.0,
            homophily: 0.2,
            n_features: 32,
            class_sep: 1.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.n_nodes < 2 * self.n_classes {
            return bad(format!(
                "{} nodes cannot hold {} classes of at least two nodes",
                self.n_nodes, self.n_classes
            ));
        }
        if !(1.0..self.n_nodes as f64).contains(&self.mean_degree) {
            return bad(format!(
                "mean degree {} must lie in [1, n_nodes)",
                self.mean_degree
            ));
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return bad(format!("homophily {} outside [0, 1]", self.homophily));
        }
        if self.class_sep.is_nan()
            || self.noise.is_nan()
            || self.class_sep < 0.0
            || self.noise < 0.0
        {
            return bad("class separation and noise must be non-negative".into());
        }
        if self.n_features == 0 {
            return bad("need at least one feature".into());
        }
        Ok(())
    }

    pub fn n_target_edges(&self) -> usize {
        (self.n_nodes as f64 * self.mean_degree / 2.0).round() as usize
    }
}

/// Class-mean directions: orthonormal columns when `p >= C`, otherwise
/// random unit vectors.
fn class_directions(rng: &mut ChaCha8Rng, p: usize, c: usize) -> Array2<f64> {
    let mut basis = Array2::<f64>::zeros((p, c));
    for k in 0..c {
        let mut v: Array1<f64> = Array1::from_shape_fn(p, |_| rng.sample(StandardNormal));
        if p >= c {
            for j in 0..k {
                let prev = basis.column(j).to_owned();
                let proj = v.dot(&prev);
                v.scaled_add(-proj, &prev);
            }
        }
        let norm = v.dot(&v).sqrt();
        basis.column_mut(k).assign(&(v / norm));
    }
    basis
}

/// Samples a dataset with the default stratified split drawn from the
/// same seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_nodes;
    let c = spec.n_classes;

    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);
    let mut members = vec![Vec::new(); c];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }

    let m = spec.n_target_edges();
    let intra_capacity: usize = members.iter().map(|v| v.len() * (v.len() - 1) / 2).sum();
    let total_capacity = n * (n - 1) / 2;
    let inter_capacity = total_capacity - intra_capacity;
    let needs_intra = spec.homophily >= 1.0;
    let needs_inter = spec.homophily <= 0.0;
    if m > total_capacity
        || (needs_intra && m > intra_capacity)
        || (needs_inter && m > inter_capacity)
        || m as f64 > 0.5 * total_capacity as f64
    {
        return Err(Error::InvalidSpec(format!(
            "{m} edges are too dense for {n} nodes at homophily {}",
            spec.homophily
        )));
    }

    let mut seen = HashSet::with_capacity(m);
    let mut edges = Vec::with_capacity(m);
    while edges.len() < m {
        let (u, v) = if rng.gen_bool(spec.homophily) {
            let class = &members[rng.gen_range(0..c)];
            let u = class[rng.gen_range(0..class.len())];
            let v = class[rng.gen_range(0..class.len())];
            (u, v)
        } else {
            let a = rng.gen_range(0..c);
            let b = (a + rng.gen_range(1..c)) % c;
            let u = members[a][rng.gen_range(0..members[a].len())];
            let v = members[b][rng.gen_range(0..members[b].len())];
            (u, v)
        };
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            edges.push(key);
        }
    }
    let graph = Graph::from_edges(&edges, n)?;

    let basis = class_directions(&mut rng, spec.n_features, c);
    let x = Array2::from_shape_fn((n, spec.n_features), |(i, j)| {
        spec.class_sep * basis[[j, labels[i]]] + spec.noise * rng.sample::<f64, _>(StandardNormal)
    });
    let labels = LabelVector::new(labels, c)?;
    let split = DataSplit::default_for(&labels, spec.seed);
    Dataset::new(graph, FeatureMatrix::new(x)?, labels, split)
}
