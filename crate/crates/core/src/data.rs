//! Node features, labels, split masks and the bundled dataset.

use std::ops::Deref;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Dense `N x p` node feature matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite feature at flat index {pos}"
            )));
        }
        Ok(Self(data))
    }

    pub fn n_rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

impl Deref for FeatureMatrix {
    type Target = Array2<f64>;

    fn deref(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Integer class labels in `[0, n_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(Error::InvalidData(format!(
                "label {y} of node {i} outside [0, {n_classes})"
            )));
        }
        Ok(Self { labels, n_classes })
    }

    /// Infers the class count as `max + 1`, with a floor of two classes.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let c = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
        Self::new(labels, c)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    /// One-hot `N x C` view.
    pub fn one_hot(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.labels.len(), self.n_classes));
        for (i, &c) in self.labels.iter().enumerate() {
            y[[i, c]] = 1.0;
        }
        y
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Node id lists for the three disjoint partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Disjoint train/validation/test masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl DataSplit {
    /// Validates disjointness, a non-empty train mask and that every class
    /// appears in the train mask.
    pub fn from_ids(ids: &SplitIds, labels: &LabelVector) -> Result<Self> {
        let n = labels.len();
        let mut owner = vec![0u8; n];
        let mut masks = [vec![false; n], vec![false; n], vec![false; n]];
        for (k, list) in [&ids.train, &ids.val, &ids.test].into_iter().enumerate() {
            for &i in list {
                if i >= n {
                    return Err(Error::InvalidNode {
                        node: i,
                        n_nodes: n,
                    });
                }
                if owner[i] != 0 {
                    return Err(Error::InvalidData(format!(
                        "node {i} appears in more than one split"
                    )));
                }
                owner[i] = k as u8 + 1;
                masks[k][i] = true;
            }
        }
        let [train, val, test] = masks;
        let split = Self { train, val, test };
        split.validate(labels)?;
        Ok(split)
    }

    fn validate(&self, labels: &LabelVector) -> Result<()> {
        if !self.train.iter().any(|&b| b) {
            return Err(Error::InvalidData("train split is empty".into()));
        }
        let mut seen = vec![false; labels.n_classes()];
        for (i, &y) in labels.as_slice().iter().enumerate() {
            if self.train[i] {
                seen[y] = true;
            }
        }
        if let Some(c) = seen.iter().position(|&s| !s) {
            // Classes with no nodes at all cannot be represented anyway.
            if labels.class_counts()[c] > 0 {
                return Err(Error::InvalidData(format!(
                    "class {c} has no training node"
                )));
            }
        }
        Ok(())
    }

    /// Seeded stratified split: per class, `max(1, round(train_frac * n_c))`
    /// training nodes, `round(val_frac * n_c)` validation nodes, rest test.
    pub fn stratified(labels: &LabelVector, train_frac: f64, val_frac: f64, seed: u64) -> Self {
        let n = labels.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut split = Self {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        };
        for c in 0..labels.n_classes() {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels.as_slice()[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            members.shuffle(&mut rng);
            let m = members.len() as f64;
            let n_train = ((train_frac * m).round() as usize).clamp(1, members.len());
            let n_val = ((val_frac * m).round() as usize).min(members.len() - n_train);
            for (rank, &i) in members.iter().enumerate() {
                if rank < n_train {
                    split.train[i] = true;
                } else if rank < n_train + n_val {
                    split.val[i] = true;
                } else {
                    split.test[i] = true;
                }
            }
        }
        split
    }

    /// Default 10% / 10% / 80% stratified split.
    pub fn default_for(labels: &LabelVector, seed: u64) -> Self {
        Self::stratified(labels, 0.1, 0.1, seed)
    }

    pub fn to_ids(&self) -> SplitIds {
        let ids = |m: &[bool]| {
            m.iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| i)
                .collect()
        };
        SplitIds {
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }
}

/// Graph, features, labels and split for one node-classification problem.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    pub split: DataSplit,
}

/// Summary statistics in the shape of a dataset table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_classes: usize,
    pub n_features: usize,
    pub homophily: Option<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Dataset {
    pub fn new(
        graph: Graph,
        features: FeatureMatrix,
        labels: LabelVector,
        split: DataSplit,
    ) -> Result<Self> {
        let n = graph.n_nodes();
        if features.n_rows() != n {
            return Err(Error::ShapeMismatch(format!(
                "features have {} rows, graph has {n} nodes",
                features.n_rows()
            )));
        }
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if split.len() != n || split.val.len() != n || split.test.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "split masks have {} entries for {n} nodes",
                split.len()
            )));
        }
        if (0..n).any(|i| (split.train[i] as u8 + split.val[i] as u8 + split.test[i] as u8) > 1) {
            return Err(Error::InvalidData("split masks overlap".into()));
        }
        split.validate(&labels)?;
        Ok(Self {
            graph,
            features,
            labels,
            split,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.n_classes()
    }

    /// Same data over a different graph (e.g. a poisoned one).
    pub fn with_graph(&self, graph: Graph) -> Result<Self> {
        Self::new(
            graph,
            self.features.clone(),
            self.labels.clone(),
            self.split.clone(),
        )
    }

    /// Same data with a different split.
    pub fn with_split(&self, split: DataSplit) -> Result<Self> {
        Self::new(
            self.graph.clone(),
            self.features.clone(),
            self.labels.clone(),
            split,
        )
    }

    pub fn stats(&self) -> DatasetStats {
        let count = |m: &[bool]| m.iter().filter(|&&b| b).count();
        DatasetStats {
            n_nodes: self.n_nodes(),
            n_edges: self.graph.n_edges(),
            n_classes: self.n_classes(),
            n_features: self.features.n_features(),
            homophily: self.graph.homophily_ratio(&self.labels).ok(),
            n_train: count(&self.split.train),
            n_val: count(&self.split.val),
            n_test: count(&self.split.test),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_out_of_range() {
        assert!(LabelVector::new(vec![0, 2], 2).is_err());
        assert!(LabelVector::new(vec![0, 0], 1).is_err());
    }

    #[test]
    fn stratified_split_covers_every_class() {
        let labels = LabelVector::new((0..50).map(|i| i % 3).collect(), 3).unwrap();
        let split = DataSplit::default_for(&labels, 7);
        let ids = split.to_ids();
        assert_eq!(ids.train.len() + ids.val.len() + ids.test.len(), 50);
        let again = DataSplit::from_ids(&ids, &labels).unwrap();
        assert_eq!(again, split);
        for c in 0..3 {
            assert!(ids.train.iter().any(|&i| labels.as_slice()[i] == c));
        }
    }

    #[test]
    fn overlapping_ids_rejected() {
        let labels = LabelVector::new(vec![0, 1, 0], 2).unwrap();
        let ids = SplitIds {
            train: vec![0, 1],
            val: vec![1],
            test: vec![2],
        };
        assert!(DataSplit::from_ids(&ids, &labels).is_err());
    }

    #[test]
    fn non_finite_features_rejected() {
        let x = ndarray::array![[1.0, f64::NAN]];
        assert!(FeatureMatrix::new(x).is_err());
    }
}
