//! Plain-text dataset formats, model checkpoints and score exports.
//!
//! * edges: TSV, one `u<TAB>v` pair per line, 0-indexed, `#` comments
//! * features: CSV, one row of reals per node, no header
//! * labels: one integer per line
//! * splits: JSON `{"train": [...], "val": [...], "test": [...]}`
//! * checkpoints: one JSON header line, then the flat parameter vector as
//!   little-endian `f64`

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{DataSplit, Dataset, FeatureMatrix, LabelVector, SplitIds};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::knn::DualKnnGraphs;
use crate::model::{ModelParams, Variant};
use crate::similarity::LinkScoreSets;

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push((i + 1, t.to_string()));
    }
    Ok(out)
}

pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    data_lines(path)?
        .into_iter()
        .map(|(ln, line)| {
            let mut parts = line.split_whitespace();
            let mut next = || -> Result<usize> {
                parts
                    .next()
                    .ok_or_else(|| parse_err(path, ln, "expected two node ids"))?
                    .parse()
                    .map_err(|e| parse_err(path, ln, format!("bad node id: {e}")))
            };
            Ok((next()?, next()?))
        })
        .collect()
}

pub fn write_edge_list(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    let mut w = create(path)?;
    let res: std::io::Result<()> = (|| {
        for &(u, v) in edges {
            writeln!(w, "{u}\t{v}")?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let lines = data_lines(path)?;
    let mut width = None;
    let mut values = Vec::new();
    for (ln, line) in &lines {
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(path, *ln, format!("bad number {s:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(
                    path,
                    *ln,
                    format!("expected {w} columns, found {}", row.len()),
                ))
            }
            _ => {}
        }
        values.extend(row);
    }
    let p = width.unwrap_or(0);
    let x = Array2::from_shape_vec((lines.len(), p), values)
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    FeatureMatrix::new(x)
}

pub fn write_features(path: &Path, x: &Array2<f64>) -> Result<()> {
    let mut w = create(path)?;
    let res: std::io::Result<()> = (|| {
        for row in x.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    data_lines(path)?
        .into_iter()
        .map(|(ln, line)| {
            line.trim_end_matches(',')
                .trim()
                .parse()
                .map_err(|e| parse_err(path, ln, format!("bad label: {e}")))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = create(path)?;
    let res: std::io::Result<()> = (|| {
        for y in labels {
            writeln!(w, "{y}")?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<SplitIds> {
    Ok(serde_json::from_reader(open(path)?)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// File locations of an on-disk dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
}

/// Loads and validates a dataset. Without a split file the default seeded
/// stratified split is used.
pub fn load_dataset(paths: &DatasetPaths, split_seed: u64) -> Result<Dataset> {
    let features = read_features(&paths.features)?;
    let n = features.n_rows();
    let labels = read_labels(&paths.labels)?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} has {} labels but {} has {n} feature rows",
            paths.labels.display(),
            labels.len(),
            paths.features.display()
        )));
    }
    let labels = LabelVector::from_labels(labels)?;
    let edges = read_edge_list(&paths.edges)?;
    let graph = Graph::from_edges(&edges, n)?;
    let split = match &paths.split {
        Some(p) => DataSplit::from_ids(&read_split(p)?, &labels)?,
        None => DataSplit::default_for(&labels, split_seed),
    };
    Dataset::new(graph, features, labels, split)
}

/// Writes `edges.tsv`, `features.csv`, `labels.csv` and `split.json` into `dir`.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<DatasetPaths> {
    let paths = DatasetPaths {
        edges: dir.join("edges.tsv"),
        features: dir.join("features.csv"),
        labels: dir.join("labels.csv"),
        split: Some(dir.join("split.json")),
    };
    write_edge_list(&paths.edges, ds.graph.edges())?;
    write_features(&paths.features, &ds.features)?;
    write_labels(&paths.labels, ds.labels.as_slice())?;
    write_json(paths.split.as_ref().expect("set above"), &ds.split.to_ids())?;
    Ok(paths)
}

/// Header line of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub variant: Variant,
    pub dims: Vec<usize>,
    pub n_taus: usize,
    pub seed: u64,
    pub n_params: usize,
    /// Free-form settings needed to rebuild inputs (k1, k2, taus, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn write_checkpoint(
    path: &Path,
    params: &ModelParams,
    seed: u64,
    extra: serde_json::Value,
) -> Result<()> {
    let header = CheckpointHeader {
        variant: params.variant,
        dims: params.dims.clone(),
        n_taus: params.n_taus,
        seed,
        n_params: params.n_params(),
        extra,
    };
    let mut w = create(path)?;
    let mut line = serde_json::to_vec(&header)?;
    line.push(b'\n');
    let res: std::io::Result<()> = (|| {
        w.write_all(&line)?;
        for v in params.to_flat() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelParams)> {
    let mut r = open(path)?;
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_slice(&line)?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob).map_err(|e| Error::io(path, e))?;
    if blob.len() != header.n_params * 8 {
        return Err(Error::InvalidData(format!(
            "{}: expected {} parameter bytes, found {}",
            path.display(),
            header.n_params * 8,
            blob.len()
        )));
    }
    let flat: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut params = ModelParams::init(header.variant, &header.dims, header.n_taus.max(1), 0)?;
    params.set_flat(&flat)?;
    Ok((header, params))
}

/// One row of a density export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub score: f64,
    pub label: LinkLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkLabel {
    Benign,
    Malicious,
    Removed,
}

impl LinkLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkLabel::Benign => "benign",
            LinkLabel::Malicious => "malicious",
            LinkLabel::Removed => "removed",
        }
    }
}

/// Writes `scores_tau{τ}.csv` (`score,label`) for every score set.
pub fn emit_density(sets: &[LinkScoreSets], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(sets.len());
    for s in sets {
        if s.benign.is_empty() && s.malicious.is_empty() && s.removed.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        let path = dir.join(format!("scores_tau{}.csv", s.tau));
        let mut w = create(&path)?;
        let res: std::io::Result<()> = (|| {
            writeln!(w, "score,label")?;
            for (scores, label) in [
                (&s.benign, LinkLabel::Benign),
                (&s.malicious, LinkLabel::Malicious),
                (&s.removed, LinkLabel::Removed),
            ] {
                for v in scores {
                    writeln!(w, "{v:.16e},{}", label.as_str())?;
                }
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_density(path: &Path) -> Result<Vec<ScoreRow>> {
    let lines = data_lines(path)?;
    lines
        .into_iter()
        .filter(|(_, l)| l != "score,label")
        .map(|(ln, line)| {
            let (score, label) = line
                .split_once(',')
                .ok_or_else(|| parse_err(path, ln, "expected score,label"))?;
            let score = score
                .parse()
                .map_err(|e| parse_err(path, ln, format!("bad score: {e}")))?;
            let label = match label {
                "benign" => LinkLabel::Benign,
                "malicious" => LinkLabel::Malicious,
                "removed" => LinkLabel::Removed,
                other => return Err(parse_err(path, ln, format!("unknown label {other:?}"))),
            };
            Ok(ScoreRow { score, label })
        })
        .collect()
}

/// Writes every symmetrized kNN graph as `knn_{pos,neg}_tau{τ}.tsv`.
pub fn export_knn(dual: &DualKnnGraphs, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for pair in &dual.pairs {
        for (kind, g) in [("pos", &pair.pos_graph), ("neg", &pair.neg_graph)] {
            let path = dir.join(format!("knn_{kind}_tau{}.tsv", pair.tau));
            write_edge_list(&path, g.edges())?;
            out.push(path);
        }
    }
    Ok(out)
}
