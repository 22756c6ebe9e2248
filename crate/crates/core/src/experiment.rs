//! Experiment orchestration: dataset → optional attack → dual kNN → train →
//! evaluate, repeated over seeds, attack powers and model variants.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig, AttackMode, CorrelationStats};
use crate::data::{DataSplit, Dataset, DatasetStats};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::io::{self, DatasetPaths};
use crate::knn::{build_dual_knn_with, DualKnnGraphs, DEFAULT_TAUS};
use crate::model::{nsp_sanitize, SanitizePolicy, Variant};
use crate::similarity::{separation_report, SeparationRow};
use crate::stats;
use crate::synthetic::{generate_synthetic, SyntheticSpec};
use crate::train::{train, TrainConfig};

pub const VERSION: &str = concat!("nspgnn ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Files(DatasetPaths),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    None,
    Gradient,
    BruteForce,
    Random,
    /// A poisoned edge list supplied on disk.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub method: AttackMethod,
    /// Attack powers `δ`; `0` runs the clean graph.
    pub budgets: Vec<f64>,
    pub mode: AttackMode,
    pub surrogate_tau: usize,
    pub surrogate_epochs: usize,
    pub surrogate_lr: f64,
    pub candidate_cap: Option<usize>,
    /// Poisoned edge list for the `external` method.
    pub poisoned_edges: Option<PathBuf>,
}

impl Default for AttackSpec {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            method: AttackMethod::None,
            budgets: vec![0.0],
            mode: a.mode,
            surrogate_tau: a.surrogate_tau,
            surrogate_epochs: a.surrogate_epochs,
            surrogate_lr: a.surrogate_lr,
            candidate_cap: a.candidate_cap,
            poisoned_edges: None,
        }
    }
}

impl AttackSpec {
    fn config(&self, budget: f64, seed: u64) -> AttackConfig {
        AttackConfig {
            budget_fraction: budget,
            mode: self.mode,
            surrogate_tau: self.surrogate_tau,
            candidate_cap: self.candidate_cap,
            surrogate_epochs: self.surrogate_epochs,
            surrogate_lr: self.surrogate_lr,
            seed,
        }
    }

    /// Attack powers actually run; `none` and `external` have exactly one,
    /// the latter being the measured flip fraction of the supplied graph.
    fn powers(&self, external_fraction: Option<f64>) -> Vec<f64> {
        match self.method {
            AttackMethod::None => vec![0.0],
            AttackMethod::External => vec![external_fraction.unwrap_or(0.0)],
            _ => self.budgets.clone(),
        }
    }
}

/// Variants an experiment can train. `nsp_sanitize` prunes low-similarity
/// edges and trains a GCN on the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentVariant {
    Nspgnn,
    NspgnnWo,
    Gcn,
    Sgc,
    NspSanitize,
}

impl ExperimentVariant {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentVariant::Nspgnn => "nspgnn",
            ExperimentVariant::NspgnnWo => "nspgnn_wo",
            ExperimentVariant::Gcn => "gcn",
            ExperimentVariant::Sgc => "sgc",
            ExperimentVariant::NspSanitize => "nsp_sanitize",
        }
    }

    fn model(self) -> Variant {
        match self {
            ExperimentVariant::Nspgnn => Variant::Nspgnn,
            ExperimentVariant::NspgnnWo => Variant::NspgnnWo,
            ExperimentVariant::Gcn | ExperimentVariant::NspSanitize => Variant::Gcn,
            ExperimentVariant::Sgc => Variant::Sgc,
        }
    }

    fn uses_dual(self) -> bool {
        self.model().needs_dual()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KGrid {
    pub k1: Vec<usize>,
    pub k2: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SanitizeSpec {
    /// Fraction of edges kept, highest neighbor similarity first.
    pub keep_fraction: f64,
    pub taus: Vec<usize>,
}

impl Default for SanitizeSpec {
    fn default() -> Self {
        Self {
            keep_fraction: 0.8,
            taus: DEFAULT_TAUS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub attack: AttackSpec,
    pub variants: Vec<ExperimentVariant>,
    /// Shared training settings; `variant`, `seed`, `taus`, `k1` and `k2`
    /// are overridden per cell.
    pub train: TrainConfig,
    /// When set, gated variants run once per `(k1, k2)` pair.
    pub k_grid: Option<KGrid>,
    /// Power sets for the dual kNN graphs; gated variants run once per set.
    pub tau_lists: Vec<Vec<usize>>,
    pub sanitize: SanitizeSpec,
    pub seeds: Vec<u64>,
    /// Powers at which malicious/benign separation is measured.
    pub kl_taus: Vec<usize>,
    pub output_dir: Option<PathBuf>,
    /// Write per-scenario density CSVs into `output_dir`.
    pub write_density: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            attack: AttackSpec::default(),
            variants: vec![ExperimentVariant::Gcn, ExperimentVariant::Nspgnn],
            train: TrainConfig::default(),
            k_grid: None,
            tau_lists: vec![DEFAULT_TAUS.to_vec()],
            sanitize: SanitizeSpec::default(),
            seeds: vec![0],
            kl_taus: vec![0, 1, 2, 3, 5, 10],
            output_dir: None,
            write_density: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds list is empty".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig("no variants to run".into()));
        }
        if self.tau_lists.is_empty() || self.tau_lists.iter().any(Vec::is_empty) {
            return Err(Error::InvalidConfig("tau lists must be non-empty".into()));
        }
        if let Some(grid) = &self.k_grid {
            if grid.k1.is_empty()
                || grid.k2.is_empty()
                || grid.k1.contains(&0)
                || grid.k2.contains(&0)
            {
                return Err(Error::InvalidConfig(
                    "k grid needs non-empty lists of k >= 1".into(),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.sanitize.keep_fraction) || self.sanitize.taus.is_empty() {
            return Err(Error::InvalidConfig(
                "sanitize needs keep_fraction in [0, 1] and taus".into(),
            ));
        }
        self.train.validate()?;
        match self.attack.method {
            AttackMethod::None => {}
            AttackMethod::External => match &self.attack.poisoned_edges {
                Some(p) if p.exists() => {}
                Some(p) => {
                    return Err(Error::InvalidConfig(format!(
                        "poisoned edge list {} not found",
                        p.display()
                    )))
                }
                None => {
                    return Err(Error::InvalidConfig(
                        "external attack needs poisoned_edges".into(),
                    ))
                }
            },
            _ => {
                if self.attack.budgets.is_empty() {
                    return Err(Error::InvalidConfig("attack budgets list is empty".into()));
                }
                for &b in &self.attack.budgets {
                    self.attack.config(b, 0).validate()?;
                }
            }
        }
        if let DatasetSource::Files(p) = &self.dataset {
            for f in [
                Some(&p.edges),
                Some(&p.features),
                Some(&p.labels),
                p.split.as_ref(),
            ]
            .into_iter()
            .flatten()
            {
                if !f.exists() {
                    return Err(Error::InvalidConfig(format!(
                        "dataset file {} not found",
                        f.display()
                    )));
                }
            }
        }
        Ok(())
    }

    fn k_pairs(&self) -> Vec<(usize, usize)> {
        match &self.k_grid {
            Some(g) => {
                g.k1.iter()
                    .flat_map(|&a| g.k2.iter().map(move |&b| (a, b)))
                    .collect()
            }
            None => vec![(self.train.k1, self.train.k2)],
        }
    }
}

/// One trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub seed: u64,
    pub attack: String,
    pub budget: f64,
    pub variant: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k2: Option<usize>,
    pub test_acc: Option<f64>,
    pub best_val_acc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub final_train_loss: Option<f64>,
    pub loss_spikes: Option<usize>,
    pub error: Option<String>,
}

/// Mean and standard error over seeds for one (attack, variant, settings)
/// combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub attack: String,
    pub budget: f64,
    pub variant: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k2: Option<usize>,
    pub n_seeds: usize,
    pub n_failed: usize,
    pub mean_test_acc: Option<f64>,
    pub stderr_test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub method: String,
    pub n_flips: usize,
    pub n_added: usize,
    pub n_removed: usize,
    pub clean_loss: Option<f64>,
    pub poisoned_loss: Option<f64>,
    pub correlation: Option<CorrelationStats>,
}

/// Poisoning outcome of one (seed, attack power) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub seed: u64,
    pub attack: String,
    pub budget: f64,
    pub attack_summary: Option<AttackSummary>,
    pub separation: Option<Vec<SeparationRow>>,
    pub density_dir: Option<PathBuf>,
    pub error: Option<String>,
}

/// Mean `KL(malicious || benign)` over seeds at one attack power and `τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    pub attack: String,
    pub budget: f64,
    pub tau: usize,
    pub n_seeds: usize,
    pub mean_kl: Option<f64>,
    pub stderr_kl: Option<f64>,
}

/// Accuracy indexed by `k1 × k2` for one variant, power set and attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KGridTable {
    pub attack: String,
    pub budget: f64,
    pub variant: String,
    pub taus: Vec<usize>,
    pub k1: Vec<usize>,
    pub k2: Vec<usize>,
    /// `mean_test_acc[i][j]` for `k1[i]`, `k2[j]`.
    pub mean_test_acc: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_s: f64,
    /// Wall clock per cell, aligned with `cells`.
    pub cells_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub version: String,
    pub config: ExperimentConfig,
    pub dataset: DatasetStats,
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
    pub scenarios: Vec<ScenarioResult>,
    pub kl_table: Vec<KlRow>,
    pub k_grid: Vec<KGridTable>,
    /// The only non-deterministic part of the results.
    pub timing: Timing,
}

impl ExperimentResults {
    /// Summary row matching the given labels.
    pub fn find(&self, variant: &str, budget: f64, taus: Option<&[usize]>) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| {
            r.variant == variant
                && same_budget(r.budget, budget)
                && taus.is_none_or(|t| r.taus.as_deref() == Some(t))
        })
    }

    pub fn kl(&self, budget: f64, tau: usize) -> Option<f64> {
        self.kl_table
            .iter()
            .find(|r| same_budget(r.budget, budget) && r.tau == tau)
            .and_then(|r| r.mean_kl)
    }
}

fn same_budget(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() < 1e-12
}

/// Loads or generates the base dataset. The split is the one on disk, or
/// the default stratified split for the generator seed.
pub fn load_source(source: &DatasetSource) -> Result<(Dataset, bool)> {
    match source {
        DatasetSource::Synthetic(spec) => Ok((generate_synthetic(spec)?, false)),
        DatasetSource::Files(paths) => {
            let ds = io::load_dataset(paths, 0)?;
            Ok((ds, paths.split.is_some()))
        }
    }
}

struct Scenario {
    seed: u64,
    power: f64,
}

fn attack_label(method: AttackMethod, power: f64) -> String {
    match method {
        AttackMethod::None => "clean".into(),
        AttackMethod::External => "external".into(),
        _ if power == 0.0 => "clean".into(),
        AttackMethod::Gradient => "gradient".into(),
        AttackMethod::BruteForce => "brute_force".into(),
        AttackMethod::Random => "random".into(),
    }
}

/// Runs every cell of `cfg`. Cells are computed in parallel and merged in
/// configuration order; failures are recorded per cell.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let start = Instant::now();
    let (base, fixed_split) = load_source(&cfg.dataset)?;
    let external = match (cfg.attack.method, &cfg.attack.poisoned_edges) {
        (AttackMethod::External, Some(p)) => {
            Some(Graph::from_edges(&io::read_edge_list(p)?, base.n_nodes())?)
        }
        _ => None,
    };

    let powers = cfg
        .attack
        .powers(external.as_ref().map(|g| flip_fraction(&base.graph, g)));
    let scenarios: Vec<Scenario> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| powers.iter().map(move |&power| Scenario { seed, power }))
        .collect();

    let outcomes: Vec<(ScenarioResult, Vec<(CellResult, f64)>)> = scenarios
        .par_iter()
        .map(|sc| run_scenario(cfg, &base, fixed_split, external.as_ref(), sc))
        .collect();

    let mut scenario_results = Vec::with_capacity(outcomes.len());
    let mut cells = Vec::new();
    let mut cells_s = Vec::new();
    for (sr, cs) in outcomes {
        scenario_results.push(sr);
        for (c, t) in cs {
            cells.push(c);
            cells_s.push(t);
        }
    }
    let summary = summarize(&cells);
    let kl_table = kl_table(&scenario_results, &cfg.kl_taus);
    let k_grid = k_grid_tables(cfg, &summary);
    let results = ExperimentResults {
        version: VERSION.into(),
        config: cfg.clone(),
        dataset: base.stats(),
        cells,
        summary,
        scenarios: scenario_results,
        kl_table,
        k_grid,
        timing: Timing {
            total_s: start.elapsed().as_secs_f64(),
            cells_s,
        },
    };
    if let Some(dir) = &cfg.output_dir {
        io::write_json(&dir.join("results.json"), &results)?;
    }
    Ok(results)
}

fn scenario_dataset(base: &Dataset, fixed_split: bool, seed: u64) -> Result<Dataset> {
    if fixed_split {
        Ok(base.clone())
    } else {
        base.with_split(DataSplit::default_for(&base.labels, seed))
    }
}

fn run_scenario(
    cfg: &ExperimentConfig,
    base: &Dataset,
    fixed_split: bool,
    external: Option<&Graph>,
    sc: &Scenario,
) -> (ScenarioResult, Vec<(CellResult, f64)>) {
    let label = attack_label(cfg.attack.method, sc.power);
    let mut result = ScenarioResult {
        seed: sc.seed,
        attack: label.clone(),
        budget: sc.power,
        attack_summary: None,
        separation: None,
        density_dir: None,
        error: None,
    };

    let poisoned = scenario_dataset(base, fixed_split, sc.seed).and_then(|ds| {
        let (graph, summary) = poison(cfg, &ds, external, sc)?;
        result.attack_summary = summary;
        Ok((ds.with_graph(graph)?, ds.graph))
    });
    let (ds, clean) = match poisoned {
        Ok(v) => v,
        Err(e) => {
            result.error = Some(e.to_string());
            let cells = planned_cells(cfg, sc, &label)
                .into_iter()
                .map(|mut c| {
                    c.error = Some(format!("scenario failed: {e}"));
                    (c, 0.0)
                })
                .collect();
            return (result, cells);
        }
    };

    if ds.graph != clean {
        match separation(cfg, &clean, &ds, sc) {
            Ok((rows, dir)) => {
                result.separation = Some(rows);
                result.density_dir = dir;
            }
            Err(e) => result.error = Some(format!("separation analysis: {e}")),
        }
    }

    let mut duals: HashMap<(Vec<usize>, usize, usize), std::result::Result<DualKnnGraphs, String>> =
        HashMap::new();
    let mut cells = Vec::new();
    for mut cell in planned_cells(cfg, sc, &label) {
        let t = Instant::now();
        let variant = parse_variant(&cell.variant);
        let mut tc = cfg.train.clone();
        tc.variant = variant.model();
        tc.seed = sc.seed;
        let outcome = if variant.uses_dual() {
            let taus = cell.taus.clone().unwrap_or_else(|| DEFAULT_TAUS.to_vec());
            let (k1, k2) = (cell.k1.unwrap_or(tc.k1), cell.k2.unwrap_or(tc.k2));
            tc.taus = taus.clone();
            tc.k1 = k1;
            tc.k2 = k2;
            let dual = duals
                .entry((taus.clone(), k1, k2))
                .or_insert_with(|| {
                    build_dual_knn_with(&ds.graph, &ds.features.view(), k1, k2, &taus)
                        .map_err(|e| e.to_string())
                })
                .clone();
            dual.map_err(Error::InvalidData)
                .and_then(|d| train(&ds, Some(&d), &tc))
        } else if variant == ExperimentVariant::NspSanitize {
            nsp_sanitize(
                &ds.graph,
                &ds.features.view(),
                SanitizePolicy::KeepFraction(cfg.sanitize.keep_fraction),
                &cfg.sanitize.taus,
            )
            .and_then(|g| ds.with_graph(g))
            .and_then(|clean_ds| train(&clean_ds, None, &tc))
        } else {
            train(&ds, None, &tc)
        };
        match outcome {
            Ok(r) => {
                cell.test_acc = Some(r.test_acc);
                cell.best_val_acc = Some(r.best_val_acc);
                cell.best_epoch = Some(r.best_epoch);
                cell.final_train_loss = r.train_loss.last().copied();
                cell.loss_spikes = Some(r.loss_spikes);
            }
            Err(e) => cell.error = Some(e.to_string()),
        }
        cells.push((cell, t.elapsed().as_secs_f64()));
    }
    (result, cells)
}

fn parse_variant(name: &str) -> ExperimentVariant {
    match name {
        "nspgnn" => ExperimentVariant::Nspgnn,
        "nspgnn_wo" => ExperimentVariant::NspgnnWo,
        "gcn" => ExperimentVariant::Gcn,
        "sgc" => ExperimentVariant::Sgc,
        _ => ExperimentVariant::NspSanitize,
    }
}

/// Cells of one scenario in configuration order, metrics unset.
fn planned_cells(cfg: &ExperimentConfig, sc: &Scenario, label: &str) -> Vec<CellResult> {
    let mut out = Vec::new();
    let blank = |variant: ExperimentVariant,
                 taus: Option<Vec<usize>>,
                 k: Option<(usize, usize)>| CellResult {
        seed: sc.seed,
        attack: label.to_string(),
        budget: sc.power,
        variant: variant.name().into(),
        taus,
        k1: k.map(|k| k.0),
        k2: k.map(|k| k.1),
        test_acc: None,
        best_val_acc: None,
        best_epoch: None,
        final_train_loss: None,
        loss_spikes: None,
        error: None,
    };
    for &v in &cfg.variants {
        if v.uses_dual() {
            for taus in &cfg.tau_lists {
                for k in cfg.k_pairs() {
                    out.push(blank(v, Some(taus.clone()), Some(k)));
                }
            }
        } else {
            out.push(blank(v, None, None));
        }
    }
    out
}

fn poison(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    external: Option<&Graph>,
    sc: &Scenario,
) -> Result<(Graph, Option<AttackSummary>)> {
    if let Some(g) = external {
        let (added, removed) = diff_counts(&ds.graph, g);
        return Ok((
            g.clone(),
            Some(AttackSummary {
                method: "external".into(),
                n_flips: added + removed,
                n_added: added,
                n_removed: removed,
                clean_loss: None,
                poisoned_loss: None,
                correlation: None,
            }),
        ));
    }
    if cfg.attack.method == AttackMethod::None || sc.power == 0.0 {
        return Ok((ds.graph.clone(), None));
    }
    let acfg = cfg.attack.config(sc.power, sc.seed);
    let report = match cfg.attack.method {
        AttackMethod::Gradient => attack::gradient_attack(ds, &acfg)?,
        AttackMethod::BruteForce => attack::brute_force_attack(ds, &acfg)?,
        AttackMethod::Random => attack::random_attack(ds, &acfg)?,
        AttackMethod::None | AttackMethod::External => unreachable!("handled above"),
    };
    let n_added = report
        .flips
        .iter()
        .filter(|f| f.kind == attack::FlipKind::Added)
        .count();
    let summary = AttackSummary {
        method: report.method.clone(),
        n_flips: report.flips.len(),
        n_added,
        n_removed: report.flips.len() - n_added,
        clean_loss: Some(report.clean_loss),
        poisoned_loss: Some(report.poisoned_loss),
        correlation: report.correlation.clone(),
    };
    let graph = report.poisoned.expect("attacks return the poisoned graph");
    Ok((graph, Some(summary)))
}

fn diff_counts(clean: &Graph, poisoned: &Graph) -> (usize, usize) {
    let added = poisoned
        .edges()
        .iter()
        .filter(|&&(u, v)| !clean.has_edge(u, v))
        .count();
    let removed = clean
        .edges()
        .iter()
        .filter(|&&(u, v)| !poisoned.has_edge(u, v))
        .count();
    (added, removed)
}

fn flip_fraction(clean: &Graph, poisoned: &Graph) -> f64 {
    let (a, r) = diff_counts(clean, poisoned);
    if clean.n_edges() == 0 {
        0.0
    } else {
        (a + r) as f64 / clean.n_edges() as f64
    }
}

fn separation(
    cfg: &ExperimentConfig,
    clean: &Graph,
    ds: &Dataset,
    sc: &Scenario,
) -> Result<(Vec<SeparationRow>, Option<PathBuf>)> {
    if cfg.kl_taus.is_empty() {
        return Ok((Vec::new(), None));
    }
    let report = separation_report(clean, &ds.graph, &ds.features.view(), &cfg.kl_taus)?;
    let dir = match (&cfg.output_dir, cfg.write_density) {
        (Some(out), true) => {
            let dir = out
                .join("density")
                .join(format!("seed{}_budget{:.4}", sc.seed, sc.power));
            io::emit_density(&report.scores, &dir)?;
            Some(dir)
        }
        _ => None,
    };
    Ok((report.rows, dir))
}

fn summarize(cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for c in cells {
        let pos = rows.iter().position(|r| {
            r.attack == c.attack
                && same_budget(r.budget, c.budget)
                && r.variant == c.variant
                && r.taus == c.taus
                && r.k1 == c.k1
                && r.k2 == c.k2
        });
        let i = match pos {
            Some(i) => i,
            None => {
                rows.push(SummaryRow {
                    attack: c.attack.clone(),
                    budget: c.budget,
                    variant: c.variant.clone(),
                    taus: c.taus.clone(),
                    k1: c.k1,
                    k2: c.k2,
                    n_seeds: 0,
                    n_failed: 0,
                    mean_test_acc: None,
                    stderr_test_acc: None,
                });
                values.push(Vec::new());
                rows.len() - 1
            }
        };
        match c.test_acc {
            Some(a) => values[i].push(a),
            None => rows[i].n_failed += 1,
        }
    }
    for (row, v) in rows.iter_mut().zip(&values) {
        row.n_seeds = v.len();
        row.mean_test_acc = stats::mean(v);
        row.stderr_test_acc = stats::std_error(v);
    }
    rows
}

fn kl_table(scenarios: &[ScenarioResult], taus: &[usize]) -> Vec<KlRow> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for s in scenarios {
        if s.separation.is_some()
            && !keys
                .iter()
                .any(|(a, b)| *a == s.attack && same_budget(*b, s.budget))
        {
            keys.push((s.attack.clone(), s.budget));
        }
    }
    let mut out = Vec::new();
    for (attack, budget) in keys {
        for &tau in taus {
            let v: Vec<f64> = scenarios
                .iter()
                .filter(|s| s.attack == attack && same_budget(s.budget, budget))
                .filter_map(|s| s.separation.as_ref())
                .filter_map(|rows| rows.iter().find(|r| r.tau == tau).and_then(|r| r.kl))
                .collect();
            out.push(KlRow {
                attack: attack.clone(),
                budget,
                tau,
                n_seeds: v.len(),
                mean_kl: stats::mean(&v),
                stderr_kl: stats::std_error(&v),
            });
        }
    }
    out
}

fn k_grid_tables(cfg: &ExperimentConfig, summary: &[SummaryRow]) -> Vec<KGridTable> {
    let Some(grid) = &cfg.k_grid else {
        return Vec::new();
    };
    let mut out: Vec<KGridTable> = Vec::new();
    for r in summary.iter().filter(|r| r.k1.is_some()) {
        let taus = r.taus.clone().unwrap_or_default();
        let pos = out.iter().position(|t| {
            t.attack == r.attack
                && same_budget(t.budget, r.budget)
                && t.variant == r.variant
                && t.taus == taus
        });
        let i = pos.unwrap_or_else(|| {
            out.push(KGridTable {
                attack: r.attack.clone(),
                budget: r.budget,
                variant: r.variant.clone(),
                taus,
                k1: grid.k1.clone(),
                k2: grid.k2.clone(),
                mean_test_acc: vec![vec![None; grid.k2.len()]; grid.k1.len()],
            });
            out.len() - 1
        });
        let a = grid.k1.iter().position(|&k| Some(k) == r.k1);
        let b = grid.k2.iter().position(|&k| Some(k) == r.k2);
        if let (Some(a), Some(b)) = (a, b) {
            out[i].mean_test_acc[a][b] = r.mean_test_acc;
        }
    }
    out
}
