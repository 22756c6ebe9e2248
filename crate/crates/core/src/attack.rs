//! Structural poisoning at desk scale: an exact brute-force oracle that
//! retrains an SGC surrogate for every candidate flip, a one-shot gradient
//! attacker, and the kernel/attack-loss correlation analysis.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{check_dense_cap, Graph, DEFAULT_DENSE_CAP};
use crate::model::{softmax_rows, ModelParams, Variant, DEFAULT_SGC_TAU};
use crate::similarity::UnitRows;
use crate::stats;
use crate::train::{adam_step, AdamState};

/// Largest graph the brute-force oracle accepts.
pub const BRUTE_FORCE_MAX_NODES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    AddOnly,
    Flip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Fraction of the clean edge count that may be flipped.
    pub budget_fraction: f64,
    pub mode: AttackMode,
    /// Propagation power of the SGC surrogate.
    pub surrogate_tau: usize,
    /// Upper bound on candidates scored per brute-force step; larger pools
    /// are subsampled with `seed`.
    pub candidate_cap: Option<usize>,
    /// Adam epochs for every surrogate fit.
    pub surrogate_epochs: usize,
    pub surrogate_lr: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            budget_fraction: 0.05,
            mode: AttackMode::Flip,
            surrogate_tau: DEFAULT_SGC_TAU,
            candidate_cap: None,
            surrogate_epochs: 200,
            surrogate_lr: 0.01,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.budget_fraction) {
            return Err(Error::InvalidConfig(format!(
                "budget fraction {} outside [0, 0.5]",
                self.budget_fraction
            )));
        }
        if self.surrogate_epochs == 0 || !(self.surrogate_lr > 0.0 && self.surrogate_lr.is_finite())
        {
            return Err(Error::InvalidConfig(
                "surrogate needs epochs >= 1 and lr > 0".into(),
            ));
        }
        if self.candidate_cap == Some(0) {
            return Err(Error::InvalidConfig("candidate cap must be >= 1".into()));
        }
        Ok(())
    }

    /// `⌊δ·|E|⌋`. A positive fraction that rounds to zero flips is an error.
    pub fn budget(&self, n_edges: usize) -> Result<usize> {
        self.validate()?;
        let b = (self.budget_fraction * n_edges as f64).floor() as usize;
        if b == 0 && self.budget_fraction > 0.0 {
            return Err(Error::InvalidConfig(format!(
                "budget fraction {} of {n_edges} edges yields no flips",
                self.budget_fraction
            )));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipKind {
    Added,
    Removed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub u: usize,
    pub v: usize,
    pub kind: FlipKind,
    /// Change of the attack loss caused by this flip. Exact (retrained) for
    /// the brute-force oracle, first-order for the gradient attack, measured
    /// with the clean surrogate for random flips.
    pub delta_loss: f64,
    /// `K[u,v]` on the clean graph.
    pub kernel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStats {
    pub n_candidates: usize,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// Kernel scores or loss deltas are constant over the pool, so no
    /// correlation is defined.
    pub degenerate: bool,
}

impl CorrelationStats {
    pub fn compute(kernel: &[f64], delta: &[f64]) -> Self {
        let pearson = stats::pearson(kernel, delta);
        let spearman = stats::spearman(kernel, delta);
        Self {
            n_candidates: kernel.len(),
            pearson,
            spearman,
            degenerate: spearman.is_none(),
        }
    }
}

/// Every addition scored in one brute-force step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub pairs: Vec<(usize, usize)>,
    pub delta_loss: Vec<f64>,
    pub kernel: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub method: String,
    pub mode: AttackMode,
    pub budget_fraction: f64,
    pub budget: usize,
    pub surrogate_tau: usize,
    /// Attack loss on the clean graph.
    pub clean_loss: f64,
    /// Attack loss on the poisoned graph (retrained surrogate for the
    /// oracle, clean surrogate otherwise).
    pub poisoned_loss: f64,
    pub flips: Vec<FlipRecord>,
    /// Correlation between `K[u,v]` and the loss change over candidate
    /// additions at the first step.
    pub correlation: Option<CorrelationStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub additions: Option<CandidatePool>,
    pub n_edges_clean: usize,
    pub n_edges_poisoned: usize,
    #[serde(skip)]
    pub poisoned: Option<Graph>,
}

impl AttackReport {
    pub fn flip_pairs(&self) -> Vec<(usize, usize)> {
        self.flips.iter().map(|f| (f.u, f.v)).collect()
    }
}

/// Gram matrix `K = A^τX (A^τX)ᵀ` with the raw adjacency.
pub fn attack_kernel(g: &Graph, x: &ArrayView2<f64>, tau: usize) -> Result<Array2<f64>> {
    check_dense_cap(g.n_nodes(), DEFAULT_DENSE_CAP)?;
    let f = g.powered_features(x, tau)?;
    Ok(f.dot(&f.t()))
}

fn kernel_entry(f: &Array2<f64>, u: usize, v: usize) -> f64 {
    f.row(u).dot(&f.row(v))
}

/// `Â^τ X` with the self-loop normalized adjacency.
pub fn sgc_features(g: &Graph, x: &ArrayView2<f64>, tau: usize) -> Array2<f64> {
    let a = g.normalized_adjacency();
    let mut f = x.to_owned();
    for _ in 0..tau {
        f = a.matmul(&f.view());
    }
    f
}

fn rows(a: &ArrayView2<f64>, mask: &[bool]) -> Array2<f64> {
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    a.select(Axis(0), &idx)
}

/// Fits `W` of `softmax(F W)` on the masked rows by full-batch Adam from a
/// Glorot initialization drawn with `seed`.
pub fn fit_sgc(
    features: &ArrayView2<f64>,
    labels: &[usize],
    mask: &[bool],
    n_classes: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if features.nrows() != labels.len() || labels.len() != mask.len() {
        return Err(Error::ShapeMismatch(
            "surrogate features, labels and mask differ in length".into(),
        ));
    }
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    let f = features.select(Axis(0), &idx);
    let mut y = Array2::<f64>::zeros((idx.len(), n_classes));
    for (r, &i) in idx.iter().enumerate() {
        y[[r, labels[i]]] = 1.0;
    }
    let init = ModelParams::init(Variant::Sgc, &[features.ncols(), n_classes], 0, seed)?;
    let mut w = init.layers[0].w_prop.clone();
    let mut adam = AdamState::new(w.len());
    let scale = 1.0 / idx.len() as f64;
    for _ in 0..epochs {
        let s = softmax_rows(&f.dot(&w).view());
        let grad = f.t().dot(&((s - &y) * scale));
        adam_step(
            &mut adam,
            w.as_slice_mut().expect("standard layout"),
            grad.as_slice().expect("standard layout"),
            lr,
        )?;
    }
    Ok(w)
}

/// Negative mean NLL on `mask` of `softmax(F W)`, `F` precomputed.
fn loss_from_features(
    f: &ArrayView2<f64>,
    w: &Array2<f64>,
    labels: &[usize],
    mask: &[bool],
) -> Result<f64> {
    let fm = rows(f, mask);
    if fm.nrows() == 0 {
        return Err(Error::EmptyMask);
    }
    let s = softmax_rows(&fm.dot(w).view());
    let masked: Vec<usize> = (0..mask.len())
        .filter(|&i| mask[i])
        .map(|i| labels[i])
        .collect();
    let nll = masked
        .iter()
        .enumerate()
        .map(|(r, &c)| -s[[r, c]].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / masked.len() as f64;
    Ok(-nll)
}

/// `L_atk = −NLL` on the test nodes for the SGC surrogate `w` run on `g`.
pub fn attack_loss(
    g: &Graph,
    x: &ArrayView2<f64>,
    labels: &[usize],
    test_mask: &[bool],
    w: &Array2<f64>,
    tau: usize,
) -> Result<f64> {
    if x.nrows() != g.n_nodes() || w.nrows() != x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "graph {} nodes, features {}x{}, surrogate {}x{}",
            g.n_nodes(),
            x.nrows(),
            x.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let f = sgc_features(g, x, tau);
    loss_from_features(&f.view(), w, labels, test_mask)
}

/// Surrogate fitted on the training nodes of `g`.
pub fn fit_surrogate(ds: &Dataset, g: &Graph, cfg: &AttackConfig) -> Result<Array2<f64>> {
    let f = sgc_features(g, &ds.features.view(), cfg.surrogate_tau);
    fit_sgc(
        &f.view(),
        ds.labels.as_slice(),
        &ds.split.train,
        ds.n_classes(),
        cfg.surrogate_epochs,
        cfg.surrogate_lr,
        cfg.seed,
    )
}

/// Attack loss after retraining the surrogate on `g` (the inner problem).
fn retrained_loss(ds: &Dataset, g: &Graph, cfg: &AttackConfig) -> Result<f64> {
    let x = ds.features.view();
    let f = sgc_features(g, &x, cfg.surrogate_tau);
    let w = fit_sgc(
        &f.view(),
        ds.labels.as_slice(),
        &ds.split.train,
        ds.n_classes(),
        cfg.surrogate_epochs,
        cfg.surrogate_lr,
        cfg.seed,
    )?;
    loss_from_features(&f.view(), &w, ds.labels.as_slice(), &ds.split.test)
}

fn check_test_mask(ds: &Dataset) -> Result<()> {
    if !ds.split.test.iter().any(|&b| b) {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Candidate flips on `g` in lexicographic order, skipping `exclude`.
fn candidates(g: &Graph, mode: AttackMode, exclude: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let n = g.n_nodes();
    let mut out = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if exclude.contains(&(u, v)) {
                continue;
            }
            if mode == AttackMode::Flip || !g.has_edge(u, v) {
                out.push((u, v));
            }
        }
    }
    out
}

fn cap_candidates(pool: Vec<(usize, usize)>, cap: Option<usize>, seed: u64) -> Vec<(usize, usize)> {
    match cap {
        Some(c) if pool.len() > c => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, pool.len(), c).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pool[i]).collect()
        }
        _ => pool,
    }
}

/// Greedy exact attack: at every step each candidate flip is applied, the
/// surrogate retrained from scratch and the attack loss recomputed; the
/// flip with the lowest loss wins (ties to the lexicographically smallest
/// pair). The loss changes of all candidate additions at the first step are
/// kept for the correlation analysis.
pub fn brute_force_attack(ds: &Dataset, cfg: &AttackConfig) -> Result<AttackReport> {
    check_dense_cap(ds.n_nodes(), BRUTE_FORCE_MAX_NODES)?;
    check_test_mask(ds)?;
    let clean = &ds.graph;
    let budget = cfg.budget(clean.n_edges())?;
    let x = ds.features.view();
    let powered = clean.powered_features(&x, cfg.surrogate_tau)?;

    let clean_loss = retrained_loss(ds, clean, cfg)?;
    let mut current = clean.clone();
    let mut current_loss = clean_loss;
    let mut flipped: Vec<(usize, usize)> = Vec::new();
    let mut flips = Vec::with_capacity(budget);
    let mut additions = None;

    for step in 0..budget {
        let pool = cap_candidates(
            candidates(&current, cfg.mode, &flipped),
            cfg.candidate_cap,
            cfg.seed.wrapping_add(step as u64),
        );
        if pool.is_empty() {
            break;
        }
        let losses: Vec<f64> = pool
            .par_iter()
            .map(|&pair| retrained_loss(ds, &current.with_flips(&[pair])?, cfg))
            .collect::<Result<_>>()?;
        let best = argmin(&losses);
        if step == 0 {
            additions = Some(addition_pool(
                &current,
                &pool,
                &losses,
                current_loss,
                &powered,
            ));
        }
        let (u, v) = pool[best];
        let kind = if current.has_edge(u, v) {
            FlipKind::Removed
        } else {
            FlipKind::Added
        };
        flips.push(FlipRecord {
            u,
            v,
            kind,
            delta_loss: losses[best] - current_loss,
            kernel: kernel_entry(&powered, u, v),
        });
        current = current.with_flips(&[(u, v)])?;
        current_loss = losses[best];
        flipped.push((u, v));
    }

    let correlation = additions
        .as_ref()
        .map(|p: &CandidatePool| CorrelationStats::compute(&p.kernel, &p.delta_loss));
    Ok(AttackReport {
        method: "brute_force".into(),
        mode: cfg.mode,
        budget_fraction: cfg.budget_fraction,
        budget,
        surrogate_tau: cfg.surrogate_tau,
        clean_loss,
        poisoned_loss: current_loss,
        flips,
        correlation,
        additions,
        n_edges_clean: clean.n_edges(),
        n_edges_poisoned: current.n_edges(),
        poisoned: Some(current),
    })
}

/// Index of the smallest value; the first one on ties.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

fn addition_pool(
    g: &Graph,
    pool: &[(usize, usize)],
    losses: &[f64],
    base: f64,
    powered: &Array2<f64>,
) -> CandidatePool {
    let mut out = CandidatePool {
        pairs: Vec::new(),
        delta_loss: Vec::new(),
        kernel: Vec::new(),
    };
    for (&(u, v), &l) in pool.iter().zip(losses) {
        if !g.has_edge(u, v) {
            out.pairs.push((u, v));
            out.delta_loss.push(l - base);
            out.kernel.push(kernel_entry(powered, u, v));
        }
    }
    out
}

/// Gradient of `L_atk` with respect to a symmetric perturbation of every
/// adjacency entry, surrogate weights `w` held fixed. Returned densely;
/// the diagonal is zero.
pub fn structure_gradient(
    g: &Graph,
    x: &ArrayView2<f64>,
    labels: &[usize],
    test_mask: &[bool],
    w: &Array2<f64>,
    tau: usize,
) -> Result<Array2<f64>> {
    let n = g.n_nodes();
    check_dense_cap(n, DEFAULT_DENSE_CAP)?;
    if tau == 0 {
        return Ok(Array2::zeros((n, n)));
    }
    let p = g.normalized_adjacency();
    let n_test = test_mask.iter().filter(|&&b| b).count();
    if n_test == 0 {
        return Err(Error::EmptyMask);
    }

    // Forward: M_j = P^j X W.
    let mut m = vec![x.dot(w)];
    for j in 0..tau {
        m.push(p.matmul(&m[j].view()));
    }
    let s = softmax_rows(&m[tau].view());

    // ∂L_atk/∂Z = −(S − Y)/|test| on test rows.
    let mut gz = Array2::<f64>::zeros(s.dim());
    for i in 0..n {
        if test_mask[i] {
            for c in 0..s.ncols() {
                let y = if labels[i] == c { 1.0 } else { 0.0 };
                gz[[i, c]] = -(s[[i, c]] - y) / n_test as f64;
            }
        }
    }
    // B_k = Pᵀ^k G_Z, and ∂L/∂P = Σ_k B_k M_{τ−1−k}ᵀ.
    let mut b = vec![gz];
    for k in 1..tau {
        let next = p.matmul(&b[k - 1].view());
        b.push(next);
    }
    let mut gp = Array2::<f64>::zeros((n, n));
    for k in 0..tau {
        gp += &b[k].dot(&m[tau - 1 - k].t());
    }

    // Degree path: P_ij = s_i s_j (A + I)_ij, s = d^{-1/2}.
    let deg: Vec<f64> = (0..n).map(|i| 1.0 + g.degree(i) as f64).collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut gd = vec![0.0; n];
    for (i, j, pij) in p.entries() {
        let t = gp[[i, j]] * pij;
        gd[i] -= t / (2.0 * deg[i]);
        gd[j] -= t / (2.0 * deg[j]);
    }
    let mut grad = Array2::<f64>::zeros((n, n));
    for u in 0..n {
        for v in u + 1..n {
            let val = inv_sqrt[u] * inv_sqrt[v] * (gp[[u, v]] + gp[[v, u]]) + (gd[u] + gd[v]);
            grad[[u, v]] = val;
            grad[[v, u]] = val;
        }
    }
    Ok(grad)
}

/// One-shot gradient attack: the surrogate is fitted on the clean graph,
/// every pair is scored by `(1 − 2A_uv)·∂L_atk/∂A_uv`, and the `B` lowest
/// scores are flipped (ties to the lexicographically smallest pair).
pub fn gradient_attack(ds: &Dataset, cfg: &AttackConfig) -> Result<AttackReport> {
    check_test_mask(ds)?;
    let clean = &ds.graph;
    let budget = cfg.budget(clean.n_edges())?;
    let x = ds.features.view();
    let labels = ds.labels.as_slice();
    let test = &ds.split.test;
    let w = fit_surrogate(ds, clean, cfg)?;
    let clean_loss = attack_loss(clean, &x, labels, test, &w, cfg.surrogate_tau)?;
    let grad = structure_gradient(clean, &x, labels, test, &w, cfg.surrogate_tau)?;
    let powered = clean.powered_features(&x, cfg.surrogate_tau)?;

    let n = clean.n_nodes();
    let mode = cfg.mode;
    // Best `budget` candidates per row, merged and cut to `budget`.
    let per_row: Vec<Vec<(f64, usize, usize)>> = (0..n)
        .into_par_iter()
        .map(|u| {
            let mut row: Vec<(f64, usize, usize)> = (u + 1..n)
                .filter_map(|v| {
                    let a = clean.has_edge(u, v);
                    if a && mode == AttackMode::AddOnly {
                        return None;
                    }
                    let sign = if a { -1.0 } else { 1.0 };
                    Some((sign * grad[[u, v]], u, v))
                })
                .collect();
            row.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
            row.truncate(budget);
            row
        })
        .collect();
    let mut all: Vec<(f64, usize, usize)> = per_row.into_iter().flatten().collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    all.truncate(budget);
    if all.len() < budget {
        return Err(Error::InvalidConfig(format!(
            "only {} candidate flips for a budget of {budget}",
            all.len()
        )));
    }

    let flips: Vec<FlipRecord> = all
        .iter()
        .map(|&(score, u, v)| FlipRecord {
            u,
            v,
            kind: if clean.has_edge(u, v) {
                FlipKind::Removed
            } else {
                FlipKind::Added
            },
            delta_loss: score,
            kernel: kernel_entry(&powered, u, v),
        })
        .collect();
    let pairs: Vec<(usize, usize)> = flips.iter().map(|f| (f.u, f.v)).collect();
    let poisoned = clean.with_flips(&pairs)?;
    let poisoned_loss = attack_loss(&poisoned, &x, labels, test, &w, cfg.surrogate_tau)?;

    // First-order loss change of every addition, when the pool is small
    // enough to keep.
    let correlation = if n * n.saturating_sub(1) / 2 <= 2_000_000 {
        let mut k = Vec::new();
        let mut d = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if !clean.has_edge(u, v) {
                    k.push(kernel_entry(&powered, u, v));
                    d.push(grad[[u, v]]);
                }
            }
        }
        Some(CorrelationStats::compute(&k, &d))
    } else {
        None
    };

    Ok(AttackReport {
        method: "gradient".into(),
        mode,
        budget_fraction: cfg.budget_fraction,
        budget,
        surrogate_tau: cfg.surrogate_tau,
        clean_loss,
        poisoned_loss,
        flips,
        correlation,
        additions: None,
        n_edges_clean: clean.n_edges(),
        n_edges_poisoned: poisoned.n_edges(),
        poisoned: Some(poisoned),
    })
}

/// Uniformly random flips under the same budget and mode, for baselines.
pub fn random_attack(ds: &Dataset, cfg: &AttackConfig) -> Result<AttackReport> {
    check_test_mask(ds)?;
    let clean = &ds.graph;
    let budget = cfg.budget(clean.n_edges())?;
    let x = ds.features.view();
    let labels = ds.labels.as_slice();
    let test = &ds.split.test;
    let pool = candidates(clean, cfg.mode, &[]);
    if pool.len() < budget {
        return Err(Error::InvalidConfig(format!(
            "only {} candidate flips for a budget of {budget}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx = sample(&mut rng, pool.len(), budget).into_vec();
    idx.sort_unstable();
    let pairs: Vec<(usize, usize)> = idx.into_iter().map(|i| pool[i]).collect();

    let w = fit_surrogate(ds, clean, cfg)?;
    let clean_loss = attack_loss(clean, &x, labels, test, &w, cfg.surrogate_tau)?;
    let powered = clean.powered_features(&x, cfg.surrogate_tau)?;
    let flips = pairs
        .iter()
        .map(|&(u, v)| {
            let single = clean.with_flips(&[(u, v)])?;
            Ok(FlipRecord {
                u,
                v,
                kind: if clean.has_edge(u, v) {
                    FlipKind::Removed
                } else {
                    FlipKind::Added
                },
                delta_loss: attack_loss(&single, &x, labels, test, &w, cfg.surrogate_tau)?
                    - clean_loss,
                kernel: kernel_entry(&powered, u, v),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let poisoned = clean.with_flips(&pairs)?;
    let poisoned_loss = attack_loss(&poisoned, &x, labels, test, &w, cfg.surrogate_tau)?;
    Ok(AttackReport {
        method: "random".into(),
        mode: cfg.mode,
        budget_fraction: cfg.budget_fraction,
        budget,
        surrogate_tau: cfg.surrogate_tau,
        clean_loss,
        poisoned_loss,
        flips,
        correlation: None,
        additions: None,
        n_edges_clean: clean.n_edges(),
        n_edges_poisoned: poisoned.n_edges(),
        poisoned: Some(poisoned),
    })
}

/// Relation between the kernel and the exact attack-loss change of every
/// candidate addition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub tau: usize,
    pub correlation: CorrelationStats,
    /// Number of most damaging additions treated as the attacker's choice.
    pub n_chosen: usize,
    /// Mean `Ω(A^τX)` of the chosen additions.
    pub mean_similarity_chosen: f64,
    /// Mean `Ω(A^τX)` over every candidate addition.
    pub mean_similarity_pool: f64,
}

/// Scores every non-edge addition with the brute-force oracle and
/// correlates `K[u,v]` with the loss change. The attacker's choice is the
/// `⌊δ·|E|⌋` additions (at least one) with the lowest loss change.
pub fn theorem1_verification(
    ds: &Dataset,
    tau: usize,
    cfg: &AttackConfig,
) -> Result<Theorem1Report> {
    check_dense_cap(ds.n_nodes(), BRUTE_FORCE_MAX_NODES)?;
    check_test_mask(ds)?;
    let cfg = AttackConfig {
        surrogate_tau: tau,
        ..cfg.clone()
    };
    cfg.validate()?;
    let g = &ds.graph;
    let x = ds.features.view();
    let powered = g.powered_features(&x, tau)?;
    let unit = UnitRows::new(&powered.view());
    let pool = cap_candidates(
        candidates(g, AttackMode::AddOnly, &[]),
        cfg.candidate_cap,
        cfg.seed,
    );
    if pool.is_empty() {
        return Err(Error::InvalidData(
            "graph is complete, no additions to score".into(),
        ));
    }
    let base = retrained_loss(ds, g, &cfg)?;
    let losses: Vec<f64> = pool
        .par_iter()
        .map(|&pair| retrained_loss(ds, &g.with_flips(&[pair])?, &cfg))
        .collect::<Result<_>>()?;
    let adds = addition_pool(g, &pool, &losses, base, &powered);
    let correlation = CorrelationStats::compute(&adds.kernel, &adds.delta_loss);

    let n_chosen =
        ((cfg.budget_fraction * g.n_edges() as f64).floor() as usize).clamp(1, adds.pairs.len());
    let mut order: Vec<usize> = (0..adds.pairs.len()).collect();
    order.sort_by(|&a, &b| {
        adds.delta_loss[a]
            .total_cmp(&adds.delta_loss[b])
            .then(a.cmp(&b))
    });
    let sim = |&(u, v): &(usize, usize)| unit.cosine(u, v);
    let chosen: Vec<f64> = order[..n_chosen]
        .iter()
        .map(|&i| sim(&adds.pairs[i]))
        .collect();
    let all: Vec<f64> = adds.pairs.iter().map(sim).collect();
    Ok(Theorem1Report {
        tau,
        correlation,
        n_chosen,
        mean_similarity_chosen: stats::mean(&chosen).unwrap_or(0.0),
        mean_similarity_pool: stats::mean(&all).unwrap_or(0.0),
    })
}
