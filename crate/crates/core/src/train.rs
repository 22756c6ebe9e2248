//! Masked NLL, accuracy, Adam and the full-batch training loop.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::knn::{DualKnnGraphs, DEFAULT_TAUS};
use crate::model::{
    backward_logits, forward, nll_logit_grad, ModelInputs, ModelParams, Variant, DEFAULT_SGC_TAU,
};

/// `−mean_{i ∈ mask} ln S[i, y_i]`.
pub fn nll_loss(probs: &Array2<f64>, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, (&m, &y)) in mask.iter().zip(labels).enumerate() {
        if m {
            total -= probs[[i, y]].ln();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / count as f64)
}

/// Fraction of masked nodes whose arg-max class (lowest index on ties)
/// equals the label.
pub fn accuracy(probs: &Array2<f64>, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let mut correct = 0usize;
    let mut count = 0usize;
    for (i, (&m, &y)) in mask.iter().zip(labels).enumerate() {
        if m {
            count += 1;
            if argmax(probs.row(i).iter().copied()) == y {
                correct += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(correct as f64 / count as f64)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, v) in values.enumerate() {
        if v > best.1 {
            best = (c, v);
        }
    }
    best.0
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(format!(
            "gradient entry {i} is {} at step {}",
            grads[i],
            state.t + 1
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub k1: usize,
    pub k2: usize,
    /// Hidden widths; empty means a single layer.
    pub hidden: Vec<usize>,
    /// Powers for the dual kNN graphs.
    pub taus: Vec<usize>,
    /// Propagation power of the SGC model.
    pub sgc_tau: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Nspgnn,
            lr: 0.01,
            epochs: 500,
            seed: 0,
            k1: 10,
            k2: 10,
            hidden: vec![64],
            taus: DEFAULT_TAUS.to_vec(),
            sgc_tau: DEFAULT_SGC_TAU,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be >= 0",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::InvalidConfig("k1 and k2 must be >= 1".into()));
        }
        if self.taus.is_empty() {
            return Err(Error::InvalidConfig("tau list is empty".into()));
        }
        Ok(())
    }

    /// Layer widths `[p, hidden..., C]` for this variant.
    pub fn dims(&self, n_features: usize, n_classes: usize) -> Vec<usize> {
        let mut dims = vec![n_features];
        if self.variant != Variant::Sgc {
            dims.extend(&self.hidden);
        }
        dims.push(n_classes);
        dims
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub final_params: ModelParams,
    /// Parameters at the epoch with the best validation accuracy.
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Test accuracy of `best_params`.
    pub test_acc: f64,
    pub train_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
    /// Epochs whose loss exceeded ten times the previous one.
    pub loss_spikes: usize,
    pub wall_clock_s: f64,
}

/// Full-batch training with Adam. Every epoch evaluates the current
/// parameters, keeps them if validation accuracy matches or beats the best
/// so far (ties go to the later epoch), then takes one gradient step on the
/// training NLL.
pub fn train(
    dataset: &Dataset,
    dual: Option<&DualKnnGraphs>,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    let inputs = ModelInputs::new(cfg.variant, dataset, dual, cfg.sgc_tau)?;
    train_with_inputs(dataset, &inputs, cfg)
}

pub fn train_with_inputs(
    dataset: &Dataset,
    inputs: &ModelInputs,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    let start = Instant::now();
    let n_taus = inputs.dual.as_ref().map_or(0, |d| d.n_taus());
    let dims = cfg.dims(dataset.features.n_features(), dataset.n_classes());
    let mut params = ModelParams::init(cfg.variant, &dims, n_taus, cfg.seed)?;
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len());
    let labels = dataset.labels.as_slice();
    let split = &dataset.split;
    let has_val = split.val.iter().any(|&b| b);

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_acc = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, f64, ModelParams)> = None;
    let mut loss_spikes = 0;

    for epoch in 0..cfg.epochs {
        let (probs, tape) = forward(&params, inputs)?;
        let loss = nll_loss(&probs, labels, &split.train)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteGradient(format!(
                "training loss {loss} at epoch {epoch}"
            )));
        }
        if let Some(&prev) = train_loss.last() {
            if loss > 10.0 * prev {
                loss_spikes += 1;
            }
        }
        let va = if has_val {
            accuracy(&probs, labels, &split.val)?
        } else {
            accuracy(&probs, labels, &split.train)?
        };
        train_loss.push(loss);
        val_acc.push(va);
        if best.as_ref().is_none_or(|b| va >= b.1) {
            let ta = accuracy(&probs, labels, &split.test).unwrap_or(0.0);
            best = Some((epoch, va, ta, params.clone()));
        }

        let grad_logits = nll_logit_grad(&probs, labels, &split.train)?;
        let grads = backward_logits(&params, inputs, &tape, grad_logits)?.to_flat();
        adam_step(&mut adam, &mut flat, &grads, cfg.lr)?;
        params.set_flat(&flat)?;
    }

    let (best_epoch, best_val_acc, test_acc, best_params) = best.expect("epochs >= 1");
    Ok(TrainResult {
        final_params: params,
        best_params,
        best_epoch,
        best_val_acc,
        test_acc,
        train_loss,
        val_acc,
        loss_spikes,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn nll_examples() {
        let near_one = array![[1.0 - 1e-15, 1e-15]];
        assert_abs_diff_eq!(
            nll_loss(&near_one, &[0], &[true]).unwrap(),
            0.0,
            epsilon = 1e-14
        );

        let uniform = Array2::from_elem((3, 5), 0.2);
        assert_abs_diff_eq!(
            nll_loss(&uniform, &[0, 3, 4], &[true, true, true]).unwrap(),
            1.609_437_912_434_100_3,
            epsilon = 1e-12
        );

        let two = array![[0.5, 0.5], [0.75, 0.25]];
        assert_abs_diff_eq!(
            nll_loss(&two, &[0, 1], &[true, true]).unwrap(),
            1.039_720_770_839_917_9,
            epsilon = 1e-12
        );
        assert!(matches!(
            nll_loss(&two, &[0, 1], &[false, false]),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn accuracy_examples() {
        let s = array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]];
        assert_eq!(accuracy(&s, &[0, 1, 0, 1], &[true; 4]).unwrap(), 1.0);
        assert_eq!(accuracy(&s, &[0, 1, 1, 1], &[true; 4]).unwrap(), 0.75);
        let uniform = Array2::from_elem((4, 3), 1.0 / 3.0);
        assert_eq!(accuracy(&uniform, &[0, 2, 0, 1], &[true; 4]).unwrap(), 0.5);
        assert!(matches!(
            accuracy(&s, &[0; 4], &[false; 4]),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut st = AdamState::new(2);
        let mut p = [0.3, -0.7];
        adam_step(&mut st, &mut p, &[0.0, 0.0], 0.01).unwrap();
        assert_eq!(p, [0.3, -0.7]);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        // t = 1: m̂ = g, v̂ = g², step = lr * g / (|g| + eps).
        let mut st = AdamState::new(1);
        let mut p = [1.0];
        adam_step(&mut st, &mut p, &[0.5], 0.01).unwrap();
        assert_abs_diff_eq!(p[0], 1.0 - 0.01 * 0.5 / (0.5 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn adam_second_identical_step_not_larger() {
        let mut st = AdamState::new(1);
        let mut p = [0.0];
        adam_step(&mut st, &mut p, &[0.3], 0.01).unwrap();
        let first = p[0].abs();
        adam_step(&mut st, &mut p, &[0.3], 0.01).unwrap();
        let second = (p[0].abs() - first).abs();
        assert!(second <= first + 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut st = AdamState::new(1);
        let mut p = [0.0];
        assert!(matches!(
            adam_step(&mut st, &mut p, &[f64::NAN], 0.01),
            Err(Error::NonFiniteGradient(_))
        ));
    }
}
