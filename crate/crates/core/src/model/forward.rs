//! Forward passes with a tape, and exact reverse-mode gradients.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::params::{GateParams, LayerParams, ModelParams, Variant};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::knn::DualKnnGraphs;
use crate::sparse::CsrMatrix;

/// Propagation power used by the SGC model unless configured otherwise.
pub const DEFAULT_SGC_TAU: usize = 2;

/// Everything a forward pass consumes besides the parameters, prepared once
/// per graph.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    pub features: Array2<f64>,
    /// `Â` of the input graph (GCN).
    pub adjacency: Option<CsrMatrix>,
    /// `Â^τ X` (SGC).
    pub sgc_features: Option<Array2<f64>>,
    pub dual: Option<DualKnnGraphs>,
    /// Replaces the positive gates by a constant (tests and ablations).
    pub force_pos_gate: Option<f64>,
    /// Replaces the negative gates by a constant.
    pub force_neg_gate: Option<f64>,
    pos_t: Vec<CsrMatrix>,
    neg_t: Vec<CsrMatrix>,
    /// `P_t X` and `Q_t X`, so the first gated layer needs no sparse products.
    pos_x: Vec<Array2<f64>>,
    neg_x: Vec<Array2<f64>>,
    adjacency_t: Option<CsrMatrix>,
}

impl ModelInputs {
    /// Prepares the inputs `variant` needs from a dataset.
    pub fn new(
        variant: Variant,
        dataset: &Dataset,
        dual: Option<&DualKnnGraphs>,
        sgc_tau: usize,
    ) -> Result<Self> {
        let features = dataset.features.view().to_owned();
        match variant {
            Variant::Nspgnn | Variant::NspgnnWo => {
                let dual = dual.ok_or(Error::MissingDualGraphs(variant.name()))?;
                Self::from_dual(features, dual.clone())
            }
            Variant::Gcn => Ok(Self::from_adjacency(
                features,
                dataset.graph.normalized_adjacency(),
            )),
            Variant::Sgc => {
                let a = dataset.graph.normalized_adjacency();
                let mut f = features.clone();
                for _ in 0..sgc_tau {
                    f = a.matmul(&f.view());
                }
                Ok(Self::bare(features, None, Some(f), None))
            }
        }
    }

    pub fn from_dual(features: Array2<f64>, dual: DualKnnGraphs) -> Result<Self> {
        if dual.n_nodes() != features.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "dual graphs cover {} nodes, features {}",
                dual.n_nodes(),
                features.nrows()
            )));
        }
        Ok(Self::bare(features, None, None, Some(dual)))
    }

    pub fn from_adjacency(features: Array2<f64>, adjacency: CsrMatrix) -> Self {
        Self::bare(features, Some(adjacency), None, None)
    }

    pub fn from_sgc_features(features: Array2<f64>, propagated: Array2<f64>) -> Self {
        Self::bare(features, None, Some(propagated), None)
    }

    fn bare(
        features: Array2<f64>,
        adjacency: Option<CsrMatrix>,
        sgc_features: Option<Array2<f64>>,
        dual: Option<DualKnnGraphs>,
    ) -> Self {
        let (pos_t, neg_t, pos_x, neg_x) = match &dual {
            Some(d) => (
                d.pairs.iter().map(|p| p.pos.transpose()).collect(),
                d.pairs.iter().map(|p| p.neg.transpose()).collect(),
                d.pairs
                    .iter()
                    .map(|p| p.pos.matmul(&features.view()))
                    .collect(),
                d.pairs
                    .iter()
                    .map(|p| p.neg.matmul(&features.view()))
                    .collect(),
            ),
            None => (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
        };
        let adjacency_t = adjacency.as_ref().map(CsrMatrix::transpose);
        Self {
            features,
            adjacency,
            sgc_features,
            dual,
            force_pos_gate: None,
            force_neg_gate: None,
            pos_t,
            neg_t,
            pos_x,
            neg_x,
            adjacency_t,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }
}

/// `logistic(h W + b)`, one column per propagation power.
pub fn gates(h: &ArrayView2<f64>, w: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Result<Array2<f64>> {
    if h.ncols() != w.nrows() || w.ncols() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "gate input {}x{}, weight {}x{}, bias {}",
            h.nrows(),
            h.ncols(),
            w.nrows(),
            w.ncols(),
            b.len()
        )));
    }
    let mut z = h.dot(w);
    z += b;
    z.mapv_inplace(logistic);
    Ok(z)
}

fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &ArrayView2<f64>) -> Array2<f64> {
    let mut s = z.to_owned();
    for mut row in s.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    s
}

/// Cached intermediates of one layer.
#[derive(Debug, Clone)]
pub enum LayerTape {
    Gated {
        input: Array2<f64>,
        alpha: Array2<f64>,
        beta: Option<Array2<f64>>,
        /// `P_t (h W_o)` per power.
        low: Vec<Array2<f64>>,
        /// `Q_t (h W_d)` per power.
        high: Vec<Array2<f64>>,
        pre_activation: Array2<f64>,
        relu: bool,
    },
    Conv {
        input: Array2<f64>,
        pre_activation: Array2<f64>,
        relu: bool,
    },
    Linear {
        input: Array2<f64>,
    },
}

/// Everything backward needs, produced by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    variant: Variant,
    dims: Vec<usize>,
    n_taus: usize,
    pub layers: Vec<LayerTape>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl ForwardTape {
    /// Recomputes the output probabilities from the cached logits.
    pub fn replay(&self) -> Array2<f64> {
        softmax_rows(&self.logits.view())
    }
}

fn row_scale(m: &Array2<f64>, col: ArrayView1<f64>) -> Array2<f64> {
    m * &col.insert_axis(Axis(1))
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

struct GateValues {
    alpha: Array2<f64>,
    beta: Option<Array2<f64>>,
}

fn gate_values(
    h: &ArrayView2<f64>,
    lp: &LayerParams,
    inputs: &ModelInputs,
    n_taus: usize,
) -> Result<GateValues> {
    let eval = |g: &GateParams, forced: Option<f64>| -> Result<Array2<f64>> {
        match forced {
            Some(v) => Ok(Array2::from_elem((h.nrows(), n_taus), v)),
            None => gates(h, &g.w.view(), &g.b.view()),
        }
    };
    let alpha = eval(
        lp.gate_pos.as_ref().expect("gated layer"),
        inputs.force_pos_gate,
    )?;
    let beta = lp
        .gate_neg
        .as_ref()
        .map(|g| eval(g, inputs.force_neg_gate))
        .transpose()?;
    Ok(GateValues { alpha, beta })
}

/// One gated propagation layer:
/// `act(h W_s + (Σ_t α_t ⊙ P_t) h W_o + (I − Σ_t β_t ⊙ Q_t) h W_d)`.
/// Without a negative branch the last term is dropped.
pub fn nspgnn_layer(
    h: &ArrayView2<f64>,
    inputs: &ModelInputs,
    lp: &LayerParams,
    apply_relu: bool,
) -> Result<Array2<f64>> {
    let (out, _) = gated_forward(h, inputs, lp, apply_relu, false)?;
    Ok(out)
}

/// `first` marks a layer whose input is `inputs.features`, which lets it use
/// the cached propagated features.
fn gated_forward(
    h: &ArrayView2<f64>,
    inputs: &ModelInputs,
    lp: &LayerParams,
    apply_relu: bool,
    first: bool,
) -> Result<(Array2<f64>, LayerTape)> {
    let dual = inputs
        .dual
        .as_ref()
        .ok_or(Error::MissingDualGraphs("gated layer"))?;
    let n_taus = dual.n_taus();
    if h.ncols() != lp.in_dim() || h.nrows() != dual.n_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "layer input {}x{} for weights {}x{} over {} nodes",
            h.nrows(),
            h.ncols(),
            lp.in_dim(),
            lp.out_dim(),
            dual.n_nodes()
        )));
    }
    let gv = gate_values(h, lp, inputs, n_taus)?;
    if gv.alpha.ncols() != n_taus {
        return Err(Error::ShapeMismatch(format!(
            "gate width {} for {n_taus} propagation powers",
            gv.alpha.ncols()
        )));
    }
    let w_self = lp.w_self.as_ref().expect("gated layer");
    let mut z = h.dot(w_self);

    let low: Vec<Array2<f64>> = if first {
        inputs.pos_x.iter().map(|px| px.dot(&lp.w_prop)).collect()
    } else {
        let ho = h.dot(&lp.w_prop);
        (0..n_taus)
            .map(|t| dual.pos(t).matmul(&ho.view()))
            .collect()
    };
    for (t, pt) in low.iter().enumerate() {
        z += &row_scale(pt, gv.alpha.column(t));
    }

    let mut high = Vec::new();
    if let (Some(w_high), Some(beta)) = (&lp.w_high, &gv.beta) {
        z += &h.dot(w_high);
        high = if first {
            inputs.neg_x.iter().map(|qx| qx.dot(w_high)).collect()
        } else {
            let hd = h.dot(w_high);
            (0..n_taus)
                .map(|t| dual.neg(t).matmul(&hd.view()))
                .collect()
        };
        for (t, qt) in high.iter().enumerate() {
            z -= &row_scale(qt, beta.column(t));
        }
    }

    let out = if apply_relu { relu(&z) } else { z.clone() };
    let tape = LayerTape::Gated {
        input: h.to_owned(),
        alpha: gv.alpha,
        beta: gv.beta,
        low,
        high,
        pre_activation: z,
        relu: apply_relu,
    };
    Ok((out, tape))
}

fn conv_forward(
    h: &ArrayView2<f64>,
    inputs: &ModelInputs,
    lp: &LayerParams,
    apply_relu: bool,
) -> Result<(Array2<f64>, LayerTape)> {
    let a = inputs
        .adjacency
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("gcn needs the normalized adjacency".into()))?;
    check_in_dim(h, lp)?;
    let z = a.matmul(&h.dot(&lp.w_prop).view());
    let out = if apply_relu { relu(&z) } else { z.clone() };
    Ok((
        out,
        LayerTape::Conv {
            input: h.to_owned(),
            pre_activation: z,
            relu: apply_relu,
        },
    ))
}

fn check_in_dim(h: &ArrayView2<f64>, lp: &LayerParams) -> Result<()> {
    if h.ncols() != lp.in_dim() {
        return Err(Error::ShapeMismatch(format!(
            "layer input has {} columns, weight expects {}",
            h.ncols(),
            lp.in_dim()
        )));
    }
    Ok(())
}

/// Class probabilities for every node plus the tape for [`backward`].
pub fn forward(params: &ModelParams, inputs: &ModelInputs) -> Result<(Array2<f64>, ForwardTape)> {
    let n_layers = params.layers.len();
    let mut tapes = Vec::with_capacity(n_layers);
    let logits = match params.variant {
        Variant::Nspgnn | Variant::NspgnnWo => {
            let dual = inputs
                .dual
                .as_ref()
                .ok_or(Error::MissingDualGraphs(params.variant.name()))?;
            if dual.n_taus() != params.n_taus {
                return Err(Error::ShapeMismatch(format!(
                    "model has {} gate columns, dual graphs have {} powers",
                    params.n_taus,
                    dual.n_taus()
                )));
            }
            let mut h = inputs.features.clone();
            for (l, lp) in params.layers.iter().enumerate() {
                let (next, tape) = gated_forward(&h.view(), inputs, lp, l + 1 < n_layers, l == 0)?;
                tapes.push(tape);
                h = next;
            }
            h
        }
        Variant::Gcn => {
            let mut h = inputs.features.clone();
            for (l, lp) in params.layers.iter().enumerate() {
                let (next, tape) = conv_forward(&h.view(), inputs, lp, l + 1 < n_layers)?;
                tapes.push(tape);
                h = next;
            }
            h
        }
        Variant::Sgc => {
            let f = inputs
                .sgc_features
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("sgc needs propagated features".into()))?;
            let lp = &params.layers[0];
            check_in_dim(&f.view(), lp)?;
            tapes.push(LayerTape::Linear { input: f.clone() });
            f.dot(&lp.w_prop)
        }
    };
    let probs = softmax_rows(&logits.view());
    let tape = ForwardTape {
        variant: params.variant,
        dims: params.dims.clone(),
        n_taus: params.n_taus,
        layers: tapes,
        logits,
        probs: probs.clone(),
    };
    Ok((probs, tape))
}

/// Two-layer (or deeper) GCN output, `softmax(Â relu(Â X W0) W1)`.
pub fn gcn_forward(params: &ModelParams, inputs: &ModelInputs) -> Result<Array2<f64>> {
    if params.variant != Variant::Gcn {
        return Err(Error::InvalidConfig(format!(
            "gcn_forward called with {} parameters",
            params.variant.name()
        )));
    }
    Ok(forward(params, inputs)?.0)
}

fn check_tape(params: &ModelParams, tape: &ForwardTape) -> Result<()> {
    if tape.variant != params.variant || tape.dims != params.dims || tape.n_taus != params.n_taus {
        return Err(Error::TapeMismatch(format!(
            "tape is {} {:?} (powers {}), params are {} {:?} (powers {})",
            tape.variant.name(),
            tape.dims,
            tape.n_taus,
            params.variant.name(),
            params.dims,
            params.n_taus
        )));
    }
    if tape.layers.len() != params.layers.len() {
        return Err(Error::TapeMismatch("layer count differs".into()));
    }
    Ok(())
}

/// Gradient with respect to every parameter given `∂L/∂S`.
pub fn backward(
    params: &ModelParams,
    inputs: &ModelInputs,
    tape: &ForwardTape,
    grad_probs: &ArrayView2<f64>,
) -> Result<ModelParams> {
    check_tape(params, tape)?;
    if grad_probs.dim() != tape.probs.dim() {
        return Err(Error::ShapeMismatch(
            "gradient and output shapes differ".into(),
        ));
    }
    // dZ = S ⊙ (dS − rowsum(dS ⊙ S))
    let s = &tape.probs;
    let inner = (grad_probs * s).sum_axis(Axis(1)).insert_axis(Axis(1));
    let grad_logits = s * &(grad_probs - &inner);
    backward_logits(params, inputs, tape, grad_logits)
}

/// Gradient given `∂L/∂Z` for the pre-softmax logits. For the masked mean
/// NLL this is `(S − Y) / |mask|` on masked rows.
pub fn backward_logits(
    params: &ModelParams,
    inputs: &ModelInputs,
    tape: &ForwardTape,
    grad_logits: Array2<f64>,
) -> Result<ModelParams> {
    check_tape(params, tape)?;
    let mut grads = params.zeros_like();
    let mut upstream = grad_logits;
    for l in (0..params.layers.len()).rev() {
        let lp = &params.layers[l];
        let gl = &mut grads.layers[l];
        let need_input_grad = l > 0;
        upstream = match &tape.layers[l] {
            LayerTape::Linear { input } => {
                gl.w_prop = input.t().dot(&upstream);
                break;
            }
            LayerTape::Conv {
                input,
                pre_activation,
                relu,
            } => {
                let dz = relu_backward(upstream, pre_activation, *relu);
                let a_t = inputs
                    .adjacency_t
                    .as_ref()
                    .ok_or_else(|| Error::TapeMismatch("inputs lack the adjacency".into()))?;
                let g = a_t.matmul(&dz.view());
                gl.w_prop = input.t().dot(&g);
                if !need_input_grad {
                    break;
                }
                g.dot(&lp.w_prop.t())
            }
            LayerTape::Gated {
                input,
                alpha,
                beta,
                low,
                high,
                pre_activation,
                relu,
            } => {
                let dz = relu_backward(upstream, pre_activation, *relu);
                gated_backward(
                    lp,
                    gl,
                    inputs,
                    input,
                    alpha,
                    beta.as_ref(),
                    low,
                    high,
                    &dz,
                    l == 0,
                )?
            }
        };
    }
    Ok(grads)
}

fn relu_backward(mut upstream: Array2<f64>, z: &Array2<f64>, relu: bool) -> Array2<f64> {
    if relu {
        Zip::from(&mut upstream).and(z).for_each(|g, &v| {
            if v <= 0.0 {
                *g = 0.0;
            }
        });
    }
    upstream
}

fn gate_backward(
    gate: &GateParams,
    grad: &mut GateParams,
    input: &Array2<f64>,
    values: &Array2<f64>,
    d_values: Array2<f64>,
    forced: bool,
    dh: &mut Option<Array2<f64>>,
) {
    if forced {
        // Constant gates carry no parameter dependence.
        return;
    }
    let d_pre = d_values * &values.mapv(|a| a * (1.0 - a));
    grad.w = input.t().dot(&d_pre);
    grad.b = d_pre.sum_axis(Axis(0));
    if let Some(dh) = dh {
        *dh += &d_pre.dot(&gate.w.t());
    }
}

#[allow(clippy::too_many_arguments)]
fn gated_backward(
    lp: &LayerParams,
    gl: &mut LayerParams,
    inputs: &ModelInputs,
    input: &Array2<f64>,
    alpha: &Array2<f64>,
    beta: Option<&Array2<f64>>,
    low: &[Array2<f64>],
    high: &[Array2<f64>],
    dz: &Array2<f64>,
    first: bool,
) -> Result<Array2<f64>> {
    let need_input_grad = !first;
    let w_self = lp.w_self.as_ref().expect("gated layer");
    gl.w_self = Some(input.t().dot(dz));
    let mut dh = need_input_grad.then(|| dz.dot(&w_self.t()));

    // Low-pass branch: z += Σ_t α_t ⊙ P_t (h W_o). The first layer uses
    // hᵀ P_tᵀ = (P_t X)ᵀ and skips the transposed products.
    let mut d_alpha = Array2::zeros(alpha.raw_dim());
    let mut d_ho = Array2::<f64>::zeros(dz.raw_dim());
    let mut d_wo = Array2::<f64>::zeros(lp.w_prop.raw_dim());
    for (t, lt) in low.iter().enumerate() {
        d_alpha.column_mut(t).assign(&(dz * lt).sum_axis(Axis(1)));
        let scaled = row_scale(dz, alpha.column(t));
        if first {
            d_wo += &inputs.pos_x[t].t().dot(&scaled);
        } else {
            d_ho += &inputs.pos_t[t].matmul(&scaled.view());
        }
    }
    gl.w_prop = if first { d_wo } else { input.t().dot(&d_ho) };
    if let Some(dh) = &mut dh {
        *dh += &d_ho.dot(&lp.w_prop.t());
    }
    gate_backward(
        lp.gate_pos.as_ref().expect("gated layer"),
        gl.gate_pos.as_mut().expect("gated layer"),
        input,
        alpha,
        d_alpha,
        inputs.force_pos_gate.is_some(),
        &mut dh,
    );

    // High-pass branch: z += h W_d − Σ_t β_t ⊙ Q_t (h W_d).
    if let (Some(w_high), Some(beta)) = (&lp.w_high, beta) {
        let mut d_beta = Array2::zeros(beta.raw_dim());
        let mut d_hd = dz.clone();
        let mut d_wd = if first {
            input.t().dot(dz)
        } else {
            Array2::zeros((0, 0))
        };
        for (t, ht) in high.iter().enumerate() {
            d_beta
                .column_mut(t)
                .assign(&(dz * ht).sum_axis(Axis(1)).mapv(|v| -v));
            let scaled = row_scale(dz, beta.column(t));
            if first {
                d_wd -= &inputs.neg_x[t].t().dot(&scaled);
            } else {
                d_hd -= &inputs.neg_t[t].matmul(&scaled.view());
            }
        }
        gl.w_high = Some(if first { d_wd } else { input.t().dot(&d_hd) });
        if let Some(dh) = &mut dh {
            *dh += &d_hd.dot(&w_high.t());
        }
        gate_backward(
            lp.gate_neg.as_ref().expect("gated layer"),
            gl.gate_neg.as_mut().expect("gated layer"),
            input,
            beta,
            d_beta,
            inputs.force_neg_gate.is_some(),
            &mut dh,
        );
    }
    Ok(dh.unwrap_or_else(|| Array2::zeros((0, 0))))
}

/// `(S − Y) / |mask|` on masked rows, zero elsewhere.
pub fn nll_logit_grad(probs: &Array2<f64>, labels: &[usize], mask: &[bool]) -> Result<Array2<f64>> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let scale = 1.0 / count as f64;
    let mut g = Array2::zeros(probs.raw_dim());
    for (i, (&m, &y)) in mask.iter().zip(labels).enumerate() {
        if m {
            let mut row = g.row_mut(i);
            row.assign(&probs.row(i));
            row[y] -= 1.0;
            row *= scale;
        }
    }
    Ok(g)
}
