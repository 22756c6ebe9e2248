use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Gated ego + positive low-pass + negative high-pass layers.
    Nspgnn,
    /// Same without the negative kNN branch.
    NspgnnWo,
    /// Two-layer graph convolutional network.
    Gcn,
    /// Simplified graph convolution, `softmax(Â^τ X W)`.
    Sgc,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Nspgnn => "nspgnn",
            Variant::NspgnnWo => "nspgnn_wo",
            Variant::Gcn => "gcn",
            Variant::Sgc => "sgc",
        }
    }

    pub fn needs_dual(self) -> bool {
        matches!(self, Variant::Nspgnn | Variant::NspgnnWo)
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nspgnn" => Some(Variant::Nspgnn),
            "nspgnn_wo" => Some(Variant::NspgnnWo),
            "gcn" => Some(Variant::Gcn),
            "sgc" => Some(Variant::Sgc),
            _ => None,
        }
    }
}

/// Gate MLP producing one mixing weight per propagation power.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Weights of one layer. Which fields are present depends on the variant:
/// NSPGNN layers use every field, the ablation drops the negative gate and
/// `w_high`, GCN/SGC layers only carry `w_prop`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `W_m`, `b_m`.
    pub gate_pos: Option<GateParams>,
    /// `W_n`, `b_n`.
    pub gate_neg: Option<GateParams>,
    /// `W_s`, ego branch.
    pub w_self: Option<Array2<f64>>,
    /// `W_o` for the low-pass branch, or the single GCN/SGC weight.
    pub w_prop: Array2<f64>,
    /// `W_d`, high-pass branch.
    pub w_high: Option<Array2<f64>>,
}

impl LayerParams {
    pub fn in_dim(&self) -> usize {
        self.w_prop.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w_prop.ncols()
    }

    fn slices(&self) -> Vec<(&'static str, &[f64])> {
        fn s2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        let mut out = Vec::new();
        if let Some(g) = &self.gate_pos {
            out.push(("w_m", s2(&g.w)));
            out.push(("b_m", g.b.as_slice().expect("contiguous")));
        }
        if let Some(g) = &self.gate_neg {
            out.push(("w_n", s2(&g.w)));
            out.push(("b_n", g.b.as_slice().expect("contiguous")));
        }
        if let Some(w) = &self.w_self {
            out.push(("w_s", s2(w)));
        }
        out.push(("w_o", s2(&self.w_prop)));
        if let Some(w) = &self.w_high {
            out.push(("w_d", s2(w)));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(g) = &mut self.gate_pos {
            out.push(g.w.as_slice_mut().expect("standard layout"));
            out.push(g.b.as_slice_mut().expect("contiguous"));
        }
        if let Some(g) = &mut self.gate_neg {
            out.push(g.w.as_slice_mut().expect("standard layout"));
            out.push(g.b.as_slice_mut().expect("contiguous"));
        }
        if let Some(w) = &mut self.w_self {
            out.push(w.as_slice_mut().expect("standard layout"));
        }
        out.push(self.w_prop.as_slice_mut().expect("standard layout"));
        if let Some(w) = &mut self.w_high {
            out.push(w.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

/// Every learnable tensor of a model, with a flat-vector view.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    /// `[p, h_1, ..., C]`.
    pub dims: Vec<usize>,
    /// Gate width, i.e. number of propagation powers. Zero for GCN/SGC.
    pub n_taus: usize,
    pub layers: Vec<LayerParams>,
}

/// Named contiguous block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..limit))
}

impl ModelParams {
    /// Glorot-uniform weights from a seeded generator, zero biases.
    pub fn init(variant: Variant, dims: &[usize], n_taus: usize, seed: u64) -> Result<Self> {
        Self::validate_dims(variant, dims, n_taus)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (din, dout) = (w[0], w[1]);
                match variant {
                    Variant::Nspgnn | Variant::NspgnnWo => {
                        let gate_pos = GateParams {
                            w: glorot(&mut rng, din, n_taus),
                            b: Array1::zeros(n_taus),
                        };
                        let gate_neg = (variant == Variant::Nspgnn).then(|| GateParams {
                            w: glorot(&mut rng, din, n_taus),
                            b: Array1::zeros(n_taus),
                        });
                        let w_self = Some(glorot(&mut rng, din, dout));
                        let w_prop = glorot(&mut rng, din, dout);
                        let w_high =
                            (variant == Variant::Nspgnn).then(|| glorot(&mut rng, din, dout));
                        LayerParams {
                            gate_pos: Some(gate_pos),
                            gate_neg,
                            w_self,
                            w_prop,
                            w_high,
                        }
                    }
                    Variant::Gcn | Variant::Sgc => LayerParams {
                        gate_pos: None,
                        gate_neg: None,
                        w_self: None,
                        w_prop: glorot(&mut rng, din, dout),
                        w_high: None,
                    },
                }
            })
            .collect();
        Ok(Self {
            variant,
            dims: dims.to_vec(),
            n_taus: if variant.needs_dual() { n_taus } else { 0 },
            layers,
        })
    }

    fn validate_dims(variant: Variant, dims: &[usize], n_taus: usize) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("invalid layer dims {dims:?}")));
        }
        if variant == Variant::Sgc && dims.len() != 2 {
            return Err(Error::InvalidConfig(
                "sgc has exactly one weight matrix".into(),
            ));
        }
        if variant.needs_dual() && n_taus == 0 {
            return Err(Error::InvalidConfig(
                "gated layers need at least one power".into(),
            ));
        }
        Ok(())
    }

    /// Same layout with every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for s in out.slices_mut() {
            s.fill(0.0);
        }
        out
    }

    pub fn n_classes(&self) -> usize {
        *self.dims.last().expect("validated dims")
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.slices())
            .map(|(_, s)| s.len())
            .sum()
    }

    /// Layout of the flat vector: layer by layer, in the order
    /// `w_m, b_m, w_n, b_n, w_s, w_o, w_d` (absent tensors skipped).
    pub fn blocks(&self) -> Vec<ParamBlock> {
        let mut offset = 0;
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, s) in layer.slices() {
                out.push(ParamBlock {
                    name: format!("layer{l}.{name}"),
                    offset,
                    len: s.len(),
                });
                offset += s.len();
            }
        }
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            for (_, s) in layer.slices() {
                out.extend_from_slice(s);
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    /// New parameters with this layout and the given flat values.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_flat(flat)?;
        Ok(out)
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.slices_mut())
            .collect()
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.variant == other.variant
            && self.dims == other.dims
            && self.n_taus == other.n_taus
            && self.blocks() == other.blocks()
    }
}
