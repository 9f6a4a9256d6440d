//! Many-to-one stacked LSTM forward pass.
//!
//! Each cell consumes the concatenation `[h_prev, x]`, so every gate matrix is
//! `hidden_dim × (hidden_dim + input_dim)` with the first `hidden_dim` columns
//! multiplying the previous hidden state and the remaining columns the input.
//! Layer 1 reads the scalar series (`input_dim = 1`); layer ℓ > 1 reads the
//! hidden-state stream of layer ℓ−1. The prediction is a linear readout of the
//! top layer's final hidden state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid_scalar, tanh_scalar, Matrix, Vector};
use crate::rng::SeededRng;

/// Gate weights and biases of one LSTM layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellWeights {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub b_f: Vector,
    pub b_i: Vector,
    pub b_c: Vector,
    pub b_o: Vector,
}

impl CellWeights {
    pub fn zeros(hidden_dim: usize, input_dim: usize) -> Self {
        let w = Matrix::zeros(hidden_dim, hidden_dim + input_dim);
        let b = Vector::zeros(hidden_dim);
        Self {
            w_f: w.clone(),
            w_i: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_f: b.clone(),
            b_i: b.clone(),
            b_c: b.clone(),
            b_o: b,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_f.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_f.cols() - self.w_f.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (r, c) = (self.w_f.rows(), self.w_f.cols());
        if c <= r {
            return Err(Error::DimensionMismatch(format!(
                "gate matrix {r}x{c} leaves no input columns"
            )));
        }
        for m in [&self.w_i, &self.w_c, &self.w_o] {
            if m.rows() != r || m.cols() != c {
                return Err(Error::DimensionMismatch(format!(
                    "gate matrices disagree: {r}x{c} vs {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        for b in [&self.b_f, &self.b_i, &self.b_c, &self.b_o] {
            if b.len() != r {
                return Err(Error::DimensionMismatch(format!(
                    "bias of length {} for hidden_dim {r}",
                    b.len()
                )));
            }
        }
        Ok(())
    }

    fn gate_matrices(&self) -> [&Matrix; 4] {
        [&self.w_f, &self.w_i, &self.w_c, &self.w_o]
    }

    fn gate_biases(&self) -> [&Vector; 4] {
        [&self.b_f, &self.b_i, &self.b_c, &self.b_o]
    }
}

/// Hidden state `h` and memory cell `c` of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vector,
    pub c: Vector,
}

impl CellState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: Vector::zeros(hidden_dim),
            c: Vector::zeros(hidden_dim),
        }
    }
}

/// Gate activations of a single step; kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct Gates {
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
}

/// Architecture of a stacked LSTM over a scalar series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmDims {
    pub layers: usize,
    pub hidden_dim: usize,
}

impl Default for LstmDims {
    fn default() -> Self {
        Self {
            layers: 1,
            hidden_dim: 8,
        }
    }
}

impl LstmDims {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "layers and hidden_dim must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub layers: Vec<CellWeights>,
    pub readout_w: Vector,
    pub readout_b: f64,
}

impl LstmParams {
    pub fn init_zero(dims: LstmDims) -> Result<Self> {
        dims.validate()?;
        let layers = (0..dims.layers)
            .map(|l| CellWeights::zeros(dims.hidden_dim, if l == 0 { 1 } else { dims.hidden_dim }))
            .collect();
        Ok(Self {
            layers,
            readout_w: Vector::zeros(dims.hidden_dim),
            readout_b: 0.0,
        })
    }

    /// Every parameter drawn uniformly from `[-scale, scale]`, in the order of
    /// [`LstmParams::slots`]. `scale == 0` yields the zero initialization.
    pub fn init_seeded(dims: LstmDims, rng: &mut SeededRng, scale: f64) -> Result<Self> {
        if scale.is_nan() || scale < 0.0 || scale.is_infinite() {
            return Err(Error::InvalidArgument(format!(
                "init scale must be >= 0, got {scale}"
            )));
        }
        let mut p = Self::init_zero(dims)?;
        if scale > 0.0 {
            for slot in p.slots_mut() {
                for x in slot.iter_mut() {
                    *x = rng.uniform(-scale, scale);
                }
            }
        }
        Ok(p)
    }

    pub fn dims(&self) -> LstmDims {
        LstmDims {
            layers: self.layers.len(),
            hidden_dim: self.readout_w.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::DimensionMismatch("an LSTM needs at least one layer".into()))?;
        if first.input_dim() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "first layer must read a scalar input, has input_dim {}",
                first.input_dim()
            )));
        }
        let mut below = 1;
        for layer in &self.layers {
            layer.validate()?;
            if layer.input_dim() != below {
                return Err(Error::DimensionMismatch(format!(
                    "layer input_dim {} does not match hidden_dim {below} of the layer below",
                    layer.input_dim()
                )));
            }
            below = layer.hidden_dim();
        }
        if self.readout_w.len() != below {
            return Err(Error::DimensionMismatch(format!(
                "readout of length {} for top hidden_dim {below}",
                self.readout_w.len()
            )));
        }
        Ok(())
    }

    /// All parameter storage in canonical order: per layer
    /// `w_f, w_i, w_c, w_o, b_f, b_i, b_c, b_o`, then `readout_w`, `readout_b`.
    pub fn slots(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 8 + 2);
        for l in &self.layers {
            for m in l.gate_matrices() {
                out.push(m.as_slice());
            }
            for b in l.gate_biases() {
                out.push(b.as_slice());
            }
        }
        out.push(self.readout_w.as_slice());
        out.push(std::slice::from_ref(&self.readout_b));
        out
    }

    pub fn slots_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 8 + 2);
        for l in &mut self.layers {
            out.push(l.w_f.as_mut_slice());
            out.push(l.w_i.as_mut_slice());
            out.push(l.w_c.as_mut_slice());
            out.push(l.w_o.as_mut_slice());
            out.push(l.b_f.as_mut_slice());
            out.push(l.b_i.as_mut_slice());
            out.push(l.b_c.as_mut_slice());
            out.push(l.b_o.as_mut_slice());
        }
        out.push(self.readout_w.as_mut_slice());
        out.push(std::slice::from_mut(&mut self.readout_b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.slots().iter().map(|s| s.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slots().concat()
    }

    /// Same shape as `self`, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slots_mut() {
            s.fill(0.0);
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.slots().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn to_snapshot(&self) -> ParamSnapshot {
        let dims = self.dims();
        ParamSnapshot {
            dims: SnapshotDims {
                layers: dims.layers,
                hidden_dim: dims.hidden_dim,
                input_dim: 1,
            },
            layers: self
                .layers
                .iter()
                .map(|l| LayerSnapshot {
                    w_f: l.w_f.as_slice().to_vec(),
                    w_i: l.w_i.as_slice().to_vec(),
                    w_c: l.w_c.as_slice().to_vec(),
                    w_o: l.w_o.as_slice().to_vec(),
                    b_f: l.b_f.as_slice().to_vec(),
                    b_i: l.b_i.as_slice().to_vec(),
                    b_c: l.b_c.as_slice().to_vec(),
                    b_o: l.b_o.as_slice().to_vec(),
                })
                .collect(),
            readout_w: self.readout_w.as_slice().to_vec(),
            readout_b: self.readout_b,
        }
    }

    pub fn from_snapshot(s: &ParamSnapshot) -> Result<Self> {
        if s.dims.input_dim != 1 || s.layers.len() != s.dims.layers {
            return Err(Error::DimensionMismatch(format!(
                "snapshot header {:?}",
                s.dims
            )));
        }
        let h = s.dims.hidden_dim;
        let mut layers = Vec::with_capacity(s.layers.len());
        for (idx, l) in s.layers.iter().enumerate() {
            let cols = h + if idx == 0 { 1 } else { h };
            let m = |d: &Vec<f64>| Matrix::new(h, cols, d.clone());
            let b = |d: &Vec<f64>| {
                if d.len() != h {
                    return Err(Error::DimensionMismatch(format!(
                        "bias of length {}",
                        d.len()
                    )));
                }
                Vector::new(d.clone())
            };
            layers.push(CellWeights {
                w_f: m(&l.w_f)?,
                w_i: m(&l.w_i)?,
                w_c: m(&l.w_c)?,
                w_o: m(&l.w_o)?,
                b_f: b(&l.b_f)?,
                b_i: b(&l.b_i)?,
                b_c: b(&l.b_c)?,
                b_o: b(&l.b_o)?,
            });
        }
        if !s.readout_b.is_finite() {
            return Err(Error::NonFinite("readout_b"));
        }
        let p = Self {
            layers,
            readout_w: Vector::new(s.readout_w.clone())?,
            readout_b: s.readout_b,
        };
        p.validate()?;
        Ok(p)
    }
}

/// JSON form of [`LstmParams`]. Matrices are row-major with columns ordered
/// `[h_prev, x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub dims: SnapshotDims,
    pub layers: Vec<LayerSnapshot>,
    pub readout_w: Vec<f64>,
    pub readout_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDims {
    pub layers: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub w_f: Vec<f64>,
    pub w_i: Vec<f64>,
    pub w_c: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
}

/// Model input: the `T−1` most recent (normalized) values, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Window(Vector);

impl Window {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Vector::new(values).map(Self)
    }

    pub fn values(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One LSTM step on `z = [h_prev, x]`, writing the new state and returning gates.
pub(crate) fn step_raw(
    w: &CellWeights,
    h_prev: &[f64],
    c_prev: &[f64],
    x: &[f64],
    z: &mut Vec<f64>,
) -> (Vec<f64>, Vec<f64>, Gates) {
    let hd = w.hidden_dim();
    z.clear();
    z.extend_from_slice(h_prev);
    z.extend_from_slice(x);
    let pre = |m: &Matrix, b: &Vector, i: usize| dot(m.row(i), z) + b[i];
    let mut g = Gates {
        forget: Vec::with_capacity(hd),
        input: Vec::with_capacity(hd),
        candidate: Vec::with_capacity(hd),
        output: Vec::with_capacity(hd),
    };
    let mut h = Vec::with_capacity(hd);
    let mut c = Vec::with_capacity(hd);
    for (i, &cp) in c_prev.iter().enumerate().take(hd) {
        let f = sigmoid_scalar(pre(&w.w_f, &w.b_f, i));
        let inp = sigmoid_scalar(pre(&w.w_i, &w.b_i, i));
        let cand = tanh_scalar(pre(&w.w_c, &w.b_c, i));
        let o = sigmoid_scalar(pre(&w.w_o, &w.b_o, i));
        let ci = f * cp + inp * cand;
        c.push(ci);
        h.push(o * tanh_scalar(ci));
        g.forget.push(f);
        g.input.push(inp);
        g.candidate.push(cand);
        g.output.push(o);
    }
    (h, c, g)
}

/// Single LSTM cell update; also returns the gate activations.
pub fn cell_step_with_gates(
    w: &CellWeights,
    prev: &CellState,
    x: &Vector,
) -> Result<(CellState, Gates)> {
    w.validate()?;
    let hd = w.hidden_dim();
    if prev.h.len() != hd || prev.c.len() != hd {
        return Err(Error::DimensionMismatch(format!(
            "state of length ({}, {}) for hidden_dim {hd}",
            prev.h.len(),
            prev.c.len()
        )));
    }
    if x.len() != w.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input of length {} for input_dim {}",
            x.len(),
            w.input_dim()
        )));
    }
    let mut z = Vec::with_capacity(hd + x.len());
    let (h, c, g) = step_raw(
        w,
        prev.h.as_slice(),
        prev.c.as_slice(),
        x.as_slice(),
        &mut z,
    );
    if h.iter().chain(&c).any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite cell state".into()));
    }
    Ok((
        CellState {
            h: Vector::from_raw(h),
            c: Vector::from_raw(c),
        },
        g,
    ))
}

pub fn cell_step(w: &CellWeights, prev: &CellState, x: &Vector) -> Result<CellState> {
    cell_step_with_gates(w, prev, x).map(|(s, _)| s)
}

/// Runs the window through every layer from zero initial states and returns
/// the readout of the top layer's final hidden state.
pub fn forward(params: &LstmParams, window: &Window) -> Result<f64> {
    params.validate()?;
    let top = final_hidden(params, window.values());
    let pred = dot(params.readout_w.as_slice(), &top) + params.readout_b;
    if !pred.is_finite() {
        return Err(Error::Divergence("non-finite prediction".into()));
    }
    Ok(pred)
}

/// Top-layer hidden state after the last window element. Assumes validated params.
pub(crate) fn final_hidden(params: &LstmParams, window: &[f64]) -> Vec<f64> {
    let mut stream: Vec<Vec<f64>> = window.iter().map(|&x| vec![x]).collect();
    let mut z = Vec::new();
    for layer in &params.layers {
        let hd = layer.hidden_dim();
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut next = Vec::with_capacity(stream.len());
        for x in &stream {
            let (nh, nc, _) = step_raw(layer, &h, &c, x, &mut z);
            h = nh;
            c = nc;
            next.push(h.clone());
        }
        stream = next;
    }
    stream.pop().unwrap_or_default()
}
