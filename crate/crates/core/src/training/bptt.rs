//! Relative squared-error loss and its exact gradient by backpropagation
//! through time, plus a central-difference oracle used to check it.

use crate::error::{Error, Result};
use crate::linalg::{dot, tanh_scalar};
use crate::lstm::{final_hidden, step_raw, CellWeights, Gates, LstmParams, Window};

use super::Gradients;

/// `(pred − label)² / label²`.
pub fn loss_relative_mse(pred: f64, label: f64) -> Result<f64> {
    if label == 0.0 {
        return Err(Error::DegenerateLabel);
    }
    let d = pred - label;
    Ok(d * d / (label * label))
}

struct StepCache {
    z: Vec<f64>,
    c_prev: Vec<f64>,
    c: Vec<f64>,
    gates: Gates,
}

/// Loss and gradient with respect to every parameter.
pub fn bptt_gradients(
    params: &LstmParams,
    window: &Window,
    label: f64,
) -> Result<(f64, Gradients)> {
    params.validate()?;
    if label == 0.0 {
        return Err(Error::DegenerateLabel);
    }

    // Forward, caching every step of every layer.
    let mut stream: Vec<Vec<f64>> = window.values().iter().map(|&x| vec![x]).collect();
    let mut caches: Vec<Vec<StepCache>> = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let hd = layer.hidden_dim();
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut layer_cache = Vec::with_capacity(stream.len());
        let mut next = Vec::with_capacity(stream.len());
        for x in &stream {
            let mut z = Vec::with_capacity(hd + x.len());
            let (nh, nc, gates) = step_raw(layer, &h, &c, x, &mut z);
            layer_cache.push(StepCache {
                z,
                c_prev: c,
                c: nc.clone(),
                gates,
            });
            next.push(nh.clone());
            h = nh;
            c = nc;
        }
        caches.push(layer_cache);
        stream = next;
    }
    let h_top = stream.last().cloned().unwrap_or_default();
    let pred = dot(params.readout_w.as_slice(), &h_top) + params.readout_b;
    if !pred.is_finite() {
        return Err(Error::Divergence("non-finite prediction".into()));
    }
    let loss = loss_relative_mse(pred, label)?;

    // Backward.
    let mut grads = params.zeros_like();
    let d_pred = 2.0 * (pred - label) / (label * label);
    grads.readout_b = d_pred;
    for (g, h) in grads.readout_w.as_mut_slice().iter_mut().zip(&h_top) {
        *g = d_pred * h;
    }

    let steps = window.len();
    let top_hd = params.readout_w.len();
    let mut dh_above: Vec<Vec<f64>> = vec![vec![0.0; top_hd]; steps];
    if let Some(last) = dh_above.last_mut() {
        for (d, w) in last.iter_mut().zip(params.readout_w.as_slice()) {
            *d = d_pred * w;
        }
    }
    for (li, layer) in params.layers.iter().enumerate().rev() {
        dh_above = backward_layer(layer, &caches[li], &dh_above, &mut grads.layers[li]);
    }

    let grads = Gradients(grads);
    if !grads.0.is_finite() {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    Ok((loss, grads))
}

/// Backpropagates one layer through time. `dh_out[t]` is the loss gradient
/// flowing into this layer's `h_t` from above; returns the gradient for each
/// input `x_t`, i.e. for the layer below.
fn backward_layer(
    w: &CellWeights,
    cache: &[StepCache],
    dh_out: &[Vec<f64>],
    g: &mut CellWeights,
) -> Vec<Vec<f64>> {
    let hd = w.hidden_dim();
    let cols = w.w_f.cols();
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut dx = vec![Vec::new(); cache.len()];
    let mut da = [vec![0.0; hd], vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]];
    for t in (0..cache.len()).rev() {
        let s = &cache[t];
        let Gates {
            forget,
            input,
            candidate,
            output,
        } = &s.gates;
        for k in 0..hd {
            let dh = dh_next[k] + dh_out[t][k];
            let tc = tanh_scalar(s.c[k]);
            let d_o = dh * tc;
            let dc = dc_next[k] + dh * output[k] * (1.0 - tc * tc);
            let d_f = dc * s.c_prev[k];
            let d_i = dc * candidate[k];
            let d_g = dc * input[k];
            dc_next[k] = dc * forget[k];
            da[0][k] = d_f * forget[k] * (1.0 - forget[k]);
            da[1][k] = d_i * input[k] * (1.0 - input[k]);
            da[2][k] = d_g * (1.0 - candidate[k] * candidate[k]);
            da[3][k] = d_o * output[k] * (1.0 - output[k]);
        }
        let mut dz = vec![0.0; cols];
        let gw = [&mut g.w_f, &mut g.w_i, &mut g.w_c, &mut g.w_o];
        let ww = [&w.w_f, &w.w_i, &w.w_c, &w.w_o];
        for (gate, (gm, wm)) in gw.into_iter().zip(ww).enumerate() {
            let gdata = gm.as_mut_slice();
            for k in 0..hd {
                let a = da[gate][k];
                if a == 0.0 {
                    continue;
                }
                let grow = &mut gdata[k * cols..(k + 1) * cols];
                for (gv, zv) in grow.iter_mut().zip(&s.z) {
                    *gv += a * zv;
                }
                for (d, wv) in dz.iter_mut().zip(wm.row(k)) {
                    *d += a * wv;
                }
            }
        }
        for (gb, a) in [&mut g.b_f, &mut g.b_i, &mut g.b_c, &mut g.b_o]
            .into_iter()
            .zip(&da)
        {
            for (x, y) in gb.as_mut_slice().iter_mut().zip(a) {
                *x += y;
            }
        }
        dh_next.copy_from_slice(&dz[..hd]);
        dx[t] = dz[hd..].to_vec();
    }
    dx
}

fn loss_at(params: &LstmParams, window: &[f64], label: f64) -> f64 {
    let h = final_hidden(params, window);
    let pred = dot(params.readout_w.as_slice(), &h) + params.readout_b;
    let d = pred - label;
    d * d / (label * label)
}

/// Central differences `(ℒ(θ+δ) − ℒ(θ−δ)) / 2δ`, one parameter at a time.
pub fn fd_gradient_oracle(
    params: &LstmParams,
    window: &Window,
    label: f64,
    step: f64,
) -> Result<Gradients> {
    params.validate()?;
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    if label == 0.0 {
        return Err(Error::DegenerateLabel);
    }
    let mut probe = params.clone();
    let mut out = params.zeros_like();
    let lens: Vec<usize> = params.slots().iter().map(|s| s.len()).collect();
    for (si, len) in lens.into_iter().enumerate() {
        for k in 0..len {
            let orig = probe.slots_mut()[si][k];
            probe.slots_mut()[si][k] = orig + step;
            let up = loss_at(&probe, window.values(), label);
            probe.slots_mut()[si][k] = orig - step;
            let down = loss_at(&probe, window.values(), label);
            probe.slots_mut()[si][k] = orig;
            out.slots_mut()[si][k] = (up - down) / (2.0 * step);
        }
    }
    Ok(Gradients(out))
}

/// Largest per-component relative error `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    a.0.to_flat()
        .iter()
        .zip(b.0.to_flat())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}
