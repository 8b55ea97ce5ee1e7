use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::{time_embedding, DenseSlot, LayerSlots, ScoreModelParams, TrainItem};
use crate::error::{Error, Result};
use crate::geom::{centered, Vec3};

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn silu(a: f64) -> f64 {
    a * sigmoid(a)
}

fn silu_grad(a: f64) -> f64 {
    let s = sigmoid(a);
    s * (1.0 + a * (1.0 - s))
}

fn weight<'a>(data: &'a [f64], slot: &DenseSlot) -> ArrayView2<'a, f64> {
    let len = slot.input * slot.output;
    ArrayView2::from_shape((slot.output, slot.input), &data[slot.weight..slot.weight + len])
        .expect("weight block shape")
}

fn bias<'a>(data: &'a [f64], slot: &DenseSlot) -> ArrayView1<'a, f64> {
    ArrayView1::from(&data[slot.bias..slot.bias + slot.output])
}

/// `input · Wᵀ + b` for a row-per-pair input.
fn dense(data: &[f64], slot: &DenseSlot, input: &Array2<f64>) -> Array2<f64> {
    let mut out = input.dot(&weight(data, slot).t());
    out += &bias(data, slot);
    out
}

/// Accumulates weight and bias gradients and returns the input gradient.
fn dense_backward(
    data: &[f64],
    grads: &mut [f64],
    slot: &DenseSlot,
    input: &Array2<f64>,
    grad_out: &Array2<f64>,
) -> Array2<f64> {
    let len = slot.input * slot.output;
    {
        let mut gw = ArrayViewMut2::from_shape(
            (slot.output, slot.input),
            &mut grads[slot.weight..slot.weight + len],
        )
        .expect("weight grad shape");
        general_mat_mul(1.0, &grad_out.t(), input, 1.0, &mut gw);
    }
    {
        let mut gb = ArrayViewMut1::from(&mut grads[slot.bias..slot.bias + slot.output]);
        gb += &grad_out.sum_axis(Axis(0));
    }
    grad_out.dot(&weight(data, slot))
}

fn through_silu(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    grad.zip_mut_with(pre, |g, &a| *g *= silu_grad(a));
}

/// Intermediate values of one layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    dx: Vec<Vec3>,
    dc: Vec<Vec3>,
    u: Array2<f64>,
    a1: Array2<f64>,
    s1: Array2<f64>,
    a2: Array2<f64>,
    m: Array2<f64>,
    qx: Array2<f64>,
    rx: Array2<f64>,
    gate_x: Array2<f64>,
    qc: Array2<f64>,
    rc: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pairs: Vec<(usize, usize)>,
    layers: Vec<LayerCache>,
    pub output: Vec<Vec3>,
}

fn layer_forward(
    params: &ScoreModelParams,
    slots: &LayerSlots,
    pairs: &[(usize, usize)],
    x: &[Vec3],
    c: &[Vec3],
    features: &[u32],
    temb: &[f64],
) -> (Vec<Vec3>, LayerCache) {
    let data = params.as_slice();
    let f = params.config.feature_embed_dim;
    let embed = params.layout.embed;
    let n = x.len();
    let scale = 1.0 / (n - 1) as f64;

    let mut dx = Vec::with_capacity(pairs.len());
    let mut dc = Vec::with_capacity(pairs.len());
    let mut u = Array2::<f64>::zeros((pairs.len(), params.config.message_input_dim()));
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let dxp = x[i] - x[j];
        let dcp = c[i] - c[j];
        let mut row = u.row_mut(p);
        let row = row.as_slice_mut().expect("contiguous row");
        let ei = embed + features[i] as usize * f;
        let ej = embed + features[j] as usize * f;
        row[..f].copy_from_slice(&data[ei..ei + f]);
        row[f..2 * f].copy_from_slice(&data[ej..ej + f]);
        row[2 * f] = dxp.norm_squared();
        row[2 * f + 1] = dcp.norm_squared();
        row[2 * f + 2] = dxp.dot(&dcp);
        row[2 * f + 3..].copy_from_slice(temb);
        dx.push(dxp);
        dc.push(dcp);
    }

    let a1 = dense(data, &slots.msg1, &u);
    let s1 = a1.mapv(silu);
    let a2 = dense(data, &slots.msg2, &s1);
    let m = a2.mapv(silu);
    let qx = dense(data, &slots.gate_x_hidden, &m);
    let rx = qx.mapv(silu);
    let gate_x = dense(data, &slots.gate_x_out, &rx);
    let qc = dense(data, &slots.gate_c_hidden, &m);
    let rc = qc.mapv(silu);
    let gate_c = dense(data, &slots.gate_c_out, &rc);

    let mut v = vec![Vec3::zeros(); n];
    for (p, &(i, _)) in pairs.iter().enumerate() {
        v[i] += (dx[p] * gate_x[[p, 0]] + dc[p] * gate_c[[p, 0]]) * scale;
    }
    let cache = LayerCache { dx, dc, u, a1, s1, a2, m, qx, rx, gate_x, qc, rc };
    (v, cache)
}

/// Returns the gradient with respect to the layer's input coordinates.
fn layer_backward(
    params: &ScoreModelParams,
    grads: &mut ScoreModelParams,
    slots: &LayerSlots,
    pairs: &[(usize, usize)],
    cache: &LayerCache,
    features: &[u32],
    grad_v: &[Vec3],
) -> Vec<Vec3> {
    let data = params.as_slice();
    let f = params.config.feature_embed_dim;
    let embed = params.layout.embed;
    let n = grad_v.len();
    let scale = 1.0 / (n - 1) as f64;
    let np = pairs.len();

    let mut g_gate_x = Array2::<f64>::zeros((np, 1));
    let mut g_gate_c = Array2::<f64>::zeros((np, 1));
    let mut g_dx = Vec::with_capacity(np);
    for (p, &(i, _)) in pairs.iter().enumerate() {
        g_gate_x[[p, 0]] = scale * grad_v[i].dot(&cache.dx[p]);
        g_gate_c[[p, 0]] = scale * grad_v[i].dot(&cache.dc[p]);
        g_dx.push(grad_v[i] * (scale * cache.gate_x[[p, 0]]));
    }

    let g = grads.as_mut_slice();
    let mut g_rx = dense_backward(data, g, &slots.gate_x_out, &cache.rx, &g_gate_x);
    through_silu(&mut g_rx, &cache.qx);
    let mut g_m = dense_backward(data, g, &slots.gate_x_hidden, &cache.m, &g_rx);
    let mut g_rc = dense_backward(data, g, &slots.gate_c_out, &cache.rc, &g_gate_c);
    through_silu(&mut g_rc, &cache.qc);
    g_m += &dense_backward(data, g, &slots.gate_c_hidden, &cache.m, &g_rc);
    through_silu(&mut g_m, &cache.a2);
    let mut g_s1 = dense_backward(data, g, &slots.msg2, &cache.s1, &g_m);
    through_silu(&mut g_s1, &cache.a1);
    let g_u = dense_backward(data, g, &slots.msg1, &cache.u, &g_s1);

    let mut g_x = vec![Vec3::zeros(); n];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let row = g_u.row(p);
        let ei = embed + features[i] as usize * f;
        let ej = embed + features[j] as usize * f;
        for k in 0..f {
            g[ei + k] += row[k];
            g[ej + k] += row[f + k];
        }
        let gd = g_dx[p] + cache.dx[p] * (2.0 * row[2 * f]) + cache.dc[p] * row[2 * f + 2];
        g_x[i] += gd;
        g_x[j] -= gd;
    }
    g_x
}

fn validate_inputs(
    params: &ScoreModelParams,
    r_t: &[Vec3],
    r_0: &[Vec3],
    features: &[u32],
    t: f64,
) -> Result<()> {
    let n = r_t.len();
    if n < 2 {
        return Err(Error::Input(format!(
            "the score model needs at least two atoms, got {n}"
        )));
    }
    if r_0.len() != n || features.len() != n {
        return Err(Error::Shape(format!(
            "r_t has {n} atoms, condition {} and features {}",
            r_0.len(),
            features.len()
        )));
    }
    let max = params.config.max_atom_types;
    if let Some(&bad) = features.iter().find(|&&id| id as usize >= max) {
        return Err(Error::Input(format!("atom type {bad} exceeds max_atom_types {max}")));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite(format!("model time {t}")));
    }
    Ok(())
}

pub fn forward_with_cache(
    params: &ScoreModelParams,
    r_t: &[Vec3],
    r_0: &[Vec3],
    features: &[u32],
    t: f64,
) -> Result<ForwardCache> {
    validate_inputs(params, r_t, r_0, features, t)?;
    let n = r_t.len();
    let temb = time_embedding(t, params.config.time_embed_dim)?;
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();

    let mut x = r_t.to_vec();
    let mut total = vec![Vec3::zeros(); n];
    let mut layers = Vec::with_capacity(params.layout.layers.len());
    for slots in &params.layout.layers {
        let (v, cache) = layer_forward(params, slots, &pairs, &x, r_0, features, &temb);
        for k in 0..n {
            x[k] += v[k];
            total[k] += v[k];
        }
        layers.push(cache);
    }
    Ok(ForwardCache { pairs, layers, output: centered(&total) })
}

pub(super) fn item_loss_and_grad(
    params: &ScoreModelParams,
    item: &TrainItem,
) -> Result<(f64, ScoreModelParams)> {
    let cache = forward_with_cache(params, &item.r_t, &item.condition, &item.features, item.t)?;
    if item.target.len() != cache.output.len() {
        return Err(Error::Shape("target and model output differ in atom count".into()));
    }
    let mut loss = 0.0;
    let mut g_out = Vec::with_capacity(item.target.len());
    for (o, y) in cache.output.iter().zip(&item.target) {
        let d = o - y;
        loss += d.norm_squared();
        g_out.push(d * (2.0 * item.lambda));
    }
    loss *= item.lambda;

    let mut grads = params.zeros_like();
    // The output is the projected sum of layer fields; each layer field also
    // moves the coordinates seen by the layers after it.
    let mut upstream = centered(&g_out);
    for (slots, layer) in params.layout.layers.iter().zip(&cache.layers).rev() {
        let g_x = layer_backward(params, &mut grads, slots, &cache.pairs, layer, &item.features, &upstream);
        for (a, b) in upstream.iter_mut().zip(&g_x) {
            *a += b;
        }
    }
    Ok((loss, grads))
}
