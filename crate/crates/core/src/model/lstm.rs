//! Forward pass, softmax, cross-entropy, and the analytic backward pass.
//!
//! Gate order inside every 4H-dimensional pre-activation is
//! (input, forget, output, candidate):
//!   z = x Wx' + h_prev Wh' + b
//!   i = sigmoid(z_i), f = sigmoid(z_f), o = sigmoid(z_o), g = tanh(z_g)
//!   c = f * c_prev + i * g
//!   h = o * tanh(c)
//! Truncation: backward never propagates into the state a block started
//! from; values still carry forward across blocks.

use ndarray::{s, Array1, Array2, Axis};

use super::{Gradients, ModelError, ModelState, Parameters};

/// Floor applied to log-probabilities in the reported loss.
const LOG_FLOOR: f64 = 1e-12;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one cell application, kept for backward.
#[derive(Debug, Clone)]
pub struct CellCache {
    pub i: Array2<f64>,
    pub f: Array2<f64>,
    pub o: Array2<f64>,
    pub g: Array2<f64>,
    pub c: Array2<f64>,
    pub tanh_c: Array2<f64>,
    pub h_prev: Array2<f64>,
    pub c_prev: Array2<f64>,
}

/// One LSTM cell step. Returns (h, c) plus the cache needed by backward.
pub fn lstm_cell(
    x: &Array2<f64>,
    h_prev: &Array2<f64>,
    c_prev: &Array2<f64>,
    wx: &Array2<f64>,
    wh: &Array2<f64>,
    b: &Array1<f64>,
) -> Result<(Array2<f64>, Array2<f64>, CellCache), ModelError> {
    let batch = x.nrows();
    let hidden = wh.ncols();
    if wx.ncols() != x.ncols()
        || wx.nrows() != 4 * hidden
        || wh.nrows() != 4 * hidden
        || b.len() != 4 * hidden
        || h_prev.dim() != (batch, hidden)
        || c_prev.dim() != (batch, hidden)
    {
        return Err(ModelError::ShapeMismatch(format!(
            "lstm_cell: x {:?}, h_prev {:?}, c_prev {:?}, wx {:?}, wh {:?}, b {}",
            x.dim(),
            h_prev.dim(),
            c_prev.dim(),
            wx.dim(),
            wh.dim(),
            b.len()
        )));
    }
    let mut z = x.dot(&wx.t()) + h_prev.dot(&wh.t());
    z += b;

    let i = z.slice(s![.., ..hidden]).mapv(sigmoid);
    let f = z.slice(s![.., hidden..2 * hidden]).mapv(sigmoid);
    let o = z.slice(s![.., 2 * hidden..3 * hidden]).mapv(sigmoid);
    let g = z.slice(s![.., 3 * hidden..]).mapv(f64::tanh);
    let c = &f * c_prev + &i * &g;
    let tanh_c = c.mapv(f64::tanh);
    let h = &o * &tanh_c;
    let cache = CellCache {
        i,
        f,
        o,
        g,
        c: c.clone(),
        tanh_c,
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
    };
    Ok((h, c, cache))
}

/// Everything backward needs from one forward block.
pub struct ForwardCache {
    /// Input ids, B x T.
    pub inputs: Vec<Vec<usize>>,
    /// Embedded inputs per step, each B x E.
    pub embedded: Vec<Array2<f64>>,
    /// cells[t][layer]
    pub cells: Vec<Vec<CellCache>>,
    /// Top-layer hidden per step, each B x H.
    pub top_h: Vec<Array2<f64>>,
    /// Logits per step, each B x V.
    pub logits: Vec<Array2<f64>>,
}

/// Run the model over a B x T block of ids, advancing `state` in place.
pub fn forward(
    params: &Parameters,
    state: &mut ModelState,
    inputs: &[Vec<usize>],
) -> Result<ForwardCache, ModelError> {
    let batch = inputs.len();
    let seq_len = inputs.first().map_or(0, |r| r.len());
    let vocab = params.embedding.nrows();
    let embed = params.embedding.ncols();
    if state.layers.len() != params.layers.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "state has {} layers, params {}",
            state.layers.len(),
            params.layers.len()
        )));
    }
    for row in inputs {
        if row.len() != seq_len {
            return Err(ModelError::ShapeMismatch("ragged input block".to_string()));
        }
        if let Some(&id) = row.iter().find(|&&id| id >= vocab) {
            return Err(ModelError::ShapeMismatch(format!(
                "token id {id} >= vocab size {vocab}"
            )));
        }
    }

    let mut cache = ForwardCache {
        inputs: inputs.to_vec(),
        embedded: Vec::with_capacity(seq_len),
        cells: Vec::with_capacity(seq_len),
        top_h: Vec::with_capacity(seq_len),
        logits: Vec::with_capacity(seq_len),
    };

    for t in 0..seq_len {
        let mut x = Array2::zeros((batch, embed));
        for (b, row) in inputs.iter().enumerate() {
            x.row_mut(b).assign(&params.embedding.row(row[t]));
        }
        cache.embedded.push(x.clone());

        let mut step_cells = Vec::with_capacity(params.layers.len());
        let mut layer_input = x;
        for (layer, (h_prev, c_prev)) in params.layers.iter().zip(&mut state.layers) {
            let (h, c, cell) = lstm_cell(&layer_input, h_prev, c_prev, &layer.wx, &layer.wh, &layer.b)?;
            *h_prev = h.clone();
            *c_prev = c;
            step_cells.push(cell);
            layer_input = h;
        }
        cache.top_h.push(layer_input.clone());
        let logits = layer_input.dot(&params.wo.t()) + &params.bo;
        cache.logits.push(logits);
        cache.cells.push(step_cells);
    }
    Ok(cache)
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise softmax of a B x V matrix.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|l| (l - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    out
}

/// Mean negative log-likelihood in nats over all B x T positions.
/// `probs[t]` are softmaxed rows; log is floored at log(1e-12).
pub fn cross_entropy(probs: &[Array2<f64>], targets: &[Vec<usize>]) -> f64 {
    let batch = targets.len();
    let seq_len = probs.len();
    if batch == 0 || seq_len == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (t, p) in probs.iter().enumerate() {
        for (b, row) in targets.iter().enumerate() {
            total -= p[[b, row[t]]].max(LOG_FLOOR).ln();
        }
    }
    total / (batch * seq_len) as f64
}

/// Convenience: loss of one forward block.
pub fn block_loss(cache: &ForwardCache, targets: &[Vec<usize>]) -> f64 {
    let probs: Vec<Array2<f64>> = cache.logits.iter().map(softmax_rows).collect();
    cross_entropy(&probs, targets)
}

/// Analytic gradients of `cross_entropy(forward(...))` with respect to
/// every parameter array, truncated at the block boundary.
pub fn backward(
    params: &Parameters,
    cache: &ForwardCache,
    targets: &[Vec<usize>],
) -> Gradients {
    let batch = cache.inputs.len();
    let seq_len = cache.logits.len();
    let hidden = params.wo.ncols();
    let num_layers = params.layers.len();
    let mut grads = Gradients {
        embedding: Array2::zeros(params.embedding.dim()),
        layers: params
            .layers
            .iter()
            .map(|l| super::LayerParams {
                wx: Array2::zeros(l.wx.dim()),
                wh: Array2::zeros(l.wh.dim()),
                b: Array1::zeros(l.b.len()),
            })
            .collect(),
        wo: Array2::zeros(params.wo.dim()),
        bo: Array1::zeros(params.bo.len()),
    };
    if seq_len == 0 {
        return grads;
    }
    let scale = 1.0 / (batch * seq_len) as f64;

    // Carried gradients flowing into each layer's h and c from step t+1.
    let mut dh_next: Vec<Array2<f64>> = (0..num_layers)
        .map(|_| Array2::zeros((batch, hidden)))
        .collect();
    let mut dc_next: Vec<Array2<f64>> = (0..num_layers)
        .map(|_| Array2::zeros((batch, hidden)))
        .collect();

    for t in (0..seq_len).rev() {
        // d loss / d logits = (softmax - onehot) / (B*T), fused log-softmax.
        let mut dlogits = softmax_rows(&cache.logits[t]);
        for (b, row) in targets.iter().enumerate() {
            dlogits[[b, row[t]]] -= 1.0;
        }
        dlogits *= scale;

        grads.wo = grads.wo + dlogits.t().dot(&cache.top_h[t]);
        grads.bo = grads.bo + dlogits.sum_axis(Axis(0));

        // Gradient flowing into each layer's input at this step; starts as
        // the top layer's dh and cascades down.
        let mut dh_into_layer = dlogits.dot(&params.wo);
        for layer in (0..num_layers).rev() {
            let cell = &cache.cells[t][layer];
            let lp = &params.layers[layer];

            let dh = dh_into_layer + &dh_next[layer];
            let d_o = &dh * &cell.tanh_c;
            let dc = &dh * &cell.o * cell.tanh_c.mapv(|v| 1.0 - v * v) + &dc_next[layer];
            let di = &dc * &cell.g;
            let df = &dc * &cell.c_prev;
            let dg = &dc * &cell.i;

            let dz_i = di * &cell.i * cell.i.mapv(|v| 1.0 - v);
            let dz_f = df * &cell.f * cell.f.mapv(|v| 1.0 - v);
            let dz_o = d_o * &cell.o * cell.o.mapv(|v| 1.0 - v);
            let dz_g = dg * cell.g.mapv(|v| 1.0 - v * v);

            let mut dz = Array2::zeros((batch, 4 * hidden));
            dz.slice_mut(s![.., ..hidden]).assign(&dz_i);
            dz.slice_mut(s![.., hidden..2 * hidden]).assign(&dz_f);
            dz.slice_mut(s![.., 2 * hidden..3 * hidden]).assign(&dz_o);
            dz.slice_mut(s![.., 3 * hidden..]).assign(&dz_g);

            // Layer input: the embedded step for layer 0, the hidden output
            // of the layer below otherwise (h = o * tanh(c) of that cell).
            let below_h;
            let x_t: &Array2<f64> = if layer == 0 {
                &cache.embedded[t]
            } else {
                below_h = &cache.cells[t][layer - 1].o * &cache.cells[t][layer - 1].tanh_c;
                &below_h
            };

            let g = &mut grads.layers[layer];
            g.wx = &g.wx + &dz.t().dot(x_t);
            g.wh = &g.wh + &dz.t().dot(&cell.h_prev);
            g.b = &g.b + &dz.sum_axis(Axis(0));

            dh_next[layer] = dz.dot(&lp.wh);
            dc_next[layer] = dc * &cell.f;

            dh_into_layer = dz.dot(&lp.wx);
        }

        // dh_into_layer now holds d loss / d embedded input; scatter into
        // the embedding rows used at this step.
        for (b, row) in cache.inputs.iter().enumerate() {
            let mut target_row = grads.embedding.row_mut(row[t]);
            target_row += &dh_into_layer.row(b);
        }
    }
    grads
}
